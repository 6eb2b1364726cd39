#pragma once

// Time-domain simulation: implicit trapezoidal integration of the device
// differential equations solved simultaneously with the network algebra.

#include <complex>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "pvosc/system.hpp"

namespace pvosc::sim {

using Complex = std::complex<double>;

struct LineTrip {
    int branch = 0;
};
struct GenTrip {
    int machine = 0;
};
/// Constant-impedance load change sized at the pre-event voltage.
struct LoadStep {
    int bus = 0;
    double dp = 0.0;  // pu
    double dq = 0.0;  // pu
};
struct SelfClearingFault {
    int bus = 0;
    double duration = 0.1;  // s
    Complex admittance{0.0, -20.0};  // shunt admittance while applied (pu)
};

using EventAction = std::variant<LineTrip, GenTrip, LoadStep, SelfClearingFault>;

struct Event {
    double time = 0.0;
    EventAction action;
};

std::string describe(const Event& e);
void validate_events(const std::vector<Event>& events);
/// Canonical order: by time, then kind, then target and magnitudes.
std::vector<Event> canonical_order(std::vector<Event> events);

std::vector<Event> parse_events(const std::string& json_text);
std::vector<Event> load_events(const std::filesystem::path& path);
std::string events_to_json(const std::vector<Event>& events);

struct Channel {
    std::string group;  // bus_vmag, bus_vang, bus_freq, machine_speed, ...
    std::string name;   // e.g. "7" for bus 7, "3" for machine 3
    std::vector<double> values;
};

/// Uniformly sampled trajectories. All channels have the same length.
struct TimeSeriesRecord {
    double t0 = 0.0;
    double dt = 0.1;
    std::vector<Channel> channels;

    std::size_t length() const { return channels.empty() ? 0 : channels.front().values.size(); }
    const Channel* find(const std::string& group, const std::string& name) const;
    std::vector<const Channel*> group(const std::string& group) const;
    std::vector<std::string> groups() const;
};

struct SimOptions {
    double t_end = 20.0;
    double dt = 0.005;
    double record_dt = 0.1;
    double newton_tol = 1e-10;
    int max_newton = 30;
    double freq_filter_t = 0.02;   // bus frequency measurement filter (s)
    bool record_device_states = true;
};

struct SimulationResult {
    TimeSeriesRecord record;
    bool usable = true;
    bool voltage_collapse = false;
    std::vector<std::string> notes;
    double max_algebraic_residual = 0.0;
    double max_current_limit_excess = 0.0;  // max(ip^2 + iq^2 - i_max^2) over accepted steps
    long steps = 0;
    std::vector<double> final_states;
    std::vector<double> initial_states;
};

class SimulationError : public std::runtime_error {
public:
    SimulationError(const std::string& what, double time, int bus)
        : std::runtime_error(what), time_(time), bus_(bus) {}
    double time() const { return time_; }
    int bus() const { return bus_; }

private:
    double time_;
    int bus_;
};

/// Solves the power flow, initializes every device at equilibrium and
/// integrates to t_end. Throws SimulationError on algebraic divergence.
SimulationResult simulate(const PowerSystem& sys, const std::vector<Event>& events, const SimOptions& opts);

/// Frequency deviation (Hz) from a bus angle series (rad): centered
/// difference of the unwrapped angle divided by 2*pi, smoothed by a
/// first-order filter with time constant `filter_t` (0 disables it).
std::vector<double> bus_frequency(std::span<const double> angle, double dt, double filter_t);

/// Reduced-order state matrix at the power-flow equilibrium.
struct LinearModel {
    Eigen::MatrixXd a;
    std::vector<std::string> state_names;
    Eigen::VectorXcd eigenvalues;
    Eigen::MatrixXcd eigenvectors;
};

class LinearizeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Central-difference Jacobian of x' = f(x, v(x)) with the network algebra
/// eliminated. Throws LinearizeError when the initial point is not an equilibrium.
LinearModel linearize(const PowerSystem& sys, double step = 1e-6);

struct EigenMode {
    Complex eigenvalue;
    double frequency = 0.0;  // Hz
    double damping_ratio = 0.0;
    double speed_participation = 0.0;  // share of eigenvector energy on machine speed states
    Eigen::VectorXcd vector;
};

/// Oscillatory eigenvalues (imag > 0) sorted by frequency.
std::vector<EigenMode> oscillatory_modes(const LinearModel& lm);

/// Oscillatory mode in the band with the largest machine-speed participation.
std::optional<EigenMode> electromechanical_mode(const LinearModel& lm, double f_lo, double f_hi);

}  // namespace pvosc::sim
