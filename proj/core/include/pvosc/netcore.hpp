#pragma once

// Static network model, admittance assembly and Newton-Raphson power flow.
// All quantities are per unit on the network's single MVA base.

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/SparseCore>

namespace pvosc::net {

using Complex = std::complex<double>;
using AdmittanceMatrix = Eigen::SparseMatrix<Complex>;

enum class BusKind { Slack, PV, PQ };

const char* to_string(BusKind kind);

struct Bus {
    int id = 0;
    BusKind kind = BusKind::PQ;
    double v_mag = 1.0;   // setpoint for Slack/PV, initial guess otherwise
    double v_ang = 0.0;   // rad; slack reference angle
    double p_load = 0.0;
    double q_load = 0.0;
    double shunt_g = 0.0;
    double shunt_b = 0.0;
    // Scheduled generation at the bus, aggregated from attached devices.
    double p_gen = 0.0;
    double q_gen = 0.0;
    int area = 0;
    // Held at its power-flow voltage during dynamic simulation.
    bool infinite = false;
};

struct Branch {
    int id = 0;
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;
    double x = 0.0;
    double b_charging = 0.0;
    double tap_ratio = 1.0;  // off-nominal ratio on the from side
    bool in_service = true;
};

struct NetworkModel {
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    double base_mva = 100.0;
    double nominal_freq = 60.0;

    /// Position of a bus id in `buses`; throws NetworkError if unknown.
    std::size_t index_of(int bus_id) const;
    bool has_bus(int bus_id) const;
    std::size_t slack_index() const;

    /// Checks type invariants, single slack and connectivity. Throws NetworkError.
    void validate() const;
};

class NetworkError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PowerFlowError : public std::runtime_error {
public:
    PowerFlowError(const std::string& what, int bus_id)
        : std::runtime_error(what), bus_id_(bus_id) {}
    int bus_id() const { return bus_id_; }

private:
    int bus_id_;
};

struct PowerFlowOptions {
    double tol = 1e-8;
    int max_iter = 20;
};

struct PowerFlowSolution {
    std::vector<Complex> voltage;  // per bus, in `buses` order
    std::vector<double> p_inj;     // net injection (generation minus load)
    std::vector<double> q_inj;
    double mismatch_norm = 0.0;    // max |dP|, |dQ| over constrained quantities
    int iterations = 0;

    double v_mag(std::size_t i) const { return std::abs(voltage[i]); }
    double v_ang(std::size_t i) const { return std::arg(voltage[i]); }
};

/// Bus admittance matrix from branches (pi model, from-side tap) and bus shunts.
/// Loads are not included. Throws NetworkError for an in-service branch with x == 0.
AdmittanceMatrix build_admittance(const NetworkModel& net);

/// Polar Newton-Raphson from a flat start (PV/slack magnitudes at setpoint).
PowerFlowSolution solve_power_flow(const NetworkModel& net, PowerFlowOptions opts = {});

/// Complex power injections S = V * conj(Y V).
std::vector<Complex> power_injections(const AdmittanceMatrix& y, const std::vector<Complex>& v);

/// CSV with columns bus,v_mag,v_ang_deg,p_inj,q_inj.
std::string power_flow_csv(const NetworkModel& net, const PowerFlowSolution& sol);

}  // namespace pvosc::net
