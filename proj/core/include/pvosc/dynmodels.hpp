#pragma once

// Dynamic device models. Every model is a pure function of (parameters,
// states, terminal quantities); the simulation engine owns all mutation.
//
// Per-unit conventions: machine quantities are on the machine MVA base,
// PV plant quantities on the plant capacity base; network injections returned
// by the *_current functions are converted to the system base.

#include <array>
#include <complex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvosc::dyn {

using Complex = std::complex<double>;

class InitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Exciter {
    double ka = 50.0;
    double ta = 0.05;
    double efd_min = -5.0;
    double efd_max = 5.0;
};

struct Governor {
    double r_droop = 0.05;
    double tg = 0.5;
    double p_max = 1.0;
};

/// Two-axis synchronous machine. An aggregate of `units` identical units;
/// ratings and damping scale with the committed unit count.
struct SyncMachine {
    int id = 0;
    int bus = 0;
    int units = 1;
    double unit_mva = 100.0;
    double p_mw = 0.0;  // scheduled dispatch
    double h = 6.5;
    double d = 0.0;
    double xd = 1.8;
    double xq = 1.7;
    double xd_p = 0.3;
    double xq_p = 0.55;
    double td0_p = 8.0;
    double tq0_p = 0.4;
    double ra = 0.0;
    std::optional<Exciter> exciter = Exciter{};
    std::optional<Governor> governor = Governor{};

    double mva_base() const { return units * unit_mva; }
    void validate() const;
};

enum MachineState { kDelta = 0, kSpeedDev, kEqp, kEdp, kEfd, kPmech, kMachineStateCount };
using MachineStates = std::array<double, kMachineStateCount>;

/// References fixed at initialization.
struct MachineSetpoints {
    double v_ref = 1.0;   // AVR reference
    double p_ref = 0.0;   // governor load reference (machine base)
    double efd0 = 0.0;    // field voltage when no exciter is modelled
    double pm0 = 0.0;     // mechanical power when no governor is modelled
};

struct MachineInit {
    MachineStates states{};
    MachineSetpoints setpoints;
};

/// Stator currents and air-gap power for a given terminal voltage (machine base).
struct MachineOutputs {
    double id = 0.0;
    double iq = 0.0;
    double p_elec = 0.0;
    Complex current;  // network frame, machine base
};

/// Equilibrium states from the power-flow terminal voltage and output
/// (system per unit). Throws InitError if the field voltage falls outside the
/// exciter ceiling or the machine cannot carry the output.
MachineInit init_sync_machine(const SyncMachine& m, Complex v_term, double p_sys, double q_sys,
                              double base_mva);

MachineOutputs sync_machine_outputs(const SyncMachine& m, const MachineStates& x, Complex v_term);

/// Injection into the network on the system base.
Complex sync_machine_current(const SyncMachine& m, const MachineStates& x, Complex v_term,
                             double base_mva);

/// With `limit_guard` the limited states get a zero derivative when sitting on
/// a bound and pushed outward. Integrators that freeze limiter status per
/// step pass false and handle the bounds themselves.
MachineStates sync_machine_derivatives(const SyncMachine& m, const MachineSetpoints& sp,
                                       const MachineStates& x, Complex v_term, double omega_s,
                                       bool limit_guard = true);

/// Clamp limited states (field voltage, mechanical power) into their bounds.
void clamp_machine_states(const SyncMachine& m, MachineStates& x);

// --------------------------------------------------------------------------
// PV plant

enum class PvStrategy {
    VoltVarWithSolarControl,     // "strategy1"
    VoltVarWithoutSolarControl,  // "strategy2"
};

const char* to_string(PvStrategy s);
PvStrategy parse_strategy(const std::string& s);

/// Grid-following PV plant: current source behind first-order current filters.
///
/// Strategy 1: the SolarControl loop integrates kq * (v_ref - v_reg) into the
/// reactive command q_cmd. A volt/var droop adds kvv * (v_term_ref - v_term)
/// and the reactive power regulator integrates kq * qreg_rate * (q_ref - q_meas)
/// into the reactive current command, which iq follows through tv.
///
/// Strategy 2: SolarControl off. q_cmd relaxes to its schedule with tq_reset;
/// iq tracks q_cmd / v_term plus a rapid proportional terminal-voltage term
/// kvt * (v_term_ref - v_term) through tv.
///
/// Active current tracks p_cmd / v_term through tv in both strategies.
/// Default parameter values are generic choices, not measured plant data.
struct PvPlant {
    int id = 0;
    int bus = 0;
    int reg_bus = 0;          // SolarControl monitored bus; 0 means the plant bus
    double capacity_mw = 0.0;
    double p_cmd = 1.0;       // active command, pu of capacity
    PvStrategy strategy = PvStrategy::VoltVarWithSolarControl;
    double kq = 0.1;          // reactive power regulator gain
    double qreg_rate = 100.0; // reactive regulator rate base (1/s)
    double tq_meas = 0.1;     // reactive power measurement filter (s)
    double tq_reset = 30.0;   // Strategy 2 reactive reset (s)
    double tv = 0.02;         // current command filter (s)
    double kvt = 1.0;         // Strategy 2 terminal voltage gain (pu current / pu voltage)
    double kvv = 1.0;         // Strategy 1 volt/var droop (pu Q / pu voltage)
    double i_max = 1.1;
    // Filled at initialization when not given explicitly.
    std::optional<double> v_ref;
    std::optional<double> q_sched;

    void validate() const;
};

enum PvState { kIp = 0, kIq, kQcmd, kQmeas, kIqCmd, kPvStateCount };
using PvStates = std::array<double, kPvStateCount>;

struct PvSetpoints {
    double v_ref = 1.0;       // SolarControl reference at reg_bus
    double v_term_ref = 1.0;  // Strategy 2 terminal reference
    double q_sched = 0.0;     // reactive schedule, pu of capacity
};

struct PvInit {
    PvStates states{};
    PvSetpoints setpoints;
};

/// Terminal-voltage thresholds for the low-voltage injection latch.
inline constexpr double kPvLatchOn = 0.01;
inline constexpr double kPvLatchOff = 0.05;

PvInit init_pv_plant(const PvPlant& p, Complex v_term, Complex v_reg, double p_sys, double q_sys,
                     double base_mva);

/// Currents after the active-priority current limit: ip kept up to i_max,
/// iq clipped to the remaining magnitude.
std::pair<double, double> limit_pv_currents(double ip, double iq, double i_max);

/// Network injection on the system base. Zero while `latched`.
Complex pv_injection(const PvPlant& p, const PvStates& x, Complex v_term, bool latched,
                     double base_mva);

PvStates pv_derivatives(const PvPlant& p, const PvSetpoints& sp, const PvStates& x, Complex v_term,
                        Complex v_reg, bool latched);

/// Latch update with hysteresis: engages below kPvLatchOn, releases above kPvLatchOff.
bool update_pv_latch(bool latched, double v_term_mag);

void clamp_pv_states(const PvPlant& p, PvStates& x);

// --------------------------------------------------------------------------
// Wind

/// Fixed PQ injection (system per unit). Below kWindConstCurrentV the
/// injection is held as a constant current to stay bounded during faults.
struct WindInjection {
    int id = 0;
    int bus = 0;
    double p_mw = 0.0;
    double q_mvar = 0.0;
};

inline constexpr double kWindConstCurrentV = 0.5;

Complex wind_current(const WindInjection& w, Complex v_term, double base_mva);

// --------------------------------------------------------------------------

struct DeviceSet {
    std::vector<SyncMachine> machines;
    std::vector<PvPlant> pv_plants;
    std::vector<WindInjection> wind;
};

}  // namespace pvosc::dyn
