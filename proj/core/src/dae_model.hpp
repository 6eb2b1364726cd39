#pragma once

// Semi-explicit DAE assembled from a PowerSystem:
//   x' = f(x, v)      device states
//   0  = g(x, v)      network current balance, v = [Re V1, Im V1, Re V2, ...]
// Loads are constant admittances sized at the initial voltage.

#include <complex>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pvosc/system.hpp"

namespace pvosc::sim::detail {

class DaeModel {
public:
    DaeModel(const PowerSystem& sys, const SystemPowerFlow& pf);

    int nx() const { return nx_; }
    int nv() const { return 2 * nb_; }
    int nbus() const { return nb_; }

    const Eigen::VectorXd& x0() const { return x0_; }
    const Eigen::VectorXd& v0() const { return v0_; }

    void f(const Eigen::VectorXd& x, const Eigen::VectorXd& v, Eigen::VectorXd& out) const;
    void g(const Eigen::VectorXd& x, const Eigen::VectorXd& v, Eigen::VectorXd& out) const;

    /// Solve g(x, v) = 0 for v with x fixed (Newton, dense). Returns iterations; throws on failure.
    int solve_algebraic(const Eigen::VectorXd& x, Eigen::VectorXd& v, double tol, int max_iter) const;

    /// Clamp limited states in place; returns true if anything moved.
    bool clamp(Eigen::VectorXd& x) const;
    /// Decide which limited states sit on a bound and are pushed outward at
    /// (x, v); those get a zero derivative until the next call. Returns true on change.
    bool freeze_limiters(const Eigen::VectorXd& x, const Eigen::VectorXd& v);
    /// Update PV low-voltage latches from v; returns true if any latch changed.
    bool update_latches(const Eigen::VectorXd& v);
    /// Max over PV plants of (ip^2 + iq^2 - i_max^2) using limited currents.
    double current_limit_excess(const Eigen::VectorXd& x) const;

    // network edits (rebuild the admittance)
    void trip_branch(int branch_id);
    void trip_machine(int machine_id);
    void add_shunt(int bus_id, std::complex<double> y);
    void add_load_step(int bus_id, double dp, double dq, const Eigen::VectorXd& v);

    std::complex<double> bus_voltage(const Eigen::VectorXd& v, int idx) const {
        return {v[2 * idx], v[2 * idx + 1]};
    }

    const PowerSystem& system() const { return sys_; }
    const std::vector<std::string>& state_names() const { return names_; }
    int bus_id(int idx) const { return sys_.net.buses[static_cast<std::size_t>(idx)].id; }

    // layout
    struct MachineSlot {
        std::size_t device;  // index into devices.machines
        int offset;
        int bus;             // bus index
        dyn::MachineSetpoints sp;
        bool tripped = false;
        bool hold_efd = false;  // limiter status frozen over a step
        bool hold_pm = false;
    };
    struct PvSlot {
        std::size_t device;
        int offset;
        int bus;
        int reg_bus;
        dyn::PvSetpoints sp;
        bool latched = false;
    };
    struct WindSlot {
        std::size_t device;
        int bus;
    };
    const std::vector<MachineSlot>& machines() const { return machines_; }
    const std::vector<PvSlot>& pv() const { return pv_; }

    /// Device terminal outputs (system pu) for recording.
    std::complex<double> machine_power(const MachineSlot& s, const Eigen::VectorXd& x, const Eigen::VectorXd& v) const;
    std::complex<double> pv_power(const PvSlot& s, const Eigen::VectorXd& x, const Eigen::VectorXd& v) const;

    /// Residual max-norm and the bus index with the largest current mismatch.
    std::pair<double, int> worst_bus(const Eigen::VectorXd& gres) const;

private:
    void rebuild_network();
    void injections(const Eigen::VectorXd& x, const Eigen::VectorXd& v, Eigen::VectorXd& cur) const;

    PowerSystem sys_;
    int nb_ = 0;
    int nx_ = 0;
    double omega_s_ = 0.0;
    std::vector<MachineSlot> machines_;
    std::vector<PvSlot> pv_;
    std::vector<WindSlot> wind_;
    std::vector<std::complex<double>> load_y_;   // per bus
    std::vector<std::complex<double>> extra_y_;  // faults, load steps
    std::vector<bool> infinite_;
    Eigen::MatrixXd ynet_;  // 2nb x 2nb real form of the admittance incl. loads
    Eigen::VectorXd x0_, v0_;
    std::vector<std::string> names_;
};

}  // namespace pvosc::sim::detail
