#include "dae_model.hpp"

#include <algorithm>
#include <cmath>

#include "pvosc/simengine.hpp"

namespace pvosc::sim::detail {

using Complex = std::complex<double>;

DaeModel::DaeModel(const PowerSystem& sys, const SystemPowerFlow& pf) : sys_(sys) {
    const auto& net = sys_.net;
    nb_ = static_cast<int>(net.buses.size());
    omega_s_ = 2.0 * M_PI * net.nominal_freq;
    const double base = net.base_mva;

    v0_.resize(2 * nb_);
    load_y_.assign(static_cast<std::size_t>(nb_), Complex{});
    extra_y_.assign(static_cast<std::size_t>(nb_), Complex{});
    infinite_.assign(static_cast<std::size_t>(nb_), false);
    for (int i = 0; i < nb_; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        const Complex vi = pf.bus.voltage[iu];
        v0_[2 * i] = vi.real();
        v0_[2 * i + 1] = vi.imag();
        const auto& b = net.buses[iu];
        const double vm2 = std::norm(vi);
        load_y_[iu] = Complex(b.p_load, -b.q_load) / vm2;
        infinite_[iu] = b.infinite;
    }

    std::vector<double> xs;
    const auto& ms = sys_.devices.machines;
    for (std::size_t k = 0; k < ms.size(); ++k) {
        if (ms[k].units == 0) continue;
        const int bi = static_cast<int>(net.index_of(ms[k].bus));
        const auto init = dyn::init_sync_machine(ms[k], pf.bus.voltage[static_cast<std::size_t>(bi)],
                                                 pf.machines[k].p, pf.machines[k].q, base);
        machines_.push_back({k, nx_, bi, init.setpoints, false});
        const std::string tag = "machine" + std::to_string(ms[k].id) + ".";
        for (const char* s : {"delta", "speed", "eqp", "edp", "efd", "pm"}) names_.push_back(tag + s);
        xs.insert(xs.end(), init.states.begin(), init.states.end());
        nx_ += dyn::kMachineStateCount;
    }
    const auto& ps = sys_.devices.pv_plants;
    for (std::size_t k = 0; k < ps.size(); ++k) {
        const int bi = static_cast<int>(net.index_of(ps[k].bus));
        const int ri = ps[k].reg_bus == 0 ? bi : static_cast<int>(net.index_of(ps[k].reg_bus));
        const auto init = dyn::init_pv_plant(ps[k], pf.bus.voltage[static_cast<std::size_t>(bi)],
                                             pf.bus.voltage[static_cast<std::size_t>(ri)],
                                             pf.pv_plants[k].p, pf.pv_plants[k].q, base);
        pv_.push_back({k, nx_, bi, ri, init.setpoints, false});
        const std::string tag = "pv" + std::to_string(ps[k].id) + ".";
        for (const char* s : {"ip", "iq", "q_cmd", "q_meas", "iq_cmd"}) names_.push_back(tag + s);
        xs.insert(xs.end(), init.states.begin(), init.states.end());
        nx_ += dyn::kPvStateCount;
    }
    const auto& ws = sys_.devices.wind;
    for (std::size_t k = 0; k < ws.size(); ++k) {
        wind_.push_back({k, static_cast<int>(net.index_of(ws[k].bus))});
    }
    x0_ = Eigen::Map<Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
    rebuild_network();
}

void DaeModel::rebuild_network() {
    const auto y = net::build_admittance(sys_.net);
    ynet_.setZero(2 * nb_, 2 * nb_);
    auto stamp = [&](int i, int j, Complex val) {
        ynet_(2 * i, 2 * j) += val.real();
        ynet_(2 * i, 2 * j + 1) -= val.imag();
        ynet_(2 * i + 1, 2 * j) += val.imag();
        ynet_(2 * i + 1, 2 * j + 1) += val.real();
    };
    for (Eigen::Index k = 0; k < y.outerSize(); ++k) {
        for (net::AdmittanceMatrix::InnerIterator it(y, k); it; ++it) {
            stamp(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        }
    }
    for (int i = 0; i < nb_; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        stamp(i, i, load_y_[iu] + extra_y_[iu]);
    }
}

void DaeModel::injections(const Eigen::VectorXd& x, const Eigen::VectorXd& v, Eigen::VectorXd& cur) const {
    const double base = sys_.net.base_mva;
    cur.setZero(2 * nb_);
    auto add = [&](int bus, Complex i) {
        cur[2 * bus] += i.real();
        cur[2 * bus + 1] += i.imag();
    };
    for (const auto& s : machines_) {
        if (s.tripped) continue;
        dyn::MachineStates xs;
        std::copy_n(x.data() + s.offset, dyn::kMachineStateCount, xs.begin());
        add(s.bus, dyn::sync_machine_current(sys_.devices.machines[s.device], xs, bus_voltage(v, s.bus), base));
    }
    for (const auto& s : pv_) {
        dyn::PvStates xs;
        std::copy_n(x.data() + s.offset, dyn::kPvStateCount, xs.begin());
        add(s.bus, dyn::pv_injection(sys_.devices.pv_plants[s.device], xs, bus_voltage(v, s.bus), s.latched, base));
    }
    for (const auto& s : wind_) {
        add(s.bus, dyn::wind_current(sys_.devices.wind[s.device], bus_voltage(v, s.bus), base));
    }
}

void DaeModel::f(const Eigen::VectorXd& x, const Eigen::VectorXd& v, Eigen::VectorXd& out) const {
    out.setZero(nx_);
    for (const auto& s : machines_) {
        if (s.tripped) continue;
        dyn::MachineStates xs;
        std::copy_n(x.data() + s.offset, dyn::kMachineStateCount, xs.begin());
        auto d = dyn::sync_machine_derivatives(sys_.devices.machines[s.device], s.sp, xs,
                                               bus_voltage(v, s.bus), omega_s_, false);
        if (s.hold_efd) d[dyn::kEfd] = 0.0;
        if (s.hold_pm) d[dyn::kPmech] = 0.0;
        std::copy(d.begin(), d.end(), out.data() + s.offset);
    }
    for (const auto& s : pv_) {
        dyn::PvStates xs;
        std::copy_n(x.data() + s.offset, dyn::kPvStateCount, xs.begin());
        const auto d = dyn::pv_derivatives(sys_.devices.pv_plants[s.device], s.sp, xs, bus_voltage(v, s.bus),
                                           bus_voltage(v, s.reg_bus), s.latched);
        std::copy(d.begin(), d.end(), out.data() + s.offset);
    }
}

void DaeModel::g(const Eigen::VectorXd& x, const Eigen::VectorXd& v, Eigen::VectorXd& out) const {
    Eigen::VectorXd cur;
    injections(x, v, cur);
    out.noalias() = ynet_ * v;
    out -= cur;
    for (int i = 0; i < nb_; ++i) {
        if (!infinite_[static_cast<std::size_t>(i)]) continue;
        out[2 * i] = v[2 * i] - v0_[2 * i];
        out[2 * i + 1] = v[2 * i + 1] - v0_[2 * i + 1];
    }
}

std::pair<double, int> DaeModel::worst_bus(const Eigen::VectorXd& gres) const {
    double worst = 0.0;
    int idx = 0;
    for (int i = 0; i < nb_; ++i) {
        const double m = std::hypot(gres[2 * i], gres[2 * i + 1]);
        if (m > worst) {
            worst = m;
            idx = i;
        }
    }
    return {worst, idx};
}

int DaeModel::solve_algebraic(const Eigen::VectorXd& x, Eigen::VectorXd& v, double tol, int max_iter) const {
    const int n = nv();
    Eigen::VectorXd r(n), rp(n);
    g(x, v, r);
    for (int it = 0; it < max_iter; ++it) {
        if (r.cwiseAbs().maxCoeff() < tol) return it;
        Eigen::MatrixXd jac(n, n);
        for (int j = 0; j < n; ++j) {
            const double h = 1e-7 * std::max(1.0, std::abs(v[j]));
            const double keep = v[j];
            v[j] = keep + h;
            g(x, v, rp);
            v[j] = keep;
            jac.col(j) = (rp - r) / h;
        }
        v -= jac.partialPivLu().solve(r);
        g(x, v, r);
    }
    if (r.cwiseAbs().maxCoeff() < tol) return max_iter;
    const auto [worst, idx] = worst_bus(r);
    throw SimulationError("network solution did not converge (residual " + std::to_string(worst) + " at bus " +
                              std::to_string(bus_id(idx)) + ")",
                          0.0, bus_id(idx));
}

bool DaeModel::clamp(Eigen::VectorXd& x) const {
    bool moved = false;
    for (const auto& s : machines_) {
        dyn::MachineStates xs;
        std::copy_n(x.data() + s.offset, dyn::kMachineStateCount, xs.begin());
        const auto before = xs;
        dyn::clamp_machine_states(sys_.devices.machines[s.device], xs);
        if (xs != before) {
            moved = true;
            std::copy(xs.begin(), xs.end(), x.data() + s.offset);
        }
    }
    for (const auto& s : pv_) {
        dyn::PvStates xs;
        std::copy_n(x.data() + s.offset, dyn::kPvStateCount, xs.begin());
        const auto before = xs;
        dyn::clamp_pv_states(sys_.devices.pv_plants[s.device], xs);
        if (xs != before) {
            moved = true;
            std::copy(xs.begin(), xs.end(), x.data() + s.offset);
        }
    }
    return moved;
}

bool DaeModel::freeze_limiters(const Eigen::VectorXd& x, const Eigen::VectorXd& v) {
    bool changed = false;
    constexpr double tol = 1e-9;
    for (auto& s : machines_) {
        if (s.tripped) continue;
        const auto& m = sys_.devices.machines[s.device];
        dyn::MachineStates xs;
        std::copy_n(x.data() + s.offset, dyn::kMachineStateCount, xs.begin());
        const auto d = dyn::sync_machine_derivatives(m, s.sp, xs, bus_voltage(v, s.bus), omega_s_, false);
        bool he = false, hp = false;
        if (m.exciter) {
            he = (xs[dyn::kEfd] >= m.exciter->efd_max - tol && d[dyn::kEfd] > 0.0) ||
                 (xs[dyn::kEfd] <= m.exciter->efd_min + tol && d[dyn::kEfd] < 0.0);
        }
        if (m.governor) {
            hp = (xs[dyn::kPmech] >= m.governor->p_max - tol && d[dyn::kPmech] > 0.0) ||
                 (xs[dyn::kPmech] <= tol && d[dyn::kPmech] < 0.0);
        }
        changed |= he != s.hold_efd || hp != s.hold_pm;
        s.hold_efd = he;
        s.hold_pm = hp;
    }
    return changed;
}

bool DaeModel::update_latches(const Eigen::VectorXd& v) {
    bool changed = false;
    for (auto& s : pv_) {
        const bool next = dyn::update_pv_latch(s.latched, std::abs(bus_voltage(v, s.bus)));
        changed |= next != s.latched;
        s.latched = next;
    }
    return changed;
}

double DaeModel::current_limit_excess(const Eigen::VectorXd& x) const {
    double worst = -1e300;
    for (const auto& s : pv_) {
        const auto& p = sys_.devices.pv_plants[s.device];
        const auto [ip, iq] = dyn::limit_pv_currents(x[s.offset + dyn::kIp], x[s.offset + dyn::kIq], p.i_max);
        worst = std::max(worst, ip * ip + iq * iq - p.i_max * p.i_max);
    }
    return pv_.empty() ? 0.0 : worst;
}

void DaeModel::trip_branch(int branch_id) {
    for (auto& br : sys_.net.branches) {
        if (br.id == branch_id) {
            br.in_service = false;
            rebuild_network();
            return;
        }
    }
    throw SimulationError("line trip references unknown branch " + std::to_string(branch_id), 0.0, 0);
}

void DaeModel::trip_machine(int machine_id) {
    for (auto& s : machines_) {
        if (sys_.devices.machines[s.device].id == machine_id) {
            s.tripped = true;
            return;
        }
    }
    throw SimulationError("generator trip references unknown machine " + std::to_string(machine_id), 0.0, 0);
}

void DaeModel::add_shunt(int bus_id, Complex y) {
    const auto i = sys_.net.index_of(bus_id);
    extra_y_[i] += y;
    rebuild_network();
}

void DaeModel::add_load_step(int bus_id, double dp, double dq, const Eigen::VectorXd& v) {
    const auto i = static_cast<int>(sys_.net.index_of(bus_id));
    const double vm2 = std::norm(bus_voltage(v, i));
    extra_y_[static_cast<std::size_t>(i)] += Complex(dp, -dq) / vm2;
    rebuild_network();
}

Complex DaeModel::machine_power(const MachineSlot& s, const Eigen::VectorXd& x, const Eigen::VectorXd& v) const {
    if (s.tripped) return {};
    dyn::MachineStates xs;
    std::copy_n(x.data() + s.offset, dyn::kMachineStateCount, xs.begin());
    const Complex vt = bus_voltage(v, s.bus);
    return vt * std::conj(dyn::sync_machine_current(sys_.devices.machines[s.device], xs, vt, sys_.net.base_mva));
}

Complex DaeModel::pv_power(const PvSlot& s, const Eigen::VectorXd& x, const Eigen::VectorXd& v) const {
    dyn::PvStates xs;
    std::copy_n(x.data() + s.offset, dyn::kPvStateCount, xs.begin());
    const Complex vt = bus_voltage(v, s.bus);
    return vt * std::conj(dyn::pv_injection(sys_.devices.pv_plants[s.device], xs, vt, s.latched, sys_.net.base_mva));
}

}  // namespace pvosc::sim::detail
