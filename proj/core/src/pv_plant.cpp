#include "pvosc/dynmodels.hpp"

#include <algorithm>
#include <cmath>

namespace pvosc::dyn {

const char* to_string(PvStrategy s) {
    return s == PvStrategy::VoltVarWithSolarControl ? "strategy1" : "strategy2";
}

PvStrategy parse_strategy(const std::string& s) {
    if (s == "strategy1") return PvStrategy::VoltVarWithSolarControl;
    if (s == "strategy2") return PvStrategy::VoltVarWithoutSolarControl;
    throw std::invalid_argument("unknown PV control strategy '" + s + "' (expected strategy1 or strategy2)");
}

void PvPlant::validate() const {
    const auto who = "pv plant " + std::to_string(id) + ": ";
    if (capacity_mw <= 0.0) throw std::invalid_argument(who + "capacity must be positive");
    if (kq <= 0.0) throw std::invalid_argument(who + "kq must be positive");
    if (tv <= 0.0 || tq_meas <= 0.0 || tq_reset <= 0.0) {
        throw std::invalid_argument(who + "time constants must be positive");
    }
    if (i_max <= 0.0) throw std::invalid_argument(who + "i_max must be positive");
}

std::pair<double, double> limit_pv_currents(double ip, double iq, double i_max) {
    const double ip_l = std::clamp(ip, -i_max, i_max);
    const double iq_room = std::sqrt(std::max(0.0, i_max * i_max - ip_l * ip_l));
    const double iq_l = std::clamp(iq, -iq_room, iq_room);
    return {ip_l, iq_l};
}

bool update_pv_latch(bool latched, double v_term_mag) {
    if (!latched && v_term_mag < kPvLatchOn) return true;
    if (latched && v_term_mag > kPvLatchOff) return false;
    return latched;
}

PvInit init_pv_plant(const PvPlant& p, Complex v_term, Complex v_reg, double p_sys, double q_sys,
                     double base_mva) {
    p.validate();
    const double vt = std::abs(v_term);
    if (vt < kPvLatchOff) throw InitError("pv plant " + std::to_string(p.id) + ": terminal voltage too low");
    const double scale = base_mva / p.capacity_mw;
    const double pp = p_sys * scale;
    const double qq = q_sys * scale;

    PvInit init;
    auto& x = init.states;
    x[kIp] = pp / vt;
    x[kIq] = qq / vt;
    x[kQcmd] = qq;
    x[kQmeas] = qq;
    x[kIqCmd] = x[kIq];
    if (x[kIp] * x[kIp] + x[kIq] * x[kIq] > p.i_max * p.i_max * (1.0 + 1e-12)) {
        throw InitError("pv plant " + std::to_string(p.id) + ": initial current exceeds i_max");
    }
    init.setpoints.v_ref = p.v_ref.value_or(std::abs(v_reg));
    init.setpoints.v_term_ref = vt;
    init.setpoints.q_sched = p.q_sched.value_or(qq);
    return init;
}

Complex pv_injection(const PvPlant& p, const PvStates& x, Complex v_term, bool latched,
                     double base_mva) {
    const double vt = std::abs(v_term);
    if (latched || vt < 1e-9) return {};
    const auto [ip, iq] = limit_pv_currents(x[kIp], x[kIq], p.i_max);
    // S = V conj(I) = |V| (ip + j iq)
    return Complex(ip, -iq) * (v_term / vt) * (p.capacity_mw / base_mva);
}

PvStates pv_derivatives(const PvPlant& p, const PvSetpoints& sp, const PvStates& x, Complex v_term,
                        Complex v_reg, bool latched) {
    PvStates dx{};
    if (latched) return dx;
    const double vt = std::max(std::abs(v_term), kPvLatchOff);
    const auto [ip_l, iq_l] = limit_pv_currents(x[kIp], x[kIq], p.i_max);
    (void)ip_l;
    const double q_gen = vt * iq_l;

    dx[kIp] = (p.p_cmd / vt - x[kIp]) / p.tv;
    dx[kQmeas] = (q_gen - x[kQmeas]) / p.tq_meas;

    if (p.strategy == PvStrategy::VoltVarWithSolarControl) {
        dx[kQcmd] = p.kq * (sp.v_ref - std::abs(v_reg));
        const double q_ref = x[kQcmd] + p.kvv * (sp.v_term_ref - vt);
        dx[kIqCmd] = p.kq * p.qreg_rate * (q_ref - x[kQmeas]);
        dx[kIq] = (x[kIqCmd] - x[kIq]) / p.tv;
    } else {
        dx[kQcmd] = (sp.q_sched - x[kQcmd]) / p.tq_reset;
        dx[kIqCmd] = 0.0;
        const double target = x[kQcmd] / vt + p.kvt * (sp.v_term_ref - vt);
        dx[kIq] = (target - x[kIq]) / p.tv;
    }
    return dx;
}

void clamp_pv_states(const PvPlant& p, PvStates& x) {
    const auto [ip, iq] = limit_pv_currents(x[kIp], x[kIq], p.i_max);
    x[kIp] = ip;
    x[kIq] = iq;
    x[kIqCmd] = std::clamp(x[kIqCmd], -p.i_max, p.i_max);
}

Complex wind_current(const WindInjection& w, Complex v_term, double base_mva) {
    const Complex s(w.p_mw / base_mva, w.q_mvar / base_mva);
    const double vm = std::abs(v_term);
    if (vm >= kWindConstCurrentV) return std::conj(s / v_term);
    if (vm < 1e-9) return {};
    // constant-current continuation below the threshold
    return std::conj(s) * (v_term / vm) / kWindConstCurrentV;
}

}  // namespace pvosc::dyn
