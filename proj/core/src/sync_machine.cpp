#include "pvosc/dynmodels.hpp"

#include <algorithm>
#include <cmath>

namespace pvosc::dyn {

namespace {

// Network frame -> machine dq frame (q axis leads d by 90 degrees).
Complex to_dq(Complex v, double delta) { return v * std::polar(1.0, -(delta - M_PI / 2.0)); }
Complex from_dq(Complex v, double delta) { return v * std::polar(1.0, delta - M_PI / 2.0); }

}  // namespace

void SyncMachine::validate() const {
    const auto who = "machine " + std::to_string(id) + ": ";
    if (units < 0) throw std::invalid_argument(who + "negative unit count");
    if (unit_mva <= 0.0) throw std::invalid_argument(who + "unit_mva must be positive");
    if (h <= 0.0) throw std::invalid_argument(who + "H must be positive");
    if (td0_p <= 0.0 || tq0_p <= 0.0) throw std::invalid_argument(who + "open-circuit time constants must be positive");
    if (xd_p <= 0.0 || xd < xd_p) throw std::invalid_argument(who + "requires xd >= xd' > 0");
    if (xq_p <= 0.0 || xq < xq_p) throw std::invalid_argument(who + "requires xq >= xq' > 0");
    if (exciter) {
        if (exciter->ta <= 0.0) throw std::invalid_argument(who + "exciter ta must be positive");
        if (exciter->efd_min > exciter->efd_max) throw std::invalid_argument(who + "efd_min > efd_max");
    }
    if (governor) {
        if (governor->r_droop <= 0.0) throw std::invalid_argument(who + "governor droop must be positive");
        if (governor->tg <= 0.0) throw std::invalid_argument(who + "governor tg must be positive");
        if (governor->p_max <= 0.0) throw std::invalid_argument(who + "governor p_max must be positive");
    }
}

MachineOutputs sync_machine_outputs(const SyncMachine& m, const MachineStates& x, Complex v_term) {
    const Complex vdq = to_dq(v_term, x[kDelta]);
    const double vd = vdq.real();
    const double vq = vdq.imag();
    const double ed = x[kEdp] - vd;
    const double eq = x[kEqp] - vq;
    const double det = m.ra * m.ra + m.xd_p * m.xq_p;

    MachineOutputs out;
    out.id = (m.ra * ed + m.xq_p * eq) / det;
    out.iq = (m.ra * eq - m.xd_p * ed) / det;
    out.p_elec = x[kEdp] * out.id + x[kEqp] * out.iq + (m.xq_p - m.xd_p) * out.id * out.iq;
    out.current = from_dq(Complex(out.id, out.iq), x[kDelta]);
    return out;
}

Complex sync_machine_current(const SyncMachine& m, const MachineStates& x, Complex v_term,
                             double base_mva) {
    if (m.units == 0) return {};
    return sync_machine_outputs(m, x, v_term).current * (m.mva_base() / base_mva);
}

MachineInit init_sync_machine(const SyncMachine& m, Complex v_term, double p_sys, double q_sys,
                              double base_mva) {
    m.validate();
    if (m.units == 0) throw InitError("machine " + std::to_string(m.id) + " has no committed units");
    if (std::abs(v_term) <= 0.0) throw InitError("machine " + std::to_string(m.id) + ": zero terminal voltage");

    const double scale = base_mva / m.mva_base();
    const Complex s(p_sys * scale, q_sys * scale);
    const Complex i = std::conj(s / v_term);
    const Complex e = v_term + Complex(m.ra, m.xq) * i;
    const double delta = std::arg(e);

    const Complex vdq = to_dq(v_term, delta);
    const Complex idq = to_dq(i, delta);
    const double vd = vdq.real(), vq = vdq.imag();
    const double id = idq.real(), iq = idq.imag();

    MachineInit init;
    auto& x = init.states;
    x[kDelta] = delta;
    x[kSpeedDev] = 0.0;
    x[kEqp] = vq + m.ra * iq + m.xd_p * id;
    x[kEdp] = vd + m.ra * id - m.xq_p * iq;
    x[kEfd] = x[kEqp] + (m.xd - m.xd_p) * id;
    x[kPmech] = x[kEdp] * id + x[kEqp] * iq + (m.xq_p - m.xd_p) * id * iq;

    auto& sp = init.setpoints;
    sp.efd0 = x[kEfd];
    sp.pm0 = x[kPmech];
    if (m.exciter) {
        const auto& ex = *m.exciter;
        if (x[kEfd] < ex.efd_min || x[kEfd] > ex.efd_max) {
            throw InitError("machine " + std::to_string(m.id) + ": required field voltage " +
                            std::to_string(x[kEfd]) + " pu is outside the exciter ceiling");
        }
        sp.v_ref = std::abs(v_term) + (ex.ka != 0.0 ? x[kEfd] / ex.ka : 0.0);
    }
    if (m.governor) {
        const auto& gov = *m.governor;
        if (x[kPmech] < 0.0 || x[kPmech] > gov.p_max) {
            throw InitError("machine " + std::to_string(m.id) + ": mechanical power " +
                            std::to_string(x[kPmech]) + " pu is outside [0, p_max]");
        }
        sp.p_ref = x[kPmech];
    }
    return init;
}

MachineStates sync_machine_derivatives(const SyncMachine& m, const MachineSetpoints& sp,
                                       const MachineStates& x, Complex v_term, double omega_s,
                                       bool limit_guard) {
    MachineStates dx{};
    if (m.units == 0) return dx;
    const auto out = sync_machine_outputs(m, x, v_term);

    dx[kDelta] = omega_s * x[kSpeedDev];
    dx[kSpeedDev] = (x[kPmech] - out.p_elec - m.d * x[kSpeedDev]) / (2.0 * m.h);
    dx[kEqp] = (x[kEfd] - x[kEqp] - (m.xd - m.xd_p) * out.id) / m.td0_p;
    dx[kEdp] = (-x[kEdp] + (m.xq - m.xq_p) * out.iq) / m.tq0_p;

    if (m.exciter) {
        const auto& ex = *m.exciter;
        double d = (ex.ka * (sp.v_ref - std::abs(v_term)) - x[kEfd]) / ex.ta;
        if (limit_guard && ((x[kEfd] >= ex.efd_max && d > 0.0) || (x[kEfd] <= ex.efd_min && d < 0.0))) d = 0.0;
        dx[kEfd] = d;
    }
    if (m.governor) {
        const auto& gov = *m.governor;
        double d = (sp.p_ref - x[kSpeedDev] / gov.r_droop - x[kPmech]) / gov.tg;
        if (limit_guard && ((x[kPmech] >= gov.p_max && d > 0.0) || (x[kPmech] <= 0.0 && d < 0.0))) d = 0.0;
        dx[kPmech] = d;
    }
    return dx;
}

void clamp_machine_states(const SyncMachine& m, MachineStates& x) {
    if (m.exciter) x[kEfd] = std::clamp(x[kEfd], m.exciter->efd_min, m.exciter->efd_max);
    if (m.governor) x[kPmech] = std::clamp(x[kPmech], 0.0, m.governor->p_max);
}

}  // namespace pvosc::dyn
