#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "pvosc/system.hpp"

using namespace pvosc;
using namespace pvosc::dyn;

namespace {

constexpr double kOmegaS = 2.0 * M_PI * 60.0;

double max_abs(const auto& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

PvPlant plant(PvStrategy s) {
    PvPlant p;
    p.id = 1;
    p.bus = 1;
    p.capacity_mw = 100.0;
    p.strategy = s;
    return p;
}

// Classical RK4 on the PV states at frozen voltages.
PvStates step_rk4(const PvPlant& p, const PvSetpoints& sp, PvStates x, Complex v, double h) {
    auto f = [&](const PvStates& s) { return pv_derivatives(p, sp, s, v, v, false); };
    auto axpy = [](PvStates a, const PvStates& d, double k) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += k * d[i];
        return a;
    };
    const auto k1 = f(x), k2 = f(axpy(x, k1, h / 2)), k3 = f(axpy(x, k2, h / 2)), k4 = f(axpy(x, k3, h));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    return x;
}

}  // namespace

TEST_CASE("machine at no load is in equilibrium") {
    SyncMachine m;
    const auto init = init_sync_machine(m, {1.0, 0.0}, 0.0, 0.0, 100.0);
    CHECK(init.states[kSpeedDev] == 0.0);
    const auto d = sync_machine_derivatives(m, init.setpoints, init.states, {1.0, 0.0}, kOmegaS);
    CHECK(max_abs(d) < 1e-9);
}

TEST_CASE("doubling H leaves the operating point unchanged") {
    SyncMachine m;
    const Complex v = std::polar(1.02, 0.2);
    const auto a = init_sync_machine(m, v, 0.6, 0.1, 100.0);
    m.h *= 2.0;
    const auto b = init_sync_machine(m, v, 0.6, 0.1, 100.0);
    for (std::size_t i = 0; i < a.states.size(); ++i) CHECK(a.states[i] == doctest::Approx(b.states[i]).epsilon(1e-14));
}

TEST_CASE("every device of the two-area case starts in equilibrium") {
    const auto sys = load_case(std::string(PVOSC_DATA_DIR) + "/cases/two_area.json");
    const auto pf = solve_system_power_flow(sys);
    const double base = sys.net.base_mva;
    for (std::size_t k = 0; k < sys.devices.machines.size(); ++k) {
        const auto& m = sys.devices.machines[k];
        const auto v = pf.bus.voltage[sys.net.index_of(m.bus)];
        const auto init = init_sync_machine(m, v, pf.machines[k].p, pf.machines[k].q, base);
        const auto d = sync_machine_derivatives(m, init.setpoints, init.states, v, kOmegaS);
        CHECK(max_abs(d) < 1e-9);
        // network injection reproduces the power-flow share
        const auto i = sync_machine_current(m, init.states, v, base);
        const auto s = v * std::conj(i);
        CHECK(s.real() == doctest::Approx(pf.machines[k].p).epsilon(1e-9));
        CHECK(s.imag() == doctest::Approx(pf.machines[k].q).epsilon(1e-9));
    }
}

TEST_CASE("exciter output stays inside its ceiling") {
    SyncMachine m;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.5), a(-M_PI, M_PI);
    const auto init = init_sync_machine(m, {1.0, 0.0}, 0.5, 0.1, 100.0);
    auto x = init.states;
    for (int k = 0; k < 20000; ++k) {
        const Complex v = std::polar(u(rng), a(rng));
        const auto d = sync_machine_derivatives(m, init.setpoints, x, v, kOmegaS);
        if (x[kEfd] >= m.exciter->efd_max) CHECK(d[kEfd] <= 0.0);
        if (x[kEfd] <= m.exciter->efd_min) CHECK(d[kEfd] >= 0.0);
        x[kEfd] += 0.01 * d[kEfd];
        clamp_machine_states(m, x);
        REQUIRE(x[kEfd] <= m.exciter->efd_max);
        REQUIRE(x[kEfd] >= m.exciter->efd_min);
    }
}

TEST_CASE("PV active-priority current limit") {
    const auto [ip, iq] = limit_pv_currents(0.9, 0.9, 1.0);
    CHECK(ip == 0.9);
    CHECK(iq == doctest::Approx(std::sqrt(1.0 - 0.81)).epsilon(1e-12));
    CHECK(iq == doctest::Approx(0.43589).epsilon(1e-5));
    const auto [ip2, iq2] = limit_pv_currents(1.3, -0.4, 1.0);
    CHECK(ip2 == 1.0);
    CHECK(iq2 == 0.0);
    const auto [ip3, iq3] = limit_pv_currents(0.5, -0.2, 1.0);
    CHECK(ip3 == 0.5);
    CHECK(iq3 == -0.2);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int k = 0; k < 1000; ++k) {
        const auto [p, q] = limit_pv_currents(std::abs(u(rng)), u(rng), 1.1);
        CHECK(p * p + q * q <= 1.1 * 1.1 + 1e-12);
    }
}

TEST_CASE("PV injection follows its currents and the latch") {
    auto p = plant(PvStrategy::VoltVarWithSolarControl);
    PvStates x{};
    x[kIp] = 0.5;
    const Complex v{1.0, 0.0};
    const auto s = v * std::conj(pv_injection(p, x, v, false, 100.0));
    CHECK(s.real() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::abs(s.imag()) < 1e-12);
    CHECK(update_pv_latch(false, 0.005));
    CHECK(std::abs(pv_injection(p, x, {0.005, 0.0}, true, 100.0)) == 0.0);
    CHECK(update_pv_latch(true, 0.03));   // hysteresis: still latched
    CHECK_FALSE(update_pv_latch(true, 0.06));
}

TEST_CASE("Strategy 1 reactive command integrates the regulated-bus error") {
    auto p = plant(PvStrategy::VoltVarWithSolarControl);
    p.kq = 0.1;
    p.p_cmd = 0.8;
    const Complex v{1.0, 0.0};
    const auto init = init_pv_plant(p, v, v, 0.8, 0.0, 100.0);
    const auto d0 = pv_derivatives(p, init.setpoints, init.states, v, v, false);
    CHECK(max_abs(d0) < 1e-9);
    auto sp = init.setpoints;
    sp.v_ref = 1.02;
    const auto d = pv_derivatives(p, sp, init.states, v, v, false);
    CHECK(d[kQcmd] == doctest::Approx(0.002).epsilon(1e-12));
}

TEST_CASE("PV steady state depends only on voltages and commands") {
    for (auto s : {PvStrategy::VoltVarWithSolarControl, PvStrategy::VoltVarWithoutSolarControl}) {
        auto p = plant(s);
        p.p_cmd = 0.7;
        const Complex v = std::polar(1.01, 0.3);
        const auto init = init_pv_plant(p, v, v, 0.7, 0.05, 100.0);
        CHECK(max_abs(pv_derivatives(p, init.setpoints, init.states, v, v, false)) < 1e-9);
        // a pure rotation of the phasors (any system angle drift) changes nothing in the power delivered
        const Complex rot = std::polar(1.0, 1.1);
        CHECK(max_abs(pv_derivatives(p, init.setpoints, init.states, v * rot, v * rot, false)) < 1e-9);
        const auto s0 = v * std::conj(pv_injection(p, init.states, v, false, 100.0));
        const auto s1 = v * rot * std::conj(pv_injection(p, init.states, v * rot, false, 100.0));
        CHECK(std::abs(s0 - s1) < 1e-12);
        CHECK(s0.real() == doctest::Approx(0.7).epsilon(1e-9));
        CHECK(s0.imag() == doctest::Approx(0.05).epsilon(1e-9));
    }
}

TEST_CASE("Strategy 2 reactive command relaxes with tq_reset") {
    auto p = plant(PvStrategy::VoltVarWithoutSolarControl);
    p.tq_reset = 30.0;
    const Complex v{1.0, 0.0};
    const auto init = init_pv_plant(p, v, v, 0.5, 0.0, 100.0);
    auto x = init.states;
    const double q0 = init.setpoints.q_sched;
    x[kQcmd] = q0 + 0.3;
    const double h = 0.01;
    double t = 0.0, tau = -1.0;
    const double e1 = 0.3 * std::exp(-1.0);
    while (t < 90.0 - 1e-9) {
        const double before = x[kQcmd] - q0;
        x = step_rk4(p, init.setpoints, x, v, h);
        t += h;
        const double after = x[kQcmd] - q0;
        if (tau < 0.0 && before > e1 && after <= e1) tau = t - h + h * (before - e1) / (before - after);
    }
    CHECK(tau == doctest::Approx(30.0).epsilon(0.02));
    CHECK(std::abs(x[kQcmd] - q0) < 0.05 * 0.3);
}

TEST_CASE("wind injection is constant power above the threshold") {
    WindInjection w{1, 1, 50.0, 10.0};
    const Complex v = std::polar(0.97, -0.2);
    const auto s = v * std::conj(wind_current(w, v, 100.0));
    CHECK(s.real() == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.imag() == doctest::Approx(0.1).epsilon(1e-12));
    const auto i_lo = std::abs(wind_current(w, {0.2, 0.0}, 100.0));
    CHECK(std::isfinite(i_lo));
    CHECK(i_lo == doctest::Approx(std::abs(wind_current(w, {0.1, 0.0}, 100.0))).epsilon(1e-12));
}

TEST_CASE("parameter validation") {
    SyncMachine m;
    m.h = 0.0;
    CHECK_THROWS(m.validate());
    auto p = plant(PvStrategy::VoltVarWithSolarControl);
    p.i_max = -1.0;
    CHECK_THROWS(p.validate());
    CHECK(parse_strategy("strategy2") == PvStrategy::VoltVarWithoutSolarControl);
    CHECK_THROWS(parse_strategy("strategy3"));
}
