#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pvosc/modal.hpp"
#include "pvosc/scenario.hpp"
#include "pvosc/simengine.hpp"
#include "pvosc/study.hpp"

using namespace pvosc;
using sim::Complex;

namespace {

constexpr double kOmegaS = 2.0 * M_PI * 60.0;

PowerSystem bundled(const char* name) { return load_case(std::string(PVOSC_DATA_DIR) + "/cases/" + name); }

// Two classical machines on a tie line; bus 1 exports p pu to the slack.
PowerSystem two_machine(double h1, double h2, double p) {
    const std::string text = R"({"name": "two_machine", "base_mva": 100, "nominal_freq": 60,
      "buses": [{"id": 1, "kind": "pv", "v_mag": 1.0}, {"id": 2, "kind": "slack", "v_mag": 1.0}],
      "branches": [{"id": 1, "from": 1, "to": 2, "x": 0.3}],
      "machines": [
        {"id": 1, "bus": 1, "unit_mva": 100, "p_mw": )" + std::to_string(100.0 * p) + R"(, "h": )" + std::to_string(h1) + R"(,
         "xd": 0.2, "xq": 0.2, "xd_p": 0.2, "xq_p": 0.2, "td0_p": 1e6, "tq0_p": 1e6, "exciter": null, "governor": null},
        {"id": 2, "bus": 2, "unit_mva": 100, "p_mw": 0, "h": )" + std::to_string(h2) + R"(,
         "xd": 0.2, "xq": 0.2, "xd_p": 0.2, "xq_p": 0.2, "td0_p": 1e6, "tq0_p": 1e6, "exciter": null, "governor": null}]})";
    return parse_case(text);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

sim::Event fault(double t, int bus, double dur, double b = -20.0) {
    return {t, sim::SelfClearingFault{bus, dur, {0.0, b}}};
}

// Active load added at t and removed after dur. A reactive fault does not
// move the unloaded SMIB, whose internal EMF is in phase with the bus.
std::vector<sim::Event> pulse(double t, int bus, double dur, double dp) {
    return {{t, sim::LoadStep{bus, dp, 0.0}}, {t + dur, sim::LoadStep{bus, -dp, 0.0}}};
}

}  // namespace

TEST_CASE("SMIB linearized mode matches the analytic swing frequency") {
    const auto lm = sim::linearize(bundled("smib.json"));
    const double ks = 1.0 * 1.0 / (0.2 + 0.3);
    const double f = std::sqrt(kOmegaS * ks / (2.0 * 3.5)) / (2.0 * M_PI);
    CHECK(f == doctest::Approx(1.652).epsilon(1e-3));
    const auto m = sim::electromechanical_mode(lm, 0.1, 3.0);
    REQUIRE(m);
    CHECK(m->frequency == doctest::Approx(f).epsilon(0.01));
    CHECK(std::abs(m->damping_ratio) < 1e-4);
}

TEST_CASE("SMIB ringdown reproduces the analytic frequency") {
    sim::SimOptions o;
    o.t_end = 12.0;
    o.record_dt = 0.02;
    const auto res = sim::simulate(bundled("smib.json"), pulse(0.5, 1, 0.1, 0.2), o);
    REQUIRE(res.usable);
    const auto* c = res.record.find("machine_speed", "1");
    REQUIRE(c);
    const std::vector<double> tail(c->values.begin() + 50, c->values.end());
    const auto d = modal::dominant_mode(modal::matrix_pencil(tail, 0.02), 0.5, 3.0);
    REQUIRE(d);
    const double f = std::sqrt(kOmegaS * 2.0 / 7.0) / (2.0 * M_PI);
    CHECK(d->frequency == doctest::Approx(f).epsilon(0.01));
}

TEST_CASE("two-machine mode matches the analytically linearized pair") {
    for (double p : {0.0, 0.5}) {
        const double h1 = 3.5, h2 = 5.0;
        // internal EMFs from the closed-form power flow
        const double th = std::asin(p * 0.3);
        const Complex v1 = std::polar(1.0, th), v2 = 1.0;
        const Complex i = (v1 - v2) / Complex(0.0, 0.3);
        const Complex e1 = v1 + Complex(0.0, 0.2) * i, e2 = v2 - Complex(0.0, 0.2) * i;
        const double k = std::abs(e1) * std::abs(e2) * std::cos(std::arg(e1) - std::arg(e2)) / 0.7;
        const double f = std::sqrt(kOmegaS * k * (1.0 / (2 * h1) + 1.0 / (2 * h2))) / (2.0 * M_PI);
        const auto m = sim::electromechanical_mode(sim::linearize(two_machine(h1, h2, p)), 0.1, 5.0);
        REQUIRE(m);
        CHECK(m->frequency == doctest::Approx(f).epsilon(0.01));
    }
}

TEST_CASE("doubling inertia scales electromechanical frequencies by 1/sqrt(2)") {
    auto sys = bundled("two_area.json");
    const auto lm = sim::linearize(sys);
    for (auto& m : sys.devices.machines) m.h *= 2.0;
    const auto lm2 = sim::linearize(sys);
    const auto a = sim::electromechanical_mode(lm, 0.1, 1.1), b = sim::electromechanical_mode(lm2, 0.05, 1.1);
    REQUIRE(a);
    REQUIRE(b);
    CHECK(b->frequency / a->frequency == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.02));
}

TEST_CASE("bundled base case is small-signal stable") {
    const auto lm = sim::linearize(bundled("two_area.json"));
    for (Eigen::Index i = 0; i < lm.eigenvalues.size(); ++i) CHECK(lm.eigenvalues[i].real() < 1e-6);
}

TEST_CASE("no events holds the initial state") {
    sim::SimOptions o;
    o.t_end = 10.0;
    for (const char* c : {"two_area.json", "smib.json"}) {
        const auto res = sim::simulate(bundled(c), {}, o);
        REQUIRE(res.usable);
        CHECK(max_abs_diff(res.initial_states, res.final_states) < 1e-6);
        for (const auto& ch : res.record.channels) {
            const auto [lo, hi] = std::minmax_element(ch.values.begin(), ch.values.end());
            CHECK(*hi - *lo < 1e-6);
        }
    }
}

TEST_CASE("generator trip drives average frequency below nominal") {
    sim::SimOptions o;
    o.t_end = 6.0;
    const auto res = sim::simulate(bundled("two_area.json"), {{1.0, sim::GenTrip{2}}}, o);
    REQUIRE(res.usable);
    double mean = 0.0;
    const auto ch = res.record.group("bus_freq");
    for (const auto* c : ch) mean += c->values.back();
    CHECK(mean / static_cast<double>(ch.size()) < 0.0);
}

TEST_CASE("load-pulse ringdown matches the linearized eigenvalue") {
    const auto sys = bundled("two_area.json");
    const auto em = sim::electromechanical_mode(sim::linearize(sys), 0.1, 1.1);
    REQUIRE(em);
    sim::SimOptions o;
    o.t_end = 22.0;
    o.record_dt = 0.05;
    const auto res = sim::simulate(sys, {{1.0, sim::LoadStep{7, 1.0, 0.0}}, {1.1, sim::LoadStep{7, -1.0, 0.0}}}, o);
    REQUIRE(res.usable);
    study::AnalysisOptions a;
    const auto r = study::analyze_ringdown(res.record, a, 1.6, 0.1, 1.1);
    REQUIRE(r.dominant);
    CHECK(r.dominant->frequency == doctest::Approx(em->frequency).epsilon(0.03));
    CHECK(r.dominant->damping_ratio == doctest::Approx(em->damping_ratio).epsilon(0.10));
}

TEST_CASE("bus frequency of ramps, constants and sinusoids") {
    const double dt = 0.01;
    std::vector<double> ramp(500), flat(500, 0.3), sine(2000);
    for (std::size_t k = 0; k < ramp.size(); ++k) ramp[k] = 2.0 * M_PI * 0.1 * dt * double(k);
    const auto yr = sim::bus_frequency(ramp, dt, 0.02);
    for (std::size_t k = 50; k < yr.size(); ++k) CHECK(yr[k] == doctest::Approx(0.1).epsilon(1e-6));
    for (double v : sim::bus_frequency(flat, dt, 0.02)) CHECK(std::abs(v) < 1e-12);
    const double a = 0.2, f = 0.25, tf = 0.05, w = 2.0 * M_PI * f;
    for (std::size_t k = 0; k < sine.size(); ++k) sine[k] = a * std::sin(w * dt * double(k));
    const auto y = sim::bus_frequency(sine, dt, tf);
    // derivative amplitude f*a, times centred-difference and filter gains
    const double expect = f * a * std::sin(w * dt) / (w * dt) / std::sqrt(1.0 + (w * tf) * (w * tf));
    const double peak = *std::max_element(y.begin() + 1000, y.end());
    CHECK(peak == doctest::Approx(expect).epsilon(2e-3));
}

TEST_CASE("simulation is deterministic and independent of same-time event order") {
    const auto sys = bundled("two_area.json");
    sim::SimOptions o;
    o.t_end = 4.0;
    const std::vector<sim::Event> a{fault(1.0, 7, 0.1), {1.0, sim::LoadStep{9, 0.5, 0.0}}, {2.0, sim::LineTrip{3}}};
    std::vector<sim::Event> b{a[2], a[1], a[0]};
    const auto r1 = sim::simulate(sys, a, o), r2 = sim::simulate(sys, a, o), r3 = sim::simulate(sys, b, o);
    REQUIRE(r1.record.channels.size() == r3.record.channels.size());
    for (std::size_t i = 0; i < r1.record.channels.size(); ++i) {
        CHECK(r1.record.channels[i].values == r2.record.channels[i].values);
        CHECK(r1.record.channels[i].values == r3.record.channels[i].values);
    }
}

TEST_CASE("trapezoidal integration converges at second order") {
    const auto sys = bundled("smib.json");
    std::vector<std::vector<double>> ends;
    for (double dt : {0.02, 0.01, 0.005}) {
        sim::SimOptions o;
        o.t_end = 3.0;
        o.dt = dt;
        o.record_dt = 0.1;
        ends.push_back(sim::simulate(sys, pulse(0.5, 1, 0.1, 0.3), o).final_states);
    }
    const double ratio = max_abs_diff(ends[0], ends[1]) / max_abs_diff(ends[1], ends[2]);
    CHECK(ratio >= 3.5);
    CHECK(ratio <= 4.5);
}

TEST_CASE("algebraic residual and current limit hold at every accepted step") {
    auto sf = scen::load_scenario_file(std::string(PVOSC_DATA_DIR) + "/scenarios/two_area_regions.json");
    const auto base = load_case(sf.case_path);
    scen::fill_region_totals(sf.regions, base);
    scen::Scenario sc;
    sc.penetration = 0.65;
    sc.kq = 0.5;
    sc.allocation = scen::allocate_pv(sf.regions, sf.interfaces, 0.65 * scen::solved_generation_mw(base));
    const auto d = scen::displace_generation(base, sf.regions, sc);
    sim::SimOptions o;
    o.t_end = 5.0;
    const auto res = sim::simulate(d.system, {fault(1.0, 7, 0.1)}, o);
    REQUIRE(res.usable);
    CHECK(res.max_algebraic_residual < 1e-8);
    CHECK(res.max_current_limit_excess <= 1e-12);
}

TEST_CASE("event validation") {
    CHECK_THROWS(sim::validate_events({fault(1.0, 7, 0.0)}));
    CHECK_THROWS(sim::validate_events({{-1.0, sim::LineTrip{1}}}));
    const auto evs = sim::parse_events(R"([{"time": 1, "type": "fault", "bus": 7, "duration": 0.1, "b": -20}])");
    REQUIRE(evs.size() == 1);
    CHECK(sim::parse_events(sim::events_to_json(evs)).size() == 1);
    CHECK_THROWS(sim::parse_events(R"([{"time": 1, "type": "meteor"}])"));
}

TEST_CASE("a sustained deep fault is flagged as voltage collapse") {
    sim::SimOptions o;
    o.t_end = 4.0;
    const auto res = sim::simulate(bundled("two_area.json"), {fault(0.5, 8, 2.0, -1e4)}, o);
    CHECK_FALSE(res.usable);
    CHECK(res.voltage_collapse);
}
