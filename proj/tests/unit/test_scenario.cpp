#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "pvosc/scenario.hpp"

using namespace pvosc;

namespace {

struct Bundle {
    PowerSystem base;
    scen::ScenarioFile file;
};

Bundle bundled() {
    Bundle b;
    b.file = scen::load_scenario_file(std::string(PVOSC_DATA_DIR) + "/scenarios/two_area_regions.json");
    b.base = load_case(b.file.case_path);
    scen::fill_region_totals(b.file.regions, b.base);
    return b;
}

scen::DisplacementResult displace(const Bundle& b, double pen, double wind) {
    scen::Scenario sc;
    sc.penetration = pen;
    sc.wind_fraction = wind;
    const double target = pen * scen::solved_generation_mw(b.base);
    sc.allocation = scen::allocate_pv(b.file.regions, b.file.interfaces, target);
    return scen::displace_generation(b.base, b.file.regions, sc);
}

// generation minus load minus losses, MW
double balance(const PowerSystem& sys) {
    const auto pf = solve_system_power_flow(sys);
    const auto y = net::build_admittance(sys.net);
    const auto s = net::power_injections(y, pf.bus.voltage);
    double inj = 0.0;
    for (const auto& x : s) inj += x.real();  // = losses
    double gen = 0.0, load = 0.0;
    for (const auto& m : pf.machines) gen += m.p;
    for (const auto& p : pf.pv_plants) gen += p.p;
    for (const auto& w : pf.wind) gen += w.p;
    for (const auto& bus : sys.net.buses) load += bus.p_load;
    return (gen - load - inj) * sys.net.base_mva;
}

}  // namespace

TEST_CASE("merit order without binding interfaces") {
    std::vector<scen::Region> r(2);
    r[0] = {.id = 1, .buses = {1}, .pv_cost = 20.0, .cap_mw = 50.0, .existing_gen_mw = 200.0, .load_mw = 100.0};
    r[1] = {.id = 2, .buses = {2}, .pv_cost = 10.0, .cap_mw = 50.0, .existing_gen_mw = 200.0, .load_mw = 100.0};
    const std::vector<scen::Interface> f{{1, 2, 500.0}};
    const auto a = scen::allocate_pv(r, f, 60.0);
    CHECK(a[0] == doctest::Approx(10.0));
    CHECK(a[1] == doctest::Approx(50.0));
    const auto z = scen::allocate_pv(r, f, 0.0);
    CHECK(z[0] == 0.0);
    CHECK(z[1] == 0.0);
    CHECK_THROWS_AS(scen::allocate_pv(r, f, 101.0), scen::AllocationError);
}

TEST_CASE("binding interface shifts PV and reports the cut") {
    std::vector<scen::Region> r(2);
    r[0] = {.id = 1, .buses = {1}, .pv_cost = 10.0, .cap_mw = 100.0, .existing_gen_mw = 0.0, .load_mw = 20.0};
    r[1] = {.id = 2, .buses = {2}, .pv_cost = 20.0, .cap_mw = 100.0, .existing_gen_mw = 200.0, .load_mw = 100.0};
    const auto a = scen::allocate_pv(r, {{1, 2, 30.0}}, 80.0);
    CHECK(a[0] == doctest::Approx(50.0));
    CHECK(a[1] == doctest::Approx(30.0));
    try {
        std::vector<scen::Region> r2 = r;
        r2[1].cap_mw = 0.0;
        scen::allocate_pv(r2, {{1, 2, 30.0}}, 80.0);
        FAIL("expected infeasible");
    } catch (const scen::AllocationError& e) {
        REQUIRE(e.binding_interfaces().size() == 1);
        CHECK(e.binding_interfaces()[0] == "1-2");
    }
}

TEST_CASE("allocation cost equals brute-force minimum on discretized instances") {
    int feasible = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto in = oracle::random_instance(seed);
        const auto best = oracle::brute_force_min_cost(in, 10);
        if (!best) {
            CHECK_THROWS_AS(scen::allocate_pv(in.regions, in.interfaces, double(in.target)), scen::AllocationError);
            continue;
        }
        ++feasible;
        const auto a = scen::allocate_pv(in.regions, in.interfaces, double(in.target));
        CHECK(std::accumulate(a.begin(), a.end(), 0.0) == doctest::Approx(double(in.target)));
        CHECK(scen::allocation_cost(in.regions, a) == doctest::Approx(*best).epsilon(1e-12));
        CHECK(scen::transport_feasible(in.regions, in.interfaces, a));
    }
    CHECK(feasible > 50);
}

TEST_CASE("region validation") {
    std::vector<scen::Region> r(2);
    r[0] = {.id = 1, .buses = {1}};
    r[1] = {.id = 1, .buses = {2}};
    CHECK_THROWS_AS(scen::validate_regions(r, {}), scen::AllocationError);
    r[1].id = 2;
    r[1].buses = {1};
    CHECK_THROWS_AS(scen::validate_regions(r, {}), scen::AllocationError);
    r[1].buses = {2};
    CHECK_THROWS_AS(scen::validate_regions(r, {{1, 3, 10.0}}), scen::AllocationError);
    CHECK_NOTHROW(scen::validate_regions(r, {{1, 2, 10.0}}));
}

TEST_CASE("zero penetration and zero wind is the identity") {
    const auto b = bundled();
    const auto d = displace(b, 0.0, 0.0);
    CHECK(d.system.devices.machines.size() == b.base.devices.machines.size());
    for (std::size_t i = 0; i < d.system.devices.machines.size(); ++i) {
        CHECK(d.system.devices.machines[i].units == b.base.devices.machines[i].units);
        CHECK(d.system.devices.machines[i].p_mw == b.base.devices.machines[i].p_mw);
    }
    CHECK(d.system.devices.pv_plants.empty());
    CHECK(d.system.devices.wind.empty());
    CHECK(d.summary.inertia == b.base.aggregate_inertia());
}

TEST_CASE("displacement keeps power balance and hits the target") {
    const auto b = bundled();
    CHECK(std::abs(balance(b.base)) < 1e-4);
    double last_inertia = b.base.aggregate_inertia();
    for (double pen : {0.05, 0.25, 0.45, 0.65}) {
        const auto d = displace(b, pen, 0.15);
        CHECK(std::abs(balance(d.system)) < 1e-4);
        CHECK(std::abs(d.summary.achieved_penetration - pen) < 0.005);
        CHECK(d.summary.pv_mw == doctest::Approx(pen * d.summary.base_generation_mw));
        CHECK(d.summary.wind_mw == doctest::Approx(0.15 * d.summary.base_generation_mw));
        CHECK(d.summary.inertia < last_inertia);
        last_inertia = d.summary.inertia;
    }
}

TEST_CASE("penetration and wind displace scheduled synchronous generation one for one") {
    const auto b = bundled();
    const double gen = scen::solved_generation_mw(b.base);
    const auto d = displace(b, 0.25, 0.15);
    // the slack machine also picks up the change in losses
    CHECK(d.summary.sync_mw == doctest::Approx(0.60 * gen).epsilon(0.01));
    CHECK(d.summary.pv_mw == doctest::Approx(0.25 * gen));
}

TEST_CASE("scenario errors") {
    const auto b = bundled();
    scen::Scenario sc;
    sc.penetration = 0.9;
    sc.allocation.assign(b.file.regions.size(), 0.0);
    CHECK_THROWS_AS(scen::displace_generation(b.base, b.file.regions, sc), scen::ScenarioError);
    sc.penetration = 0.25;
    CHECK_THROWS_AS(scen::displace_generation(b.base, b.file.regions, sc), scen::ScenarioError);
    CHECK_THROWS(scen::parse_scenario_file("{\"penetrations\": [0.1], \"bogus\": 1}"));
}
