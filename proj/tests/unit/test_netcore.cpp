#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pvosc/system.hpp"

using namespace pvosc;
using net::BusKind;
using net::Complex;

namespace {

net::NetworkModel two_bus(double x, double p2, BusKind k2 = BusKind::PV) {
    net::NetworkModel n;
    n.buses = {{.id = 1, .kind = BusKind::Slack}, {.id = 2, .kind = k2}};
    n.buses[1].p_gen = p2 > 0 ? p2 : 0.0;
    n.buses[1].p_load = p2 < 0 ? -p2 : 0.0;
    n.branches = {{.id = 1, .from_bus = 1, .to_bus = 2, .x = x}};
    return n;
}

Complex entry(const net::AdmittanceMatrix& y, int r, int c) { return y.coeff(r, c); }

}  // namespace

TEST_CASE("admittance of a single branch") {
    const auto y = net::build_admittance(two_bus(0.1, 0.0));
    CHECK(std::abs(entry(y, 0, 1) - Complex(0.0, 10.0)) < 1e-12);
    CHECK(std::abs(entry(y, 0, 0) - Complex(0.0, -10.0)) < 1e-12);
    CHECK(std::abs(entry(y, 1, 1) - Complex(0.0, -10.0)) < 1e-12);
}

TEST_CASE("out-of-service branch contributes nothing") {
    auto n = two_bus(0.1, 0.0);
    n.branches[0].in_service = false;
    const auto y = net::build_admittance(n);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c) CHECK(std::abs(entry(y, r, c)) == 0.0);
}

TEST_CASE("admittance matches dense stamp oracle on the bundled cases") {
    for (const char* f : {"two_area.json", "smib.json"}) {
        const auto sys = load_case(std::string(PVOSC_DATA_DIR) + "/cases/" + f);
        const auto y = net::build_admittance(sys.net);
        const auto d = oracle::dense_admittance(sys.net);
        for (std::size_t r = 0; r < d.size(); ++r)
            for (std::size_t c = 0; c < d.size(); ++c)
                CHECK(std::abs(entry(y, int(r), int(c)) - d[r][c]) < 1e-12);
    }
}

TEST_CASE("triangle: Y times ones equals the shunt vector") {
    net::NetworkModel n;
    n.buses = {{.id = 1, .kind = BusKind::Slack}, {.id = 2, .shunt_b = 0.3}, {.id = 3, .shunt_g = 0.1}};
    n.branches = {{.id = 1, .from_bus = 1, .to_bus = 2, .x = 0.2},
                  {.id = 2, .from_bus = 2, .to_bus = 3, .x = 0.2},
                  {.id = 3, .from_bus = 3, .to_bus = 1, .x = 0.2}};
    const auto y = net::build_admittance(n);
    const Complex shunt[] = {0.0, {0.0, 0.3}, {0.1, 0.0}};
    for (int r = 0; r < 3; ++r) {
        Complex s = 0.0;
        for (int c = 0; c < 3; ++c) s += entry(y, r, c);
        CHECK(std::abs(s - shunt[r]) < 1e-12);
        CHECK(std::abs(entry(y, r, r) - Complex(shunt[r]) - Complex(0.0, -10.0)) < 1e-12);
    }
}

TEST_CASE("admittance symmetric with nominal taps") {
    const auto sys = load_case(std::string(PVOSC_DATA_DIR) + "/cases/two_area.json");
    auto n = sys.net;
    for (auto& b : n.branches) b.tap_ratio = 1.0;
    const Eigen::MatrixXcd y(net::build_admittance(n));
    CHECK((y - y.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("zero-load flat case converges at once") {
    const auto sol = net::solve_power_flow(two_bus(0.2, 0.0, BusKind::PQ));
    CHECK(sol.iterations <= 1);
    for (const auto& v : sol.voltage) CHECK(std::abs(v - Complex(1.0, 0.0)) < 1e-10);
}

TEST_CASE("two-bus closed form angle") {
    net::PowerFlowOptions o;
    o.tol = 1e-12;
    const auto sol = net::solve_power_flow(two_bus(0.2, -0.5), o);
    CHECK(sol.v_ang(1) == doctest::Approx(std::asin(-0.5 * 0.2)).epsilon(1e-9));
    CHECK(sol.v_ang(1) == doctest::Approx(-0.10017).epsilon(1e-4));
}

TEST_CASE("Newton agrees with Gauss-Seidel on the bundled cases") {
    for (const char* f : {"two_area.json", "smib.json"}) {
        const auto sys = load_case(std::string(PVOSC_DATA_DIR) + "/cases/" + f);
        net::PowerFlowOptions o;
        o.tol = 1e-10;
        const auto nr = net::solve_power_flow(sys.net, o);
        const auto gs = oracle::gauss_seidel(sys.net, 1e-13);
        REQUIRE(gs.converged);
        for (std::size_t i = 0; i < gs.v.size(); ++i) CHECK(std::abs(nr.voltage[i] - gs.v[i]) < 1e-6);
    }
}

TEST_CASE("zero-injection rows on a lossless no-load network") {
    auto sys = load_case(std::string(PVOSC_DATA_DIR) + "/cases/two_area.json");
    for (auto& b : sys.net.buses) {
        b.p_load = b.q_load = b.p_gen = b.q_gen = 0.0;
        b.shunt_g = b.shunt_b = 0.0;
    }
    for (auto& br : sys.net.branches) br.r = 0.0;
    const auto sol = net::solve_power_flow(sys.net);
    const auto inj = net::power_injections(net::build_admittance(sys.net), sol.voltage);
    for (std::size_t i = 0; i < inj.size(); ++i) {
        if (sys.net.buses[i].kind == BusKind::Slack) continue;
        CHECK(std::abs(inj[i].real()) < 1e-8);
        if (sys.net.buses[i].kind == BusKind::PQ) CHECK(std::abs(inj[i].imag()) < 1e-8);
    }
}

TEST_CASE("zero load reproduces the flat solution") {
    auto n = two_bus(0.2, 0.0, BusKind::PQ);
    n.buses.push_back({.id = 3, .v_mag = 0.7, .v_ang = 0.4});
    n.branches.push_back({.id = 2, .from_bus = 2, .to_bus = 3, .x = 0.1});
    const auto sol = net::solve_power_flow(n);
    for (const auto& v : sol.voltage) CHECK(std::abs(v - Complex(1.0, 0.0)) < 1e-8);
}

TEST_CASE("validation errors") {
    auto n = two_bus(0.1, 0.0);
    n.buses[1].kind = BusKind::Slack;
    CHECK_THROWS_AS(n.validate(), net::NetworkError);
    n = two_bus(0.1, 0.0);
    n.branches[0].x = 0.0;
    CHECK_THROWS_AS(net::build_admittance(n), net::NetworkError);
    n = two_bus(0.1, 0.0);
    n.branches[0].in_service = false;
    CHECK_THROWS_AS(n.validate(), net::NetworkError);
}

TEST_CASE("unsolvable transfer raises PowerFlowError naming a bus") {
    auto n = two_bus(0.5, -5.0, BusKind::PQ);
    try {
        net::solve_power_flow(n);
        FAIL("expected divergence");
    } catch (const net::PowerFlowError& e) {
        CHECK(e.bus_id() != 0);
    }
}
