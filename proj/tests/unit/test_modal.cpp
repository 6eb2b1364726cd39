#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "pvosc/modal.hpp"

using namespace pvosc;
using modal::Complex;

namespace {

const modal::Mode* nearest(const std::vector<modal::Mode>& ms, double f) {
    const modal::Mode* best = nullptr;
    for (const auto& m : ms)
        if (!best || std::abs(m.frequency - f) < std::abs(best->frequency - f)) best = &m;
    return best;
}

double rel(Complex a, Complex b) { return std::abs(a - b) / std::abs(b); }

}  // namespace

TEST_CASE("geometric sequence gives one real pole") {
    std::vector<double> y(60);
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = std::pow(0.8, double(k));
    modal::PencilConfig c;
    c.detrend = modal::Detrend::None;
    const auto ms = modal::matrix_pencil(y, 1.0, c);
    REQUIRE(ms.size() == 1);
    CHECK(ms[0].pole.real() == doctest::Approx(std::log(0.8)).epsilon(1e-9));
    CHECK(ms[0].frequency == 0.0);
    CHECK(ms[0].amplitude == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("single damped cosine") {
    const double w = 2.0 * M_PI * 0.25;
    const auto y = oracle::synth({{-0.2, w, 1.0, 0.0}}, 0.05, 400);
    modal::PencilConfig c;
    c.detrend = modal::Detrend::None;
    const auto ms = modal::matrix_pencil(y, 0.05, c);
    REQUIRE(ms.size() == 1);
    CHECK(ms[0].frequency == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(ms[0].damping_ratio == doctest::Approx(0.2 / std::hypot(0.2, w)).epsilon(1e-6));
    CHECK(ms[0].damping_ratio == doctest::Approx(0.12630).epsilon(1e-4));
    CHECK(ms[0].amplitude == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("two-mode synthetic recovered exactly") {
    const auto comps = oracle::two_mode_reference();
    const auto y = oracle::synth(comps, 0.05, 400);
    modal::PencilConfig c;
    c.detrend = modal::Detrend::None;
    const auto ms = modal::matrix_pencil(y, 0.05, c);
    REQUIRE(ms.size() == 2);
    for (const auto& k : comps) {
        const auto* m = nearest(ms, k.omega / (2 * M_PI));
        CHECK(rel(m->pole, {k.sigma, k.omega}) < 1e-6);
        CHECK(m->amplitude == doctest::Approx(k.amplitude).epsilon(1e-6));
    }
    const auto d = modal::dominant_mode(ms, 0.1, 1.0);
    REQUIRE(d);
    CHECK(d->frequency == doctest::Approx(0.25).epsilon(1e-6));
}

TEST_CASE("exact recovery up to max_modes") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> f(0.1, 3.0), z(0.0, 0.2), a(0.2, 2.0), ph(-M_PI, M_PI);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<oracle::Component> cs;
        for (int k = 0; k < 5; ++k) {
            const double fk = 0.1 + 0.55 * k + 0.3 * f(rng) / 3.0;
            const auto p = oracle::pole(fk, z(rng));
            cs.push_back({p.real(), p.imag(), a(rng), ph(rng)});
        }
        modal::PencilConfig c;
        c.detrend = modal::Detrend::None;
        const auto ms = modal::matrix_pencil(oracle::synth(cs, 0.05, 400), 0.05, c);
        REQUIRE(ms.size() == cs.size());
        for (const auto& k : cs) CHECK(rel(nearest(ms, k.omega / (2 * M_PI))->pole, {k.sigma, k.omega}) < 1e-6);
    }
}

TEST_CASE("time shift leaves poles and rotates residues") {
    const auto comps = oracle::two_mode_reference();
    const double dt = 0.05;
    const std::size_t shift = 7;
    modal::PencilConfig c;
    c.detrend = modal::Detrend::None;
    const auto a = modal::matrix_pencil(oracle::synth(comps, dt, 400), dt, c);
    const auto b = modal::matrix_pencil(oracle::synth(comps, dt, 400, double(shift) * dt), dt, c);
    for (const auto& m : a) {
        const auto* n = nearest(b, m.frequency);
        CHECK(std::abs(n->pole - m.pole) < 1e-9);
        // residue a e^{j phi} advances by e^{s k dt}
        const Complex r0 = std::polar(m.amplitude, m.phase) * std::exp(m.pole * (double(shift) * dt));
        CHECK(std::abs(std::polar(n->amplitude, n->phase) - r0) < 1e-9);
    }
}

TEST_CASE("scaling the signal scales residues only") {
    auto y = oracle::synth(oracle::two_mode_reference(), 0.05, 400);
    modal::PencilConfig c;
    c.detrend = modal::Detrend::None;
    const auto a = modal::matrix_pencil(y, 0.05, c);
    for (auto& v : y) v *= -3.5;
    const auto b = modal::matrix_pencil(y, 0.05, c);
    for (const auto& m : a) {
        const auto* n = nearest(b, m.frequency);
        CHECK(std::abs(n->pole - m.pole) < 1e-9);
        CHECK(n->amplitude == doctest::Approx(3.5 * m.amplitude).epsilon(1e-9));
    }
}

TEST_CASE("noise robustness at 40 dB SNR") {
    const auto comps = oracle::two_mode_reference();
    const auto clean = oracle::synth(comps, 0.05, 400);
    double power = 0.0;
    for (double v : clean) power += v * v;
    power /= double(clean.size());
    const double sd = std::sqrt(power / 1e4);
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> noise(0.0, sd);
    std::vector<std::vector<double>> ferr(2), zerr(2);
    for (int trial = 0; trial < 100; ++trial) {
        auto y = clean;
        for (auto& v : y) v += noise(rng);
        auto cfg = modal::PencilConfig::noisy();
        cfg.detrend = modal::Detrend::None;
        const auto ms = modal::matrix_pencil(y, 0.05, cfg);
        for (std::size_t k = 0; k < comps.size(); ++k) {
            const double f = comps[k].omega / (2 * M_PI);
            const double z = -comps[k].sigma / std::hypot(comps[k].sigma, comps[k].omega);
            const auto* m = nearest(ms, f);
            ferr[k].push_back(m ? std::abs(m->frequency - f) / f : 1.0);
            zerr[k].push_back(m ? std::abs(m->damping_ratio - z) / z : 1.0);
        }
    }
    for (std::size_t k = 0; k < comps.size(); ++k) {
        CHECK(modal::median(ferr[k]) < 0.01);
        CHECK(modal::median(zerr[k]) < 0.10);
    }
}

TEST_CASE("flat signals and bad input") {
    std::vector<double> flat(100, 2.0);
    modal::PencilConfig c;
    c.detrend = modal::Detrend::Mean;
    CHECK(modal::matrix_pencil(flat, 0.1, c).empty());
    CHECK_THROWS_AS(modal::matrix_pencil(std::vector<double>(10, 1.0), 0.1), modal::ModalError);
    CHECK_THROWS_AS(modal::matrix_pencil(flat, 0.0), modal::ModalError);
    c.pencil_param = 1000;
    CHECK_THROWS_AS(modal::matrix_pencil(flat, 0.1, c), modal::ModalError);
}

TEST_CASE("damping ratio arithmetic") {
    CHECK(modal::damping_ratio({-0.1, 1.25664}) == doctest::Approx(0.079327).epsilon(1e-5));
    CHECK(modal::damping_ratio({0.0, 3.0}) == 0.0);
    CHECK(modal::damping_ratio({-1.0, 0.0}) == 1.0);
    CHECK_THROWS_AS(modal::damping_ratio({0.0, 0.0}), modal::ModalError);
}

TEST_CASE("dominant mode selection") {
    modal::Mode a, b;
    a.frequency = 0.25;
    a.amplitude = 1.0;
    b.frequency = 1.2;
    b.amplitude = 0.3;
    CHECK(modal::dominant_mode({a, b}, 0.1, 1.0)->frequency == 0.25);
    CHECK_FALSE(modal::dominant_mode({a, b}, 2.0, 3.0));
    b.amplitude = 1.0;
    CHECK(modal::dominant_mode({b, a}, 0.1, 2.0)->frequency == 0.25);
}

TEST_CASE("mode shape of opposed and identical channels") {
    const double w = 2.0 * M_PI * 0.5, dt = 0.05;
    const auto y1 = oracle::synth({{-0.1, w, 1.0, 0.3}}, dt, 400);
    const auto y2 = oracle::synth({{-0.1, w, 0.5, 0.3 + M_PI}}, dt, 400);
    const auto s = modal::mode_shape({{"a", y1}, {"b", y2}, {"c", y1}}, dt, 0.5, 0.05);
    REQUIRE(s);
    CHECK(s->reference == "a");
    CHECK(std::abs(std::abs(s->find("b")->angle) - M_PI) < 1e-6);
    CHECK(s->find("c")->angle == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(s->find("c")->magnitude == doctest::Approx(s->find("a")->magnitude).epsilon(1e-9));
    CHECK(s->find("b")->magnitude == doctest::Approx(0.5).epsilon(1e-6));
    CHECK_FALSE(modal::mode_shape({{"a", y1}}, dt, 2.0, 0.05));
}

TEST_CASE("relative shape angles do not depend on the reference") {
    const double w = 2.0 * M_PI * 0.6, dt = 0.05;
    std::vector<modal::NamedSeries> ch;
    for (int k = 0; k < 5; ++k)
        ch.push_back({std::to_string(k), oracle::synth({{-0.2, w, 1.0 + 0.1 * k, 0.7 * k}}, dt, 300)});
    const auto s = *modal::mode_shape(ch, dt, 0.6, 0.05);
    const auto r = modal::rereference(s, "3");
    CHECK(r.reference == "3");
    for (const auto& e : s.entries)
        for (const auto& f : s.entries) {
            const double d0 = modal::wrap_angle(e.angle - f.angle);
            const double d1 = modal::wrap_angle(r.find(e.channel)->angle - r.find(f.channel)->angle);
            CHECK(std::abs(modal::wrap_angle(d0 - d1)) < 1e-12);
        }
}

TEST_CASE("ensemble statistics") {
    std::vector<modal::Mode> ms(4);
    const double fs[] = {0.20, 0.20, 0.21, 0.22};
    for (int i = 0; i < 4; ++i) {
        ms[i].frequency = fs[i];
        ms[i].damping_ratio = 0.1;
    }
    const auto st = modal::mode_statistics(ms);
    CHECK(st.frequency_center == doctest::Approx(0.205));
    int total = 0;
    for (int c : st.frequency_hist.counts) total += c;
    CHECK(total == 4);
    const auto one = modal::mode_statistics({ms[2]});
    CHECK(one.frequency_center == 0.21);
    CHECK(one.frequency_hist.counts.size() == 1);
    CHECK_THROWS_AS(modal::mode_statistics({}), modal::ModalError);
    CHECK(modal::skewness({1.0, 1.0, 1.0, 10.0}) > 0.0);
    CHECK(modal::skewness({1.0, 2.0}) == 0.0);
    CHECK(modal::wrap_angle(-M_PI) == doctest::Approx(M_PI));
}
