#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "pvosc/record_io.hpp"
#include "pvosc/study.hpp"
#include "pvosc/svg.hpp"

using namespace pvosc;
using namespace pvosc::study;
namespace fs = std::filesystem;

namespace {

const std::string kData = PVOSC_DATA_DIR;

StudyConfig quick(StudyKind k) {
    StudyConfig c;
    c.kind = k;
    c.name = to_string(k);
    c.scenario_path = kData + "/scenarios/two_area_regions.json";
    c.disturbance = default_disturbance();
    c.analysis.window = 12.0;
    c.sim.dt = 0.01;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

modal::ShapeEntry entry(const std::string& ch, double mag, double deg) {
    modal::ShapeEntry e;
    e.channel = ch;
    e.found = true;
    e.magnitude = mag;
    e.angle = deg * M_PI / 180.0;
    return e;
}

ChannelModes channel(const std::string& name, std::vector<std::pair<double, double>> f_amp, double zeta = 0.05) {
    ChannelModes c{name, {}};
    for (auto [f, a] : f_amp) {
        modal::Mode m;
        m.frequency = f;
        m.damping_ratio = zeta;
        m.pole = oracle::pole(f, zeta);
        m.amplitude = a;
        c.modes.push_back(m);
    }
    return c;
}

}  // namespace

TEST_CASE("study config parsing") {
    const auto c = parse_study_config(R"({
        // comments are allowed
        "study": "gain", "scenario": "../scenarios/two_area_regions.json", "band": [0.2, 1.0],
        "gains": [0.1, 0.4], "simulation": {"dt": 0.01}, "analysis": {"window": 15, "detrend": "mean"},
        "disturbance": [{"time": 2, "type": "fault", "bus": 8, "duration": 0.05, "b": -10}]})",
                                      kData + "/studies");
    CHECK(c.kind == StudyKind::GainSensitivity);
    CHECK(c.band_lo == 0.2);
    CHECK(c.gains[1] == 0.4);
    CHECK(c.sim.dt == 0.01);
    CHECK(c.analysis.pencil.detrend == modal::Detrend::Mean);
    REQUIRE(c.disturbance.size() == 1);
    CHECK(c.t_end() >= 2.05 + 0.5 + 15.0);
    CHECK_NOTHROW(c.validate());
    CHECK(parse_study_config("{}", {}, StudyKind::Ensemble).kind == StudyKind::Ensemble);

    CHECK_THROWS_AS(parse_study_config(R"({"bogus": 1})"), StudyError);
    CHECK_THROWS_AS(parse_study_config(R"({"analysis": {"windw": 3}})"), StudyError);
    CHECK_THROWS_AS(parse_study_config("[1, 2"), StudyError);
    CHECK_THROWS_AS(parse_study_config(R"({"simulation": {"t_end": 5}})"), StudyError);  // derived, not settable
    CHECK_THROWS_AS(parse_study_config(R"({"study": "nope"})"), StudyError);
    auto bad = quick(StudyKind::Sweep);
    bad.band_lo = 1.2;
    CHECK_THROWS_AS(bad.validate(), StudyError);
    bad = quick(StudyKind::Sweep);
    bad.scenario_path = "/no/such/file.json";
    CHECK_THROWS_AS(bad.validate(), StudyError);
}

TEST_CASE("bundled study configs load") {
    for (const char* k : {"sweep", "shape", "strategy", "gain", "ensemble"}) {
        const auto c = load_study_config(kData + "/studies/" + k + ".json");
        CHECK(std::string(to_string(c.kind)) == k);
        CHECK_NOTHROW(c.validate());
        const auto again = parse_study_config(config_to_json(c));
        CHECK(config_to_json(again) == config_to_json(c));
    }
}

TEST_CASE("record CSV round trip is exact") {
    sim::TimeSeriesRecord r{0.0, 0.05, {}};
    r.channels.push_back({"bus_freq", "1", {0.1, -1e-17, 3.0000000000000004, 1.0 / 3.0}});
    r.channels.push_back({"machine_speed", "2", {0.0, 1e300, -2.5, 7.0}});
    std::stringstream ss;
    sim::write_record_csv(ss, r);
    const auto back = sim::read_record_csv(ss);
    CHECK(back.dt == doctest::Approx(0.05).epsilon(1e-12));
    REQUIRE(back.channels.size() == 2);
    CHECK(back.channels[0].group == "bus_freq");
    CHECK(back.channels[1].name == "2");
    CHECK(back.channels[0].values == r.channels[0].values);
    CHECK(back.channels[1].values == r.channels[1].values);

    std::stringstream ragged("time,a/1\n0,1\n0.1\n");
    CHECK_THROWS_AS(sim::read_record_csv(ragged), sim::RecordError);
    std::stringstream header("t,a/1\n0,1\n0.1,2\n");
    CHECK_THROWS_AS(sim::read_record_csv(header), sim::RecordError);
    std::stringstream uneven("time,a/1\n0,1\n0.1,2\n0.3,2\n");
    CHECK_THROWS_AS(sim::read_record_csv(uneven), sim::RecordError);
}

TEST_CASE("SVG output is deterministic and well formed") {
    plot::XYPlot p{"damping", "x", "y", {{"a", {5, 25, 45}, {0.15, 0.12, 0.09}}}};
    const auto s = plot::render(p);
    CHECK(s == plot::render(p));
    CHECK(s.rfind("<svg", 0) == 0);
    CHECK(s.find("</svg>") != std::string::npos);
    plot::PolarPlot q{"shape", {{"s", {{"1", 1.0, 0.0}, {"3", 0.8, M_PI}}}}};
    CHECK(plot::render(q).find("</svg>") != std::string::npos);
    plot::HistogramPlot h{"h", "f", 0.5, 0.01, {1, 4, 2}};
    CHECK(plot::render(h).find("</svg>") != std::string::npos);
}

TEST_CASE("shape clustering") {
    modal::ModeShape s;
    s.reference = "1";
    s.entries = {entry("1", 1.0, 0.0),    entry("2", 0.8, 10.0),  entry("3", 0.9, 175.0),
                 entry("4", 0.7, -170.0), entry("8", 0.01, 90.0)};
    const auto c = cluster_shape(s, 0.1);
    CHECK(c.group_a == std::vector<std::string>{"1", "2"});
    CHECK(c.group_b == std::vector<std::string>{"3", "4"});
    CHECK(c.ignored == std::vector<std::string>{"8"});
    REQUIRE(c.inter_angle_deg);
    CHECK(*c.inter_angle_deg == doctest::Approx(182.5 - 5.0).epsilon(1e-9));
    CHECK(c.max_spread_deg == doctest::Approx(15.0).epsilon(1e-9));
    s.entries.resize(2);
    CHECK_FALSE(cluster_shape(s, 0.1).inter_angle_deg);
}

TEST_CASE("mode visibility over a window") {
    modal::Mode m;
    m.amplitude = 2.0;
    m.pole = {0.0, 3.0};
    CHECK(mode_rms(m, 20.0) == doctest::Approx(2.0 / std::sqrt(2.0)));
    m.pole = {-0.5, 3.0};
    // closed form a sqrt((1 - e^{-2 |s| T}) / (4 |s| T))
    CHECK(mode_rms(m, 10.0) == doctest::Approx(2.0 * std::sqrt((1 - std::exp(-10.0)) / 20.0)));
}

TEST_CASE("new-mode candidates and tracking") {
    const std::vector<ChannelModes> low{channel("1", {{0.7, 1.0}}), channel("2", {{0.7, 0.9}, {3.4, 0.001}})};
    const std::vector<ChannelModes> high{channel("1", {{0.7, 1.0}, {3.4, 0.1}, {4.2, 0.5}}),
                                         channel("2", {{0.7, 0.9}, {3.45, 0.1}})};
    const auto c = new_mode_candidates(high, low, 1.1, 8.0, 0.05, 5.0, 20.0);
    REQUIRE(c.size() == 2);
    CHECK(c[0].frequency == 4.2);  // strongest
    CHECK_FALSE(c[0].ratio);
    CHECK(c[1].channels == 2);
    CHECK(*c[1].ratio == doctest::Approx((0.1 + 0.1) / 0.001).epsilon(0.02));  // equal damping, so RMS ratio = amplitude ratio
    CHECK(find_new_mode(high, low, 1.1, 8.0, 0.05, 5.0, 20.0)->frequency == 4.2);
    // low arm identical to high: nothing new
    CHECK(new_mode_candidates(high, high, 1.1, 8.0, 0.05, 5.0, 20.0).empty());

    auto m = [](double f, double s) {
        NewModeMatch x;
        x.frequency = f;
        x.score_high = s;
        return x;
    };
    // 4.1 Hz is strong in one level only; 3.4-3.6 Hz persists everywhere
    const auto t = track_new_mode({{m(3.35, 1)}, {m(3.36, 1)}, {m(4.1, 9), m(3.49, 1)}, {m(3.58, 2)}}, 0.1);
    REQUIRE(t.size() == 4);
    for (const auto& x : t) REQUIRE(x);
    CHECK(t[2]->frequency == 3.49);
    CHECK(track_new_mode({{}, {}}, 0.1)[0] == std::nullopt);
}

TEST_CASE("coefficient of variation") {
    CHECK(coefficient_of_variation({2.0, 2.0, 2.0}) == 0.0);
    CHECK(coefficient_of_variation({1.0, 3.0}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(coefficient_of_variation({}), StudyError);
}

TEST_CASE("single-level sweep is vacuously monotone and writes the layout") {
    auto c = quick(StudyKind::Sweep);
    c.penetrations = {0.25};
    const auto r = run_study(c);
    REQUIRE(r.scenarios.size() == 1);
    CHECK(r.all_usable());
    CHECK(r.verdict("damping_strictly_decreasing")->value);
    const auto& s = r.scenarios[0];
    CHECK(s.manifest_hash == hex64(fnv1a64(s.manifest)));
    REQUIRE(s.linearized);
    CHECK(s.ringdown.dominant->frequency == doctest::Approx(s.linearized->frequency).epsilon(0.03));

    const auto out = fs::temp_directory_path() / "pvosc_layout_test";
    fs::remove_all(out);
    write_report(r, out, true);
    for (const char* f : {"report.json", "report.md", "damping.svg", "frequency.svg", "pen25/record.csv",
                          "pen25/modes.json", "pen25/manifest.json"})
        CHECK(fs::exists(out / "sweep" / f));
    const auto j = nlohmann::json::parse(slurp(out / "sweep" / "report.json"));
    CHECK(j["scenarios"][0]["manifest_hash"] == s.manifest_hash);
    CHECK(slurp(out / "sweep" / "pen25" / "manifest.json") == s.manifest + "\n");
    const auto rec = sim::load_record_csv(out / "sweep" / "pen25" / "record.csv");
    CHECK(rec.group("bus_freq").size() == 11);
    fs::remove_all(out);
}

TEST_CASE("identical penetrations give identical modes") {
    auto c = quick(StudyKind::Sweep);
    c.penetrations = {0.25, 0.25};
    const auto r = run_study(c);
    REQUIRE(r.scenarios.size() == 1);  // duplicates collapse to one scenario key
    auto c2 = quick(StudyKind::StrategyCompare);
    c2.strategies = {dyn::PvStrategy::VoltVarWithSolarControl, dyn::PvStrategy::VoltVarWithSolarControl};
    c2.compare_penetration = 0.25;
    const auto s = run_study(c2);
    REQUIRE(s.strategy);
    CHECK(*s.strategy->damping_difference == 0.0);
    CHECK(*s.strategy->frequency_rel_difference == 0.0);
    CHECK(*s.strategy->amplitude_difference == 0.0);
    for (const auto& [ch, d] : s.strategy->angle_difference_deg) CHECK(d == 0.0);
}

TEST_CASE("equal gains on both arms find no new mode") {
    auto c = quick(StudyKind::GainSensitivity);
    c.penetrations = {0.65};
    c.gains = {0.1, 0.1};
    const auto r = run_study(c);
    REQUIRE(r.gain);
    CHECK_FALSE(r.gain->levels[0].new_mode);
    CHECK_FALSE(r.verdict("new_mode_detected")->value);
}

TEST_CASE("a failed scenario leaves its siblings intact") {
    auto c = quick(StudyKind::Sweep);
    c.penetrations = {0.25};
    const auto alone = run_study(c);
    c.penetrations = {0.25, 0.79};
    const auto r = run_study(c);
    REQUIRE(r.scenarios.size() == 2);
    CHECK_FALSE(r.scenarios[1].usable);
    CHECK_FALSE(r.scenarios[1].notes.empty());
    CHECK_FALSE(r.all_usable());
    CHECK_FALSE(r.verdict("all_levels_usable")->value);
    CHECK(r.scenarios[0].usable);
    // identical apart from the study-level hash, which covers the penetration list
    auto m0 = nlohmann::json::parse(r.scenarios[0].manifest), m1 = nlohmann::json::parse(alone.scenarios[0].manifest);
    CHECK(m0["config_hash"] != m1["config_hash"]);
    m0.erase("config_hash");
    m1.erase("config_hash");
    CHECK(m0 == m1);
    CHECK(r.scenarios[0].ringdown.dominant->pole == alone.scenarios[0].ringdown.dominant->pole);
    // the missing level does not spoil the trend over the levels that ran
    CHECK(r.verdict("damping_strictly_decreasing")->value);
}

TEST_CASE("ensemble edge cases") {
    auto c = quick(StudyKind::Ensemble);
    c.ensemble_runs = 1;
    const auto one = run_study(c);
    REQUIRE(one.ensemble);
    CHECK(one.ensemble->usable == 1);
    CHECK(one.ensemble->stats->frequency_hist.counts.size() == 1);

    c.ensemble_runs = 3;
    c.load_perturbation = 0.0;
    const auto same = run_study(c);
    const auto& f = same.ensemble->stats->frequencies;
    REQUIRE(f.size() == 3);
    CHECK(f[0] == f[1]);
    CHECK(f[1] == f[2]);

    c.ensemble_penetration = 0.79;  // every run fails to build
    CHECK_THROWS_AS(run_study(c), StudyError);
}

TEST_CASE("worker count does not change results") {
    auto c = quick(StudyKind::Sweep);
    c.penetrations = {0.05, 0.45};
    const auto a = report_to_json(run_study(c));
    c.jobs = 3;
    CHECK(report_to_json(run_study(c)) == a);
}
