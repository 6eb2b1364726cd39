#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "pvosc/study.hpp"

#ifndef PVOSC_VERSION
#define PVOSC_VERSION "0.0.0"
#endif

namespace pvosc::study {

using json = nlohmann::ordered_json;

const char* to_string(StudyKind k) {
    switch (k) {
        case StudyKind::Sweep: return "sweep";
        case StudyKind::ModeShape: return "shape";
        case StudyKind::StrategyCompare: return "strategy";
        case StudyKind::GainSensitivity: return "gain";
        case StudyKind::Ensemble: return "ensemble";
    }
    return "sweep";
}

StudyKind parse_study_kind(const std::string& s) {
    for (auto k : {StudyKind::Sweep, StudyKind::ModeShape, StudyKind::StrategyCompare, StudyKind::GainSensitivity,
                   StudyKind::Ensemble}) {
        if (s == to_string(k)) return k;
    }
    throw StudyError("unknown study '" + s + "' (expected sweep, shape, strategy, gain or ensemble)");
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// --------------------------------------------------------------------------
// configuration

std::vector<sim::Event> default_disturbance() {
    sim::SelfClearingFault f;
    f.bus = 7;
    f.duration = 0.1;
    f.admittance = {0.0, -20.0};
    return {sim::Event{1.0, f}};
}

namespace {

double event_end(const sim::Event& e) {
    if (const auto* f = std::get_if<sim::SelfClearingFault>(&e.action)) return e.time + f->duration;
    return e.time;
}

double last_event_end(const std::vector<sim::Event>& evs) {
    double t = 0.0;
    for (const auto& e : evs) t = std::max(t, event_end(e));
    return t;
}

std::string read_text(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw StudyError("cannot open " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path q(p);
    if (q.is_relative() && !base.empty()) q = base / q;
    return q.lexically_normal();
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) throw StudyError("unknown key '" + it.key() + "' in " + where);
    }
}

}  // namespace

double StudyConfig::t_end() const {
    const double need = last_event_end(disturbance) + analysis.delay + analysis.window;
    const double step = sim.record_dt;
    return (std::ceil(need / step - 1e-9) + 1.0) * step;
}

void StudyConfig::validate() const {
    if (!(band_lo >= 0.0 && band_lo < band_hi)) throw StudyError("band lower edge must be >= 0 and below the upper");
    if (jobs < 1) throw StudyError("jobs must be >= 1");
    if (scenario_path.empty()) throw StudyError("a scenario file is required");
    if (!std::filesystem::exists(scenario_path)) throw StudyError("scenario file not found: " + scenario_path.string());
    if (!case_path.empty() && !std::filesystem::exists(case_path)) {
        throw StudyError("case file not found: " + case_path.string());
    }
    for (double p : penetrations) {
        if (!(p >= 0.0 && p < 0.8)) throw StudyError("penetrations must lie in [0, 0.8)");
    }
    if (kq && !(*kq > 0.0)) throw StudyError("kq must be positive");
    if (!(analysis.delay >= 0.0 && analysis.window > 0.0)) throw StudyError("analysis delay >= 0 and window > 0 required");
    if (!(analysis.cluster_threshold >= 0.0 && analysis.cluster_threshold < 1.0)) {
        throw StudyError("cluster_threshold must lie in [0, 1)");
    }
    if (!(analysis.shape_tolerance > 0.0)) throw StudyError("shape_tolerance must be positive");
    if (!(sim.dt > 0.0 && sim.record_dt > 0.0)) throw StudyError("simulation dt and record_dt must be positive");
    if (kind == StudyKind::StrategyCompare) {
        if (strategies.size() != 2) throw StudyError("strategy comparison needs exactly two strategies");
        if (!(compare_penetration >= 0.0 && compare_penetration < 0.8)) {
            throw StudyError("compare_penetration must lie in [0, 0.8)");
        }
    }
    if (kind == StudyKind::GainSensitivity) {
        if (gains.size() != 2) throw StudyError("gain sensitivity needs exactly two gains (low, high)");
        if (!(gains[0] > 0.0 && gains[1] > 0.0)) throw StudyError("gains must be positive");
        if (!(new_mode_ratio >= 1.0)) throw StudyError("new_mode_ratio must be >= 1");
        if (!(new_mode_freq_tolerance > 0.0 && new_mode_freq_tolerance < 0.5)) {
            throw StudyError("new_mode_freq_tolerance must lie in (0, 0.5)");
        }
    }
    if (kind == StudyKind::Ensemble) {
        if (ensemble_runs < 1) throw StudyError("ensemble runs must be >= 1");
        if (!(load_perturbation >= 0.0 && load_perturbation < 0.5)) {
            throw StudyError("load_perturbation must lie in [0, 0.5)");
        }
        if (!(ensemble_penetration >= 0.0 && ensemble_penetration < 0.8)) {
            throw StudyError("ensemble penetration must lie in [0, 0.8)");
        }
        if (!(freq_bin > 0.0 && damping_bin > 0.0)) throw StudyError("histogram bins must be positive");
    }
    sim::validate_events(disturbance);
}

namespace {

// null and "" stand for an unset optional, as written by config_to_json
bool given(const json& j, const char* key) {
    if (!j.contains(key)) return false;
    const auto& v = j[key];
    return !v.is_null() && !(v.is_string() && v.get<std::string>().empty());
}

}  // namespace

StudyConfig parse_study_config(const std::string& json_text, const std::filesystem::path& base_dir,
                               std::optional<StudyKind> kind) {
    json j;
    try {
        j = json::parse(json_text, nullptr, true, true);
    } catch (const json::exception& e) {
        throw StudyError(std::string("study config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw StudyError("study config must be a JSON object");
    check_keys(j,
               {"study", "name", "case", "scenario", "band", "output", "jobs", "seed", "disturbance", "simulation",
                "analysis", "penetrations", "strategy", "kq", "write_records", "compare_penetration", "strategies",
                "gains", "new_mode_ratio", "new_mode_freq_tolerance", "ensemble"},
               "study config");

    StudyConfig c;
    try {
        if (j.contains("study")) c.kind = parse_study_kind(j["study"].get<std::string>());
        if (kind) c.kind = *kind;
        c.name = j.value("name", std::string(to_string(c.kind)));
        if (given(j, "case")) c.case_path = resolve(base_dir, j["case"].get<std::string>());
        if (j.contains("scenario")) c.scenario_path = resolve(base_dir, j["scenario"].get<std::string>());
        if (j.contains("band")) {
            const auto& b = j["band"];
            if (!b.is_array() || b.size() != 2) throw StudyError("band must be [lo, hi]");
            c.band_lo = b[0].get<double>();
            c.band_hi = b[1].get<double>();
        }
        if (j.contains("output")) c.output_dir = resolve(base_dir, j["output"].get<std::string>());
        c.jobs = j.value("jobs", c.jobs);
        if (given(j, "seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("disturbance")) {
            const auto& d = j["disturbance"];
            if (d.is_string()) {
                c.disturbance = sim::load_events(resolve(base_dir, d.get<std::string>()));
            } else {
                c.disturbance = sim::parse_events(d.dump());
            }
        } else {
            c.disturbance = default_disturbance();
        }
        if (j.contains("simulation")) {
            const auto& s = j["simulation"];
            check_keys(s, {"dt", "record_dt", "newton_tol", "max_newton", "freq_filter_t", "t_end"}, "simulation");
            c.sim.dt = s.value("dt", c.sim.dt);
            c.sim.record_dt = s.value("record_dt", c.sim.record_dt);
            c.sim.newton_tol = s.value("newton_tol", c.sim.newton_tol);
            c.sim.max_newton = s.value("max_newton", c.sim.max_newton);
            c.sim.freq_filter_t = s.value("freq_filter_t", c.sim.freq_filter_t);
        }
        if (j.contains("analysis")) {
            const auto& a = j["analysis"];
            check_keys(a,
                       {"channel_group", "subtract_mean", "delay", "window", "pencil_param", "sv_threshold",
                        "max_modes", "detrend", "shape_tolerance", "cluster_threshold"},
                       "analysis");
            auto& o = c.analysis;
            o.channel_group = a.value("channel_group", o.channel_group);
            o.subtract_mean = a.value("subtract_mean", o.subtract_mean);
            o.delay = a.value("delay", o.delay);
            o.window = a.value("window", o.window);
            if (given(a, "pencil_param")) o.pencil.pencil_param = a["pencil_param"].get<int>();
            o.pencil.sv_threshold = a.value("sv_threshold", o.pencil.sv_threshold);
            o.pencil.max_modes = a.value("max_modes", o.pencil.max_modes);
            if (a.contains("detrend")) o.pencil.detrend = modal::parse_detrend(a["detrend"].get<std::string>());
            o.shape_tolerance = a.value("shape_tolerance", o.shape_tolerance);
            o.cluster_threshold = a.value("cluster_threshold", o.cluster_threshold);
        }
        if (j.contains("penetrations")) c.penetrations = j["penetrations"].get<std::vector<double>>();
        if (given(j, "strategy")) c.strategy = dyn::parse_strategy(j["strategy"].get<std::string>());
        if (given(j, "kq")) c.kq = j["kq"].get<double>();
        c.write_records = j.value("write_records", c.write_records);
        c.compare_penetration = j.value("compare_penetration", c.compare_penetration);
        if (j.contains("strategies")) {
            c.strategies.clear();
            for (const auto& s : j["strategies"]) c.strategies.push_back(dyn::parse_strategy(s.get<std::string>()));
        }
        if (j.contains("gains")) c.gains = j["gains"].get<std::vector<double>>();
        c.new_mode_ratio = j.value("new_mode_ratio", c.new_mode_ratio);
        c.new_mode_freq_tolerance = j.value("new_mode_freq_tolerance", c.new_mode_freq_tolerance);
        if (j.contains("ensemble")) {
            const auto& e = j["ensemble"];
            check_keys(e, {"runs", "load_perturbation", "penetration", "freq_bin", "damping_bin"}, "ensemble");
            c.ensemble_runs = e.value("runs", c.ensemble_runs);
            c.load_perturbation = e.value("load_perturbation", c.load_perturbation);
            c.ensemble_penetration = e.value("penetration", c.ensemble_penetration);
            c.freq_bin = e.value("freq_bin", c.freq_bin);
            c.damping_bin = e.value("damping_bin", c.damping_bin);
        }
    } catch (const json::exception& e) {
        throw StudyError(std::string("study config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw StudyError(std::string("study config: ") + e.what());
    }
    // t_end is derived; a stated value (as in canonical output) must agree with it
    if (j.contains("simulation") && j["simulation"].contains("t_end")) {
        const auto& te = j["simulation"]["t_end"];
        if (!te.is_number() || std::abs(te.get<double>() - c.t_end()) > 1e-9) {
            throw StudyError("simulation.t_end is derived from the disturbance, delay and window (" +
                             std::to_string(c.t_end()) + " s); remove it or change those instead");
        }
    }
    return c;
}

StudyConfig load_study_config(const std::filesystem::path& path, std::optional<StudyKind> kind) {
    return parse_study_config(read_text(path), path.parent_path(), kind);
}

std::string config_to_json(const StudyConfig& c) {
    json j;
    j["study"] = to_string(c.kind);
    j["name"] = c.name;
    j["case"] = c.case_path.generic_string();
    j["scenario"] = c.scenario_path.generic_string();
    j["band"] = {c.band_lo, c.band_hi};
    j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
    j["disturbance"] = json::parse(sim::events_to_json(c.disturbance));
    j["simulation"] = {{"dt", c.sim.dt},
                       {"record_dt", c.sim.record_dt},
                       {"t_end", c.t_end()},
                       {"newton_tol", c.sim.newton_tol},
                       {"max_newton", c.sim.max_newton},
                       {"freq_filter_t", c.sim.freq_filter_t}};
    const auto& a = c.analysis;
    j["analysis"] = {{"channel_group", a.channel_group},
                     {"subtract_mean", a.subtract_mean},
                     {"delay", a.delay},
                     {"window", a.window},
                     {"pencil_param", a.pencil.pencil_param ? json(*a.pencil.pencil_param) : json(nullptr)},
                     {"sv_threshold", a.pencil.sv_threshold},
                     {"max_modes", a.pencil.max_modes},
                     {"detrend", modal::to_string(a.pencil.detrend)},
                     {"shape_tolerance", a.shape_tolerance},
                     {"cluster_threshold", a.cluster_threshold}};
    j["penetrations"] = c.penetrations;
    j["strategy"] = c.strategy ? json(dyn::to_string(*c.strategy)) : json(nullptr);
    j["kq"] = c.kq ? json(*c.kq) : json(nullptr);
    switch (c.kind) {
        case StudyKind::StrategyCompare: {
            j["compare_penetration"] = c.compare_penetration;
            json s = json::array();
            for (auto st : c.strategies) s.push_back(dyn::to_string(st));
            j["strategies"] = s;
            break;
        }
        case StudyKind::GainSensitivity:
            j["gains"] = c.gains;
            j["new_mode_ratio"] = c.new_mode_ratio;
            j["new_mode_freq_tolerance"] = c.new_mode_freq_tolerance;
            break;
        case StudyKind::Ensemble:
            j["ensemble"] = {{"runs", c.ensemble_runs},
                             {"load_perturbation", c.load_perturbation},
                             {"penetration", c.ensemble_penetration},
                             {"freq_bin", c.freq_bin},
                             {"damping_bin", c.damping_bin}};
            break;
        default: break;
    }
    return j.dump(2);
}

// --------------------------------------------------------------------------
// ringdown analysis

std::vector<modal::NamedSeries> analysis_channels(const sim::TimeSeriesRecord& rec, const AnalysisOptions& opt,
                                                  double start) {
    const auto chans = rec.group(opt.channel_group);
    if (chans.empty()) throw StudyError("record has no '" + opt.channel_group + "' channels");
    const auto n = rec.length();
    const double first = std::ceil((start - rec.t0) / rec.dt - 1e-9);
    if (first < 0.0) throw StudyError("analysis window starts before the record");
    const auto i0 = static_cast<std::size_t>(first);
    const auto want = static_cast<std::size_t>(std::floor(opt.window / rec.dt + 1e-9));
    if (i0 >= n) throw StudyError("analysis window starts after the record ends");
    const std::size_t len = std::min(want, n - i0);
    if (len < 20) throw StudyError("analysis window holds " + std::to_string(len) + " samples; at least 20 needed");

    std::vector<modal::NamedSeries> out;
    for (const auto* c : chans) {
        out.push_back({c->name, std::vector<double>(c->values.begin() + static_cast<std::ptrdiff_t>(i0),
                                                    c->values.begin() + static_cast<std::ptrdiff_t>(i0 + len))});
    }
    if (opt.subtract_mean && out.size() > 1) {
        std::vector<double> mean(len, 0.0);
        for (const auto& s : out)
            for (std::size_t k = 0; k < len; ++k) mean[k] += s.values[k];
        for (auto& m : mean) m /= static_cast<double>(out.size());
        for (auto& s : out)
            for (std::size_t k = 0; k < len; ++k) s.values[k] -= mean[k];
    }
    return out;
}

RingdownAnalysis analyze_ringdown(const sim::TimeSeriesRecord& rec, const AnalysisOptions& opt, double start,
                                  double band_lo, double band_hi) {
    RingdownAnalysis a;
    a.group = opt.channel_group;
    a.subtract_mean = opt.subtract_mean;
    a.dt = rec.dt;
    a.band_lo = band_lo;
    a.band_hi = band_hi;
    const auto chans = analysis_channels(rec, opt, start);
    a.start = rec.t0 + std::ceil((start - rec.t0) / rec.dt - 1e-9) * rec.dt;
    a.window = static_cast<double>(chans.front().values.size()) * rec.dt;
    for (const auto& c : chans) {
        ChannelModes cm{c.name, modal::matrix_pencil(c.values, rec.dt, opt.pencil)};
        if (auto d = modal::dominant_mode(cm.modes, band_lo, band_hi)) {
            if (!a.dominant || d->amplitude > a.dominant->amplitude) {
                a.dominant = d;
                a.dominant_channel = c.name;
            }
        }
        a.channel_modes.push_back(std::move(cm));
    }
    if (a.dominant) a.shape = modal::mode_shape(chans, rec.dt, a.dominant->frequency, opt.shape_tolerance, opt.pencil);
    return a;
}

// --------------------------------------------------------------------------
// summaries

namespace {

constexpr double kRad2Deg = 180.0 / M_PI;

double circular_mean(const std::vector<double>& angles) {
    double s = 0.0, c = 0.0;
    for (double a : angles) {
        s += std::sin(a);
        c += std::cos(a);
    }
    return std::atan2(s, c);
}

double max_pairwise(const std::vector<double>& angles) {
    double m = 0.0;
    for (std::size_t i = 0; i < angles.size(); ++i)
        for (std::size_t k = i + 1; k < angles.size(); ++k)
            m = std::max(m, std::abs(modal::wrap_angle(angles[i] - angles[k])));
    return m;
}

}  // namespace

ShapeClusters cluster_shape(const modal::ModeShape& shape, double magnitude_threshold) {
    ShapeClusters out;
    double peak = 0.0;
    for (const auto& e : shape.entries)
        if (e.found) peak = std::max(peak, e.magnitude);
    std::vector<double> ang_a, ang_b;
    for (const auto& e : shape.entries) {
        if (!e.found || e.magnitude < magnitude_threshold * peak || peak <= 0.0) {
            out.ignored.push_back(e.channel);
            continue;
        }
        if (std::abs(e.angle) <= M_PI / 2.0) {
            out.group_a.push_back(e.channel);
            ang_a.push_back(e.angle);
        } else {
            out.group_b.push_back(e.channel);
            ang_b.push_back(e.angle);
        }
    }
    if (!ang_a.empty() && !ang_b.empty()) {
        double d = (circular_mean(ang_b) - circular_mean(ang_a)) * kRad2Deg;
        d = std::fmod(d, 360.0);
        if (d < 0.0) d += 360.0;
        out.inter_angle_deg = d;
    }
    out.max_spread_deg = std::max(max_pairwise(ang_a), max_pairwise(ang_b)) * kRad2Deg;
    return out;
}

double mode_rms(const modal::Mode& m, double window) {
    const double sigma = m.pole.real();
    const double x = 2.0 * sigma * window;
    const double gain = std::abs(x) < 1e-12 ? 1.0 : std::expm1(x) / x;
    return m.amplitude * std::sqrt(0.5 * gain);
}

namespace {

// best visibility per channel of modes within rel_tol of f
struct ChannelHit {
    double rms = 0.0;
    const modal::Mode* mode = nullptr;
};

std::vector<ChannelHit> hits_near(const std::vector<ChannelModes>& chans, double f, double rel_tol, double window) {
    std::vector<ChannelHit> out;
    for (const auto& c : chans) {
        ChannelHit h;
        for (const auto& m : c.modes) {
            if (std::abs(m.frequency - f) > rel_tol * f) continue;
            const double r = mode_rms(m, window);
            if (r > h.rms) h = {r, &m};
        }
        out.push_back(h);
    }
    return out;
}

double total(const std::vector<ChannelHit>& hs) {
    double s = 0.0;
    for (const auto& h : hs) s += h.rms;
    return s;
}

}  // namespace

std::vector<NewModeMatch> new_mode_candidates(const std::vector<ChannelModes>& high,
                                             const std::vector<ChannelModes>& low, double f_min, double f_max,
                                             double rel_tol, double ratio, double window) {
    std::vector<NewModeMatch> all;
    for (const auto& c : high) {
        for (const auto& cand : c.modes) {
            if (cand.frequency <= f_min || cand.frequency > f_max) continue;
            const auto hh = hits_near(high, cand.frequency, rel_tol, window);
            const auto hl = hits_near(low, cand.frequency, rel_tol, window);
            const double sh = total(hh), sl = total(hl);
            if (sh < ratio * sl) continue;
            NewModeMatch m;
            m.score_high = sh;
            m.score_low = sl;
            if (sl > 0.0) m.ratio = sh / sl;
            std::vector<double> fs, zs;
            for (const auto& h : hh) {
                if (!h.mode) continue;
                fs.push_back(h.mode->frequency);
                zs.push_back(h.mode->damping_ratio);
            }
            m.channels = static_cast<int>(fs.size());
            m.frequency = modal::median(fs);
            m.damping_ratio = modal::median(zs);
            all.push_back(m);
        }
    }
    std::sort(all.begin(), all.end(), [](const NewModeMatch& a, const NewModeMatch& b) {
        return a.score_high != b.score_high ? a.score_high > b.score_high : a.frequency < b.frequency;
    });
    // one entry per mode: drop weaker candidates that land on an accepted frequency
    std::vector<NewModeMatch> out;
    for (const auto& m : all) {
        const bool dup = std::any_of(out.begin(), out.end(), [&](const NewModeMatch& o) {
            return std::abs(o.frequency - m.frequency) <= rel_tol * o.frequency;
        });
        if (!dup) out.push_back(m);
    }
    return out;
}

std::optional<NewModeMatch> find_new_mode(const std::vector<ChannelModes>& high, const std::vector<ChannelModes>& low,
                                          double f_min, double f_max, double rel_tol, double ratio, double window) {
    auto c = new_mode_candidates(high, low, f_min, f_max, rel_tol, ratio, window);
    if (c.empty()) return std::nullopt;
    return c.front();
}

std::vector<std::optional<NewModeMatch>> track_new_mode(const std::vector<std::vector<NewModeMatch>>& levels,
                                                        double rel_tol) {
    auto nearest = [&](const std::vector<NewModeMatch>& cs, double f) -> const NewModeMatch* {
        const NewModeMatch* best = nullptr;
        for (const auto& c : cs) {
            const double d = std::abs(c.frequency - f);
            if (d > rel_tol * f) continue;
            if (!best || d < std::abs(best->frequency - f)) best = &c;
        }
        return best;
    };
    // anchor: the candidate seen in the most levels, then the largest summed score
    std::optional<double> anchor;
    int best_support = 0;
    double best_score = 0.0;
    for (const auto& cs : levels) {
        for (const auto& c : cs) {
            int support = 0;
            double score = 0.0;
            for (const auto& other : levels) {
                if (const auto* m = nearest(other, c.frequency)) {
                    ++support;
                    score += m->score_high;
                }
            }
            if (support > best_support || (support == best_support && score > best_score)) {
                anchor = c.frequency;
                best_support = support;
                best_score = score;
            }
        }
    }
    std::vector<std::optional<NewModeMatch>> out(levels.size());
    if (!anchor) return out;
    for (std::size_t i = 0; i < levels.size(); ++i)
        if (const auto* m = nearest(levels[i], *anchor)) out[i] = *m;
    return out;
}

double coefficient_of_variation(const std::vector<double>& v) {
    if (v.empty()) throw StudyError("coefficient of variation of an empty sample");
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    if (mean == 0.0) return ss == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(ss / n) / std::abs(mean);
}

bool StudyReport::all_usable() const {
    return std::all_of(scenarios.begin(), scenarios.end(), [](const ScenarioResult& s) { return s.usable; });
}

const ScenarioResult* StudyReport::find(const std::string& key) const {
    for (const auto& s : scenarios)
        if (s.spec.key == key) return &s;
    return nullptr;
}

const Verdict* StudyReport::verdict(const std::string& n) const {
    for (const auto& v : verdicts)
        if (v.name == n) return &v;
    return nullptr;
}

// --------------------------------------------------------------------------
// running scenarios

namespace {

// Immutable inputs shared by all workers.
struct Bundle {
    const StudyConfig* cfg = nullptr;
    PowerSystem base;
    scen::ScenarioFile file;
    dyn::PvPlant pv_template;
    double base_generation_mw = 0.0;
    std::string config_json;
    std::string config_hash;
    std::string case_hash;
    std::uint64_t seed = 0;
};

std::string pct_label(double pen) {
    const double pct = pen * 100.0;
    char buf[32];
    if (std::abs(pct - std::round(pct)) < 1e-9) {
        std::snprintf(buf, sizeof buf, "pen%02d", static_cast<int>(std::lround(pct)));
    } else {
        std::snprintf(buf, sizeof buf, "pen%g", pct);
    }
    return buf;
}

std::string kq_label(double kq) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "kq%.2f", kq);
    return buf;
}

const char* strategy_label(dyn::PvStrategy s) {
    return s == dyn::PvStrategy::VoltVarWithSolarControl ? "s1" : "s2";
}

// splitmix64 step: decorrelates per-run seeds derived from one study seed
std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

Bundle make_bundle(const StudyConfig& cfg) {
    cfg.validate();
    Bundle b;
    b.cfg = &cfg;
    try {
        b.file = scen::load_scenario_file(cfg.scenario_path);
    } catch (const std::exception& e) {
        throw StudyError(std::string("scenario file: ") + e.what());
    }
    const auto case_path = cfg.case_path.empty() ? b.file.case_path : cfg.case_path;
    try {
        b.base = load_case(case_path);
    } catch (const std::exception& e) {
        throw StudyError(std::string("case file: ") + e.what());
    }
    if (b.file.regions.empty()) b.file.regions = scen::regions_from_areas(b.base);
    scen::fill_region_totals(b.file.regions, b.base);
    scen::validate_regions(b.file.regions, b.file.interfaces);
    if (b.file.pv_template) b.pv_template = *b.file.pv_template;
    try {
        b.base_generation_mw = scen::solved_generation_mw(b.base);
    } catch (const std::exception& e) {
        throw StudyError(std::string("base case power flow: ") + e.what());
    }
    b.seed = cfg.seed.value_or(b.file.seed);
    b.config_json = config_to_json(cfg);
    const std::string hashed = b.config_json + "\n" + read_text(cfg.scenario_path) + "\n" + read_text(case_path);
    b.config_hash = hex64(fnv1a64(hashed));
    b.case_hash = hex64(fnv1a64(read_text(case_path)));
    return b;
}

void perturb_loads(PowerSystem& sys, double magnitude, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-magnitude, magnitude);
    for (auto& bus : sys.net.buses) {
        if (bus.p_load == 0.0 && bus.q_load == 0.0) continue;
        const double k = 1.0 + u(rng);
        bus.p_load *= k;
        bus.q_load *= k;
    }
}

json displacement_json(const scen::DisplacementSummary& d) {
    return {{"base_generation_mw", d.base_generation_mw}, {"pv_mw", d.pv_mw},
            {"wind_mw", d.wind_mw},
            {"sync_mw", d.sync_mw},
            {"achieved_penetration", d.achieved_penetration},
            {"base_inertia_mws", d.base_inertia},
            {"inertia_mws", d.inertia},
            {"units_removed", d.units_removed}};
}

ScenarioResult run_scenario(const Bundle& b, const ScenarioSpec& spec) {
    const auto& cfg = *b.cfg;
    ScenarioResult r;
    r.spec = spec;
    const double t_last = last_event_end(cfg.disturbance);
    const double start = t_last + cfg.analysis.delay;

    std::optional<PowerSystem> sys;
    try {
        scen::Scenario sc;
        sc.name = spec.key;
        sc.penetration = spec.penetration;
        sc.wind_fraction = b.file.wind_fraction;
        sc.strategy = spec.strategy;
        sc.kq = spec.kq;
        sc.seed = spec.seed;
        const double target = spec.penetration * b.base_generation_mw;
        sc.allocation = target > 0.0 ? scen::allocate_pv(b.file.regions, b.file.interfaces, target)
                                     : std::vector<double>(b.file.regions.size(), 0.0);
        auto d = scen::displace_generation(b.base, b.file.regions, sc, b.pv_template);
        r.displacement = d.summary;
        sys = std::move(d.system);
        if (spec.load_perturbation > 0.0) perturb_loads(*sys, spec.load_perturbation, spec.seed);
    } catch (const std::exception& e) {
        r.notes.push_back(std::string("scenario build failed: ") + e.what());
    }

    if (sys) {
        try {
            const auto lm = sim::linearize(*sys);
            if (auto em = sim::electromechanical_mode(lm, cfg.band_lo, cfg.band_hi)) {
                r.linearized = LinearizedMode{em->frequency, em->damping_ratio};
            }
        } catch (const std::exception& e) {
            r.notes.push_back(std::string("linearization skipped: ") + e.what());
        }
        try {
            auto opts = cfg.sim;
            opts.t_end = cfg.t_end();
            auto res = sim::simulate(*sys, cfg.disturbance, opts);
            for (auto& n : res.notes) r.notes.push_back(std::move(n));
            r.record = std::move(res.record);
            if (res.usable) {
                r.ringdown = analyze_ringdown(r.record, cfg.analysis, start, cfg.band_lo, cfg.band_hi);
                if (r.ringdown.dominant) {
                    r.usable = true;
                } else {
                    r.notes.push_back("no mode found in the band");
                }
            }
        } catch (const std::exception& e) {
            r.notes.push_back(std::string("simulation failed: ") + e.what());
        }
    }

    json m;
    m["scenario"] = spec.key;
    m["study"] = to_string(cfg.kind);
    m["version"] = PVOSC_VERSION;
    m["config_hash"] = b.config_hash;
    m["case_hash"] = b.case_hash;
    m["seed"] = spec.seed;
    m["penetration"] = spec.penetration;
    m["strategy"] = dyn::to_string(spec.strategy);
    m["kq"] = spec.kq;
    m["load_perturbation"] = spec.load_perturbation;
    m["disturbance"] = json::parse(sim::events_to_json(cfg.disturbance));
    m["simulation"] = {{"dt", cfg.sim.dt}, {"record_dt", cfg.sim.record_dt}, {"t_end", cfg.t_end()}};
    m["analysis"] = {{"start", r.ringdown.start}, {"window", r.ringdown.window}};
    m["displacement"] = r.displacement ? displacement_json(*r.displacement) : json(nullptr);
    m["usable"] = r.usable;
    m["notes"] = r.notes;
    r.manifest = m.dump(2);
    r.manifest_hash = hex64(fnv1a64(r.manifest));
    return r;
}

// Workers pull scenario indices; results land in their plan slot, so the
// merge order never depends on completion order.
std::vector<ScenarioResult> run_all(const Bundle& b, const std::vector<ScenarioSpec>& plan) {
    std::vector<ScenarioResult> out(plan.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (;;) {
            const auto i = next.fetch_add(1);
            if (i >= plan.size()) return;
            out[i] = run_scenario(b, plan[i]);
        }
    };
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(b.cfg->jobs), plan.size());
    if (n <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t k = 0; k < n; ++k) pool.emplace_back(work);
    }
    return out;
}

std::vector<double> penetration_list(const StudyConfig& cfg, const Bundle& b) {
    auto p = cfg.penetrations.empty() ? b.file.penetrations : cfg.penetrations;
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    if (p.empty()) throw StudyError("no penetration levels to run");
    return p;
}

StudyReport start_report(const StudyConfig& cfg, const Bundle& b) {
    StudyReport r;
    r.kind = cfg.kind;
    r.name = cfg.name.empty() ? to_string(cfg.kind) : cfg.name;
    r.config_json = b.config_json;
    r.config_hash = b.config_hash;
    r.seed = b.seed;
    r.version = PVOSC_VERSION;
    r.band_lo = cfg.band_lo;
    r.band_hi = cfg.band_hi;
    return r;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::vector<ScenarioSpec> level_plan(const StudyConfig& cfg, const Bundle& b) {
    std::vector<ScenarioSpec> plan;
    for (double p : penetration_list(cfg, b)) {
        ScenarioSpec s;
        s.key = pct_label(p);
        s.penetration = p;
        s.strategy = cfg.strategy.value_or(b.file.strategy);
        s.kq = cfg.kq.value_or(b.file.kq);
        s.seed = b.seed;
        plan.push_back(s);
    }
    return plan;
}

}  // namespace

StudyReport run_sweep(const StudyConfig& cfg) {
    const auto b = make_bundle(cfg);
    auto rep = start_report(cfg, b);
    rep.scenarios = run_all(b, level_plan(cfg, b));

    std::vector<double> z;
    std::string detail;
    int missing = 0;
    for (const auto& s : rep.scenarios) {
        if (!s.usable) {
            ++missing;
            detail += s.spec.key + " missing; ";
            continue;
        }
        z.push_back(s.ringdown.dominant->damping_ratio);
        detail += s.spec.key + " " + fmt("%.4f", z.back()) + "; ";
    }
    bool dec = true;
    for (std::size_t i = 1; i < z.size(); ++i) dec = dec && z[i] < z[i - 1];
    rep.verdicts.push_back({"damping_strictly_decreasing", dec, detail});
    rep.verdicts.push_back({"all_levels_usable", missing == 0, std::to_string(missing) + " level(s) missing"});
    return rep;
}

StudyReport run_mode_shape(const StudyConfig& cfg) {
    const auto b = make_bundle(cfg);
    auto rep = start_report(cfg, b);
    rep.scenarios = run_all(b, level_plan(cfg, b));

    bool two = true, angle_ok = true;
    std::string angle_detail;
    for (const auto& s : rep.scenarios) {
        if (!s.usable || !s.ringdown.shape) {
            two = angle_ok = false;
            continue;
        }
        ShapeSummary ss{s.spec.key, s.spec.penetration, cluster_shape(*s.ringdown.shape, cfg.analysis.cluster_threshold)};
        const auto& c = ss.clusters;
        two = two && !c.group_a.empty() && !c.group_b.empty();
        const bool in = c.inter_angle_deg && *c.inter_angle_deg >= 150.0 && *c.inter_angle_deg <= 210.0;
        angle_ok = angle_ok && in;
        angle_detail += s.spec.key + " " + (c.inter_angle_deg ? fmt("%.1f", *c.inter_angle_deg) : "n/a") + "; ";
        rep.shapes.push_back(std::move(ss));
    }
    rep.verdicts.push_back({"two_clusters", two && !rep.shapes.empty(), ""});
    rep.verdicts.push_back({"inter_cluster_angle_150_210", angle_ok && !rep.shapes.empty(), angle_detail});
    if (rep.shapes.size() >= 2) {
        const auto& lo = rep.shapes.front();
        const auto& hi = rep.shapes.back();
        rep.verdicts.push_back({"intra_cluster_spread_shrinks", hi.clusters.max_spread_deg < lo.clusters.max_spread_deg,
                                hi.key + " " + fmt("%.2f", hi.clusters.max_spread_deg) + " deg vs " + lo.key + " " +
                                    fmt("%.2f", lo.clusters.max_spread_deg) + " deg"});
    }
    return rep;
}

StudyReport run_strategy_compare(const StudyConfig& cfg) {
    const auto b = make_bundle(cfg);
    auto rep = start_report(cfg, b);
    std::vector<ScenarioSpec> plan;
    for (std::size_t i = 0; i < cfg.strategies.size(); ++i) {
        ScenarioSpec s;
        s.key = pct_label(cfg.compare_penetration) + "_" + strategy_label(cfg.strategies[i]);
        if (i > 0 && s.key == plan.front().key) s.key += "_b";
        s.penetration = cfg.compare_penetration;
        s.strategy = cfg.strategies[i];
        s.kq = cfg.kq.value_or(b.file.kq);
        s.seed = b.seed;
        plan.push_back(s);
    }
    rep.scenarios = run_all(b, plan);

    StrategyComparison cmp;
    cmp.penetration = cfg.compare_penetration;
    for (const auto& s : rep.scenarios) cmp.arms.push_back({s.spec.key, s.spec.strategy, s.ringdown.dominant});
    const auto& a = rep.scenarios[0];
    const auto& c = rep.scenarios[1];
    if (a.usable && c.usable) {
        const auto& ma = *a.ringdown.dominant;
        const auto& mc = *c.ringdown.dominant;
        cmp.damping_difference = mc.damping_ratio - ma.damping_ratio;
        cmp.frequency_rel_difference = (mc.frequency - ma.frequency) / ma.frequency;
        cmp.amplitude_difference = mc.amplitude - ma.amplitude;
        if (a.ringdown.shape && c.ringdown.shape) {
            for (const auto& e : a.ringdown.shape->entries) {
                const auto* o = c.ringdown.shape->find(e.channel);
                if (!e.found || !o || !o->found) continue;
                cmp.angle_difference_deg.emplace_back(e.channel, modal::wrap_angle(o->angle - e.angle) * kRad2Deg);
            }
        }
        rep.verdicts.push_back({"second_strategy_lower_damping", *cmp.damping_difference < 0.0,
                                fmt("%.4f", mc.damping_ratio) + " vs " + fmt("%.4f", ma.damping_ratio)});
        rep.verdicts.push_back({"frequencies_within_10pct", std::abs(*cmp.frequency_rel_difference) < 0.10,
                                fmt("%.2f%%", 100.0 * *cmp.frequency_rel_difference)});
        rep.verdicts.push_back({"second_strategy_lower_amplitude", *cmp.amplitude_difference < 0.0,
                                fmt("%.4g", mc.amplitude) + " vs " + fmt("%.4g", ma.amplitude)});
    } else {
        rep.verdicts.push_back({"second_strategy_lower_damping", false, "a strategy arm is missing"});
        rep.verdicts.push_back({"frequencies_within_10pct", false, "a strategy arm is missing"});
    }
    rep.strategy = std::move(cmp);
    return rep;
}

StudyReport run_gain_sensitivity(const StudyConfig& cfg) {
    const auto b = make_bundle(cfg);
    auto rep = start_report(cfg, b);
    const double klo = cfg.gains[0], khi = cfg.gains[1];
    std::vector<ScenarioSpec> plan;
    const auto pens = penetration_list(cfg, b);
    for (double p : pens) {
        for (double k : {klo, khi}) {
            ScenarioSpec s;
            s.key = pct_label(p) + "_" + kq_label(k);
            if (k == khi && klo == khi) s.key += "_b";
            s.penetration = p;
            s.strategy = cfg.strategy.value_or(b.file.strategy);
            s.kq = k;
            s.seed = b.seed;
            plan.push_back(s);
        }
    }
    rep.scenarios = run_all(b, plan);

    GainSummary g;
    g.kq_low = klo;
    g.kq_high = khi;
    const double nyquist = 0.5 / cfg.sim.record_dt;
    std::vector<double> fnew, zem;
    bool all_found = true;
    std::string detail;
    // candidates per level, then one mode followed across levels
    std::vector<std::vector<NewModeMatch>> cands(pens.size());
    for (std::size_t i = 0; i < pens.size(); ++i) {
        const auto& lo = rep.scenarios[2 * i];
        const auto& hi = rep.scenarios[2 * i + 1];
        if (!lo.usable || !hi.usable) continue;
        cands[i] = new_mode_candidates(hi.ringdown.channel_modes, lo.ringdown.channel_modes, cfg.band_hi,
                                       0.8 * nyquist, cfg.new_mode_freq_tolerance, cfg.new_mode_ratio,
                                       hi.ringdown.window);
    }
    const auto tracked = track_new_mode(cands, 2.0 * cfg.new_mode_freq_tolerance);
    for (std::size_t i = 0; i < pens.size(); ++i) {
        const auto& lo = rep.scenarios[2 * i];
        const auto& hi = rep.scenarios[2 * i + 1];
        GainLevel lv;
        lv.new_mode = tracked[i];
        lv.penetration = pens[i];
        lv.key_low = lo.spec.key;
        lv.key_high = hi.spec.key;
        lv.electromechanical_low = lo.ringdown.dominant;
        lv.electromechanical_high = hi.ringdown.dominant;
        if (lv.new_mode) {
            fnew.push_back(lv.new_mode->frequency);
            if (lv.new_mode->damping_ratio < 0.0) g.unstable = true;
            detail += lo.spec.key.substr(0, lo.spec.key.find('_')) + " " + fmt("%.3f Hz", lv.new_mode->frequency) +
                      (lv.new_mode->ratio ? " x" + fmt("%.1f", *lv.new_mode->ratio) : " (no counterpart)") + "; ";
        } else {
            all_found = false;
            detail += lo.spec.key.substr(0, lo.spec.key.find('_')) + " none; ";
        }
        if (hi.usable) zem.push_back(hi.ringdown.dominant->damping_ratio);
        g.levels.push_back(lv);
    }
    if (!fnew.empty()) g.new_mode_frequency_cv = coefficient_of_variation(fnew);
    if (!zem.empty()) g.electromechanical_damping_cv = coefficient_of_variation(zem);

    // shape of the new mode in the highest level where it was found
    for (std::size_t i = pens.size(); i-- > 0;) {
        const auto& lv = g.levels[i];
        if (!lv.new_mode) continue;
        const auto& hi = rep.scenarios[2 * i + 1];
        const auto chans = analysis_channels(hi.record, cfg.analysis, hi.ringdown.start);
        g.new_mode_shape = modal::mode_shape(chans, hi.record.dt, lv.new_mode->frequency,
                                             cfg.new_mode_freq_tolerance * lv.new_mode->frequency, cfg.analysis.pencil);
        g.new_mode_shape_key = hi.spec.key;
        break;
    }

    rep.verdicts.push_back({"new_mode_detected", all_found, detail});
    const bool cv_ok = g.new_mode_frequency_cv && *g.new_mode_frequency_cv < 0.10;
    rep.verdicts.push_back({"new_mode_frequency_cv_below_10pct", all_found && cv_ok,
                            g.new_mode_frequency_cv ? fmt("%.4f", *g.new_mode_frequency_cv) : "n/a"});
    const bool varies = cv_ok && g.electromechanical_damping_cv &&
                        *g.electromechanical_damping_cv > *g.new_mode_frequency_cv;
    rep.verdicts.push_back({"electromechanical_damping_varies_more", all_found && varies,
                            g.electromechanical_damping_cv ? fmt("%.4f", *g.electromechanical_damping_cv) : "n/a"});
    rep.verdicts.push_back({"new_mode_stable", all_found && !g.unstable, g.unstable ? "UNSTABLE new mode" : ""});
    rep.gain = std::move(g);
    return rep;
}

StudyReport run_ensemble(const StudyConfig& cfg) {
    const auto b = make_bundle(cfg);
    auto rep = start_report(cfg, b);
    std::vector<ScenarioSpec> plan;
    for (int i = 0; i < cfg.ensemble_runs; ++i) {
        ScenarioSpec s;
        char buf[32];
        std::snprintf(buf, sizeof buf, "run%03d", i);
        s.key = buf;
        s.penetration = cfg.ensemble_penetration;
        s.strategy = cfg.strategy.value_or(b.file.strategy);
        s.kq = cfg.kq.value_or(b.file.kq);
        s.seed = mix_seed(b.seed + static_cast<std::uint64_t>(i));
        s.load_perturbation = cfg.load_perturbation;
        plan.push_back(s);
    }
    rep.scenarios = run_all(b, plan);

    EnsembleSummary es;
    es.runs = cfg.ensemble_runs;
    std::vector<modal::Mode> modes;
    std::map<std::string, int> reasons;
    for (const auto& s : rep.scenarios) {
        if (s.usable) {
            modes.push_back(*s.ringdown.dominant);
        } else {
            ++reasons[s.notes.empty() ? "unknown" : s.notes.back()];
        }
    }
    es.usable = static_cast<int>(modes.size());
    if (2 * es.usable < es.runs) {
        std::string msg = "ensemble aborted: " + std::to_string(es.usable) + " of " + std::to_string(es.runs) +
                          " runs usable";
        for (const auto& [why, n] : reasons) msg += "\n  " + std::to_string(n) + "x " + why;
        throw StudyError(msg);
    }
    es.stats = modal::mode_statistics(modes, cfg.freq_bin, cfg.damping_bin);
    rep.verdicts.push_back({"majority_usable", true, std::to_string(es.usable) + "/" + std::to_string(es.runs)});
    rep.verdicts.push_back({"damping_skewness_positive", es.stats->damping_skewness > 0.0,
                            fmt("%.3f", es.stats->damping_skewness)});
    rep.ensemble = std::move(es);
    return rep;
}

StudyReport run_study(const StudyConfig& cfg) {
    switch (cfg.kind) {
        case StudyKind::Sweep: return run_sweep(cfg);
        case StudyKind::ModeShape: return run_mode_shape(cfg);
        case StudyKind::StrategyCompare: return run_strategy_compare(cfg);
        case StudyKind::GainSensitivity: return run_gain_sensitivity(cfg);
        case StudyKind::Ensemble: return run_ensemble(cfg);
    }
    throw StudyError("unknown study kind");
}

}  // namespace pvosc::study
