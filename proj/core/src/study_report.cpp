#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pvosc/record_io.hpp"
#include "pvosc/study.hpp"
#include "pvosc/svg.hpp"

namespace pvosc::study {

using json = nlohmann::ordered_json;

namespace {

constexpr double kRad2Deg = 180.0 / M_PI;

json opt_num(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json mode_json(const modal::Mode& m) {
    return {{"frequency_hz", m.frequency},  {"damping_ratio", m.damping_ratio}, {"sigma", m.pole.real()},
            {"omega", m.pole.imag()},       {"amplitude", m.amplitude},        {"phase_rad", m.phase}};
}

json opt_mode(const std::optional<modal::Mode>& m) { return m ? mode_json(*m) : json(nullptr); }

json shape_json(const modal::ModeShape& s) {
    json e = json::array();
    for (const auto& x : s.entries) {
        e.push_back({{"channel", x.channel},
                     {"found", x.found},
                     {"magnitude", x.magnitude},
                     {"angle_deg", x.angle * kRad2Deg},
                     {"frequency_hz", x.found ? json(x.mode.frequency) : json(nullptr)},
                     {"damping_ratio", x.found ? json(x.mode.damping_ratio) : json(nullptr)}});
    }
    return {{"target_frequency_hz", s.target_frequency}, {"reference", s.reference}, {"entries", e}};
}

json clusters_json(const ShapeClusters& c) {
    return {{"group_a", c.group_a},
            {"group_b", c.group_b},
            {"ignored", c.ignored},
            {"inter_angle_deg", opt_num(c.inter_angle_deg)},
            {"max_spread_deg", c.max_spread_deg}};
}

json new_mode_json(const std::optional<NewModeMatch>& m) {
    if (!m) return nullptr;
    return {{"frequency_hz", m->frequency}, {"damping_ratio", m->damping_ratio}, {"score_high", m->score_high},
            {"score_low", m->score_low},    {"ratio", opt_num(m->ratio)},        {"channels", m->channels}};
}

json hist_json(const modal::Histogram& h) {
    return {{"origin", h.origin}, {"width", h.width}, {"counts", h.counts}};
}

json scenario_json(const ScenarioResult& s) {
    json j;
    j["key"] = s.spec.key;
    j["penetration"] = s.spec.penetration;
    j["strategy"] = dyn::to_string(s.spec.strategy);
    j["kq"] = s.spec.kq;
    j["seed"] = s.spec.seed;
    if (s.spec.load_perturbation > 0.0) j["load_perturbation"] = s.spec.load_perturbation;
    j["usable"] = s.usable;
    j["notes"] = s.notes;
    j["dominant"] = opt_mode(s.ringdown.dominant);
    j["dominant_channel"] = s.ringdown.dominant_channel;
    j["linearized"] = s.linearized ? json{{"frequency_hz", s.linearized->frequency},
                                          {"damping_ratio", s.linearized->damping_ratio}}
                                   : json(nullptr);
    if (s.displacement) {
        j["achieved_penetration"] = s.displacement->achieved_penetration;
        j["inertia_mws"] = s.displacement->inertia;
    }
    j["manifest_hash"] = s.manifest_hash;
    return j;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw StudyError("cannot write " + p.string());
    os << text;
    if (!text.empty() && text.back() != '\n') os << '\n';
    if (!os) throw StudyError("write failed: " + p.string());
}

plot::PolarSeries polar_of(const std::string& name, const modal::ModeShape& s) {
    plot::PolarSeries ps{name, {}};
    for (const auto& e : s.entries)
        if (e.found) ps.points.push_back({e.channel, e.magnitude, e.angle});
    return ps;
}

void write_plots(const StudyReport& r, const std::filesystem::path& dir) {
    switch (r.kind) {
        case StudyKind::Sweep: {
            plot::Series z{"ringdown", {}, {}}, zl{"linearized", {}, {}}, f{"ringdown", {}, {}}, fl{"linearized", {}, {}};
            for (const auto& s : r.scenarios) {
                const double pct = 100.0 * s.spec.penetration;
                if (s.usable) {
                    z.x.push_back(pct);
                    z.y.push_back(s.ringdown.dominant->damping_ratio);
                    f.x.push_back(pct);
                    f.y.push_back(s.ringdown.dominant->frequency);
                }
                if (s.linearized) {
                    zl.x.push_back(pct);
                    zl.y.push_back(s.linearized->damping_ratio);
                    fl.x.push_back(pct);
                    fl.y.push_back(s.linearized->frequency);
                }
            }
            plot::save_svg(dir / "damping.svg",
                           plot::render(plot::XYPlot{"Damping ratio vs PV penetration", "PV penetration (%)",
                                                     "damping ratio", {z, zl}}));
            plot::save_svg(dir / "frequency.svg",
                           plot::render(plot::XYPlot{"Mode frequency vs PV penetration", "PV penetration (%)",
                                                     "frequency (Hz)", {f, fl}}));
            break;
        }
        case StudyKind::ModeShape: {
            for (const auto& s : r.scenarios) {
                if (!s.ringdown.shape) continue;
                plot::PolarPlot p{"Mode shape " + s.spec.key + " (" + fmt("%.3f Hz", s.ringdown.shape->target_frequency) +
                                      ")",
                                  {polar_of(s.spec.key, *s.ringdown.shape)}};
                plot::save_svg(dir / ("shape_" + s.spec.key + ".svg"), plot::render(p));
            }
            break;
        }
        case StudyKind::StrategyCompare: {
            plot::PolarPlot p{"Mode shapes by strategy", {}};
            for (const auto& s : r.scenarios)
                if (s.ringdown.shape) p.series.push_back(polar_of(s.spec.key, *s.ringdown.shape));
            plot::save_svg(dir / "shapes.svg", plot::render(p));
            plot::XYPlot ts{"Ringdown at " + (r.scenarios.empty() ? std::string() : r.scenarios[0].ringdown.dominant_channel),
                            "time (s)", "bus frequency (pu)", {}};
            ts.markers = false;
            for (const auto& s : r.scenarios) {
                const auto* c = s.record.find("bus_freq", r.scenarios[0].ringdown.dominant_channel);
                if (!c) continue;
                plot::Series se{s.spec.key, {}, {}};
                for (std::size_t i = 0; i < c->values.size(); ++i) {
                    se.x.push_back(s.record.t0 + static_cast<double>(i) * s.record.dt);
                    se.y.push_back(c->values[i]);
                }
                ts.series.push_back(std::move(se));
            }
            plot::save_svg(dir / "ringdown.svg", plot::render(ts));
            break;
        }
        case StudyKind::GainSensitivity: {
            if (!r.gain) break;
            plot::Series fn{"new mode", {}, {}}, zl{"damping, kq low", {}, {}}, zh{"damping, kq high", {}, {}};
            for (const auto& lv : r.gain->levels) {
                const double pct = 100.0 * lv.penetration;
                if (lv.new_mode) {
                    fn.x.push_back(pct);
                    fn.y.push_back(lv.new_mode->frequency);
                }
                if (lv.electromechanical_low) {
                    zl.x.push_back(pct);
                    zl.y.push_back(lv.electromechanical_low->damping_ratio);
                }
                if (lv.electromechanical_high) {
                    zh.x.push_back(pct);
                    zh.y.push_back(lv.electromechanical_high->damping_ratio);
                }
            }
            plot::save_svg(dir / "new_mode_frequency.svg",
                           plot::render(plot::XYPlot{"New mode frequency", "PV penetration (%)", "frequency (Hz)", {fn}}));
            plot::save_svg(dir / "damping.svg",
                           plot::render(plot::XYPlot{"Electromechanical damping", "PV penetration (%)",
                                                     "damping ratio", {zl, zh}}));
            if (r.gain->new_mode_shape) {
                plot::save_svg(dir / "new_mode_shape.svg",
                               plot::render(plot::PolarPlot{"New mode shape " + r.gain->new_mode_shape_key,
                                                            {polar_of(r.gain->new_mode_shape_key,
                                                                      *r.gain->new_mode_shape)}}));
            }
            break;
        }
        case StudyKind::Ensemble: {
            if (!r.ensemble || !r.ensemble->stats) break;
            const auto& st = *r.ensemble->stats;
            plot::save_svg(dir / "frequency_hist.svg",
                           plot::render(plot::HistogramPlot{"Mode frequency", "frequency (Hz)", st.frequency_hist.origin,
                                                            st.frequency_hist.width, st.frequency_hist.counts}));
            plot::save_svg(dir / "damping_hist.svg",
                           plot::render(plot::HistogramPlot{"Damping ratio", "damping ratio", st.damping_hist.origin,
                                                            st.damping_hist.width, st.damping_hist.counts}));
            break;
        }
    }
}

}  // namespace

std::string ringdown_to_json(const RingdownAnalysis& a) {
    json j;
    j["group"] = a.group;
    j["subtract_mean"] = a.subtract_mean;
    j["start"] = a.start;
    j["window"] = a.window;
    j["dt"] = a.dt;
    j["band"] = {a.band_lo, a.band_hi};
    j["dominant"] = opt_mode(a.dominant);
    j["dominant_channel"] = a.dominant_channel;
    j["shape"] = a.shape ? shape_json(*a.shape) : json(nullptr);
    json ch = json::array();
    for (const auto& c : a.channel_modes) {
        json ms = json::array();
        for (const auto& m : c.modes) ms.push_back(mode_json(m));
        ch.push_back({{"channel", c.channel}, {"modes", ms}});
    }
    j["channels"] = ch;
    return j.dump(2);
}

std::string report_to_json(const StudyReport& r) {
    json j;
    j["study"] = to_string(r.kind);
    j["name"] = r.name;
    j["version"] = r.version;
    j["config_hash"] = r.config_hash;
    j["seed"] = r.seed;
    j["band"] = {r.band_lo, r.band_hi};
    j["config"] = json::parse(r.config_json);
    j["all_usable"] = r.all_usable();
    json v = json::array();
    for (const auto& x : r.verdicts) v.push_back({{"name", x.name}, {"value", x.value}, {"detail", x.detail}});
    j["verdicts"] = v;
    json sc = json::array();
    for (const auto& s : r.scenarios) sc.push_back(scenario_json(s));
    j["scenarios"] = sc;
    if (!r.shapes.empty()) {
        json sh = json::array();
        for (const auto& s : r.shapes) {
            json e = clusters_json(s.clusters);
            e["key"] = s.key;
            e["penetration"] = s.penetration;
            const auto* res = r.find(s.key);
            if (res && res->ringdown.shape) e["shape"] = shape_json(*res->ringdown.shape);
            sh.push_back(e);
        }
        j["shapes"] = sh;
    }
    if (r.strategy) {
        const auto& c = *r.strategy;
        json arms = json::array();
        for (const auto& a : c.arms)
            arms.push_back({{"key", a.key}, {"strategy", dyn::to_string(a.strategy)}, {"mode", opt_mode(a.mode)}});
        json ang = json::object();
        for (const auto& [ch, d] : c.angle_difference_deg) ang[ch] = d;
        j["strategy_comparison"] = {{"penetration", c.penetration},
                                    {"arms", arms},
                                    {"damping_difference", opt_num(c.damping_difference)},
                                    {"frequency_rel_difference", opt_num(c.frequency_rel_difference)},
                                    {"amplitude_difference", opt_num(c.amplitude_difference)},
                                    {"angle_difference_deg", ang}};
    }
    if (r.gain) {
        const auto& g = *r.gain;
        json lv = json::array();
        for (const auto& l : g.levels) {
            lv.push_back({{"penetration", l.penetration},
                          {"key_low", l.key_low},
                          {"key_high", l.key_high},
                          {"new_mode", new_mode_json(l.new_mode)},
                          {"electromechanical_low", opt_mode(l.electromechanical_low)},
                          {"electromechanical_high", opt_mode(l.electromechanical_high)}});
        }
        j["gain_sensitivity"] = {{"kq_low", g.kq_low},
                                 {"kq_high", g.kq_high},
                                 {"levels", lv},
                                 {"new_mode_frequency_cv", opt_num(g.new_mode_frequency_cv)},
                                 {"electromechanical_damping_cv", opt_num(g.electromechanical_damping_cv)},
                                 {"new_mode_shape_key", g.new_mode_shape_key},
                                 {"new_mode_shape", g.new_mode_shape ? shape_json(*g.new_mode_shape) : json(nullptr)},
                                 {"unstable", g.unstable}};
    }
    if (r.ensemble) {
        const auto& e = *r.ensemble;
        json s = nullptr;
        if (e.stats) {
            s = {{"frequency_median_hz", e.stats->frequency_center},
                 {"damping_median", e.stats->damping_center},
                 {"frequency_skewness", e.stats->frequency_skewness},
                 {"damping_skewness", e.stats->damping_skewness},
                 {"frequency_hist", hist_json(e.stats->frequency_hist)},
                 {"damping_hist", hist_json(e.stats->damping_hist)}};
        }
        j["ensemble"] = {{"runs", e.runs}, {"usable", e.usable}, {"stats", s}};
    }
    return j.dump(2);
}

std::string report_to_markdown(const StudyReport& r) {
    std::ostringstream md;
    md << "# Study `" << r.name << "` (" << to_string(r.kind) << ")\n\n";
    md << "- version: " << r.version << "\n- config hash: `" << r.config_hash << "`\n- seed: " << r.seed
       << "\n- band: " << fmt("%.3g", r.band_lo) << " to " << fmt("%.3g", r.band_hi) << " Hz\n"
       << "- all scenarios usable: " << (r.all_usable() ? "yes" : "no") << "\n\n";

    md << "## Verdicts\n\n| check | result | detail |\n|---|---|---|\n";
    for (const auto& v : r.verdicts) md << "| " << v.name << " | " << (v.value ? "pass" : "FAIL") << " | " << v.detail << " |\n";

    if (r.kind != StudyKind::Ensemble) {
        md << "\n## Scenarios\n\n| scenario | usable | f (Hz) | zeta | linearized f | linearized zeta | notes |\n"
           << "|---|---|---|---|---|---|---|\n";
        for (const auto& s : r.scenarios) {
            md << "| " << s.spec.key << " | " << (s.usable ? "yes" : "no") << " | "
               << (s.ringdown.dominant ? fmt("%.4f", s.ringdown.dominant->frequency) : "-") << " | "
               << (s.ringdown.dominant ? fmt("%.4f", s.ringdown.dominant->damping_ratio) : "-") << " | "
               << (s.linearized ? fmt("%.4f", s.linearized->frequency) : "-") << " | "
               << (s.linearized ? fmt("%.4f", s.linearized->damping_ratio) : "-") << " | ";
            for (std::size_t i = 0; i < s.notes.size(); ++i) md << (i ? "; " : "") << s.notes[i];
            md << " |\n";
        }
    }
    if (!r.shapes.empty()) {
        md << "\n## Mode shape clusters\n\n| scenario | group A | group B | angle B-A (deg) | max spread (deg) |\n"
           << "|---|---|---|---|---|\n";
        for (const auto& s : r.shapes) {
            auto join = [](const std::vector<std::string>& v) {
                std::string o;
                for (const auto& x : v) o += (o.empty() ? "" : " ") + x;
                return o;
            };
            md << "| " << s.key << " | " << join(s.clusters.group_a) << " | " << join(s.clusters.group_b) << " | "
               << (s.clusters.inter_angle_deg ? fmt("%.1f", *s.clusters.inter_angle_deg) : "-") << " | "
               << fmt("%.2f", s.clusters.max_spread_deg) << " |\n";
        }
    }
    if (r.gain) {
        md << "\n## Gain sensitivity (kq " << fmt("%g", r.gain->kq_low) << " vs " << fmt("%g", r.gain->kq_high)
           << ")\n\n| penetration | new mode f (Hz) | zeta | score ratio |\n|---|---|---|---|\n";
        for (const auto& l : r.gain->levels) {
            md << "| " << fmt("%.0f%%", 100.0 * l.penetration) << " | "
               << (l.new_mode ? fmt("%.3f", l.new_mode->frequency) : "-") << " | "
               << (l.new_mode ? fmt("%.4f", l.new_mode->damping_ratio) : "-") << " | "
               << (l.new_mode ? (l.new_mode->ratio ? fmt("%.1f", *l.new_mode->ratio) : "no counterpart") : "-")
               << " |\n";
        }
        if (r.gain->unstable) md << "\n**Warning: the new mode is unstable in at least one level.**\n";
    }
    if (r.ensemble && r.ensemble->stats) {
        const auto& s = *r.ensemble->stats;
        md << "\n## Ensemble\n\n- runs usable: " << r.ensemble->usable << " of " << r.ensemble->runs
           << "\n- median frequency: " << fmt("%.4f", s.frequency_center) << " Hz\n- median damping ratio: "
           << fmt("%.4f", s.damping_center) << "\n- damping skewness: " << fmt("%.3f", s.damping_skewness)
           << "\n- frequency skewness: " << fmt("%.3f", s.frequency_skewness) << "\n";
    }
    return md.str();
}

void write_report(const StudyReport& r, const std::filesystem::path& output_dir, bool write_records) {
    const auto dir = output_dir / r.name;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw StudyError("cannot create " + dir.string() + ": " + ec.message());
    write_text(dir / "report.json", report_to_json(r));
    write_text(dir / "report.md", report_to_markdown(r));
    write_plots(r, dir);
    for (const auto& s : r.scenarios) {
        const auto sd = dir / s.spec.key;
        std::filesystem::create_directories(sd, ec);
        if (ec) throw StudyError("cannot create " + sd.string() + ": " + ec.message());
        write_text(sd / "manifest.json", s.manifest);
        write_text(sd / "modes.json", ringdown_to_json(s.ringdown));
        if (write_records && s.record.length() > 0) sim::save_record_csv(sd / "record.csv", s.record);
    }
}

}  // namespace pvosc::study
