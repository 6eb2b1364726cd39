// pvosc: power flow, simulation, ringdown analysis, PV siting and studies.
//
// Exit codes: 0 success (every requested scenario usable), 1 a run or
// scenario was unusable, 2 bad input or I/O failure.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pvosc/modal.hpp"
#include "pvosc/record_io.hpp"
#include "pvosc/scenario.hpp"
#include "pvosc/simengine.hpp"
#include "pvosc/study.hpp"
#include "pvosc/system.hpp"

using namespace pvosc;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw UsageError("cannot open " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& s) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os) throw UsageError("cannot write " + p.string());
    os << s;
    if (!s.empty() && s.back() != '\n') os << '\n';
}

std::pair<double, double> parse_band(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw UsageError("band must look like lo:hi, got '" + s + "'");
    try {
        const double lo = std::stod(s.substr(0, colon)), hi = std::stod(s.substr(colon + 1));
        if (!(lo >= 0.0 && lo < hi)) throw UsageError("band needs 0 <= lo < hi");
        return {lo, hi};
    } catch (const std::logic_error&) {
        throw UsageError("band must look like lo:hi, got '" + s + "'");
    }
}

// ---- powerflow

int cmd_powerflow(const std::string& case_file, const std::string& out) {
    const auto sys = load_case(case_file);
    const auto pf = solve_system_power_flow(sys);
    const auto csv = net::power_flow_csv(sys.net, pf.bus);
    if (out.empty()) {
        std::cout << csv;
    } else {
        write_text(out, csv);
    }
    std::cerr << "converged in " << pf.bus.iterations << " iterations, mismatch " << pf.bus.mismatch_norm << " pu\n";
    return 0;
}

// ---- simulate

int cmd_simulate(const std::string& case_file, const std::string& events_file, double t_end, double dt,
                 double record_dt, const fs::path& out) {
    const auto sys = load_case(case_file);
    std::vector<sim::Event> events;
    if (!events_file.empty()) events = sim::load_events(events_file);
    sim::SimOptions opt;
    opt.t_end = t_end;
    opt.dt = dt;
    opt.record_dt = record_dt;

    json m;
    m["case"] = case_file;
    m["case_hash"] = study::hex64(study::fnv1a64(read_text(case_file)));
    m["events"] = json::parse(sim::events_to_json(events));
    m["t_end"] = t_end;
    m["dt"] = dt;
    m["record_dt"] = record_dt;
    m["version"] = PVOSC_VERSION;

    fs::create_directories(out);
    int rc = 0;
    try {
        const auto res = sim::simulate(sys, events, opt);
        for (const auto& g : res.record.groups()) {
            sim::TimeSeriesRecord part{res.record.t0, res.record.dt, {}};
            for (const auto* c : res.record.group(g)) part.channels.push_back(*c);
            sim::save_record_csv(out / (g + ".csv"), part);
        }
        m["usable"] = res.usable;
        m["voltage_collapse"] = res.voltage_collapse;
        m["steps"] = res.steps;
        m["max_algebraic_residual"] = res.max_algebraic_residual;
        m["notes"] = res.notes;
        if (!res.usable) rc = 1;
    } catch (const sim::SimulationError& e) {
        m["usable"] = false;
        m["error"] = {{"message", e.what()}, {"time", e.time()}, {"bus", e.bus()}};
        std::cerr << "simulation aborted: " << e.what() << '\n';
        rc = 1;
    }
    // hash everything that determines the run
    json key = m;
    key.erase("usable");
    key.erase("voltage_collapse");
    key.erase("steps");
    key.erase("max_algebraic_residual");
    key.erase("notes");
    key.erase("error");
    m["config_hash"] = study::hex64(study::fnv1a64(key.dump()));
    write_text(out / "manifest.json", m.dump(2));
    return rc;
}

// ---- analyze

sim::TimeSeriesRecord load_records(const fs::path& in) {
    if (!fs::is_directory(in)) return sim::load_record_csv(in);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw UsageError("no .csv files in " + in.string());
    std::optional<sim::TimeSeriesRecord> all;
    for (const auto& f : files) {
        auto r = sim::load_record_csv(f);
        if (!all) {
            all = std::move(r);
            continue;
        }
        if (r.length() != all->length() || std::abs(r.t0 - all->t0) > 1e-9 || std::abs(r.dt - all->dt) > 1e-9) {
            throw UsageError(f.string() + " has a different time base from the other CSV files");
        }
        for (auto& c : r.channels) all->channels.push_back(std::move(c));
    }
    return *all;
}

std::optional<double> manifest_start(const fs::path& in, double delay) {
    const auto mf = (fs::is_directory(in) ? in : in.parent_path()) / "manifest.json";
    if (!fs::exists(mf)) return std::nullopt;
    const auto j = json::parse(read_text(mf), nullptr, true, true);
    const auto evs = j.contains("events") ? j["events"] : (j.contains("disturbance") ? j["disturbance"] : json());
    if (evs.is_null()) return std::nullopt;
    double last = 0.0;
    for (const auto& e : sim::parse_events(evs.dump())) {
        double end = e.time;
        if (const auto* f = std::get_if<sim::SelfClearingFault>(&e.action)) end += f->duration;
        last = std::max(last, end);
    }
    return last + delay;
}

int cmd_analyze(const fs::path& in, const std::string& band, const std::string& group, std::optional<double> start,
                double delay, std::optional<double> window, bool keep_mean, bool noisy, const std::string& out) {
    const auto [lo, hi] = parse_band(band);
    const auto rec = load_records(in);
    study::AnalysisOptions opt;
    opt.channel_group = group;
    opt.subtract_mean = !keep_mean;
    opt.delay = delay;
    if (noisy) opt.pencil = modal::PencilConfig::noisy();
    double t_start = start ? *start : manifest_start(in, delay).value_or(rec.t0);
    opt.window = window ? *window : rec.t0 + static_cast<double>(rec.length()) * rec.dt - t_start;
    const auto a = study::analyze_ringdown(rec, opt, t_start, lo, hi);
    const auto text = study::ringdown_to_json(a);
    if (out.empty()) {
        std::cout << text << '\n';
    } else {
        write_text(out, text);
    }
    if (a.dominant) {
        std::fprintf(stderr, "dominant mode %.4f Hz, damping %.4f (channel %s)\n", a.dominant->frequency,
                     a.dominant->damping_ratio, a.dominant_channel.c_str());
        return 0;
    }
    std::cerr << "no mode found in the band\n";
    return 1;
}

// ---- site

int cmd_site(const std::string& regions_file, double target, const std::string& case_file) {
    auto sf = scen::load_scenario_file(regions_file);
    const auto sys = load_case(case_file.empty() ? sf.case_path : fs::path(case_file));
    if (sf.regions.empty()) sf.regions = scen::regions_from_areas(sys);
    scen::fill_region_totals(sf.regions, sys);
    scen::validate_regions(sf.regions, sf.interfaces);
    const auto alloc = scen::allocate_pv(sf.regions, sf.interfaces, target);
    std::printf("region,pv_mw,unit_cost,cost,cap_mw\n");
    for (std::size_t i = 0; i < alloc.size(); ++i) {
        const auto& r = sf.regions[i];
        std::printf("%d,%.6f,%.6f,%.6f,%.6f\n", r.id, alloc[i], r.unit_cost(), alloc[i] * r.unit_cost(), r.cap_mw);
    }
    std::printf("total,%.6f,,%.6f,\n", target, scen::allocation_cost(sf.regions, alloc));
    return 0;
}

// ---- study

int cmd_study(const std::string& kind, const std::string& config, const std::string& out,
              std::optional<std::uint64_t> seed, std::optional<int> jobs, bool no_records) {
    const auto k = study::parse_study_kind(kind);
    auto cfg = config.empty() ? study::StudyConfig{} : study::load_study_config(config, k);
    cfg.kind = k;
    if (config.empty()) {
        cfg.name = study::to_string(k);
        cfg.scenario_path = fs::path(PVOSC_DATA_DIR) / "scenarios" / "two_area_regions.json";
        cfg.disturbance = study::default_disturbance();
    }
    if (cfg.name.empty()) cfg.name = study::to_string(k);
    if (!out.empty()) cfg.output_dir = out;
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    if (no_records) cfg.write_records = false;

    const auto report = study::run_study(cfg);
    study::write_report(report, cfg.output_dir, cfg.write_records);

    for (const auto& v : report.verdicts)
        std::cout << (v.value ? "pass  " : "FAIL  ") << v.name << (v.detail.empty() ? "" : "  (" + v.detail + ")") << '\n';
    for (const auto& s : report.scenarios) {
        if (s.usable) continue;
        std::cout << "unusable " << s.spec.key;
        for (const auto& n : s.notes) std::cout << "; " << n;
        std::cout << '\n';
    }
    std::cout << "report: " << (cfg.output_dir / report.name / "report.json").string() << '\n';
    return report.all_usable() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pvosc: inter-area oscillation studies under PV displacement"};
    app.require_subcommand(1);
    app.set_version_flag("--version", PVOSC_VERSION);

    std::string case_file, out, events_file, in, band = "0.1:1.0", group = "bus_freq", regions, config;
    double t_end = 20.0, dt = 0.005, record_dt = 0.1, target = 0.0, delay = 0.5;
    std::optional<double> start, window;
    bool keep_mean = false, noisy = false, no_records = false;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;

    auto* pf = app.add_subcommand("powerflow", "Solve the power flow of a case and print the bus table as CSV");
    pf->add_option("--case", case_file, "Case file (JSON)")->required()->check(CLI::ExistingFile);
    pf->add_option("--out", out, "Write the CSV here instead of stdout");

    auto* sm = app.add_subcommand("simulate", "Simulate a case and write one CSV per channel group");
    sm->add_option("--case", case_file, "Case file (JSON)")->required()->check(CLI::ExistingFile);
    sm->add_option("--events", events_file, "Event list (JSON)")->check(CLI::ExistingFile);
    sm->add_option("--tend", t_end, "End time (s)")->check(CLI::PositiveNumber);
    sm->add_option("--dt", dt, "Integration step (s)")->check(CLI::PositiveNumber);
    sm->add_option("--record-dt", record_dt, "Recording interval (s)")->check(CLI::PositiveNumber);
    sm->add_option("--out", out, "Output directory")->required();

    auto* an = app.add_subcommand("analyze", "Extract ringdown modes from recorded CSVs");
    an->add_option("--in", in, "CSV file or directory of CSVs")->required()->check(CLI::ExistingPath);
    an->add_option("--band", band, "Electromechanical band lo:hi (Hz)");
    an->add_option("--group", group, "Channel group to analyse");
    an->add_option("--start", start, "Window start (s); default: last event + delay from manifest.json");
    an->add_option("--delay", delay, "Delay after the last event (s)");
    an->add_option("--window", window, "Window length (s); default: to the end of the record");
    an->add_flag("--keep-mean", keep_mean, "Do not remove the cross-channel mean");
    an->add_flag("--noisy", noisy, "Use the pencil preset for measured (noisy) data");
    an->add_option("--out", out, "Write modes JSON here instead of stdout");

    auto* st = app.add_subcommand("site", "Least-cost PV siting across regions; prints allocation CSV");
    st->add_option("--regions", regions, "Scenario file with region and interface tables")
        ->required()
        ->check(CLI::ExistingFile);
    st->add_option("--target", target, "PV to site (MW)")->required()->check(CLI::NonNegativeNumber);
    st->add_option("--case", case_file, "Case file; default: the one named by the scenario file");

    auto* sd = app.add_subcommand("study", "Run a study: sweep, shape, strategy, gain or ensemble");
    std::string kind;
    sd->add_option("kind", kind, "Study kind")
        ->required()
        ->check(CLI::IsMember({"sweep", "shape", "strategy", "gain", "ensemble"}));
    sd->add_option("--config", config, "Study config (JSON)")->check(CLI::ExistingFile);
    sd->add_option("--out", out, "Output directory (overrides the config)");
    sd->add_option("--seed", seed, "Seed (overrides the config and scenario file)");
    sd->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
    sd->add_flag("--no-records", no_records, "Skip per-scenario record.csv files");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pf->parsed()) return cmd_powerflow(case_file, out);
        if (sm->parsed()) return cmd_simulate(case_file, events_file, t_end, dt, record_dt, out);
        if (an->parsed()) return cmd_analyze(in, band, group, start, delay, window, keep_mean, noisy, out);
        if (st->parsed()) return cmd_site(regions, target, case_file);
        if (sd->parsed()) return cmd_study(kind, config, out, seed, jobs, no_records);
    } catch (const study::StudyError& e) {
        std::cerr << "error: " << e.what() << '\n';
        // an aborted ensemble is a scenario failure, not bad input
        return std::string_view(e.what()).starts_with("ensemble aborted") ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
