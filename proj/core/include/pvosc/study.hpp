#pragma once

// Study orchestration: builds scenarios, simulates a disturbance in each,
// extracts ringdown modes and summarises trends across scenarios.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pvosc/modal.hpp"
#include "pvosc/scenario.hpp"
#include "pvosc/simengine.hpp"

namespace pvosc::study {

class StudyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class StudyKind { Sweep, ModeShape, StrategyCompare, GainSensitivity, Ensemble };

const char* to_string(StudyKind k);  // sweep, shape, strategy, gain, ensemble
StudyKind parse_study_kind(const std::string& s);

struct AnalysisOptions {
    std::string channel_group = "bus_freq";
    bool subtract_mean = true;  // remove the common-mode component across channels
    double delay = 0.5;         // s after the last event
    double window = 20.0;       // s
    modal::PencilConfig pencil;
    double shape_tolerance = 0.05;     // Hz, pole matching across channels
    double cluster_threshold = 0.1;    // shape entries below this share of the peak are ignored
};

struct StudyConfig {
    StudyKind kind = StudyKind::Sweep;
    std::string name;  // output subdirectory; defaults to the kind
    std::filesystem::path case_path;  // empty: the scenario file's case
    std::filesystem::path scenario_path;
    double band_lo = 0.1;  // Hz, electromechanical band
    double band_hi = 1.1;
    std::filesystem::path output_dir = "out";
    int jobs = 1;
    std::optional<std::uint64_t> seed;  // overrides the scenario file
    std::vector<sim::Event> disturbance;
    sim::SimOptions sim{.record_dt = 0.05, .record_device_states = false};  // t_end is derived
    AnalysisOptions analysis;
    std::vector<double> penetrations;  // empty: the scenario file's list
    std::optional<dyn::PvStrategy> strategy;
    std::optional<double> kq;
    bool write_records = true;

    double compare_penetration = 0.65;
    std::vector<dyn::PvStrategy> strategies{dyn::PvStrategy::VoltVarWithSolarControl,
                                            dyn::PvStrategy::VoltVarWithoutSolarControl};

    std::vector<double> gains{0.1, 0.5};
    double new_mode_ratio = 5.0;            // high-gain score over low-gain score
    double new_mode_freq_tolerance = 0.05;  // relative

    int ensemble_runs = 500;
    double load_perturbation = 0.05;  // uniform +-fraction per load
    double ensemble_penetration = 0.0;
    double freq_bin = 0.01;
    double damping_bin = 0.01;

    /// Throws StudyError on inconsistent settings or missing files.
    void validate() const;
    /// Simulation end time: last event + delay + window.
    double t_end() const;
};

/// The default disturbance: a 0.1 s self-clearing fault (y = -j20 pu) at bus 7, t = 1 s.
std::vector<sim::Event> default_disturbance();

/// Keys missing from the JSON take the defaults above. Relative paths resolve
/// against base_dir. `kind` overrides a "study" key in the file.
StudyConfig parse_study_config(const std::string& json_text, const std::filesystem::path& base_dir = {},
                               std::optional<StudyKind> kind = std::nullopt);
StudyConfig load_study_config(const std::filesystem::path& path, std::optional<StudyKind> kind = std::nullopt);
/// Canonical JSON of every setting that influences results (output dir and jobs excluded).
std::string config_to_json(const StudyConfig& cfg);

std::uint64_t fnv1a64(std::string_view s);
std::string hex64(std::uint64_t v);

// --------------------------------------------------------------------------
// per-scenario results

struct ScenarioSpec {
    std::string key;  // directory name, unique within a study
    double penetration = 0.0;
    dyn::PvStrategy strategy = dyn::PvStrategy::VoltVarWithSolarControl;
    double kq = 0.1;
    std::uint64_t seed = 0;
    double load_perturbation = 0.0;  // ensemble runs only
};

struct ChannelModes {
    std::string channel;
    std::vector<modal::Mode> modes;
};

struct LinearizedMode {
    double frequency = 0.0;
    double damping_ratio = 0.0;
};

/// Modes of a ringdown: one pencil per channel, the in-band dominant mode and
/// the mode shape at its frequency.
struct RingdownAnalysis {
    std::string group;
    bool subtract_mean = false;
    double start = 0.0;   // s
    double window = 0.0;  // s, actually analysed
    double dt = 0.0;
    double band_lo = 0.0, band_hi = 0.0;
    std::vector<ChannelModes> channel_modes;
    std::optional<modal::Mode> dominant;  // largest in-band amplitude over all channels
    std::string dominant_channel;
    std::optional<modal::ModeShape> shape;
};

/// Analysis channels cut from a record: the window [start, start + window)
/// of one group, optionally with the cross-channel mean removed.
/// Throws StudyError when the group is missing or the window is too short.
std::vector<modal::NamedSeries> analysis_channels(const sim::TimeSeriesRecord& rec, const AnalysisOptions& opt,
                                                  double start);

RingdownAnalysis analyze_ringdown(const sim::TimeSeriesRecord& rec, const AnalysisOptions& opt, double start,
                                  double band_lo, double band_hi);

/// modes.json: per-channel mode tables, dominant mode and mode shape.
std::string ringdown_to_json(const RingdownAnalysis& a);

struct ScenarioResult {
    ScenarioSpec spec;
    bool usable = false;  // simulation usable and an in-band mode found
    std::vector<std::string> notes;
    std::optional<scen::DisplacementSummary> displacement;
    std::optional<LinearizedMode> linearized;  // electromechanical eigenvalue, for cross-checking
    RingdownAnalysis ringdown;
    sim::TimeSeriesRecord record;
    std::string manifest;       // JSON text
    std::string manifest_hash;  // FNV-1a of the manifest
};

// --------------------------------------------------------------------------
// summaries

/// Two-group split of a mode shape: significant entries within 90 degrees of
/// the reference channel against the rest.
struct ShapeClusters {
    std::vector<std::string> group_a;  // contains the reference channel
    std::vector<std::string> group_b;
    std::vector<std::string> ignored;  // below the magnitude threshold
    std::optional<double> inter_angle_deg;  // circular mean of B minus A, in [0, 360)
    double max_spread_deg = 0.0;  // largest pairwise angle inside a group
};

ShapeClusters cluster_shape(const modal::ModeShape& shape, double magnitude_threshold);

/// Visibility of a mode over an analysis window of length T: the RMS of
/// a e^{sigma t} cos(omega t + phi), approximated without the oscillatory term.
double mode_rms(const modal::Mode& m, double window);

struct NewModeMatch {
    double frequency = 0.0;  // median over matching channels
    double damping_ratio = 0.0;
    double score_high = 0.0;  // summed RMS across channels
    double score_low = 0.0;
    std::optional<double> ratio;  // absent when the low arm has no counterpart
    int channels = 0;
};

/// Modes in (f_min, f_max] of `high` whose summed visibility is at least
/// `ratio` times that of the same frequency in `low`, strongest first, one
/// entry per frequency (within rel_tol).
std::vector<NewModeMatch> new_mode_candidates(const std::vector<ChannelModes>& high,
                                             const std::vector<ChannelModes>& low, double f_min, double f_max,
                                             double rel_tol, double ratio, double window);
/// Strongest of new_mode_candidates.
std::optional<NewModeMatch> find_new_mode(const std::vector<ChannelModes>& high, const std::vector<ChannelModes>& low,
                                          double f_min, double f_max, double rel_tol, double ratio, double window);

/// Follows one new mode across levels. The anchor is the candidate with a
/// neighbour (within rel_tol) in the most levels, ties to the larger summed
/// score; each level then reports its candidate nearest the anchor.
std::vector<std::optional<NewModeMatch>> track_new_mode(const std::vector<std::vector<NewModeMatch>>& levels,
                                                        double rel_tol);

double coefficient_of_variation(const std::vector<double>& v);  // population std / |mean|

struct Verdict {
    std::string name;
    bool value = false;
    std::string detail;
};

struct ShapeSummary {
    std::string key;
    double penetration = 0.0;
    ShapeClusters clusters;
};

struct StrategyArm {
    std::string key;
    dyn::PvStrategy strategy{};
    std::optional<modal::Mode> mode;
};

struct StrategyComparison {
    double penetration = 0.0;
    std::vector<StrategyArm> arms;
    std::optional<double> damping_difference;     // second arm minus first
    std::optional<double> frequency_rel_difference;
    std::optional<double> amplitude_difference;
    std::vector<std::pair<std::string, double>> angle_difference_deg;  // per channel, second minus first
};

struct GainLevel {
    double penetration = 0.0;
    std::string key_low;
    std::string key_high;
    std::optional<NewModeMatch> new_mode;
    std::optional<modal::Mode> electromechanical_low;
    std::optional<modal::Mode> electromechanical_high;
};

struct GainSummary {
    double kq_low = 0.1;
    double kq_high = 0.5;
    std::vector<GainLevel> levels;
    std::optional<double> new_mode_frequency_cv;
    std::optional<double> electromechanical_damping_cv;  // high-gain arm
    std::optional<modal::ModeShape> new_mode_shape;      // at the highest level
    std::string new_mode_shape_key;
    bool unstable = false;
};

struct EnsembleSummary {
    int runs = 0;
    int usable = 0;
    std::optional<modal::ModeEnsembleStats> stats;
};

struct StudyReport {
    StudyKind kind = StudyKind::Sweep;
    std::string name;
    std::string config_json;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string version;
    double band_lo = 0.0, band_hi = 0.0;
    std::vector<ScenarioResult> scenarios;  // in scenario-key order of the plan
    std::vector<Verdict> verdicts;
    std::vector<ShapeSummary> shapes;
    std::optional<StrategyComparison> strategy;
    std::optional<GainSummary> gain;
    std::optional<EnsembleSummary> ensemble;

    bool all_usable() const;
    const ScenarioResult* find(const std::string& key) const;
    const Verdict* verdict(const std::string& name) const;
};

/// Runs the configured study. Scenario failures are recorded, not thrown;
/// configuration errors throw StudyError. Ensemble studies with fewer than
/// half the runs usable throw StudyError with diagnostics.
StudyReport run_study(const StudyConfig& cfg);

StudyReport run_sweep(const StudyConfig& cfg);
StudyReport run_mode_shape(const StudyConfig& cfg);
StudyReport run_strategy_compare(const StudyConfig& cfg);
StudyReport run_gain_sensitivity(const StudyConfig& cfg);
StudyReport run_ensemble(const StudyConfig& cfg);

std::string report_to_json(const StudyReport& r);
std::string report_to_markdown(const StudyReport& r);

/// Writes <out>/<name>/report.json, report.md, SVG plots and one directory
/// per scenario with record.csv, modes.json and manifest.json.
void write_report(const StudyReport& r, const std::filesystem::path& output_dir, bool write_records = true);

}  // namespace pvosc::study
