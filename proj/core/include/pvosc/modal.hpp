#pragma once

// Ringdown modal analysis with the Matrix Pencil method: poles, damping,
// dominant-mode selection, multi-channel mode shapes and ensemble statistics.

#include <complex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvosc::modal {

using Complex = std::complex<double>;

class ModalError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Detrend { None, Mean, Linear };

const char* to_string(Detrend d);
Detrend parse_detrend(const std::string& s);

struct PencilConfig {
    std::optional<int> pencil_param;  // L; default floor(0.4 N)
    double sv_threshold = 1e-8;       // relative to the largest singular value
    int max_modes = 10;               // folded modes; at most 2 * max_modes poles are kept
    Detrend detrend = Detrend::Linear;

    /// Preset for measurement-like (noisy) signals.
    static PencilConfig noisy() {
        PencilConfig c;
        c.sv_threshold = 1e-3;
        return c;
    }
};

struct Mode {
    Complex pole;             // s = sigma + j omega (1/s), omega >= 0
    double frequency = 0.0;   // Hz
    double damping_ratio = 0.0;
    double amplitude = 0.0;   // peak amplitude at the window start, channel units
    double phase = 0.0;       // rad, at the window start
};

/// Modes sorted by decreasing amplitude. Empty when the detrended signal is flat.
/// Throws ModalError for fewer than 20 samples, dt <= 0 or an invalid config.
std::vector<Mode> matrix_pencil(std::span<const double> signal, double dt, const PencilConfig& cfg = {});

/// zeta = -Re(s) / |s|. Throws ModalError for s = 0.
double damping_ratio(Complex pole);

/// Largest-amplitude mode with frequency in [f_lo, f_hi]; ties go to the lower frequency.
std::optional<Mode> dominant_mode(const std::vector<Mode>& modes, double f_lo, double f_hi);

struct NamedSeries {
    std::string name;
    std::vector<double> values;
};

struct ShapeEntry {
    std::string channel;
    bool found = false;
    Mode mode;               // the matched pole in this channel
    double magnitude = 0.0;
    double angle = 0.0;      // rad relative to the reference channel, in (-pi, pi]
};

struct ModeShape {
    double target_frequency = 0.0;
    std::string reference;   // channel with the largest magnitude (angle 0)
    std::vector<ShapeEntry> entries;

    const ShapeEntry* find(const std::string& channel) const;
};

/// One pencil per channel; each channel contributes the pole nearest
/// target_freq within tol_freq. Absent when no channel carries the mode.
std::optional<ModeShape> mode_shape(const std::vector<NamedSeries>& channels, double dt, double target_freq,
                                    double tol_freq, const PencilConfig& cfg = {});

/// Re-express a shape relative to another channel (angles stay wrapped).
ModeShape rereference(const ModeShape& shape, const std::string& channel);

double wrap_angle(double rad);  // into (-pi, pi]

struct Histogram {
    double origin = 0.0;  // left edge of the first bin
    double width = 0.0;
    std::vector<int> counts;
};

struct ModeEnsembleStats {
    std::vector<double> frequencies;
    std::vector<double> damping_ratios;
    double frequency_center = 0.0;  // median
    double damping_center = 0.0;    // median
    double frequency_skewness = 0.0;
    double damping_skewness = 0.0;
    Histogram frequency_hist;
    Histogram damping_hist;
};

/// Medians as centers; histograms with the given bin widths (Hz, damping ratio).
/// Throws ModalError on an empty ensemble.
ModeEnsembleStats mode_statistics(const std::vector<Mode>& ensemble, double freq_bin = 0.01,
                                  double damping_bin = 0.01);

double median(std::vector<double> v);
/// Sample skewness g1 (0 for fewer than 3 samples or zero spread).
double skewness(const std::vector<double>& v);
Histogram histogram(const std::vector<double>& v, double width);

}  // namespace pvosc::modal
