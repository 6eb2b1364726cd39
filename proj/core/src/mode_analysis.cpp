#include <algorithm>
#include <cmath>
#include <numeric>

#include "pvosc/modal.hpp"

namespace pvosc::modal {

double wrap_angle(double rad) {
    double a = std::remainder(rad, 2.0 * M_PI);  // [-pi, pi]
    if (a <= -M_PI) a += 2.0 * M_PI;
    return a;
}

const ShapeEntry* ModeShape::find(const std::string& channel) const {
    for (const auto& e : entries) {
        if (e.channel == channel) return &e;
    }
    return nullptr;
}

std::optional<ModeShape> mode_shape(const std::vector<NamedSeries>& channels, double dt, double target_freq,
                                    double tol_freq, const PencilConfig& cfg) {
    if (channels.empty()) return std::nullopt;
    const auto n = channels.front().values.size();
    for (const auto& c : channels) {
        if (c.values.size() != n) throw ModalError("mode_shape: channel '" + c.name + "' has a different length");
    }

    ModeShape shape;
    shape.target_frequency = target_freq;
    double best_mag = -1.0;
    double ref_phase = 0.0;
    for (const auto& c : channels) {
        ShapeEntry e;
        e.channel = c.name;
        const auto modes = matrix_pencil(c.values, dt, cfg);
        double best_df = tol_freq;
        for (const auto& md : modes) {
            const double df = std::abs(md.frequency - target_freq);
            if (df <= best_df && !(e.found && df == best_df && md.amplitude <= e.mode.amplitude)) {
                best_df = df;
                e.mode = md;
                e.found = true;
            }
        }
        if (e.found) {
            e.magnitude = e.mode.amplitude;
            if (e.magnitude > best_mag) {
                best_mag = e.magnitude;
                shape.reference = c.name;
                ref_phase = e.mode.phase;
            }
        }
        shape.entries.push_back(std::move(e));
    }
    if (best_mag < 0.0) return std::nullopt;
    for (auto& e : shape.entries) {
        if (!e.found) continue;
        e.angle = e.channel == shape.reference ? 0.0 : wrap_angle(e.mode.phase - ref_phase);
    }
    return shape;
}

ModeShape rereference(const ModeShape& shape, const std::string& channel) {
    const auto* ref = shape.find(channel);
    if (!ref || !ref->found) throw ModalError("rereference: channel '" + channel + "' does not carry the mode");
    ModeShape out = shape;
    out.reference = channel;
    const double a0 = ref->angle;
    for (auto& e : out.entries) {
        if (!e.found) continue;
        e.angle = e.channel == channel ? 0.0 : wrap_angle(e.angle - a0);
    }
    return out;
}

double median(std::vector<double> v) {
    if (v.empty()) throw ModalError("median of an empty sample");
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double skewness(const std::vector<double>& v) {
    const auto n = static_cast<double>(v.size());
    if (v.size() < 3) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double m2 = 0.0, m3 = 0.0;
    for (double x : v) {
        const double d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if (m2 <= 0.0) return 0.0;
    return m3 / std::pow(m2, 1.5);
}

Histogram histogram(const std::vector<double>& v, double width) {
    if (!(width > 0.0)) throw ModalError("histogram bin width must be positive");
    Histogram h;
    h.width = width;
    if (v.empty()) return h;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double first = std::floor(*lo / width + 1e-9);
    const double last = std::floor(*hi / width + 1e-9);
    h.origin = first * width;
    h.counts.assign(static_cast<std::size_t>(last - first) + 1, 0);
    for (double x : v) {
        auto k = static_cast<long>(std::floor(x / width + 1e-9) - first);
        k = std::clamp(k, 0L, static_cast<long>(h.counts.size()) - 1);
        ++h.counts[static_cast<std::size_t>(k)];
    }
    return h;
}

ModeEnsembleStats mode_statistics(const std::vector<Mode>& ensemble, double freq_bin, double damping_bin) {
    if (ensemble.empty()) throw ModalError("mode_statistics needs at least one mode");
    ModeEnsembleStats st;
    for (const auto& m : ensemble) {
        st.frequencies.push_back(m.frequency);
        st.damping_ratios.push_back(m.damping_ratio);
    }
    st.frequency_center = median(st.frequencies);
    st.damping_center = median(st.damping_ratios);
    st.frequency_skewness = skewness(st.frequencies);
    st.damping_skewness = skewness(st.damping_ratios);
    st.frequency_hist = histogram(st.frequencies, freq_bin);
    st.damping_hist = histogram(st.damping_ratios, damping_bin);
    return st;
}

}  // namespace pvosc::modal
