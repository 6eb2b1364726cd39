#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "pvosc/modal.hpp"

namespace pvosc::modal {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

const char* to_string(Detrend d) {
    switch (d) {
        case Detrend::None: return "none";
        case Detrend::Mean: return "mean";
        case Detrend::Linear: return "linear";
    }
    return "none";
}

Detrend parse_detrend(const std::string& s) {
    if (s == "none") return Detrend::None;
    if (s == "mean") return Detrend::Mean;
    if (s == "linear") return Detrend::Linear;
    throw ModalError("unknown detrend '" + s + "' (expected none, mean or linear)");
}

double damping_ratio(Complex pole) {
    const double mag = std::abs(pole);
    if (mag == 0.0) throw ModalError("damping ratio of a zero pole is undefined");
    return -pole.real() / mag;
}

namespace {

VectorXd detrended(std::span<const double> y, Detrend d) {
    const auto n = static_cast<Eigen::Index>(y.size());
    VectorXd out = Eigen::Map<const VectorXd>(y.data(), n);
    if (d == Detrend::Mean) {
        out.array() -= out.mean();
    } else if (d == Detrend::Linear) {
        // least-squares line over the sample index
        const double nm = static_cast<double>(n);
        const double kbar = (nm - 1.0) / 2.0;
        const double ybar = out.mean();
        double sxy = 0.0, sxx = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
            const double dk = static_cast<double>(k) - kbar;
            sxy += dk * (out[k] - ybar);
            sxx += dk * dk;
        }
        const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
        for (Eigen::Index k = 0; k < n; ++k) out[k] -= ybar + slope * (static_cast<double>(k) - kbar);
    }
    return out;
}

}  // namespace

std::vector<Mode> matrix_pencil(std::span<const double> signal, double dt, const PencilConfig& cfg) {
    const int n = static_cast<int>(signal.size());
    if (n < 20) throw ModalError("matrix pencil needs at least 20 samples (got " + std::to_string(n) + ")");
    if (!(dt > 0.0)) throw ModalError("matrix pencil: dt must be positive");
    if (!(cfg.sv_threshold > 0.0 && cfg.sv_threshold < 1.0)) throw ModalError("sv_threshold must be in (0, 1)");
    if (cfg.max_modes < 1) throw ModalError("max_modes must be >= 1");
    const int l = cfg.pencil_param.value_or(static_cast<int>(std::floor(0.4 * n)));
    if (3 * l < n || 2 * l > n) {
        throw ModalError("pencil parameter L=" + std::to_string(l) + " outside [N/3, N/2] for N=" + std::to_string(n));
    }

    const VectorXd y = detrended(signal, cfg.detrend);
    double scale = 0.0;
    for (double s : signal) scale = std::max(scale, std::abs(s));

    const int rows = n - l;
    MatrixXd hankel(rows, l + 1);
    for (int i = 0; i < rows; ++i) hankel.row(i) = y.segment(i, l + 1).transpose();

    Eigen::BDCSVD<MatrixXd> svd(hankel, Eigen::ComputeThinV);
    const VectorXd& sv = svd.singularValues();
    const double floor_abs = 1e-12 * std::max(1.0, scale) * std::sqrt(static_cast<double>(rows) * (l + 1));
    if (sv.size() == 0 || sv[0] <= floor_abs) return {};

    int m = 0;
    while (m < sv.size() && sv[m] > cfg.sv_threshold * sv[0]) ++m;
    m = std::min(m, 2 * cfg.max_modes);
    if (m == 0) return {};

    const MatrixXd vk = svd.matrixV().leftCols(m);
    const MatrixXd v1 = vk.topRows(l);
    const MatrixXd v2 = vk.bottomRows(l);
    const MatrixXd a = v1.completeOrthogonalDecomposition().solve(v2);
    Eigen::EigenSolver<MatrixXd> es(a, false);
    if (es.info() != Eigen::Success) throw ModalError("matrix pencil eigen decomposition failed");
    const VectorXcd z = es.eigenvalues();

    // residues: least squares against the Vandermonde matrix of the poles
    MatrixXcd vand(n, m);
    for (int i = 0; i < m; ++i) {
        Complex p(1.0, 0.0);
        for (int k = 0; k < n; ++k) {
            vand(k, i) = p;
            p *= z[i];
        }
    }
    const VectorXcd rhs = y.cast<Complex>();
    const VectorXcd res = vand.colPivHouseholderQr().solve(rhs);

    std::vector<Mode> out;
    for (int i = 0; i < m; ++i) {
        if (z[i].imag() < 0.0) continue;  // conjugate partner carries the pair
        if (std::abs(z[i]) == 0.0) continue;
        Mode md;
        md.pole = std::log(z[i]) / dt;
        const bool real = z[i].imag() == 0.0;
        if (real && z[i].real() < 0.0) {
            md.pole = Complex(std::log(-z[i].real()) / dt, M_PI / dt);  // Nyquist-rate alternation
        }
        md.frequency = md.pole.imag() / (2.0 * M_PI);
        md.damping_ratio = damping_ratio(md.pole);
        md.amplitude = (real ? 1.0 : 2.0) * std::abs(res[i]);
        md.phase = std::arg(res[i]);
        out.push_back(md);
    }
    std::stable_sort(out.begin(), out.end(), [](const Mode& a, const Mode& b) { return a.amplitude > b.amplitude; });
    return out;
}

std::optional<Mode> dominant_mode(const std::vector<Mode>& modes, double f_lo, double f_hi) {
    std::optional<Mode> best;
    for (const auto& md : modes) {
        if (md.frequency < f_lo || md.frequency > f_hi) continue;
        if (!best || md.amplitude > best->amplitude ||
            (md.amplitude == best->amplitude && md.frequency < best->frequency)) {
            best = md;
        }
    }
    return best;
}

}  // namespace pvosc::modal
