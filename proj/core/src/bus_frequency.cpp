#include <cmath>
#include <stdexcept>

#include "pvosc/simengine.hpp"

namespace pvosc::sim {

std::vector<double> bus_frequency(std::span<const double> angle, double dt, double filter_t) {
    const std::size_t n = angle.size();
    if (n < 3) throw std::invalid_argument("bus_frequency: need at least 3 samples");
    if (!(dt > 0.0)) throw std::invalid_argument("bus_frequency: dt must be positive");

    // unwrap defensively; callers may pass raw arg() values
    std::vector<double> th(angle.begin(), angle.end());
    for (std::size_t k = 1; k < n; ++k) {
        th[k] = th[k - 1] + std::remainder(angle[k] - angle[k - 1], 2.0 * M_PI);
    }

    const double scale = 1.0 / (2.0 * M_PI);
    std::vector<double> f(n);
    f[0] = (th[1] - th[0]) / dt * scale;
    f[n - 1] = (th[n - 1] - th[n - 2]) / dt * scale;
    for (std::size_t k = 1; k + 1 < n; ++k) f[k] = (th[k + 1] - th[k - 1]) / (2.0 * dt) * scale;

    if (filter_t > 0.0) {
        // first-order lag, exact for piecewise-constant input
        const double a = 1.0 - std::exp(-dt / filter_t);
        double y = f[0];
        for (auto& u : f) {
            y += a * (u - y);
            u = y;
        }
    }
    return f;
}

}  // namespace pvosc::sim
