#include <algorithm>
#include <cmath>

#include "dae_model.hpp"
#include "pvosc/simengine.hpp"

namespace pvosc::sim {

using Eigen::MatrixXd;
using Eigen::VectorXd;

LinearModel linearize(const PowerSystem& sys, double step) {
    net::PowerFlowOptions pfo;
    pfo.tol = 1e-12;
    pfo.max_iter = 30;
    const auto pf = solve_system_power_flow(sys, pfo);
    detail::DaeModel m(sys, pf);

    const VectorXd x0 = m.x0();
    VectorXd v0 = m.v0();
    m.solve_algebraic(x0, v0, 1e-13, 20);

    const int nx = m.nx(), nv = m.nv();
    VectorXd f0(nx);
    m.f(x0, v0, f0);
    if (nx > 0 && f0.cwiseAbs().maxCoeff() >= 1e-6) {
        throw LinearizeError("linearize: initial point is not an equilibrium (max derivative " +
                             std::to_string(f0.cwiseAbs().maxCoeff()) + ")");
    }

    // Central differences of f and g in x and v, then eliminate the network:
    // A = fx - fv * gv^-1 * gx
    MatrixXd fx(nx, nx), fv(nx, nv), gx(nv, nx), gv(nv, nv);
    VectorXd fp(nx), fm(nx), gp(nv), gm(nv);
    VectorXd x = x0, v = v0;
    for (int j = 0; j < nx; ++j) {
        const double h = step * std::max(1.0, std::abs(x0[j]));
        x[j] = x0[j] + h;
        m.f(x, v, fp);
        m.g(x, v, gp);
        x[j] = x0[j] - h;
        m.f(x, v, fm);
        m.g(x, v, gm);
        x[j] = x0[j];
        fx.col(j) = (fp - fm) / (2.0 * h);
        gx.col(j) = (gp - gm) / (2.0 * h);
    }
    for (int j = 0; j < nv; ++j) {
        const double h = step * std::max(1.0, std::abs(v0[j]));
        v[j] = v0[j] + h;
        m.f(x, v, fp);
        m.g(x, v, gp);
        v[j] = v0[j] - h;
        m.f(x, v, fm);
        m.g(x, v, gm);
        v[j] = v0[j];
        fv.col(j) = (fp - fm) / (2.0 * h);
        gv.col(j) = (gp - gm) / (2.0 * h);
    }

    LinearModel lm;
    lm.a = fx - fv * gv.partialPivLu().solve(gx);
    lm.state_names = m.state_names();
    Eigen::EigenSolver<MatrixXd> es(lm.a);
    if (es.info() != Eigen::Success) throw LinearizeError("linearize: eigen decomposition failed");
    lm.eigenvalues = es.eigenvalues();
    lm.eigenvectors = es.eigenvectors();
    return lm;
}

std::vector<EigenMode> oscillatory_modes(const LinearModel& lm) {
    const auto n = lm.eigenvalues.size();
    std::vector<EigenMode> out;
    if (n == 0) return out;
    // participation factors need the left eigenvectors
    const Eigen::MatrixXcd w = lm.eigenvectors.inverse();
    for (Eigen::Index i = 0; i < n; ++i) {
        const Complex lam = lm.eigenvalues[i];
        if (lam.imag() <= 1e-6) continue;
        EigenMode md;
        md.eigenvalue = lam;
        md.frequency = lam.imag() / (2.0 * M_PI);
        md.damping_ratio = -lam.real() / std::abs(lam);
        md.vector = lm.eigenvectors.col(i);
        double total = 0.0, rotor = 0.0;
        for (Eigen::Index k = 0; k < n; ++k) {
            const double p = std::abs(lm.eigenvectors(k, i) * w(i, k));
            total += p;
            const auto& name = lm.state_names[static_cast<std::size_t>(k)];
            if (name.ends_with(".speed") || name.ends_with(".delta")) rotor += p;
        }
        md.speed_participation = total > 0.0 ? rotor / total : 0.0;
        out.push_back(std::move(md));
    }
    std::sort(out.begin(), out.end(), [](const EigenMode& a, const EigenMode& b) { return a.frequency < b.frequency; });
    return out;
}

std::optional<EigenMode> electromechanical_mode(const LinearModel& lm, double f_lo, double f_hi) {
    std::optional<EigenMode> best;
    for (auto& md : oscillatory_modes(lm)) {
        if (md.frequency < f_lo || md.frequency > f_hi) continue;
        if (!best || md.speed_participation > best->speed_participation) best = std::move(md);
    }
    return best;
}

}  // namespace pvosc::sim
