#include "pvosc/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <queue>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Dense>
#include <Eigen/SparseLU>

namespace pvosc::net {

const char* to_string(BusKind kind) {
    switch (kind) {
        case BusKind::Slack: return "slack";
        case BusKind::PV: return "pv";
        case BusKind::PQ: return "pq";
    }
    return "pq";
}

std::size_t NetworkModel::index_of(int bus_id) const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].id == bus_id) return i;
    }
    throw NetworkError("unknown bus id " + std::to_string(bus_id));
}

bool NetworkModel::has_bus(int bus_id) const {
    return std::any_of(buses.begin(), buses.end(), [&](const Bus& b) { return b.id == bus_id; });
}

std::size_t NetworkModel::slack_index() const {
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (buses[i].kind == BusKind::Slack) return i;
    }
    throw NetworkError("network has no slack bus");
}

void NetworkModel::validate() const {
    if (buses.empty()) throw NetworkError("network has no buses");
    if (base_mva <= 0.0) throw NetworkError("base_mva must be positive");

    std::unordered_map<int, std::size_t> pos;
    std::size_t slack_count = 0;
    for (std::size_t i = 0; i < buses.size(); ++i) {
        const auto& b = buses[i];
        if (!pos.emplace(b.id, i).second) {
            throw NetworkError("duplicate bus id " + std::to_string(b.id));
        }
        if (b.kind != BusKind::PQ && b.v_mag <= 0.0) {
            throw NetworkError("bus " + std::to_string(b.id) + " has non-positive voltage setpoint");
        }
        if (b.kind == BusKind::Slack) ++slack_count;
    }
    if (slack_count != 1) {
        throw NetworkError("expected exactly one slack bus, found " + std::to_string(slack_count));
    }

    std::vector<std::vector<std::size_t>> adj(buses.size());
    for (const auto& br : branches) {
        auto f = pos.find(br.from_bus);
        auto t = pos.find(br.to_bus);
        if (f == pos.end() || t == pos.end()) {
            throw NetworkError("branch " + std::to_string(br.id) + " references an unknown bus");
        }
        if (br.from_bus == br.to_bus) {
            throw NetworkError("branch " + std::to_string(br.id) + " connects a bus to itself");
        }
        if (br.x == 0.0) {
            throw NetworkError("branch " + std::to_string(br.id) + " has zero reactance");
        }
        if (br.tap_ratio <= 0.0) {
            throw NetworkError("branch " + std::to_string(br.id) + " has non-positive tap ratio");
        }
        if (!br.in_service) continue;
        adj[f->second].push_back(t->second);
        adj[t->second].push_back(f->second);
    }

    std::vector<bool> seen(buses.size(), false);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = true;
    std::size_t reached = 1;
    while (!q.empty()) {
        auto u = q.front();
        q.pop();
        for (auto v : adj[u]) {
            if (!seen[v]) {
                seen[v] = true;
                ++reached;
                q.push(v);
            }
        }
    }
    if (reached != buses.size()) {
        for (std::size_t i = 0; i < buses.size(); ++i) {
            if (!seen[i]) {
                throw NetworkError("network is islanded: bus " + std::to_string(buses[i].id) +
                                   " is not connected to bus " + std::to_string(buses[0].id));
            }
        }
    }
}

AdmittanceMatrix build_admittance(const NetworkModel& net) {
    const auto n = static_cast<Eigen::Index>(net.buses.size());
    std::vector<Eigen::Triplet<Complex>> trips;
    trips.reserve(net.branches.size() * 4 + net.buses.size());

    for (const auto& br : net.branches) {
        if (!br.in_service) continue;
        if (br.x == 0.0) {
            throw NetworkError("branch " + std::to_string(br.id) + " has zero reactance");
        }
        const auto f = static_cast<Eigen::Index>(net.index_of(br.from_bus));
        const auto t = static_cast<Eigen::Index>(net.index_of(br.to_bus));
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex ysh(0.0, 0.5 * br.b_charging);
        const double tap = br.tap_ratio;
        trips.emplace_back(f, f, (ys + ysh) / (tap * tap));
        trips.emplace_back(t, t, ys + ysh);
        trips.emplace_back(f, t, -ys / tap);
        trips.emplace_back(t, f, -ys / tap);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& b = net.buses[static_cast<std::size_t>(i)];
        if (b.shunt_g != 0.0 || b.shunt_b != 0.0) {
            trips.emplace_back(i, i, Complex(b.shunt_g, b.shunt_b));
        }
    }

    AdmittanceMatrix y(n, n);
    y.setFromTriplets(trips.begin(), trips.end());
    y.makeCompressed();
    return y;
}

std::vector<Complex> power_injections(const AdmittanceMatrix& y, const std::vector<Complex>& v) {
    Eigen::Map<const Eigen::VectorXcd> vv(v.data(), static_cast<Eigen::Index>(v.size()));
    Eigen::VectorXcd i = y * vv;
    std::vector<Complex> s(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        s[k] = v[k] * std::conj(i[static_cast<Eigen::Index>(k)]);
    }
    return s;
}

namespace {

struct Unknowns {
    std::vector<int> ang_pos;  // bus -> column of theta, -1 if fixed
    std::vector<int> mag_pos;  // bus -> column of |V|, -1 if fixed
    std::vector<std::size_t> col_bus;
    int size = 0;
};

Unknowns number_unknowns(const NetworkModel& net) {
    Unknowns u;
    const auto n = net.buses.size();
    u.ang_pos.assign(n, -1);
    u.mag_pos.assign(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        if (net.buses[i].kind != BusKind::Slack) {
            u.ang_pos[i] = u.size++;
            u.col_bus.push_back(i);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (net.buses[i].kind == BusKind::PQ) {
            u.mag_pos[i] = u.size++;
            u.col_bus.push_back(i);
        }
    }
    return u;
}

// Mismatch ordered like the unknowns: dP for non-slack buses, then dQ for PQ buses.
Eigen::VectorXd mismatch(const NetworkModel& net, const Unknowns& u, const std::vector<Complex>& s_calc) {
    Eigen::VectorXd f(u.size);
    for (std::size_t i = 0; i < net.buses.size(); ++i) {
        const auto& b = net.buses[i];
        if (u.ang_pos[i] >= 0) f[u.ang_pos[i]] = (b.p_gen - b.p_load) - s_calc[i].real();
        if (u.mag_pos[i] >= 0) f[u.mag_pos[i]] = (b.q_gen - b.q_load) - s_calc[i].imag();
    }
    return f;
}

Eigen::SparseMatrix<double> jacobian(const AdmittanceMatrix& y, const Unknowns& u,
                                     const std::vector<Complex>& v) {
    // dS/dtheta_k and dS/d|V|_k in complex form, then split into P and Q rows.
    const auto n = static_cast<Eigen::Index>(v.size());
    Eigen::Map<const Eigen::VectorXcd> vv(v.data(), n);
    Eigen::VectorXcd ibus = y * vv;

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(y.nonZeros()) * 4);
    auto put = [&](std::size_t row_bus, std::size_t col_bus, Complex ds_dang, Complex ds_dmag) {
        const int ca = u.ang_pos[col_bus];
        const int cm = u.mag_pos[col_bus];
        const int rp = u.ang_pos[row_bus];
        const int rq = u.mag_pos[row_bus];
        if (rp >= 0) {
            if (ca >= 0) trips.emplace_back(rp, ca, ds_dang.real());
            if (cm >= 0) trips.emplace_back(rp, cm, ds_dmag.real());
        }
        if (rq >= 0) {
            if (ca >= 0) trips.emplace_back(rq, ca, ds_dang.imag());
            if (cm >= 0) trips.emplace_back(rq, cm, ds_dmag.imag());
        }
    };

    for (Eigen::Index k = 0; k < y.outerSize(); ++k) {
        for (AdmittanceMatrix::InnerIterator it(y, k); it; ++it) {
            const auto i = static_cast<std::size_t>(it.row());
            const auto j = static_cast<std::size_t>(it.col());
            if (i == j) continue;
            const Complex vi = v[i];
            const Complex vj = v[j];
            const Complex yij = it.value();
            // S_i = V_i conj(sum_j Y_ij V_j)
            const Complex ds_dang = vi * std::conj(yij * vj * Complex(0.0, 1.0));
            const Complex ds_dmag = vi * std::conj(yij * vj / std::abs(vj));
            put(i, j, ds_dang, ds_dmag);
        }
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const Complex vi = v[i];
        const Complex yii = y.coeff(ii, ii);
        const Complex ii_c = ibus[ii];
        const Complex ds_dang = Complex(0.0, 1.0) * vi * std::conj(ii_c) +
                                vi * std::conj(Complex(0.0, 1.0) * yii * vi);
        const Complex ds_dmag = (vi / std::abs(vi)) * std::conj(ii_c) +
                                vi * std::conj(yii * vi / std::abs(vi));
        put(i, i, ds_dang, ds_dmag);
    }

    Eigen::SparseMatrix<double> j(u.size, u.size);
    j.setFromTriplets(trips.begin(), trips.end());
    j.makeCompressed();
    return j;
}

int worst_bus(const NetworkModel& net, const Unknowns& u, const Eigen::VectorXd& f) {
    Eigen::Index idx = 0;
    f.cwiseAbs().maxCoeff(&idx);
    return net.buses[u.col_bus[static_cast<std::size_t>(idx)]].id;
}

int singular_pivot_bus(const NetworkModel& net, const Unknowns& u, const Eigen::SparseMatrix<double>& j) {
    Eigen::MatrixXd dense(j);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(dense);
    const auto& r = qr.matrixR();
    const auto rank = qr.rank();
    const auto col = rank < dense.cols() ? rank : dense.cols() - 1;
    (void)r;
    const auto orig = qr.colsPermutation().indices()[col];
    return net.buses[u.col_bus[static_cast<std::size_t>(orig)]].id;
}

}  // namespace

PowerFlowSolution solve_power_flow(const NetworkModel& net, PowerFlowOptions opts) {
    net.validate();
    const auto y = build_admittance(net);
    const auto u = number_unknowns(net);
    const auto n = net.buses.size();

    std::vector<double> ang(n, 0.0);
    std::vector<double> mag(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& b = net.buses[i];
        if (b.kind != BusKind::PQ) mag[i] = b.v_mag;
        if (b.kind == BusKind::Slack) ang[i] = b.v_ang;
    }
    const double slack_ang = net.buses[net.slack_index()].v_ang;
    for (std::size_t i = 0; i < n; ++i) ang[i] = slack_ang;

    auto make_v = [&] {
        std::vector<Complex> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = std::polar(mag[i], ang[i]);
        return v;
    };

    PowerFlowSolution sol;
    auto v = make_v();
    Eigen::VectorXd f = mismatch(net, u, power_injections(y, v));
    double norm = u.size > 0 ? f.cwiseAbs().maxCoeff() : 0.0;
    int iter = 0;
    while (norm >= opts.tol) {
        if (iter >= opts.max_iter) {
            const int bus = worst_bus(net, u, f);
            char buf[160];
            std::snprintf(buf, sizeof buf,
                          "power flow did not converge in %d iterations (mismatch %.3e at bus %d)",
                          opts.max_iter, norm, bus);
            throw PowerFlowError(buf, bus);
        }
        auto jac = jacobian(y, u, v);
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(jac);
        if (lu.info() != Eigen::Success) {
            const int bus = singular_pivot_bus(net, u, jac);
            throw PowerFlowError("singular power-flow Jacobian at bus " + std::to_string(bus), bus);
        }
        Eigen::VectorXd dx = lu.solve(f);
        if (lu.info() != Eigen::Success || !dx.allFinite()) {
            const int bus = singular_pivot_bus(net, u, jac);
            throw PowerFlowError("singular power-flow Jacobian at bus " + std::to_string(bus), bus);
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (u.ang_pos[i] >= 0) ang[i] += dx[u.ang_pos[i]];
            if (u.mag_pos[i] >= 0) mag[i] += dx[u.mag_pos[i]];
        }
        v = make_v();
        f = mismatch(net, u, power_injections(y, v));
        norm = f.cwiseAbs().maxCoeff();
        ++iter;
    }

    const auto s = power_injections(y, v);
    sol.voltage = v;
    sol.p_inj.resize(n);
    sol.q_inj.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        sol.p_inj[i] = s[i].real();
        sol.q_inj[i] = s[i].imag();
    }
    sol.mismatch_norm = norm;
    sol.iterations = iter;
    return sol;
}

std::string power_flow_csv(const NetworkModel& net, const PowerFlowSolution& sol) {
    std::ostringstream out;
    out << "bus,v_mag,v_ang_deg,p_inj,q_inj\n";
    char buf[200];
    for (std::size_t i = 0; i < net.buses.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%d,%.10f,%.8f,%.10f,%.10f\n", net.buses[i].id, sol.v_mag(i),
                      sol.v_ang(i) * 180.0 / M_PI, sol.p_inj[i], sol.q_inj[i]);
        out << buf;
    }
    return out.str();
}

}  // namespace pvosc::net
