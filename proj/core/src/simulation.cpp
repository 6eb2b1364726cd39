#include "pvosc/simengine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "dae_model.hpp"

namespace pvosc::sim {

using nlohmann::json;

// --------------------------------------------------------------------------
// events

namespace {

struct Describe {
    std::string operator()(const LineTrip& e) const { return "line trip of branch " + std::to_string(e.branch); }
    std::string operator()(const GenTrip& e) const { return "trip of machine " + std::to_string(e.machine); }
    std::string operator()(const LoadStep& e) const {
        std::ostringstream os;
        os << "load step at bus " << e.bus << " (" << e.dp << " + j" << e.dq << " pu)";
        return os.str();
    }
    std::string operator()(const SelfClearingFault& e) const {
        std::ostringstream os;
        os << "fault at bus " << e.bus << " for " << e.duration << " s";
        return os.str();
    }
};

// Sort key: (kind, target, magnitudes...)
std::vector<double> event_key(const Event& e) {
    std::vector<double> k{e.time, static_cast<double>(e.action.index())};
    std::visit(
        [&](const auto& a) {
            using T = std::decay_t<decltype(a)>;
            if constexpr (std::is_same_v<T, LineTrip>) k.push_back(a.branch);
            if constexpr (std::is_same_v<T, GenTrip>) k.push_back(a.machine);
            if constexpr (std::is_same_v<T, LoadStep>) k.insert(k.end(), {double(a.bus), a.dp, a.dq});
            if constexpr (std::is_same_v<T, SelfClearingFault>) {
                k.insert(k.end(), {double(a.bus), a.duration, a.admittance.real(), a.admittance.imag()});
            }
        },
        e.action);
    return k;
}

}  // namespace

std::string describe(const Event& e) {
    std::ostringstream os;
    os << "t=" << e.time << " s: " << std::visit(Describe{}, e.action);
    return os.str();
}

void validate_events(const std::vector<Event>& events) {
    for (const auto& e : events) {
        if (!(e.time >= 0.0) || !std::isfinite(e.time)) {
            throw std::invalid_argument("event time must be >= 0 (" + describe(e) + ")");
        }
        if (const auto* f = std::get_if<SelfClearingFault>(&e.action); f && !(f->duration > 0.0)) {
            throw std::invalid_argument("fault duration must be > 0 (" + describe(e) + ")");
        }
    }
}

std::vector<Event> canonical_order(std::vector<Event> events) {
    std::stable_sort(events.begin(), events.end(),
                     [](const Event& a, const Event& b) { return event_key(a) < event_key(b); });
    return events;
}

std::vector<Event> parse_events(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("events: ") + e.what());
    }
    const json& arr = doc.is_array() ? doc : doc.value("events", json::array());
    std::vector<Event> out;
    for (const auto& j : arr) {
        Event e;
        e.time = j.value("time", 0.0);
        const auto type = j.value("type", std::string{});
        if (type == "line_trip") {
            e.action = LineTrip{j.at("branch").get<int>()};
        } else if (type == "gen_trip") {
            e.action = GenTrip{j.at("machine").get<int>()};
        } else if (type == "load_step") {
            e.action = LoadStep{j.at("bus").get<int>(), j.value("dp", 0.0), j.value("dq", 0.0)};
        } else if (type == "fault") {
            SelfClearingFault f;
            f.bus = j.at("bus").get<int>();
            f.duration = j.value("duration", f.duration);
            f.admittance = Complex(j.value("g", f.admittance.real()), j.value("b", f.admittance.imag()));
            e.action = f;
        } else {
            throw std::invalid_argument("events: unknown event type '" + type + "'");
        }
        out.push_back(e);
    }
    validate_events(out);
    return out;
}

std::vector<Event> load_events(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open events file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_events(ss.str());
}

std::string events_to_json(const std::vector<Event>& events) {
    json arr = json::array();
    for (const auto& e : events) {
        json j;
        j["time"] = e.time;
        std::visit(
            [&](const auto& a) {
                using T = std::decay_t<decltype(a)>;
                if constexpr (std::is_same_v<T, LineTrip>) {
                    j["type"] = "line_trip";
                    j["branch"] = a.branch;
                } else if constexpr (std::is_same_v<T, GenTrip>) {
                    j["type"] = "gen_trip";
                    j["machine"] = a.machine;
                } else if constexpr (std::is_same_v<T, LoadStep>) {
                    j["type"] = "load_step";
                    j["bus"] = a.bus;
                    j["dp"] = a.dp;
                    j["dq"] = a.dq;
                } else {
                    j["type"] = "fault";
                    j["bus"] = a.bus;
                    j["duration"] = a.duration;
                    j["g"] = a.admittance.real();
                    j["b"] = a.admittance.imag();
                }
            },
            e.action);
        arr.push_back(j);
    }
    return json{{"events", arr}}.dump(2);
}

// --------------------------------------------------------------------------
// record

const Channel* TimeSeriesRecord::find(const std::string& g, const std::string& name) const {
    for (const auto& c : channels) {
        if (c.group == g && c.name == name) return &c;
    }
    return nullptr;
}

std::vector<const Channel*> TimeSeriesRecord::group(const std::string& g) const {
    std::vector<const Channel*> out;
    for (const auto& c : channels) {
        if (c.group == g) out.push_back(&c);
    }
    return out;
}

std::vector<std::string> TimeSeriesRecord::groups() const {
    std::vector<std::string> out;
    for (const auto& c : channels) {
        if (std::find(out.begin(), out.end(), c.group) == out.end()) out.push_back(c.group);
    }
    return out;
}

// --------------------------------------------------------------------------
// integration

namespace {

using detail::DaeModel;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kTimeEps = 1e-9;

// Pending network action on the timeline.
struct Action {
    double time;
    int order;  // canonical position, keeps ties deterministic
    std::variant<LineTrip, GenTrip, LoadStep, SelfClearingFault, SelfClearingFault> what;  // last = clear
};

class Integrator {
public:
    Integrator(DaeModel& m, const SimOptions& o) : m_(m), opts_(o), nx_(m.nx()), nv_(m.nv()) {}

    void reset_jacobian() { have_jac_ = false; }

    // One trapezoidal step of length h from (x, v). Updates x, v in place.
    void step(VectorXd& x, VectorXd& v, double h, double t_now) {
        if (m_.freeze_limiters(x, v)) have_jac_ = false;
        VectorXd fn(nx_);
        m_.f(x, v, fn);
        const int n = nx_ + nv_;
        VectorXd z(n);
        z.head(nx_) = x + h * fn;
        z.tail(nv_) = v;

        VectorXd r(n);
        VectorXd fz(nx_), gz(nv_);
        auto residual = [&] {
            const VectorXd xs = z.head(nx_);
            const VectorXd vs = z.tail(nv_);
            m_.f(xs, vs, fz);
            m_.g(xs, vs, gz);
            r.head(nx_) = xs - x - 0.5 * h * (fz + fn);
            r.tail(nv_) = gz;
        };

        residual();
        // chord iterations; a stale or slowly converging Jacobian is rebuilt at the current iterate
        int since_refresh = 0;
        for (int it = 0;; ++it) {
            if (r.cwiseAbs().maxCoeff() < opts_.newton_tol) break;
            if (!have_jac_ || since_refresh >= 6) {
                build_jacobian(z);
                since_refresh = 0;
            }
            if (h != jac_h_) factor(h);
            z -= lu_.solve(r);
            residual();
            ++since_refresh;
            if (it >= opts_.max_newton) fail(r, t_now);
            if (!z.allFinite()) fail(r, t_now);
        }
        x = z.head(nx_);
        v = z.tail(nv_);
    }

private:
    [[noreturn]] void fail(const VectorXd& r, double t) const {
        const auto [worst, idx] = m_.worst_bus(r.tail(nv_));
        std::ostringstream os;
        os << "network solution diverged at t=" << t << " s (worst bus " << m_.bus_id(idx) << ", residual " << worst
           << ")";
        throw SimulationError(os.str(), t, m_.bus_id(idx));
    }

    void build_jacobian(const VectorXd& z) {
        const int n = nx_ + nv_;
        VectorXd xs = z.head(nx_), vs = z.tail(nv_);
        VectorXd f0(nx_), g0(nv_), f1(nx_), g1(nv_);
        m_.f(xs, vs, f0);
        m_.g(xs, vs, g0);
        fz_.resize(nx_, n);
        gz_.resize(nv_, n);
        for (int j = 0; j < n; ++j) {
            double& zj = j < nx_ ? xs[j] : vs[j - nx_];
            const double keep = zj;
            const double eps = 1e-7 * std::max(1.0, std::abs(keep));
            zj = keep + eps;
            m_.f(xs, vs, f1);
            m_.g(xs, vs, g1);
            zj = keep;
            fz_.col(j) = (f1 - f0) / eps;
            gz_.col(j) = (g1 - g0) / eps;
        }
        have_jac_ = true;
        jac_h_ = -1.0;
    }

    void factor(double h) {
        const int n = nx_ + nv_;
        MatrixXd j(n, n);
        j.topRows(nx_) = -0.5 * h * fz_;
        j.topLeftCorner(nx_, nx_).diagonal().array() += 1.0;
        j.bottomRows(nv_) = gz_;
        lu_.compute(j);
        jac_h_ = h;
    }

    DaeModel& m_;
    const SimOptions& opts_;
    int nx_, nv_;
    MatrixXd fz_, gz_;
    Eigen::PartialPivLU<MatrixXd> lu_;
    bool have_jac_ = false;
    double jac_h_ = -1.0;
};

double unwrap_to(double prev, double raw) {
    double d = raw - std::remainder(prev, 2.0 * M_PI);
    d = std::remainder(d, 2.0 * M_PI);
    return prev + d;
}

}  // namespace

SimulationResult simulate(const PowerSystem& sys, const std::vector<Event>& events, const SimOptions& opts) {
    if (!(opts.dt > 0.0)) throw std::invalid_argument("simulate: dt must be positive");
    if (!(opts.t_end > 0.0)) throw std::invalid_argument("simulate: t_end must be positive");
    const double ratio = opts.record_dt / opts.dt;
    const long stride = std::lround(ratio);
    if (stride < 1 || std::abs(ratio - static_cast<double>(stride)) > 1e-6) {
        throw std::invalid_argument("simulate: record_dt must be a positive integer multiple of dt");
    }
    validate_events(events);
    const auto evs = canonical_order(events);

    net::PowerFlowOptions pfo;
    pfo.tol = 1e-12;
    pfo.max_iter = 30;
    const auto pf = solve_system_power_flow(sys, pfo);
    DaeModel model(sys, pf);

    // timeline of network actions
    std::vector<Action> actions;
    for (std::size_t k = 0; k < evs.size(); ++k) {
        const int ord = static_cast<int>(k);
        std::visit(
            [&](const auto& a) {
                using T = std::decay_t<decltype(a)>;
                if constexpr (std::is_same_v<T, SelfClearingFault>) {
                    Action on{evs[k].time, ord, {}};
                    on.what.template emplace<3>(a);
                    Action off{evs[k].time + a.duration, ord, {}};
                    off.what.template emplace<4>(a);
                    actions.push_back(on);
                    actions.push_back(off);
                } else {
                    actions.push_back({evs[k].time, ord, a});
                }
            },
            evs[k].action);
    }
    std::stable_sort(actions.begin(), actions.end(), [](const Action& a, const Action& b) {
        return a.time != b.time ? a.time < b.time : a.order < b.order;
    });

    VectorXd x = model.x0();
    VectorXd v = model.v0();
    model.solve_algebraic(x, v, 1e-13, 20);

    SimulationResult res;
    res.initial_states.assign(x.data(), x.data() + x.size());

    const long nsteps = std::lround(opts.t_end / opts.dt);
    const int nb = model.nbus();
    const auto& net = model.system().net;
    const double base = net.base_mva;

    // full-rate bus angles for the frequency estimate
    std::vector<std::vector<double>> angles(static_cast<std::size_t>(nb));
    for (auto& a : angles) a.reserve(static_cast<std::size_t>(nsteps + 1));

    // decimated channels
    std::vector<Channel> chans;
    auto add_channel = [&](std::string g, std::string n) {
        chans.push_back({std::move(g), std::move(n), {}});
        chans.back().values.reserve(static_cast<std::size_t>(nsteps / stride + 1));
    };
    for (int i = 0; i < nb; ++i) add_channel("bus_vmag", std::to_string(model.bus_id(i)));
    for (int i = 0; i < nb; ++i) add_channel("bus_vang", std::to_string(model.bus_id(i)));
    const auto& mslots = model.machines();
    const auto& pslots = model.pv();
    const auto& mdev = model.system().devices.machines;
    const auto& pdev = model.system().devices.pv_plants;
    for (const auto& s : mslots) add_channel("machine_speed", std::to_string(mdev[s.device].id));
    for (const auto& s : mslots) add_channel("machine_p", std::to_string(mdev[s.device].id));
    for (const auto& s : mslots) add_channel("machine_q", std::to_string(mdev[s.device].id));
    for (const auto& s : pslots) add_channel("pv_p", std::to_string(pdev[s.device].id));
    for (const auto& s : pslots) add_channel("pv_q", std::to_string(pdev[s.device].id));
    const std::size_t n_fixed = chans.size();
    if (opts.record_device_states) {
        for (const auto& name : model.state_names()) add_channel("state", name);
    }

    auto sample_angles = [&] {
        for (int i = 0; i < nb; ++i) {
            const double raw = std::arg(model.bus_voltage(v, i));
            auto& a = angles[static_cast<std::size_t>(i)];
            a.push_back(a.empty() ? raw : unwrap_to(a.back(), raw));
        }
    };
    auto record = [&] {
        std::size_t c = 0;
        for (int i = 0; i < nb; ++i) chans[c++].values.push_back(std::abs(model.bus_voltage(v, i)));
        for (int i = 0; i < nb; ++i) chans[c++].values.push_back(angles[static_cast<std::size_t>(i)].back());
        for (const auto& s : mslots) chans[c++].values.push_back(s.tripped ? 0.0 : x[s.offset + dyn::kSpeedDev]);
        std::vector<Complex> sm;
        for (const auto& s : mslots) sm.push_back(model.machine_power(s, x, v) * base);
        for (const auto& s : sm) chans[c++].values.push_back(s.real());
        for (const auto& s : sm) chans[c++].values.push_back(s.imag());
        std::vector<Complex> sp;
        for (const auto& s : pslots) sp.push_back(model.pv_power(s, x, v) * base);
        for (const auto& s : sp) chans[c++].values.push_back(s.real());
        for (const auto& s : sp) chans[c++].values.push_back(s.imag());
        if (opts.record_device_states) {
            for (Eigen::Index k = 0; k < x.size(); ++k) chans[n_fixed + static_cast<std::size_t>(k)].values.push_back(x[k]);
        }
    };

    Integrator integ(model, opts);
    std::size_t next_action = 0;
    double low_v_since = -1.0;

    auto apply_action = [&](const Action& a) {
        switch (a.what.index()) {
            case 0: model.trip_branch(std::get<0>(a.what).branch); break;
            case 1: model.trip_machine(std::get<1>(a.what).machine); break;
            case 2: {
                const auto& ls = std::get<2>(a.what);
                model.add_load_step(ls.bus, ls.dp, ls.dq, v);
                break;
            }
            case 3: model.add_shunt(std::get<3>(a.what).bus, std::get<3>(a.what).admittance); break;
            case 4: model.add_shunt(std::get<4>(a.what).bus, -std::get<4>(a.what).admittance); break;
        }
    };
    auto resolve = [&](double t) {
        try {
            model.solve_algebraic(x, v, 1e-12, 30);
        } catch (const SimulationError& e) {
            throw SimulationError(std::string(e.what()) + " after event at t=" + std::to_string(t), t, e.bus());
        }
        integ.reset_jacobian();
    };
    auto apply_due = [&](double t) {
        bool any = false;
        while (next_action < actions.size() && actions[next_action].time <= t + kTimeEps) {
            apply_action(actions[next_action++]);
            any = true;
        }
        if (any) resolve(t);
    };
    auto post_step = [&](double t, double h) {
        if (model.clamp(x)) resolve(t);
        if (model.update_latches(v)) resolve(t);
        VectorXd gr(model.nv());
        model.g(x, v, gr);
        res.max_algebraic_residual = std::max(res.max_algebraic_residual, gr.cwiseAbs().maxCoeff());
        res.max_current_limit_excess = std::max(res.max_current_limit_excess, model.current_limit_excess(x));
        double vmin = 1e300;
        for (int i = 0; i < nb; ++i) vmin = std::min(vmin, std::abs(model.bus_voltage(v, i)));
        if (vmin < 0.3) {
            if (low_v_since < 0.0) low_v_since = t - h;
            if (t - low_v_since > 1.0 && !res.voltage_collapse) {
                res.voltage_collapse = true;
                res.usable = false;
                res.notes.push_back("voltage collapse: bus voltage below 0.3 pu for more than 1 s (from t=" +
                                    std::to_string(low_v_since) + " s)");
            }
        } else {
            low_v_since = -1.0;
        }
        ++res.steps;
    };

    // a step whose Newton iteration fails is retried as two half steps
    constexpr int kMaxHalvings = 6;
    auto advance = [&](double t0, double t1, auto& self, int depth) -> void {
        const VectorXd x0 = x, v0 = v;
        try {
            integ.step(x, v, t1 - t0, t1);
        } catch (const SimulationError&) {
            if (depth >= kMaxHalvings) throw;
            x = x0;
            v = v0;
            integ.reset_jacobian();
            const double tm = 0.5 * (t0 + t1);
            self(t0, tm, self, depth + 1);
            self(tm, t1, self, depth + 1);
            return;
        }
        post_step(t1, t1 - t0);
    };

    sample_angles();
    record();
    apply_due(0.0);

    for (long k = 0; k < nsteps; ++k) {
        const double ta = static_cast<double>(k) * opts.dt;
        const double tb = static_cast<double>(k + 1) * opts.dt;
        double t = ta;
        while (next_action < actions.size() && actions[next_action].time < tb - kTimeEps) {
            const double te = actions[next_action].time;
            if (te > t + kTimeEps) {
                advance(t, te, advance, 0);
                t = te;
            }
            apply_due(te);
        }
        advance(t, tb, advance, 0);
        sample_angles();
        if ((k + 1) % stride == 0) record();
        apply_due(tb);
    }

    // bus frequency from full-rate angles, then decimated
    for (int i = 0; i < nb; ++i) {
        const auto f = bus_frequency(angles[static_cast<std::size_t>(i)], opts.dt, opts.freq_filter_t);
        Channel c{"bus_freq", std::to_string(model.bus_id(i)), {}};
        for (std::size_t s = 0; s < f.size(); s += static_cast<std::size_t>(stride)) c.values.push_back(f[s]);
        chans.insert(chans.begin() + static_cast<std::ptrdiff_t>(2 * nb + i), std::move(c));
    }

    res.record.t0 = 0.0;
    res.record.dt = opts.record_dt;
    res.record.channels = std::move(chans);
    res.final_states.assign(x.data(), x.data() + x.size());
    return res;
}

}  // namespace pvosc::sim
