#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "pvosc/scenario.hpp"

namespace pvosc::scen {

namespace {

constexpr double kEps = 1e-9;

// Successive-shortest-path min-cost flow (Bellman-Ford on the residual graph).
// Graphs here have a handful of nodes, so simplicity wins.
class FlowNetwork {
public:
    explicit FlowNetwork(int n) : adj_(static_cast<std::size_t>(n)) {}

    int add_edge(int u, int v, double cap, double cost) {
        edges_.push_back({v, cap, cost});
        adj_[static_cast<std::size_t>(u)].push_back(static_cast<int>(edges_.size()) - 1);
        edges_.push_back({u, 0.0, -cost});
        adj_[static_cast<std::size_t>(v)].push_back(static_cast<int>(edges_.size()) - 1);
        return static_cast<int>(edges_.size()) - 2;
    }

    double flow_on(int e) const { return edges_[static_cast<std::size_t>(e ^ 1)].cap; }

    // Pushes up to `want` units from s to t; returns the amount pushed.
    double min_cost_flow(int s, int t, double want) {
        const auto n = adj_.size();
        double pushed = 0.0;
        while (pushed < want - kEps) {
            std::vector<double> dist(n, std::numeric_limits<double>::infinity());
            std::vector<int> via(n, -1);
            dist[static_cast<std::size_t>(s)] = 0.0;
            for (std::size_t round = 0; round < n; ++round) {
                bool changed = false;
                for (std::size_t u = 0; u < n; ++u) {
                    if (!std::isfinite(dist[u])) continue;
                    for (int e : adj_[u]) {
                        const auto& ed = edges_[static_cast<std::size_t>(e)];
                        const auto v = static_cast<std::size_t>(ed.to);
                        if (ed.cap > kEps && dist[u] + ed.cost < dist[v] - 1e-12) {
                            dist[v] = dist[u] + ed.cost;
                            via[v] = e;
                            changed = true;
                        }
                    }
                }
                if (!changed) break;
            }
            if (!std::isfinite(dist[static_cast<std::size_t>(t)])) break;
            double aug = want - pushed;
            for (int v = t; v != s;) {
                const int e = via[static_cast<std::size_t>(v)];
                aug = std::min(aug, edges_[static_cast<std::size_t>(e)].cap);
                v = edges_[static_cast<std::size_t>(e ^ 1)].to;
            }
            for (int v = t; v != s;) {
                const int e = via[static_cast<std::size_t>(v)];
                edges_[static_cast<std::size_t>(e)].cap -= aug;
                edges_[static_cast<std::size_t>(e ^ 1)].cap += aug;
                v = edges_[static_cast<std::size_t>(e ^ 1)].to;
            }
            pushed += aug;
        }
        return pushed;
    }

    // Nodes reachable from s in the residual graph (source side of a min cut).
    std::vector<bool> reachable(int s) const {
        std::vector<bool> seen(adj_.size(), false);
        std::vector<int> stack{s};
        seen[static_cast<std::size_t>(s)] = true;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            for (int e : adj_[static_cast<std::size_t>(u)]) {
                const auto& ed = edges_[static_cast<std::size_t>(e)];
                if (ed.cap > kEps && !seen[static_cast<std::size_t>(ed.to)]) {
                    seen[static_cast<std::size_t>(ed.to)] = true;
                    stack.push_back(ed.to);
                }
            }
        }
        return seen;
    }

private:
    struct Edge {
        int to;
        double cap;
        double cost;
    };
    std::vector<Edge> edges_;
    std::vector<std::vector<int>> adj_;
};

double total_load(const std::vector<Region>& regions) {
    double s = 0.0;
    for (const auto& r : regions) s += r.load_mw;
    return s;
}

// Node layout: 0 source, 1 PV pool, 2 conventional pool, 3.. regions, last sink.
struct Transport {
    FlowNetwork net;
    int sink;
    std::vector<int> pv_edges;

    Transport(const std::vector<Region>& regions, const std::vector<Interface>& interfaces,
              const std::vector<double>& pv_caps, double pv_total, bool priced)
        : net(static_cast<int>(regions.size()) + 4), sink(static_cast<int>(regions.size()) + 3) {
        std::map<int, int> node;
        for (std::size_t i = 0; i < regions.size(); ++i) node[regions[i].id] = static_cast<int>(i) + 3;
        const double load = total_load(regions);
        net.add_edge(0, 1, pv_total, 0.0);
        net.add_edge(0, 2, std::max(0.0, load - pv_total), 0.0);
        for (std::size_t i = 0; i < regions.size(); ++i) {
            const int r = node[regions[i].id];
            pv_edges.push_back(net.add_edge(1, r, pv_caps[i], priced ? regions[i].unit_cost() : 0.0));
            net.add_edge(2, r, regions[i].existing_gen_mw, 0.0);
            net.add_edge(r, sink, regions[i].load_mw, 0.0);
        }
        for (const auto& f : interfaces) {
            const int a = node.at(f.from), b = node.at(f.to);
            net.add_edge(a, b, f.limit_mw, 0.0);
            net.add_edge(b, a, f.limit_mw, 0.0);
        }
    }
};

std::vector<std::string> cut_interfaces(const FlowNetwork& net, const std::vector<Region>& regions,
                                        const std::vector<Interface>& interfaces) {
    const auto side = net.reachable(0);
    std::map<int, bool> src_side;
    for (std::size_t i = 0; i < regions.size(); ++i) src_side[regions[i].id] = side[i + 3];
    std::vector<std::string> out;
    for (const auto& f : interfaces) {
        if (src_side[f.from] != src_side[f.to]) out.push_back(f.label());
    }
    return out;
}

}  // namespace

void validate_regions(const std::vector<Region>& regions, const std::vector<Interface>& interfaces) {
    std::set<int> ids, buses;
    for (const auto& r : regions) {
        const auto who = "region " + std::to_string(r.id) + ": ";
        if (!ids.insert(r.id).second) throw AllocationError(who + "duplicate region id");
        if (r.buses.empty()) throw AllocationError(who + "no member buses");
        for (int b : r.buses) {
            if (!buses.insert(b).second) throw AllocationError(who + "bus " + std::to_string(b) + " already assigned");
        }
        if (r.cap_mw < 0.0 || r.existing_gen_mw < 0.0 || r.load_mw < 0.0) {
            throw AllocationError(who + "cap, existing generation and load must be >= 0");
        }
    }
    for (const auto& f : interfaces) {
        if (!ids.count(f.from) || !ids.count(f.to)) {
            throw AllocationError("interface " + f.label() + " references an unknown region");
        }
        if (f.from == f.to) throw AllocationError("interface " + f.label() + " connects a region to itself");
        if (f.limit_mw < 0.0) throw AllocationError("interface " + f.label() + " has a negative limit");
    }
}

double allocation_cost(const std::vector<Region>& regions, const std::vector<double>& alloc) {
    double c = 0.0;
    for (std::size_t i = 0; i < regions.size(); ++i) c += regions[i].unit_cost() * alloc.at(i);
    return c;
}

bool transport_feasible(const std::vector<Region>& regions, const std::vector<Interface>& interfaces,
                        const std::vector<double>& alloc) {
    const double pv = std::accumulate(alloc.begin(), alloc.end(), 0.0);
    const double load = total_load(regions);
    if (pv > load + kEps) return false;
    Transport t(regions, interfaces, alloc, pv, false);
    return t.net.min_cost_flow(0, t.sink, load) >= load - 1e-6;
}

std::vector<double> allocate_pv(const std::vector<Region>& regions, const std::vector<Interface>& interfaces,
                                double target_mw) {
    validate_regions(regions, interfaces);
    if (target_mw < 0.0) throw AllocationError("PV target must be >= 0");
    double caps = 0.0;
    for (const auto& r : regions) caps += r.cap_mw;
    if (target_mw > caps + kEps) {
        throw AllocationError("PV target " + std::to_string(target_mw) + " MW exceeds total regional cap " +
                              std::to_string(caps) + " MW");
    }
    const double load = total_load(regions);
    if (target_mw > load + kEps) {
        throw AllocationError("PV target " + std::to_string(target_mw) + " MW exceeds total load " +
                              std::to_string(load) + " MW");
    }

    // merit order
    std::vector<std::size_t> order(regions.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return regions[a].unit_cost() < regions[b].unit_cost();
    });
    std::vector<double> alloc(regions.size(), 0.0);
    double left = target_mw;
    for (auto i : order) {
        const double take = std::min(left, regions[i].cap_mw);
        alloc[i] = take;
        left -= take;
    }
    if (transport_feasible(regions, interfaces, alloc)) return alloc;

    // interfaces bind: least-cost flow shifts PV toward the regions that can absorb it
    std::vector<double> caps_v;
    for (const auto& r : regions) caps_v.push_back(r.cap_mw);
    Transport t(regions, interfaces, caps_v, target_mw, true);
    const double pushed = t.net.min_cost_flow(0, t.sink, load);
    if (pushed < load - 1e-6) {
        auto bind = cut_interfaces(t.net, regions, interfaces);
        std::string msg = "PV allocation infeasible under interface limits";
        if (!bind.empty()) {
            msg += "; binding interfaces:";
            for (const auto& b : bind) msg += " " + b;
        }
        throw AllocationError(msg, std::move(bind));
    }
    for (std::size_t i = 0; i < regions.size(); ++i) alloc[i] = t.net.flow_on(t.pv_edges[i]);
    return alloc;
}

void fill_region_totals(std::vector<Region>& regions, const PowerSystem& sys) {
    for (auto& r : regions) {
        const std::set<int> members(r.buses.begin(), r.buses.end());
        if (r.load_mw == 0.0) {
            for (const auto& b : sys.net.buses) {
                if (members.count(b.id)) r.load_mw += b.p_load * sys.net.base_mva;
            }
        }
        if (r.existing_gen_mw == 0.0) {
            for (const auto& m : sys.devices.machines) {
                if (m.units > 0 && members.count(m.bus)) r.existing_gen_mw += m.p_mw;
            }
        }
    }
}

std::vector<Region> regions_from_areas(const PowerSystem& sys) {
    std::map<int, Region> by_area;
    for (const auto& b : sys.net.buses) {
        auto& r = by_area[b.area];
        r.id = b.area;
        r.buses.push_back(b.id);
    }
    std::vector<Region> out;
    for (auto& [a, r] : by_area) {
        (void)a;
        out.push_back(std::move(r));
    }
    fill_region_totals(out, sys);
    for (auto& r : out) r.cap_mw = r.existing_gen_mw;
    return out;
}

}  // namespace pvosc::scen
