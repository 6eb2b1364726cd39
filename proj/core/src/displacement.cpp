#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "pvosc/scenario.hpp"

namespace pvosc::scen {

double solved_generation_mw(const PowerSystem& sys) {
    const auto pf = solve_system_power_flow(sys);
    double g = 0.0;
    for (const auto& m : pf.machines) g += m.p;
    for (const auto& p : pf.pv_plants) g += p.p;
    for (const auto& w : pf.wind) g += w.p;
    return g * sys.net.base_mva;
}

DisplacementResult displace_generation(const PowerSystem& base, const std::vector<Region>& regions,
                                       const Scenario& sc, const dyn::PvPlant& pv_template) {
    if (!(sc.penetration >= 0.0 && sc.penetration < 0.8)) {
        throw ScenarioError("penetration must lie in [0, 0.8)");
    }
    if (sc.wind_fraction < 0.0 || sc.penetration + sc.wind_fraction >= 1.0) {
        throw ScenarioError("wind fraction must be >= 0 and leave room for synchronous generation");
    }
    if (sc.allocation.size() != regions.size()) {
        throw ScenarioError("allocation has " + std::to_string(sc.allocation.size()) + " entries for " +
                            std::to_string(regions.size()) + " regions");
    }

    DisplacementResult out;
    out.system = base;
    auto& sys = out.system;
    auto& sum = out.summary;
    const double base_mva = sys.net.base_mva;

    sum.base_generation_mw = solved_generation_mw(base);
    sum.base_inertia = base.aggregate_inertia();
    const double pv_target = sc.penetration * sum.base_generation_mw;
    const double wind_target = sc.wind_fraction * sum.base_generation_mw;
    const double alloc_total = std::accumulate(sc.allocation.begin(), sc.allocation.end(), 0.0);
    if (std::abs(alloc_total - pv_target) > 1e-6 * std::max(1.0, pv_target)) {
        throw ScenarioError("allocation totals " + std::to_string(alloc_total) + " MW but the target is " +
                            std::to_string(pv_target) + " MW");
    }

    double load_total = 0.0;
    for (const auto& r : regions) load_total += r.load_mw;
    const int slack_bus = sys.net.buses[sys.net.slack_index()].id;

    int next_pv = 1, next_wind = 1;
    for (const auto& p : sys.devices.pv_plants) next_pv = std::max(next_pv, p.id + 1);
    for (const auto& w : sys.devices.wind) next_wind = std::max(next_wind, w.id + 1);

    for (std::size_t ri = 0; ri < regions.size(); ++ri) {
        const auto& reg = regions[ri];
        const std::set<int> members(reg.buses.begin(), reg.buses.end());
        const double pv_r = sc.allocation[ri];
        const double wind_r = load_total > 0.0 ? wind_target * reg.load_mw / load_total : 0.0;
        const double need = pv_r + wind_r;
        if (need <= 0.0) continue;

        std::vector<std::size_t> ms;
        for (std::size_t k = 0; k < sys.devices.machines.size(); ++k) {
            const auto& m = sys.devices.machines[k];
            if (m.units > 0 && members.count(m.bus)) ms.push_back(k);
        }
        if (ms.empty()) {
            throw ScenarioError("region " + std::to_string(reg.id) + " has no synchronous units to displace");
        }

        std::map<int, double> displaced;  // bus -> MW
        double left = need;
        while (left > 1e-9) {
            // smallest dispatch first; the slack machine only when nothing else is left
            std::size_t pick = ms.size();
            for (std::size_t i = 0; i < ms.size(); ++i) {
                const auto& m = sys.devices.machines[ms[i]];
                if (m.units == 0) continue;
                if (pick == ms.size()) {
                    pick = i;
                    continue;
                }
                const auto& b = sys.devices.machines[ms[pick]];
                const bool ms_slack = m.bus == slack_bus, b_slack = b.bus == slack_bus;
                if (ms_slack != b_slack ? !ms_slack
                                        : (m.p_mw < b.p_mw || (m.p_mw == b.p_mw && m.id < b.id))) {
                    pick = i;
                }
            }
            if (pick == ms.size()) {
                throw ScenarioError("region " + std::to_string(reg.id) + " runs out of synchronous units");
            }
            auto& m = sys.devices.machines[ms[pick]];
            const bool is_slack = m.bus == slack_bus;
            const double per_unit = m.p_mw / m.units;
            double take = 0.0;
            if (left >= per_unit - 1e-9 && !(is_slack && m.units == 1)) {
                take = per_unit;
                m.units -= 1;
                m.p_mw = m.units > 0 ? m.p_mw - per_unit : 0.0;
                ++sum.units_removed;
            } else {
                if (left > m.p_mw - 1e-9 * std::max(1.0, m.p_mw) && is_slack) {
                    throw ScenarioError("cannot reach the target without removing the slack machine in region " +
                                        std::to_string(reg.id));
                }
                take = std::min(left, m.p_mw);
                m.p_mw -= take;
            }
            displaced[m.bus] += take;
            left -= take;
        }

        for (const auto& [bus, mw] : displaced) {
            const double share = mw / need;
            if (pv_r * share > 1e-9) {
                dyn::PvPlant p = pv_template;
                p.id = next_pv++;
                p.bus = bus;
                p.capacity_mw = pv_r * share;
                p.p_cmd = 1.0;
                p.strategy = sc.strategy;
                p.kq = sc.kq;
                sys.devices.pv_plants.push_back(p);
            }
            if (wind_r * share > 1e-9) {
                sys.devices.wind.push_back({next_wind++, bus, wind_r * share, 0.0});
            }
        }
        sum.pv_mw += pv_r;
        sum.wind_mw += wind_r;
    }

    sys.aggregate_schedules();
    try {
        sys.validate();
        const auto pf = solve_system_power_flow(sys);
        double gen = 0.0, sync = 0.0;
        for (const auto& m : pf.machines) sync += m.p;
        gen = sync;
        for (const auto& p : pf.pv_plants) gen += p.p;
        for (const auto& w : pf.wind) gen += w.p;
        sum.sync_mw = sync * base_mva;
        sum.achieved_penetration = gen > 0.0 ? sum.pv_mw / (gen * base_mva) : 0.0;
    } catch (const std::exception& e) {
        throw ScenarioError(std::string("displaced system does not solve: ") + e.what());
    }
    sum.inertia = sys.aggregate_inertia();
    return out;
}

}  // namespace pvosc::scen
