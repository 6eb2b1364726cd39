#include "pvosc/system.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace pvosc {

using nlohmann::json;

void PowerSystem::aggregate_schedules() {
    const double base = net.base_mva;
    for (auto& b : net.buses) {
        b.p_gen = 0.0;
        b.q_gen = 0.0;
    }
    for (const auto& m : devices.machines) {
        if (m.units == 0) continue;
        net.buses[net.index_of(m.bus)].p_gen += m.p_mw / base;
    }
    for (const auto& p : devices.pv_plants) {
        auto& b = net.buses[net.index_of(p.bus)];
        b.p_gen += p.p_cmd * p.capacity_mw / base;
        if (p.q_sched) b.q_gen += *p.q_sched * p.capacity_mw / base;
    }
    for (const auto& w : devices.wind) {
        auto& b = net.buses[net.index_of(w.bus)];
        b.p_gen += w.p_mw / base;
        b.q_gen += w.q_mvar / base;
    }
}

void PowerSystem::validate() const {
    net.validate();
    for (const auto& m : devices.machines) {
        m.validate();
        if (!net.has_bus(m.bus)) throw CaseError("machine " + std::to_string(m.id) + " on unknown bus");
    }
    for (const auto& p : devices.pv_plants) {
        p.validate();
        if (!net.has_bus(p.bus)) throw CaseError("pv plant " + std::to_string(p.id) + " on unknown bus");
        if (p.reg_bus != 0 && !net.has_bus(p.reg_bus)) {
            throw CaseError("pv plant " + std::to_string(p.id) + " regulates unknown bus");
        }
    }
    for (const auto& w : devices.wind) {
        if (!net.has_bus(w.bus)) throw CaseError("wind " + std::to_string(w.id) + " on unknown bus");
    }
}

double PowerSystem::total_sync_generation_mw() const {
    double s = 0.0;
    for (const auto& m : devices.machines) {
        if (m.units > 0) s += m.p_mw;
    }
    return s;
}

double PowerSystem::aggregate_inertia() const {
    double s = 0.0;
    for (const auto& m : devices.machines) s += m.h * m.mva_base();
    return s;
}

SystemPowerFlow solve_system_power_flow(const PowerSystem& sys, net::PowerFlowOptions opts) {
    SystemPowerFlow out;
    out.bus = net::solve_power_flow(sys.net, opts);
    const auto& net = sys.net;
    const double base = net.base_mva;
    const auto nb = net.buses.size();

    out.machines.resize(sys.devices.machines.size());
    out.pv_plants.resize(sys.devices.pv_plants.size());
    out.wind.resize(sys.devices.wind.size());

    // Generation to distribute at each bus: net injection plus load, minus fixed injections.
    std::vector<double> p_rest(nb), q_rest(nb), mva(nb, 0.0), pv_cap(nb, 0.0);
    for (std::size_t i = 0; i < nb; ++i) {
        p_rest[i] = out.bus.p_inj[i] + net.buses[i].p_load;
        q_rest[i] = out.bus.q_inj[i] + net.buses[i].q_load;
    }
    for (std::size_t k = 0; k < sys.devices.wind.size(); ++k) {
        const auto& w = sys.devices.wind[k];
        const auto i = net.index_of(w.bus);
        out.wind[k] = {w.p_mw / base, w.q_mvar / base};
        p_rest[i] -= out.wind[k].p;
        q_rest[i] -= out.wind[k].q;
    }
    for (const auto& m : sys.devices.machines) {
        if (m.units > 0) mva[net.index_of(m.bus)] += m.mva_base();
    }
    for (std::size_t k = 0; k < sys.devices.pv_plants.size(); ++k) {
        const auto& p = sys.devices.pv_plants[k];
        const auto i = net.index_of(p.bus);
        out.pv_plants[k].p = p.p_cmd * p.capacity_mw / base;
        p_rest[i] -= out.pv_plants[k].p;
        if (mva[i] > 0.0 || p.q_sched) {
            out.pv_plants[k].q = p.q_sched.value_or(0.0) * p.capacity_mw / base;
            q_rest[i] -= out.pv_plants[k].q;
        } else {
            pv_cap[i] += p.capacity_mw;
        }
    }
    for (std::size_t k = 0; k < sys.devices.pv_plants.size(); ++k) {
        const auto& p = sys.devices.pv_plants[k];
        const auto i = net.index_of(p.bus);
        if (pv_cap[i] > 0.0 && mva[i] == 0.0 && !p.q_sched) {
            out.pv_plants[k].q = q_rest[i] * p.capacity_mw / pv_cap[i];
        }
    }
    for (std::size_t k = 0; k < sys.devices.machines.size(); ++k) {
        const auto& m = sys.devices.machines[k];
        if (m.units == 0) continue;
        const auto i = net.index_of(m.bus);
        const double share = m.mva_base() / mva[i];
        out.machines[k].q = q_rest[i] * share;
        if (net.buses[i].kind == net::BusKind::Slack) {
            out.machines[k].p = p_rest[i] * share;
        } else {
            // non-slack buses: scheduled dispatch, residual (numerical) by share
            double sched = 0.0;
            for (const auto& o : sys.devices.machines) {
                if (o.units > 0 && o.bus == m.bus) sched += o.p_mw / base;
            }
            out.machines[k].p = m.p_mw / base + (p_rest[i] - sched) * share;
        }
    }
    return out;
}

// --------------------------------------------------------------------------
// Case file (JSON)

namespace {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return fallback;
    return it->get<T>();
}

net::BusKind parse_kind(const std::string& s) {
    if (s == "slack") return net::BusKind::Slack;
    if (s == "pv") return net::BusKind::PV;
    if (s == "pq") return net::BusKind::PQ;
    throw CaseError("unknown bus kind '" + s + "'");
}

json merged(const json& defaults, const json& item) {
    json out = defaults.is_object() ? defaults : json::object();
    for (auto it = item.begin(); it != item.end(); ++it) out[it.key()] = it.value();
    return out;
}

dyn::SyncMachine parse_machine(const json& j) {
    dyn::SyncMachine m;
    m.id = j.at("id").get<int>();
    m.bus = j.at("bus").get<int>();
    m.units = get_or(j, "units", 1);
    m.unit_mva = get_or(j, "unit_mva", 100.0);
    m.p_mw = get_or(j, "p_mw", 0.0);
    m.h = get_or(j, "h", m.h);
    m.d = get_or(j, "d", m.d);
    m.xd = get_or(j, "xd", m.xd);
    m.xq = get_or(j, "xq", m.xq);
    m.xd_p = get_or(j, "xd_p", m.xd_p);
    m.xq_p = get_or(j, "xq_p", m.xq_p);
    m.td0_p = get_or(j, "td0_p", m.td0_p);
    m.tq0_p = get_or(j, "tq0_p", m.tq0_p);
    m.ra = get_or(j, "ra", m.ra);
    if (j.contains("exciter")) {
        const auto& e = j["exciter"];
        if (e.is_null()) {
            m.exciter.reset();
        } else {
            dyn::Exciter ex;
            ex.ka = get_or(e, "ka", ex.ka);
            ex.ta = get_or(e, "ta", ex.ta);
            ex.efd_min = get_or(e, "efd_min", ex.efd_min);
            ex.efd_max = get_or(e, "efd_max", ex.efd_max);
            m.exciter = ex;
        }
    }
    if (j.contains("governor")) {
        const auto& g = j["governor"];
        if (g.is_null()) {
            m.governor.reset();
        } else {
            dyn::Governor gov;
            gov.r_droop = get_or(g, "r_droop", gov.r_droop);
            gov.tg = get_or(g, "tg", gov.tg);
            gov.p_max = get_or(g, "p_max", gov.p_max);
            m.governor = gov;
        }
    }
    return m;
}

dyn::PvPlant parse_pv(const json& j) {
    dyn::PvPlant p;
    p.id = j.at("id").get<int>();
    p.bus = j.at("bus").get<int>();
    p.reg_bus = get_or(j, "reg_bus", 0);
    p.capacity_mw = j.at("capacity_mw").get<double>();
    p.p_cmd = get_or(j, "p_cmd", p.p_cmd);
    p.strategy = dyn::parse_strategy(get_or<std::string>(j, "strategy", "strategy1"));
    p.kq = get_or(j, "kq", p.kq);
    p.qreg_rate = get_or(j, "qreg_rate", p.qreg_rate);
    p.tq_meas = get_or(j, "tq_meas", p.tq_meas);
    p.tq_reset = get_or(j, "tq_reset", p.tq_reset);
    p.tv = get_or(j, "tv", p.tv);
    p.kvt = get_or(j, "kvt", p.kvt);
    p.kvv = get_or(j, "kvv", p.kvv);
    p.i_max = get_or(j, "i_max", p.i_max);
    if (j.contains("v_ref") && !j["v_ref"].is_null()) p.v_ref = j["v_ref"].get<double>();
    if (j.contains("q_sched") && !j["q_sched"].is_null()) p.q_sched = j["q_sched"].get<double>();
    return p;
}

}  // namespace

PowerSystem parse_case(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw CaseError(std::string("case file is not valid JSON: ") + e.what());
    }
    PowerSystem sys;
    try {
        sys.name = get_or<std::string>(j, "name", "case");
        sys.net.base_mva = get_or(j, "base_mva", 100.0);
        sys.net.nominal_freq = get_or(j, "nominal_freq", 60.0);
        const double base = sys.net.base_mva;

        for (const auto& b : j.at("buses")) {
            net::Bus bus;
            bus.id = b.at("id").get<int>();
            bus.kind = parse_kind(get_or<std::string>(b, "kind", "pq"));
            bus.v_mag = get_or(b, "v_mag", 1.0);
            bus.v_ang = get_or(b, "v_ang_deg", 0.0) * M_PI / 180.0;
            bus.p_load = get_or(b, "p_load_mw", 0.0) / base;
            bus.q_load = get_or(b, "q_load_mvar", 0.0) / base;
            bus.shunt_g = get_or(b, "shunt_g_mw", 0.0) / base;
            bus.shunt_b = get_or(b, "shunt_b_mvar", 0.0) / base;
            bus.area = get_or(b, "area", 0);
            bus.infinite = get_or(b, "infinite", false);
            sys.net.buses.push_back(bus);
        }
        int next_branch = 1;
        for (const auto& b : j.at("branches")) {
            net::Branch br;
            br.id = get_or(b, "id", next_branch);
            next_branch = br.id + 1;
            br.from_bus = b.at("from").get<int>();
            br.to_bus = b.at("to").get<int>();
            br.r = get_or(b, "r", 0.0);
            br.x = b.at("x").get<double>();
            br.b_charging = get_or(b, "b", 0.0);
            br.tap_ratio = get_or(b, "tap", 1.0);
            br.in_service = get_or(b, "in_service", true);
            sys.net.branches.push_back(br);
        }
        const json mdef = j.value("machine_defaults", json::object());
        for (const auto& m : j.value("machines", json::array())) {
            sys.devices.machines.push_back(parse_machine(merged(mdef, m)));
        }
        const json pdef = j.value("pv_defaults", json::object());
        for (const auto& p : j.value("pv_plants", json::array())) {
            sys.devices.pv_plants.push_back(parse_pv(merged(pdef, p)));
        }
        for (const auto& w : j.value("wind", json::array())) {
            dyn::WindInjection wi;
            wi.id = w.at("id").get<int>();
            wi.bus = w.at("bus").get<int>();
            wi.p_mw = get_or(w, "p_mw", 0.0);
            wi.q_mvar = get_or(w, "q_mvar", 0.0);
            sys.devices.wind.push_back(wi);
        }
    } catch (const json::exception& e) {
        throw CaseError(std::string("malformed case file: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw CaseError(e.what());
    }
    try {
        sys.validate();
    } catch (const std::invalid_argument& e) {
        throw CaseError(e.what());
    }
    sys.aggregate_schedules();
    return sys;
}

dyn::PvPlant parse_pv_template(const std::string& json_text) {
    try {
        json j = json::parse(json_text, nullptr, true, true);
        if (!j.is_object()) throw CaseError("PV template must be an object");
        j["id"] = 0;
        j["bus"] = 0;
        j["capacity_mw"] = 1.0;
        return parse_pv(j);
    } catch (const json::exception& e) {
        throw CaseError(std::string("malformed PV template: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw CaseError(e.what());
    }
}

PowerSystem load_case(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CaseError("cannot open case file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_case(ss.str());
}

std::string case_to_json(const PowerSystem& sys) {
    const double base = sys.net.base_mva;
    json j;
    j["name"] = sys.name;
    j["base_mva"] = base;
    j["nominal_freq"] = sys.net.nominal_freq;
    j["buses"] = json::array();
    for (const auto& b : sys.net.buses) {
        j["buses"].push_back({{"id", b.id},
                              {"kind", net::to_string(b.kind)},
                              {"v_mag", b.v_mag},
                              {"v_ang_deg", b.v_ang * 180.0 / M_PI},
                              {"p_load_mw", b.p_load * base},
                              {"q_load_mvar", b.q_load * base},
                              {"shunt_g_mw", b.shunt_g * base},
                              {"shunt_b_mvar", b.shunt_b * base},
                              {"area", b.area},
                              {"infinite", b.infinite}});
    }
    j["branches"] = json::array();
    for (const auto& br : sys.net.branches) {
        j["branches"].push_back({{"id", br.id},
                                 {"from", br.from_bus},
                                 {"to", br.to_bus},
                                 {"r", br.r},
                                 {"x", br.x},
                                 {"b", br.b_charging},
                                 {"tap", br.tap_ratio},
                                 {"in_service", br.in_service}});
    }
    j["machines"] = json::array();
    for (const auto& m : sys.devices.machines) {
        json mj = {{"id", m.id},     {"bus", m.bus},   {"units", m.units}, {"unit_mva", m.unit_mva},
                   {"p_mw", m.p_mw}, {"h", m.h},       {"d", m.d},         {"xd", m.xd},
                   {"xq", m.xq},     {"xd_p", m.xd_p}, {"xq_p", m.xq_p},   {"td0_p", m.td0_p},
                   {"tq0_p", m.tq0_p}, {"ra", m.ra}};
        mj["exciter"] = m.exciter ? json{{"ka", m.exciter->ka},
                                         {"ta", m.exciter->ta},
                                         {"efd_min", m.exciter->efd_min},
                                         {"efd_max", m.exciter->efd_max}}
                                  : json(nullptr);
        mj["governor"] = m.governor ? json{{"r_droop", m.governor->r_droop},
                                           {"tg", m.governor->tg},
                                           {"p_max", m.governor->p_max}}
                                    : json(nullptr);
        j["machines"].push_back(mj);
    }
    j["pv_plants"] = json::array();
    for (const auto& p : sys.devices.pv_plants) {
        json pj = {{"id", p.id},
                   {"bus", p.bus},
                   {"reg_bus", p.reg_bus},
                   {"capacity_mw", p.capacity_mw},
                   {"p_cmd", p.p_cmd},
                   {"strategy", dyn::to_string(p.strategy)},
                   {"kq", p.kq},
                   {"qreg_rate", p.qreg_rate},
                   {"tq_meas", p.tq_meas},
                   {"tq_reset", p.tq_reset},
                   {"tv", p.tv},
                   {"kvt", p.kvt}, {"kvv", p.kvv},
                   {"i_max", p.i_max}};
        pj["v_ref"] = p.v_ref ? json(*p.v_ref) : json(nullptr);
        pj["q_sched"] = p.q_sched ? json(*p.q_sched) : json(nullptr);
        j["pv_plants"].push_back(pj);
    }
    j["wind"] = json::array();
    for (const auto& w : sys.devices.wind) {
        j["wind"].push_back({{"id", w.id}, {"bus", w.bus}, {"p_mw", w.p_mw}, {"q_mvar", w.q_mvar}});
    }
    return j.dump(2);
}

}  // namespace pvosc
