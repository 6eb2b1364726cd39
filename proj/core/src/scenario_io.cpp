#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pvosc/scenario.hpp"

namespace pvosc::scen {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ScenarioError(where + " must be an object");
    for (const auto& [k, v] : j.items()) {
        (void)v;
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }) == allowed.end())
            throw ScenarioError(where + ": unknown key '" + k + "'");
    }
}

}  // namespace

ScenarioFile parse_scenario_file(const std::string& json_text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(json_text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ScenarioError(std::string("scenario file is not valid JSON: ") + e.what());
    }
    ScenarioFile sf;
    check_keys(j, {"case", "penetrations", "wind_fraction", "strategy", "kq", "seed", "regions", "interfaces",
                   "pv_template"},
               "scenario file");
    try {
        if (j.contains("case")) {
            std::filesystem::path p = j["case"].get<std::string>();
            sf.case_path = p.is_absolute() || base_dir.empty() ? p : base_dir / p;
        }
        if (j.contains("penetrations")) sf.penetrations = j["penetrations"].get<std::vector<double>>();
        sf.wind_fraction = j.value("wind_fraction", sf.wind_fraction);
        sf.strategy = dyn::parse_strategy(j.value("strategy", std::string("strategy1")));
        sf.kq = j.value("kq", sf.kq);
        sf.seed = j.value("seed", sf.seed);
        for (const auto& r : j.value("regions", json::array())) {
            check_keys(r, {"id", "buses", "pv_cost", "land_adder", "cap_mw", "existing_gen_mw", "load_mw"}, "region");
            Region reg;
            reg.id = r.at("id").get<int>();
            reg.buses = r.at("buses").get<std::vector<int>>();
            reg.pv_cost = r.value("pv_cost", 0.0);
            reg.land_adder = r.value("land_adder", 0.0);
            reg.cap_mw = r.at("cap_mw").get<double>();
            reg.existing_gen_mw = r.value("existing_gen_mw", 0.0);
            reg.load_mw = r.value("load_mw", 0.0);
            sf.regions.push_back(std::move(reg));
        }
        for (const auto& f : j.value("interfaces", json::array())) {
            check_keys(f, {"from", "to", "limit_mw"}, "interface");
            sf.interfaces.push_back({f.at("from").get<int>(), f.at("to").get<int>(), f.at("limit_mw").get<double>()});
        }
        if (j.contains("pv_template") && j["pv_template"].is_object()) {
            sf.pv_template = parse_pv_template(j["pv_template"].dump());
        }
    } catch (const json::exception& e) {
        throw ScenarioError(std::string("malformed scenario file: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ScenarioError(e.what());
    }
    for (double p : sf.penetrations) {
        if (!(p >= 0.0 && p < 0.8)) throw ScenarioError("penetration levels must lie in [0, 0.8)");
    }
    if (!(sf.kq > 0.0)) throw ScenarioError("kq must be positive");
    if (!sf.regions.empty()) validate_regions(sf.regions, sf.interfaces);
    return sf;
}

ScenarioFile load_scenario_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot open scenario file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_scenario_file(ss.str(), path.parent_path());
}

}  // namespace pvosc::scen
