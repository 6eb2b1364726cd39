#pragma once

// High-PV scenario construction: regional PV siting under interface limits
// and displacement of synchronous units by PV and wind.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pvosc/system.hpp"

namespace pvosc::scen {

class AllocationError : public std::runtime_error {
public:
    AllocationError(const std::string& what, std::vector<std::string> binding = {})
        : std::runtime_error(what), binding_(std::move(binding)) {}
    /// Interfaces on the limiting cut ("1-2" style labels).
    const std::vector<std::string>& binding_interfaces() const { return binding_; }

private:
    std::vector<std::string> binding_;
};

class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Region {
    int id = 0;
    std::vector<int> buses;
    double pv_cost = 0.0;     // $/MWh
    double land_adder = 0.0;  // $/MWh
    double cap_mw = 0.0;
    double existing_gen_mw = 0.0;
    double load_mw = 0.0;

    double unit_cost() const { return pv_cost + land_adder; }
};

struct Interface {
    int from = 0;  // region ids
    int to = 0;
    double limit_mw = 0.0;  // both directions

    std::string label() const { return std::to_string(from) + "-" + std::to_string(to); }
};

void validate_regions(const std::vector<Region>& regions, const std::vector<Interface>& interfaces);

/// Total cost of an allocation (MW per region times unit cost).
double allocation_cost(const std::vector<Region>& regions, const std::vector<double>& alloc);

/// Whether an allocation can be served: PV fixed at `alloc`, conventional
/// output free within existing_gen, loads met through interface limits.
bool transport_feasible(const std::vector<Region>& regions, const std::vector<Interface>& interfaces,
                        const std::vector<double>& alloc);

/// Least-cost allocation of `target_mw` (merit order, repaired by a
/// min-cost transport flow when interfaces bind). Result indexed like `regions`.
std::vector<double> allocate_pv(const std::vector<Region>& regions, const std::vector<Interface>& interfaces,
                                double target_mw);

/// Fill existing_gen_mw and load_mw from the case where they are zero.
void fill_region_totals(std::vector<Region>& regions, const PowerSystem& sys);

struct Scenario {
    std::string name;
    double penetration = 0.0;    // PV share of instantaneous generation
    double wind_fraction = 0.15;
    std::vector<double> allocation;  // MW per region
    dyn::PvStrategy strategy = dyn::PvStrategy::VoltVarWithSolarControl;
    double kq = 0.1;
    std::uint64_t seed = 0;
};

struct DisplacementSummary {
    double base_generation_mw = 0.0;
    double pv_mw = 0.0;
    double wind_mw = 0.0;
    double sync_mw = 0.0;  // scheduled, before losses
    double achieved_penetration = 0.0;
    double base_inertia = 0.0;  // MW s
    double inertia = 0.0;
    int units_removed = 0;
};

struct DisplacementResult {
    PowerSystem system;
    DisplacementSummary summary;
};

/// Total generation (MW) of the solved power flow, losses included.
double solved_generation_mw(const PowerSystem& sys);

/// Removes synchronous units (smallest dispatch first within each region, the
/// slack machine last) and adds PV plants and wind at the displaced buses.
/// Added plants copy `pv_template` except for bus, capacity, strategy and kq.
DisplacementResult displace_generation(const PowerSystem& base, const std::vector<Region>& regions,
                                       const Scenario& scenario, const dyn::PvPlant& pv_template = {});

/// Scenario file: penetrations, strategy, kq, seed, regions and interfaces.
struct ScenarioFile {
    std::filesystem::path case_path;
    std::vector<double> penetrations{0.05, 0.25, 0.45, 0.65};
    double wind_fraction = 0.15;
    dyn::PvStrategy strategy = dyn::PvStrategy::VoltVarWithSolarControl;
    double kq = 0.1;
    std::uint64_t seed = 0;
    std::vector<Region> regions;
    std::vector<Interface> interfaces;
    std::optional<dyn::PvPlant> pv_template;
};

ScenarioFile parse_scenario_file(const std::string& json_text, const std::filesystem::path& base_dir = {});
ScenarioFile load_scenario_file(const std::filesystem::path& path);

/// One region per area of the case when a scenario file gives none.
std::vector<Region> regions_from_areas(const PowerSystem& sys);

}  // namespace pvosc::scen
