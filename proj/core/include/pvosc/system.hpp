#pragma once

// A network plus its dynamic devices, the case-file reader/writer and the
// device-level power flow used to initialize dynamic studies.

#include <filesystem>
#include <string>
#include <vector>

#include "pvosc/dynmodels.hpp"
#include "pvosc/netcore.hpp"

namespace pvosc {

struct PowerSystem {
    std::string name;
    net::NetworkModel net;
    dyn::DeviceSet devices;

    /// Copy device schedules into bus p_gen/q_gen. Called by the loader and
    /// after any edit to devices.
    void aggregate_schedules();
    void validate() const;

    double total_sync_generation_mw() const;
    /// Sum of H * MVA over committed machines (MW s).
    double aggregate_inertia() const;
};

struct DeviceFlow {
    double p = 0.0;  // system per unit
    double q = 0.0;
};

struct SystemPowerFlow {
    net::PowerFlowSolution bus;
    std::vector<DeviceFlow> machines;
    std::vector<DeviceFlow> pv_plants;
    std::vector<DeviceFlow> wind;
};

/// Power flow plus the split of each bus's generation among its devices.
/// Machines on a bus share reactive power (and slack active power) in
/// proportion to MVA rating. PV plants on buses without committed machines
/// share the bus reactive power by capacity; elsewhere they run at q_sched (0 by default).
SystemPowerFlow solve_system_power_flow(const PowerSystem& sys, net::PowerFlowOptions opts = {});

class CaseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

PowerSystem parse_case(const std::string& json_text);
PowerSystem load_case(const std::filesystem::path& path);
std::string case_to_json(const PowerSystem& sys);

/// PV parameter block in case-file syntax (id, bus and capacity ignored).
dyn::PvPlant parse_pv_template(const std::string& json_text);

}  // namespace pvosc
