#pragma once

#include <string>

#include "tropictwin/plant.hpp"

namespace tropictwin::trace {

inline constexpr const char* kCsvHeader =
    "t_s,util,wet_bulb_c,sup_set_c,fan_ratio,chws_set_c,ret_temp_c,ret_rh_pct,sup_temp_c,"
    "inlet_temp_c,chw_flow_kgs,p_fans_kw,p_pumps_kw,p_chillers_kw,p_towers_kw,p_it_kw,"
    "coil_infeasible";

// One row per record, numbers at 6 significant digits; deterministic bytes.
std::string to_csv(const plant::Trace& tr);
void write_csv(const plant::Trace& tr, const std::string& path);

// Inverse of to_csv for the columns the file carries. The initial state is not
// stored; consumers rebuild it as the steady state of the first row's
// action/exogenous pair. Unstored state fields (supply humidity, condenser
// temp) are reconstructed from the plant's conventions where possible.
plant::Trace from_csv(const std::string& text, double pressure_kpa = 101.325);
plant::Trace read_csv(const std::string& path, double pressure_kpa = 101.325);

}  // namespace tropictwin::trace
