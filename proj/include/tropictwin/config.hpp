#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tropictwin::config {

// Identified plant coefficients. These are the calibration targets; the
// nameplate figures live in SiteConfig.
struct PhysicsParams {
  double fan_cubic_coeff = 165.0;        // kW, all CRAH fans together at full speed
  double pump_cubic_coeff = 22.0;        // kW per chilled-water pump at rated flow
  double coil_ua = 260.0;                // kW/K, all CRAH coils together
  double chiller_cop_a0 = 7.8;           // COP = a0 + a1*chws - a2*cw, clamped [2,12]
  double chiller_cop_a1 = 0.22;          // 1/K
  double chiller_cop_a2 = 0.12;          // 1/K
  double tower_approach_ref = 5.0;       // K at reference load ratio 1, fan ratio 1
  double tower_exponent = 1.4;
  double zone_heat_capacity = 2.0e5;     // kJ/K, lumped hall
  double recirculation_gain = 0.8;       // share of CRAH airflow deficit seen at IT inlet
  double moisture_gain = 5.0e-4;         // kg/s, unmodeled moisture sources
  double it_idle_fraction = 0.3;         // idle power share of design load
};

struct SiteConfig {
  int n_chillers = 5;
  double chiller_capacity = 4572.0;      // kW cooling per chiller
  int n_crah = 22;
  double crah_rated_fan_power = 7.5;     // kW per unit at full speed
  double crah_rated_airflow = 12.5;      // kg/s per unit at full speed
  int n_chw_pumps = 5;
  double pump_rated_power = 22.0;        // kW per pump
  double pump_rated_flow = 50.0;         // kg/s per pump
  int n_towers_per_loop = 2;
  double tower_rated_fan_power = 30.0;   // kW per tower fan
  double hall_it_design_load = 2621.0;   // kW IT at full utilization
  double sla_max_inlet_temp = 27.0;      // degC
  double sla_rh_min = 30.0;              // %
  double sla_rh_max = 60.0;              // %
  double ambient_pressure = 101.325;     // kPa
  PhysicsParams physics;
};

struct ParseError : std::runtime_error {
  int line;
  ParseError(int line_, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line_) + ": " + msg), line(line_) {}
};

// The tropical case-study defaults above.
SiteConfig default_case_study();

// Scenario text format: [plant]/[sla]/[physics] sections of `key = value`
// lines, '#' comments. Unknown keys are errors; missing keys keep the
// case-study defaults. Throws ParseError with a line number.
SiteConfig parse_site_config(const std::string& text);

SiteConfig load_site_config(const std::string& path);

// Canonical scenario text; parse(serialize(cfg)) == cfg.
std::string serialize(const SiteConfig& cfg);

// Returns human-readable violations (empty means valid). Each entry names the
// offending field.
std::vector<std::string> validate(const SiteConfig& cfg);

// Names of the calibratable PhysicsParams fields, in canonical order.
const std::vector<std::string>& physics_param_names();

double get_physics_param(const PhysicsParams& p, const std::string& name);
void set_physics_param(PhysicsParams& p, const std::string& name, double value);

}  // namespace tropictwin::config
