#include "tropictwin/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "tropictwin/util.hpp"

namespace tropictwin::config {

namespace {

struct Field {
  const char* section;
  const char* key;
  std::function<double(const SiteConfig&)> get;
  std::function<void(SiteConfig&, double)> set;
  bool integral = false;
};

// One table drives parse, serialize, and the round-trip guarantee.
const std::vector<Field>& fields() {
  static const std::vector<Field> t = {
      {"plant", "n_chillers", [](const SiteConfig& c) { return double(c.n_chillers); },
       [](SiteConfig& c, double v) { c.n_chillers = int(v); }, true},
      {"plant", "chiller_capacity_kw", [](const SiteConfig& c) { return c.chiller_capacity; },
       [](SiteConfig& c, double v) { c.chiller_capacity = v; }},
      {"plant", "n_crah", [](const SiteConfig& c) { return double(c.n_crah); },
       [](SiteConfig& c, double v) { c.n_crah = int(v); }, true},
      {"plant", "crah_rated_fan_power_kw",
       [](const SiteConfig& c) { return c.crah_rated_fan_power; },
       [](SiteConfig& c, double v) { c.crah_rated_fan_power = v; }},
      {"plant", "crah_rated_airflow_kgs",
       [](const SiteConfig& c) { return c.crah_rated_airflow; },
       [](SiteConfig& c, double v) { c.crah_rated_airflow = v; }},
      {"plant", "n_chw_pumps", [](const SiteConfig& c) { return double(c.n_chw_pumps); },
       [](SiteConfig& c, double v) { c.n_chw_pumps = int(v); }, true},
      {"plant", "pump_rated_power_kw", [](const SiteConfig& c) { return c.pump_rated_power; },
       [](SiteConfig& c, double v) { c.pump_rated_power = v; }},
      {"plant", "pump_rated_flow_kgs", [](const SiteConfig& c) { return c.pump_rated_flow; },
       [](SiteConfig& c, double v) { c.pump_rated_flow = v; }},
      {"plant", "n_towers_per_loop", [](const SiteConfig& c) { return double(c.n_towers_per_loop); },
       [](SiteConfig& c, double v) { c.n_towers_per_loop = int(v); }, true},
      {"plant", "tower_rated_fan_power_kw",
       [](const SiteConfig& c) { return c.tower_rated_fan_power; },
       [](SiteConfig& c, double v) { c.tower_rated_fan_power = v; }},
      {"plant", "hall_it_design_load_kw",
       [](const SiteConfig& c) { return c.hall_it_design_load; },
       [](SiteConfig& c, double v) { c.hall_it_design_load = v; }},
      {"plant", "ambient_pressure_kpa", [](const SiteConfig& c) { return c.ambient_pressure; },
       [](SiteConfig& c, double v) { c.ambient_pressure = v; }},
      {"sla", "max_inlet_temp_c", [](const SiteConfig& c) { return c.sla_max_inlet_temp; },
       [](SiteConfig& c, double v) { c.sla_max_inlet_temp = v; }},
      {"sla", "rh_min_pct", [](const SiteConfig& c) { return c.sla_rh_min; },
       [](SiteConfig& c, double v) { c.sla_rh_min = v; }},
      {"sla", "rh_max_pct", [](const SiteConfig& c) { return c.sla_rh_max; },
       [](SiteConfig& c, double v) { c.sla_rh_max = v; }},
      {"physics", "fan_cubic_coeff_kw",
       [](const SiteConfig& c) { return c.physics.fan_cubic_coeff; },
       [](SiteConfig& c, double v) { c.physics.fan_cubic_coeff = v; }},
      {"physics", "pump_cubic_coeff_kw",
       [](const SiteConfig& c) { return c.physics.pump_cubic_coeff; },
       [](SiteConfig& c, double v) { c.physics.pump_cubic_coeff = v; }},
      {"physics", "coil_ua_kw_per_k", [](const SiteConfig& c) { return c.physics.coil_ua; },
       [](SiteConfig& c, double v) { c.physics.coil_ua = v; }},
      {"physics", "chiller_cop_a0", [](const SiteConfig& c) { return c.physics.chiller_cop_a0; },
       [](SiteConfig& c, double v) { c.physics.chiller_cop_a0 = v; }},
      {"physics", "chiller_cop_a1", [](const SiteConfig& c) { return c.physics.chiller_cop_a1; },
       [](SiteConfig& c, double v) { c.physics.chiller_cop_a1 = v; }},
      {"physics", "chiller_cop_a2", [](const SiteConfig& c) { return c.physics.chiller_cop_a2; },
       [](SiteConfig& c, double v) { c.physics.chiller_cop_a2 = v; }},
      {"physics", "tower_approach_ref_k",
       [](const SiteConfig& c) { return c.physics.tower_approach_ref; },
       [](SiteConfig& c, double v) { c.physics.tower_approach_ref = v; }},
      {"physics", "tower_exponent", [](const SiteConfig& c) { return c.physics.tower_exponent; },
       [](SiteConfig& c, double v) { c.physics.tower_exponent = v; }},
      {"physics", "zone_heat_capacity_kj_per_k",
       [](const SiteConfig& c) { return c.physics.zone_heat_capacity; },
       [](SiteConfig& c, double v) { c.physics.zone_heat_capacity = v; }},
      {"physics", "recirculation_gain",
       [](const SiteConfig& c) { return c.physics.recirculation_gain; },
       [](SiteConfig& c, double v) { c.physics.recirculation_gain = v; }},
      {"physics", "moisture_gain_kgs", [](const SiteConfig& c) { return c.physics.moisture_gain; },
       [](SiteConfig& c, double v) { c.physics.moisture_gain = v; }},
      {"physics", "it_idle_fraction",
       [](const SiteConfig& c) { return c.physics.it_idle_fraction; },
       [](SiteConfig& c, double v) { c.physics.it_idle_fraction = v; }},
  };
  return t;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

SiteConfig default_case_study() { return SiteConfig{}; }

SiteConfig parse_site_config(const std::string& text) {
  SiteConfig cfg = default_case_study();
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int lineno = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(lineno, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "plant" && section != "sla" && section != "physics")
        throw ParseError(lineno, "unknown section [" + section + "]");
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected `key = value`");
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (section.empty()) throw ParseError(lineno, "key outside any section");
    const Field* field = nullptr;
    for (const auto& f : fields())
      if (section == f.section && key == f.key) field = &f;
    if (!field) throw ParseError(lineno, "unknown key `" + key + "` in [" + section + "]");
    std::string id = section + "." + key;
    if (seen.count(id)) throw ParseError(lineno, "duplicate key `" + key + "`");
    seen[id] = lineno;
    char* end = nullptr;
    double v = std::strtod(val.c_str(), &end);
    if (end == val.c_str() || *end != '\0' || !std::isfinite(v))
      throw ParseError(lineno, "value for `" + key + "` is not a finite number");
    if (field->integral && v != std::floor(v))
      throw ParseError(lineno, "value for `" + key + "` must be an integer");
    field->set(cfg, v);
  }
  return cfg;
}

SiteConfig load_site_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_site_config(buf.str());
}

std::string serialize(const SiteConfig& cfg) {
  std::ostringstream out;
  const char* last = "";
  for (const auto& f : fields()) {
    if (std::string(last) != f.section) {
      if (*last) out << "\n";
      out << "[" << f.section << "]\n";
      last = f.section;
    }
    double v = f.get(cfg);
    out << f.key << " = " << (f.integral ? std::to_string(int(v)) : format_sig(v, 12)) << "\n";
  }
  return out.str();
}

std::vector<std::string> validate(const SiteConfig& cfg) {
  std::vector<std::string> bad;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) bad.push_back(msg);
  };
  need(cfg.n_chillers >= 1, "n_chillers must be >= 1");
  need(cfg.chiller_capacity > 0, "chiller_capacity_kw must be positive");
  need(cfg.n_crah >= 1, "n_crah must be >= 1");
  need(cfg.crah_rated_fan_power > 0, "crah_rated_fan_power_kw must be positive");
  need(cfg.crah_rated_airflow > 0, "crah_rated_airflow_kgs must be positive");
  need(cfg.n_chw_pumps >= 1, "n_chw_pumps must be >= 1");
  need(cfg.pump_rated_power > 0, "pump_rated_power_kw must be positive");
  need(cfg.pump_rated_flow > 0, "pump_rated_flow_kgs must be positive");
  need(cfg.n_towers_per_loop >= 1, "n_towers_per_loop must be >= 1");
  need(cfg.tower_rated_fan_power > 0, "tower_rated_fan_power_kw must be positive");
  need(cfg.hall_it_design_load > 0, "hall_it_design_load_kw must be positive");
  need(cfg.ambient_pressure > 0, "ambient_pressure_kpa must be positive");
  need(cfg.hall_it_design_load <= cfg.n_chillers * cfg.chiller_capacity,
       "hall_it_design_load_kw exceeds installed chiller capacity");
  need(cfg.sla_rh_min > 0 && cfg.sla_rh_min < cfg.sla_rh_max && cfg.sla_rh_max < 100,
       "sla rh band must satisfy 0 < rh_min_pct < rh_max_pct < 100");
  need(cfg.sla_max_inlet_temp > 0, "max_inlet_temp_c must be positive");

  const PhysicsParams& p = cfg.physics;
  need(p.fan_cubic_coeff > 0, "fan_cubic_coeff_kw must be positive");
  need(p.pump_cubic_coeff > 0, "pump_cubic_coeff_kw must be positive");
  need(p.coil_ua > 0, "coil_ua_kw_per_k must be positive");
  need(p.tower_approach_ref > 0, "tower_approach_ref_k must be positive");
  need(p.tower_exponent > 0, "tower_exponent must be positive");
  need(p.zone_heat_capacity > 0, "zone_heat_capacity_kj_per_k must be positive");
  need(p.recirculation_gain >= 0 && p.recirculation_gain < 1,
       "recirculation_gain must lie in [0, 1)");
  need(p.moisture_gain >= 0, "moisture_gain_kgs must be non-negative");
  need(p.it_idle_fraction >= 0 && p.it_idle_fraction < 1,
       "it_idle_fraction must lie in [0, 1)");

  // COP stays physical over the whole reachable setpoint box: chws in [5, 15],
  // condenser water from wet bulb 20 up to 32 + approach * 1.5^exponent.
  if (p.tower_approach_ref > 0 && p.tower_exponent > 0) {
    double cw_hi = 32.0 + p.tower_approach_ref * std::pow(1.5, p.tower_exponent);
    for (double chws : {5.0, 15.0})
      for (double cw : {20.0, cw_hi}) {
        double cop = p.chiller_cop_a0 + p.chiller_cop_a1 * chws - p.chiller_cop_a2 * cw;
        if (!(cop >= 2.0 && cop <= 12.0)) {
          bad.push_back("chiller_cop_a0/a1/a2 leave COP outside [2, 12] at chws " +
                        format_sig(chws, 4) + " C, cw " + format_sig(cw, 4) + " C");
        }
      }
  }
  return bad;
}

const std::vector<std::string>& physics_param_names() {
  static const std::vector<std::string> names = {
      "fan_cubic_coeff",   "pump_cubic_coeff", "coil_ua",
      "chiller_cop_a0",    "chiller_cop_a1",   "chiller_cop_a2",
      "tower_approach_ref", "tower_exponent",  "zone_heat_capacity",
      "recirculation_gain", "moisture_gain",   "it_idle_fraction"};
  return names;
}

double get_physics_param(const PhysicsParams& p, const std::string& name) {
  if (name == "fan_cubic_coeff") return p.fan_cubic_coeff;
  if (name == "pump_cubic_coeff") return p.pump_cubic_coeff;
  if (name == "coil_ua") return p.coil_ua;
  if (name == "chiller_cop_a0") return p.chiller_cop_a0;
  if (name == "chiller_cop_a1") return p.chiller_cop_a1;
  if (name == "chiller_cop_a2") return p.chiller_cop_a2;
  if (name == "tower_approach_ref") return p.tower_approach_ref;
  if (name == "tower_exponent") return p.tower_exponent;
  if (name == "zone_heat_capacity") return p.zone_heat_capacity;
  if (name == "recirculation_gain") return p.recirculation_gain;
  if (name == "moisture_gain") return p.moisture_gain;
  if (name == "it_idle_fraction") return p.it_idle_fraction;
  throw std::invalid_argument("unknown physics parameter: " + name);
}

void set_physics_param(PhysicsParams& p, const std::string& name, double value) {
  if (name == "fan_cubic_coeff") p.fan_cubic_coeff = value;
  else if (name == "pump_cubic_coeff") p.pump_cubic_coeff = value;
  else if (name == "coil_ua") p.coil_ua = value;
  else if (name == "chiller_cop_a0") p.chiller_cop_a0 = value;
  else if (name == "chiller_cop_a1") p.chiller_cop_a1 = value;
  else if (name == "chiller_cop_a2") p.chiller_cop_a2 = value;
  else if (name == "tower_approach_ref") p.tower_approach_ref = value;
  else if (name == "tower_exponent") p.tower_exponent = value;
  else if (name == "zone_heat_capacity") p.zone_heat_capacity = value;
  else if (name == "recirculation_gain") p.recirculation_gain = value;
  else if (name == "moisture_gain") p.moisture_gain = value;
  else if (name == "it_idle_fraction") p.it_idle_fraction = value;
  else throw std::invalid_argument("unknown physics parameter: " + name);
}

}  // namespace tropictwin::config
