#include "tropictwin/trace.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tropictwin/psychro.hpp"
#include "tropictwin/util.hpp"

namespace tropictwin::trace {

std::string to_csv(const plant::Trace& tr) {
  std::ostringstream out;
  out << kCsvHeader << "\n";
  auto g = [](double v) { return format_sig(v, 6); };
  for (const auto& r : tr.records) {
    const plant::PlantState& s = r.state;
    double rh = psychro::relative_humidity(s.return_air.temp_c, s.return_air.humidity_ratio,
                                           s.return_air.pressure_kpa);
    out << g(s.clock_s) << ',' << g(r.exo.it_utilization) << ',' << g(r.exo.ambient_wet_bulb_c)
        << ',' << g(r.action.supply_setpoint_c) << ',' << g(r.action.fan_ratio) << ','
        << g(r.action.chws_setpoint_c) << ',' << g(s.return_air.temp_c) << ',' << g(rh) << ','
        << g(s.supply_air.temp_c) << ',' << g(s.it_inlet_temp_c) << ',' << g(s.chw_flow_kgs)
        << ',' << g(s.power_fans_kw) << ',' << g(s.power_pumps_kw) << ',' << g(s.power_chillers_kw)
        << ',' << g(s.power_towers_kw) << ',' << g(s.power_it_kw) << ','
        << (s.coil_infeasible ? 1 : 0) << "\n";
  }
  return out.str();
}

void write_csv(const plant::Trace& tr, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write trace file: " + path);
  out << to_csv(tr);
}

plant::Trace from_csv(const std::string& text, double pressure_kpa) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("trace csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw std::runtime_error("trace csv: unexpected header");

  plant::Trace tr;
  tr.timestep_s = 0.0;
  int lineno = 1;
  double prev_t = 0.0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(row, cell, ',')) {
      char* end = nullptr;
      double x = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0')
        throw std::runtime_error("trace csv: bad number at line " + std::to_string(lineno));
      v.push_back(x);
    }
    if (v.size() != 17)
      throw std::runtime_error("trace csv: wrong column count at line " + std::to_string(lineno));

    plant::TraceRecord r;
    r.exo = {v[1], v[2]};
    r.action = {v[3], v[4], v[5]};
    plant::PlantState& s = r.state;
    s.clock_s = v[0];
    s.return_air.pressure_kpa = pressure_kpa;
    s.return_air.temp_c = v[6];
    s.return_air.humidity_ratio = psychro::humidity_ratio(
        v[7] / 100.0 * psychro::saturation_pressure(v[6]), pressure_kpa);
    s.supply_air.pressure_kpa = pressure_kpa;
    s.supply_air.temp_c = v[8];
    s.supply_air.humidity_ratio = std::min(
        s.return_air.humidity_ratio,
        psychro::saturation_humidity_ratio(v[5], pressure_kpa));
    s.it_inlet_temp_c = v[9];
    s.chw_flow_kgs = v[10];
    s.chws_temp_c = v[5];
    s.power_fans_kw = v[11];
    s.power_pumps_kw = v[12];
    s.power_chillers_kw = v[13];
    s.power_towers_kw = v[14];
    s.power_it_kw = v[15];
    s.coil_infeasible = v[16] != 0.0;

    if (!tr.records.empty()) {
      double dt = s.clock_s - prev_t;
      if (tr.timestep_s == 0.0) tr.timestep_s = dt;
      else if (std::abs(dt - tr.timestep_s) > 1e-6 * std::max(1.0, tr.timestep_s))
        throw std::runtime_error("trace csv: non-uniform timestep at line " + std::to_string(lineno));
      if (dt <= 0.0)
        throw std::runtime_error("trace csv: time not increasing at line " + std::to_string(lineno));
    }
    prev_t = s.clock_s;
    tr.records.push_back(std::move(r));
  }
  if (tr.records.empty()) throw std::runtime_error("trace csv: no data rows");
  if (tr.timestep_s == 0.0) tr.timestep_s = tr.records.front().state.clock_s;
  return tr;
}

plant::Trace read_csv(const std::string& path, double pressure_kpa) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open trace file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_csv(buf.str(), pressure_kpa);
}

}  // namespace tropictwin::trace
