#include "tropictwin/psychro.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tropictwin::psychro {

namespace {

[[noreturn]] void out_of_band(const char* fn, double temp_c) {
  throw std::domain_error(std::string(fn) + ": temperature " + std::to_string(temp_c) +
                          " C outside rated band [-50, 100] C");
}

}  // namespace

double saturation_pressure(double temp_c) {
  if (!(temp_c >= kTempMinC && temp_c <= kTempMaxC)) out_of_band("saturation_pressure", temp_c);
  return kMagnusC0 * std::exp(kMagnusC1 * temp_c / (temp_c + kMagnusC2));
}

double humidity_ratio(double vapor_pressure_kpa, double pressure_kpa) {
  if (!(pressure_kpa > 0.0)) throw std::domain_error("humidity_ratio: pressure must be positive");
  if (!(vapor_pressure_kpa >= 0.0))
    throw std::domain_error("humidity_ratio: vapor pressure must be non-negative");
  if (vapor_pressure_kpa >= pressure_kpa)
    throw std::domain_error("humidity_ratio: vapor pressure >= total pressure");
  return 0.622 * vapor_pressure_kpa / (pressure_kpa - vapor_pressure_kpa);
}

double vapor_pressure(double humidity_ratio, double pressure_kpa) {
  if (!(pressure_kpa > 0.0)) throw std::domain_error("vapor_pressure: pressure must be positive");
  if (!(humidity_ratio >= 0.0))
    throw std::domain_error("vapor_pressure: humidity ratio must be non-negative");
  return humidity_ratio * pressure_kpa / (0.622 + humidity_ratio);
}

double relative_humidity(double temp_c, double humidity_ratio, double pressure_kpa) {
  double pv = vapor_pressure(humidity_ratio, pressure_kpa);
  double rh = 100.0 * pv / saturation_pressure(temp_c);
  if (rh < 0.0) rh = 0.0;
  if (rh > 100.0) rh = 100.0;
  return rh;
}

double dew_point(double humidity_ratio, double pressure_kpa) {
  double pv = vapor_pressure(humidity_ratio, pressure_kpa);
  if (!(pv > 0.0)) throw std::domain_error("dew_point: zero vapor pressure has no dew point");
  double g = std::log(pv / kMagnusC0);
  double td = kMagnusC2 * g / (kMagnusC1 - g);
  if (!(td >= kTempMinC && td <= kTempMaxC)) out_of_band("dew_point", td);
  return td;
}

double moist_air_enthalpy(double temp_c, double humidity_ratio) {
  return 1.006 * temp_c + humidity_ratio * (2501.0 + 1.86 * temp_c);
}

double saturation_humidity_ratio(double temp_c, double pressure_kpa) {
  return humidity_ratio(saturation_pressure(temp_c), pressure_kpa);
}

}  // namespace tropictwin::psychro
