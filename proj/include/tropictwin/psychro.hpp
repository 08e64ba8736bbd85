#pragma once

// Moist-air property functions (Magnus saturation curve, SI units: kPa, degC,
// kg water vapor per kg dry air, kJ/kg dry air).

namespace tropictwin::psychro {

inline constexpr double kStandardPressureKpa = 101.325;

// Magnus coefficients; the curve is rated for -50..100 degC.
inline constexpr double kMagnusC0 = 0.61094;  // kPa
inline constexpr double kMagnusC1 = 17.625;
inline constexpr double kMagnusC2 = 243.04;   // degC

inline constexpr double kTempMinC = -50.0;
inline constexpr double kTempMaxC = 100.0;

// Saturation vapor pressure [kPa]; throws std::domain_error outside -50..100 C.
double saturation_pressure(double temp_c);

// Humidity ratio from vapor pressure [kPa] at total pressure [kPa].
// Throws std::domain_error when vapor_pressure_kpa >= pressure_kpa or either
// argument is non-positive in a way that has no physical meaning.
double humidity_ratio(double vapor_pressure_kpa, double pressure_kpa);

// Partial vapor pressure [kPa] recovered from humidity ratio; exact inverse of
// humidity_ratio.
double vapor_pressure(double humidity_ratio, double pressure_kpa);

// Relative humidity [%], clamped to [0, 100].
double relative_humidity(double temp_c, double humidity_ratio, double pressure_kpa);

// Dew point [degC] via the closed-form Magnus inversion; throws when the
// implied dew point leaves the rated -50..100 C band.
double dew_point(double humidity_ratio, double pressure_kpa);

// Specific enthalpy of moist air [kJ/kg dry air]: 1.006 T + w (2501 + 1.86 T).
double moist_air_enthalpy(double temp_c, double humidity_ratio);

// Saturation humidity ratio at temp_c and total pressure.
double saturation_humidity_ratio(double temp_c, double pressure_kpa);

// Specific heat of moist air [kJ/(kg K)]: 1.006 + 1.86 w.
inline double cp_moist_air(double humidity_ratio) { return 1.006 + 1.86 * humidity_ratio; }

}  // namespace tropictwin::psychro
