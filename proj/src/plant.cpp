#include "tropictwin/plant.hpp"

#include <algorithm>
#include <cmath>

#include "tropictwin/psychro.hpp"
#include "tropictwin/util.hpp"

namespace tropictwin::plant {

namespace {
constexpr double kCpWater = 4.186;  // kJ/(kg K)
constexpr double kPi = 3.14159265358979323846;

double require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::domain_error(std::string("plant: non-finite ") + what);
  return v;
}
}  // namespace

bool action_in_box(const ControlAction& a) {
  return a.supply_setpoint_c >= kSupplyMinC && a.supply_setpoint_c <= kSupplyMaxC &&
         a.fan_ratio >= kFanMin && a.fan_ratio <= kFanMax &&
         a.chws_setpoint_c >= kChwsMinC && a.chws_setpoint_c <= kChwsMaxC;
}

ControlAction clamp_to_box(ControlAction a) {
  a.supply_setpoint_c = std::clamp(a.supply_setpoint_c, kSupplyMinC, kSupplyMaxC);
  a.fan_ratio = std::clamp(a.fan_ratio, kFanMin, kFanMax);
  a.chws_setpoint_c = std::clamp(a.chws_setpoint_c, kChwsMinC, kChwsMaxC);
  return a;
}

double it_heat(double utilization, const config::SiteConfig& cfg) {
  if (!(utilization >= 0.0 && utilization <= 1.0))
    throw std::domain_error("it_heat: utilization outside [0, 1]");
  double idle = cfg.physics.it_idle_fraction;
  return cfg.hall_it_design_load * (idle + (1.0 - idle) * utilization);
}

double fan_power(double ratio, double rated_kw) {
  if (!(ratio >= 0.0 && ratio <= 1.2))
    throw std::domain_error("fan_power: ratio outside [0, 1.2]");
  return rated_kw * ratio * ratio * ratio;
}

double pump_power(double flow_ratio, double rated_kw) {
  if (!(flow_ratio >= 0.0 && flow_ratio <= 1.2))
    throw std::domain_error("pump_power: flow ratio outside [0, 1.2]");
  return rated_kw * flow_ratio * flow_ratio * flow_ratio;
}

double counterflow_duty(double ua, double c_air, double c_water, double dt_inlet) {
  if (c_water <= 0.0 || dt_inlet <= 0.0) return 0.0;
  double c_min = std::min(c_air, c_water);
  double c_max = std::max(c_air, c_water);
  double ntu = ua / c_min;
  double cr = c_min / c_max;
  double eff;
  if (cr == 1.0) {
    eff = ntu / (1.0 + ntu);
  } else {
    double z = std::exp(-ntu * (1.0 - cr));
    eff = (1.0 - z) / (1.0 - cr * z);
  }
  return eff * c_min * dt_inlet;
}

CoilSolution coil_solve(const MoistAirState& return_air, double supply_setpoint_c,
                        double airflow_kgs, double chws_temp_c,
                        const config::PhysicsParams& params, double max_flow_kgs) {
  if (!(supply_setpoint_c > chws_temp_c))
    throw std::domain_error("coil_solve: supply setpoint at or below chilled-water temperature");
  if (!(airflow_kgs > 0.0)) throw std::domain_error("coil_solve: airflow must be positive");
  if (!(max_flow_kgs > 0.0)) throw std::domain_error("coil_solve: max water flow must be positive");

  CoilSolution sol;
  sol.supply = return_air;
  if (return_air.temp_c <= supply_setpoint_c) return sol;  // valve closed, zero duty

  double w_ret = return_air.humidity_ratio;
  double w_sup = std::min(
      w_ret, psychro::saturation_humidity_ratio(chws_temp_c, return_air.pressure_kpa));
  double h_ret = psychro::moist_air_enthalpy(return_air.temp_c, w_ret);
  double h_sup = psychro::moist_air_enthalpy(supply_setpoint_c, w_sup);
  double q_req = airflow_kgs * (h_ret - h_sup);

  double c_air = airflow_kgs * psychro::cp_moist_air(w_ret);
  double dt_inlet = return_air.temp_c - chws_temp_c;
  auto delivered = [&](double flow) {
    return counterflow_duty(params.coil_ua, c_air, flow * kCpWater, dt_inlet);
  };

  sol.duty_required_kw = q_req;
  double q_max = delivered(max_flow_kgs);
  if (q_max < q_req) {
    // Degrade gracefully: run full flow and let the supply temperature float
    // above the setpoint at the duty the coil can actually deliver.
    sol.feasible = false;
    sol.water_flow_kgs = max_flow_kgs;
    sol.duty_delivered_kw = q_max;
    double h_float = h_ret - q_max / airflow_kgs;
    double t_float = (h_float - w_sup * 2501.0) / (1.006 + 1.86 * w_sup);
    sol.supply.temp_c = t_float;
    sol.supply.humidity_ratio = std::min(
        w_ret, psychro::saturation_humidity_ratio(chws_temp_c, return_air.pressure_kpa));
    return sol;
  }

  double lo = 0.0, hi = max_flow_kgs;
  for (int i = 0; i < 200 && (hi - lo) > 1e-11 * max_flow_kgs; ++i) {
    double mid = 0.5 * (lo + hi);
    if (delivered(mid) >= q_req) hi = mid;
    else lo = mid;
  }
  sol.water_flow_kgs = hi;
  sol.duty_delivered_kw = delivered(hi);
  sol.supply.temp_c = supply_setpoint_c;
  sol.supply.humidity_ratio = w_sup;
  return sol;
}

double crah_coil_water_flow(const MoistAirState& return_air, double supply_setpoint_c,
                            double airflow_kgs, double chws_temp_c,
                            const config::PhysicsParams& params, double max_flow_kgs) {
  CoilSolution sol =
      coil_solve(return_air, supply_setpoint_c, airflow_kgs, chws_temp_c, params, max_flow_kgs);
  if (!sol.feasible)
    throw InfeasibleDutyError("coil duty " + format_sig(sol.duty_required_kw, 6) +
                              " kW exceeds deliverable " + format_sig(sol.duty_delivered_kw, 6) +
                              " kW at max water flow");
  return sol.water_flow_kgs;
}

double chiller_cop(double chws_c, double cw_c, const config::PhysicsParams& p) {
  double cop = p.chiller_cop_a0 + p.chiller_cop_a1 * chws_c - p.chiller_cop_a2 * cw_c;
  return std::clamp(cop, kCopMin, kCopMax);
}

int chillers_required(double evap_load_kw, const config::SiteConfig& cfg) {
  if (evap_load_kw <= 0.0) return 0;
  return std::max(1, static_cast<int>(std::ceil(evap_load_kw / cfg.chiller_capacity)));
}

double chiller_power(double evap_load_kw, double chws_c, double cw_c,
                     const config::SiteConfig& cfg) {
  if (evap_load_kw < 0.0) throw std::domain_error("chiller_power: negative load");
  if (evap_load_kw == 0.0) return 0.0;
  if (evap_load_kw > cfg.n_chillers * cfg.chiller_capacity)
    throw CapacityError("evaporator load " + format_sig(evap_load_kw, 6) +
                        " kW exceeds installed capacity");
  // Equal sharing across the staged set; with identical units the split does
  // not change the total draw.
  return evap_load_kw / chiller_cop(chws_c, cw_c, cfg.physics);
}

double tower_outlet_temp(double wet_bulb_c, double reject_ratio, double fan_ratio,
                         const config::PhysicsParams& p) {
  if (!(fan_ratio > 0.0)) throw std::domain_error("tower_outlet_temp: fan ratio must be positive");
  if (!(reject_ratio >= 0.0 && reject_ratio <= 1.5))
    throw std::domain_error("tower_outlet_temp: reject ratio outside [0, 1.5]");
  return wet_bulb_c + p.tower_approach_ref * std::pow(reject_ratio / fan_ratio, p.tower_exponent);
}

CondenserSolution condenser_loop(double evap_load_kw, double chws_c, double wet_bulb_c,
                                 int n_active, const config::SiteConfig& cfg) {
  const config::PhysicsParams& p = cfg.physics;
  double reject_cap = n_active * cfg.chiller_capacity * kRejectFactor;
  CondenserSolution s{wet_bulb_c + p.tower_approach_ref, chiller_cop(chws_c, wet_bulb_c + p.tower_approach_ref, p), 0.0};
  for (int i = 0; i < kCondenserIters; ++i) {
    double reject = evap_load_kw * (1.0 + 1.0 / s.cop);
    s.reject_ratio = std::min(reject / reject_cap, 1.5);
    s.cw_temp_c = tower_outlet_temp(wet_bulb_c, s.reject_ratio, 1.0, p);
    s.cop = chiller_cop(chws_c, s.cw_temp_c, p);
  }
  return s;
}

PlantState step(const PlantState& state, const ControlAction& action, const Exogenous& exo,
                const config::SiteConfig& cfg, double dt_s) {
  if (!(dt_s >= 1.0 && dt_s <= 300.0)) throw std::domain_error("step: dt outside [1, 300] s");
  if (!action_in_box(action)) throw std::domain_error("step: action outside the setpoint box");
  if (!(exo.it_utilization >= 0.0 && exo.it_utilization <= 1.0))
    throw std::domain_error("step: utilization outside [0, 1]");
  if (!(exo.ambient_wet_bulb_c >= kWetBulbMinC && exo.ambient_wet_bulb_c <= kWetBulbMaxC))
    throw std::domain_error("step: wet bulb outside bounds");

  const config::PhysicsParams& p = cfg.physics;
  double q_it = it_heat(exo.it_utilization, cfg);
  double airflow = cfg.n_crah * cfg.crah_rated_airflow * action.fan_ratio;
  double p_fans = fan_power(action.fan_ratio, p.fan_cubic_coeff);

  PlantState next = state;
  next.coil_infeasible = false;

  // Coil: solve from the current return state against the commanded setpoints.
  // Chillers (and with them the pump set) stage on the required duty, which
  // caps the water-flow bracket at the staged pumps' overdrive limit.
  double w_ret = state.return_air.humidity_ratio;
  double t_ret = state.return_air.temp_c;
  double q_probe = 0.0;
  if (t_ret > action.supply_setpoint_c) {
    double w_sup_probe = std::min(
        w_ret, psychro::saturation_humidity_ratio(action.chws_setpoint_c, state.return_air.pressure_kpa));
    q_probe = airflow * (psychro::moist_air_enthalpy(t_ret, w_ret) -
                         psychro::moist_air_enthalpy(action.supply_setpoint_c, w_sup_probe));
  }
  int n_act = chillers_required(q_probe, cfg);
  if (n_act > cfg.n_chillers) {
    n_act = cfg.n_chillers;
    next.coil_infeasible = true;
  }
  double max_flow = std::max(1, n_act) * cfg.pump_rated_flow * kPumpOverdrive;
  CoilSolution coil = coil_solve(state.return_air, action.supply_setpoint_c, airflow,
                                 action.chws_setpoint_c, p, max_flow);
  if (!coil.feasible) next.coil_infeasible = true;

  double evap = coil.duty_delivered_kw;
  double total_cap = cfg.n_chillers * cfg.chiller_capacity;
  if (evap > total_cap) {  // unreachable under sane configs, but never abort
    evap = total_cap;
    next.coil_infeasible = true;
  }

  double p_pumps = 0.0, p_chillers = 0.0, p_towers = 0.0;
  double cw = exo.ambient_wet_bulb_c;
  if (evap > 0.0) {
    CondenserSolution cond = condenser_loop(evap, action.chws_setpoint_c, exo.ambient_wet_bulb_c,
                                            n_act, cfg);
    cw = cond.cw_temp_c;
    p_chillers = chiller_power(evap, action.chws_setpoint_c, cw, cfg);
    double flow_ratio = coil.water_flow_kgs / (n_act * cfg.pump_rated_flow);
    p_pumps = n_act * pump_power(std::min(flow_ratio, kPumpOverdrive), p.pump_cubic_coeff);
    p_towers = n_act * cfg.n_towers_per_loop * cfg.tower_rated_fan_power;
  }

  // Zone balance with moist-air cp so the enthalpy-based coil duty and the
  // sensible zone equation agree at steady state.
  double cp_m = psychro::cp_moist_air(w_ret);
  double t_sup = coil.supply.temp_c;
  double dT = dt_s * (q_it + p_fans - airflow * cp_m * (t_ret - t_sup)) / p.zone_heat_capacity;
  double t_ret_next = t_ret + dT;

  double m_air = p.zone_heat_capacity / 1.006;  // heat-capacity-equivalent air mass
  double w_sup = coil.supply.humidity_ratio;
  double dw = dt_s * (airflow * (w_sup - w_ret) + p.moisture_gain) / m_air;
  double w_ret_next = std::max(w_ret + dw, 0.0);

  next.return_air.temp_c = require_finite(t_ret_next, "return temperature");
  next.return_air.humidity_ratio = require_finite(w_ret_next, "return humidity");
  next.supply_air = coil.supply;
  next.chw_flow_kgs = coil.water_flow_kgs;
  next.chws_temp_c = action.chws_setpoint_c;
  next.cw_temp_c = cw;
  next.power_fans_kw = p_fans;
  next.power_pumps_kw = p_pumps;
  next.power_chillers_kw = p_chillers;
  next.power_towers_kw = p_towers;
  next.power_it_kw = q_it;
  next.clock_s = state.clock_s + dt_s;

  // Recirculation raises the IT inlet above supply when the CRAH set moves
  // less air than the servers demand.
  double v_it = q_it / (1.006 * kServerDeltaTK);
  double deficit = std::max(0.0, 1.0 - airflow / v_it);
  next.it_inlet_temp_c =
      t_sup + p.recirculation_gain * deficit * (next.return_air.temp_c - t_sup);
  return next;
}

PlantState steady_state(const ControlAction& action, const Exogenous& exo,
                        const config::SiteConfig& cfg, double dt_s) {
  PlantState s;
  s.return_air.pressure_kpa = cfg.ambient_pressure;
  s.supply_air.pressure_kpa = cfg.ambient_pressure;
  s.return_air.temp_c = action.supply_setpoint_c + 5.0;
  s.return_air.humidity_ratio =
      psychro::saturation_humidity_ratio(action.chws_setpoint_c, cfg.ambient_pressure);
  s.chws_temp_c = action.chws_setpoint_c;
  for (int i = 0; i < 200000; ++i) {
    PlantState n = step(s, action, exo, cfg, dt_s);
    bool done = std::abs(n.return_air.temp_c - s.return_air.temp_c) < 1e-12 &&
                std::abs(n.return_air.humidity_ratio - s.return_air.humidity_ratio) < 1e-15;
    n.clock_s = 0.0;
    s = n;
    if (done) break;
  }
  return s;
}

Trace rollout(const PlantState& initial, const std::vector<ControlAction>& actions,
              const std::vector<Exogenous>& exo, const config::SiteConfig& cfg, double dt_s) {
  if (actions.size() != exo.size())
    throw std::invalid_argument("rollout: action/exogenous length mismatch");
  Trace tr;
  tr.timestep_s = dt_s;
  tr.initial = initial;
  tr.records.reserve(actions.size());
  PlantState s = initial;
  for (std::size_t k = 0; k < actions.size(); ++k) {
    s = step(s, actions[k], exo[k], cfg, dt_s);
    tr.records.push_back(TraceRecord{exo[k], actions[k], s});
  }
  return tr;
}

PeriodRun run_periods(const PlantState& initial, const std::vector<ControlAction>& actions,
                      const std::vector<Exogenous>& exo, const config::SiteConfig& cfg,
                      double period_s, double substep_s) {
  if (actions.size() != exo.size())
    throw std::invalid_argument("run_periods: action/exogenous length mismatch");
  int sub = static_cast<int>(std::llround(period_s / substep_s));
  if (sub < 1 || std::abs(sub * substep_s - period_s) > 1e-9)
    throw std::invalid_argument("run_periods: period must be a whole number of substeps");
  std::vector<ControlAction> a_sub;
  std::vector<Exogenous> e_sub;
  a_sub.reserve(actions.size() * sub);
  e_sub.reserve(actions.size() * sub);
  for (std::size_t k = 0; k < actions.size(); ++k)
    for (int i = 0; i < sub; ++i) {
      a_sub.push_back(actions[k]);
      e_sub.push_back(exo[k]);
    }
  PeriodRun run;
  run.substeps = rollout(initial, a_sub, e_sub, cfg, substep_s);
  run.periods = period_view(run.substeps, sub);
  return run;
}

Trace period_view(const Trace& substeps, int substeps_per_period) {
  if (substeps_per_period < 1 || substeps.records.size() % substeps_per_period != 0)
    throw std::invalid_argument("period_view: record count not a whole number of periods");
  Trace out;
  out.timestep_s = substeps.timestep_s * substeps_per_period;
  out.initial = substeps.initial;
  std::size_t periods = substeps.records.size() / substeps_per_period;
  out.records.reserve(periods);
  for (std::size_t k = 0; k < periods; ++k) {
    TraceRecord rec = substeps.records[(k + 1) * substeps_per_period - 1];
    bool flagged = false;
    for (int i = 0; i < substeps_per_period; ++i)
      flagged = flagged || substeps.records[k * substeps_per_period + i].state.coil_infeasible;
    rec.state.coil_infeasible = flagged;
    out.records.push_back(rec);
  }
  return out;
}

std::vector<SlaViolation> sla_check(const PlantState& state, const config::SiteConfig& cfg) {
  std::vector<SlaViolation> v;
  if (state.it_inlet_temp_c > cfg.sla_max_inlet_temp)
    v.push_back({"it_inlet_temp above " + format_sig(cfg.sla_max_inlet_temp, 4) + " C",
                 state.it_inlet_temp_c - cfg.sla_max_inlet_temp});
  double rh = psychro::relative_humidity(state.supply_air.temp_c, state.supply_air.humidity_ratio,
                                         state.supply_air.pressure_kpa);
  if (rh < cfg.sla_rh_min)
    v.push_back({"supply rh below " + format_sig(cfg.sla_rh_min, 4) + " %", rh - cfg.sla_rh_min});
  if (rh > cfg.sla_rh_max)
    v.push_back({"supply rh above " + format_sig(cfg.sla_rh_max, 4) + " %", rh - cfg.sla_rh_max});
  return v;
}

std::vector<Exogenous> synth_workload(int days, double dt_s, uint64_t seed) {
  if (days < 1) throw std::invalid_argument("synth_workload: days must be >= 1");
  if (!(dt_s > 0.0)) throw std::invalid_argument("synth_workload: dt must be positive");
  std::size_t n = static_cast<std::size_t>(std::llround(days * 86400.0 / dt_s));
  Pcg32 rng(seed, 0);
  std::vector<Exogenous> out;
  out.reserve(n);
  const double day = 86400.0;
  const double phase = -kPi / 3.0;  // wet bulb peaks mid-afternoon
  for (std::size_t k = 0; k < n; ++k) {
    double t = k * dt_s;
    double u = 0.55 + 0.25 * std::sin(2.0 * kPi * t / day) + 0.05 * rng.gaussian();
    double wb = 26.0 + 2.0 * std::sin(2.0 * kPi * t / day + phase);
    out.push_back({std::clamp(u, 0.0, 1.0), wb});
  }
  return out;
}

std::vector<ControlAction> operations_actions(int days, double period_s, uint64_t seed) {
  if (days < 1) throw std::invalid_argument("operations_actions: days must be >= 1");
  std::size_t n = static_cast<std::size_t>(std::llround(days * 86400.0 / period_s));
  Pcg32 j_sup(seed, 21), j_fan(seed, 22), j_chws(seed, 23);
  std::vector<ControlAction> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t_day = static_cast<double>(k) * period_s / 86400.0;
    ControlAction a;
    // Routine operation for the first five days, then an efficiency trial that
    // ramps the setpoints out of the routine band over the last two days. The
    // chilled-water setpoint only moves down so the coil keeps condensing.
    const double u = std::max(0.0, (t_day - 5.0) / 2.0);
    a.supply_setpoint_c = (u > 0.0 ? 19.5 + 3.4 * u : 19.3) +
                          0.25 * std::sin(2.0 * kPi * t_day) + j_sup.uniform(-0.10, 0.10);
    a.fan_ratio = (u > 0.0 ? 0.87 + 0.10 * u : 0.88) +
                  0.015 * std::sin(2.0 * kPi * t_day + 1.0) + j_fan.uniform(-0.010, 0.010);
    a.chws_setpoint_c = (u > 0.0 ? 7.4 - 2.1 * u : 7.6) +
                        0.15 * std::sin(2.0 * kPi * t_day + 2.0) + j_chws.uniform(-0.08, 0.08);
    out.push_back(clamp_to_box(a));
  }
  return out;
}

std::vector<ControlAction> excitation_actions(int days, double period_s, uint64_t seed) {
  if (days < 1) throw std::invalid_argument("excitation_actions: days must be >= 1");
  std::size_t n = static_cast<std::size_t>(std::llround(days * 86400.0 / period_s));
  // Latin-hypercube sweep: each knob's range is split into one stratum per
  // level and the strata are visited in a seeded random order. Levels dwell
  // for a few periods so the zone settles and the sweep excites both
  // transients and quasi-steady points.
  const std::size_t dwell = 4;
  const std::size_t levels = (n + dwell - 1) / dwell;
  struct Dim {
    double lo, hi;
    Pcg32 rng;
    std::vector<double> values;
  };
  Dim dims[3] = {{kSupplyMinC, kSupplyMaxC, Pcg32(seed, 11), {}},
                 {kFanMin, kFanMax, Pcg32(seed, 12), {}},
                 {kChwsMinC, kChwsMaxC, Pcg32(seed, 13), {}}};
  for (auto& d : dims) {
    std::vector<std::size_t> perm(levels);
    for (std::size_t i = 0; i < levels; ++i) perm[i] = i;
    for (std::size_t i = levels; i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(d.rng.uniform() * static_cast<double>(i));
      if (j >= i) j = i - 1;
      std::swap(perm[i - 1], perm[j]);
    }
    d.values.reserve(levels);
    const double width = (d.hi - d.lo) / static_cast<double>(levels);
    for (std::size_t i = 0; i < levels; ++i)
      d.values.push_back(d.lo + (static_cast<double>(perm[i]) + d.rng.uniform()) * width);
  }
  std::vector<ControlAction> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t lvl = k / dwell;
    ControlAction a;
    a.supply_setpoint_c = dims[0].values[lvl];
    a.fan_ratio = dims[1].values[lvl];
    a.chws_setpoint_c = dims[2].values[lvl];
    // keep the commanded duty deliverable by the staged water loop
    a.chws_setpoint_c = std::min(a.chws_setpoint_c, a.supply_setpoint_c - 6.0);
    out.push_back(clamp_to_box(a));
  }
  return out;
}

}  // namespace tropictwin::plant
