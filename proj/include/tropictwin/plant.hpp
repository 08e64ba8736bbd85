#pragma once

// Lumped single-zone chilled-water plant: CRAH coil with counterflow e-NTU
// rating, staged chillers/pumps/towers, explicit-Euler zone dynamics.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tropictwin/config.hpp"

namespace tropictwin::plant {

struct MoistAirState {
  double temp_c = 20.0;
  double humidity_ratio = 0.0074;  // kg/kg dry air
  double pressure_kpa = 101.325;
};

struct ControlAction {
  double supply_setpoint_c = 20.0;
  double fan_ratio = 0.9;
  double chws_setpoint_c = 7.0;
};

struct Exogenous {
  double it_utilization = 0.55;
  double ambient_wet_bulb_c = 26.0;
};

// Allowed setpoint box and exogenous bounds.
inline constexpr double kSupplyMinC = 16.0, kSupplyMaxC = 27.0;
inline constexpr double kFanMin = 0.3, kFanMax = 1.0;
inline constexpr double kChwsMinC = 5.0, kChwsMaxC = 15.0;
inline constexpr double kWetBulbMinC = 20.0, kWetBulbMaxC = 32.0;

// Rated water-side heat rejection per condenser loop = factor * chiller capacity.
inline constexpr double kRejectFactor = 1.2;
// Pump overdrive ceiling; also caps the coil water-flow search bracket.
inline constexpr double kPumpOverdrive = 1.2;
// Design server air temperature rise used to size IT airflow demand.
inline constexpr double kServerDeltaTK = 12.0;
// Fixed-point iterations of the condenser-water/COP coupling.
inline constexpr int kCondenserIters = 8;
// Chiller COP clamp.
inline constexpr double kCopMin = 2.0, kCopMax = 12.0;

bool action_in_box(const ControlAction& a);
ControlAction clamp_to_box(ControlAction a);

struct PlantState {
  MoistAirState return_air;
  MoistAirState supply_air;
  double it_inlet_temp_c = 20.0;
  double chw_flow_kgs = 0.0;
  double chws_temp_c = 7.0;
  double cw_temp_c = 31.0;
  double power_fans_kw = 0.0;
  double power_pumps_kw = 0.0;
  double power_chillers_kw = 0.0;
  double power_towers_kw = 0.0;
  double power_it_kw = 0.0;
  double clock_s = 0.0;
  bool coil_infeasible = false;

  double cooling_power_kw() const {
    return power_fans_kw + power_pumps_kw + power_chillers_kw + power_towers_kw;
  }
};

struct InfeasibleDutyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// IT heat load [kW] at a utilization in [0, 1].
double it_heat(double utilization, const config::SiteConfig& cfg);

// Affinity-law shaft power, rated * ratio^3; ratio in [0, 1.2].
double fan_power(double ratio, double rated_kw);
double pump_power(double flow_ratio, double rated_kw);

// Closed-form counterflow e-NTU delivered duty [kW] for inlet temperature
// difference dt_inlet [K] and capacity rates [kW/K].
double counterflow_duty(double ua, double c_air, double c_water, double dt_inlet);

struct CoilSolution {
  bool feasible = true;
  double water_flow_kgs = 0.0;
  MoistAirState supply;
  double duty_required_kw = 0.0;
  double duty_delivered_kw = 0.0;
};

// Solves the CRAH coil for the smallest water flow meeting the duty implied by
// cooling return air to the supply setpoint. Condensate forms when the return
// air dew point sits above the chilled-water temperature; outlet humidity is
// capped at saturation over the coil surface (w_sat at chws). A return temp at
// or below the setpoint closes the valve (flow 0, supply = return). When even
// max_flow_kgs cannot meet the duty the solution is marked infeasible and the
// supply temperature floats above the setpoint at the deliverable duty.
CoilSolution coil_solve(const MoistAirState& return_air, double supply_setpoint_c,
                        double airflow_kgs, double chws_temp_c,
                        const config::PhysicsParams& params, double max_flow_kgs);

// Same solve, but infeasible duty raises InfeasibleDutyError; returns the flow.
double crah_coil_water_flow(const MoistAirState& return_air, double supply_setpoint_c,
                            double airflow_kgs, double chws_temp_c,
                            const config::PhysicsParams& params, double max_flow_kgs);

// COP = a0 + a1 chws - a2 cw, clamped to [2, 12].
double chiller_cop(double chws_c, double cw_c, const config::PhysicsParams& p);

// Electrical power [kW] of the minimum chiller set covering evap_load_kw,
// shared equally. Zero load draws nothing; load beyond installed capacity
// raises CapacityError.
double chiller_power(double evap_load_kw, double chws_c, double cw_c,
                     const config::SiteConfig& cfg);

// Condenser water supply temperature [C]: wet bulb + approach_ref *
// (reject_ratio / fan_ratio)^exponent. reject_ratio in [0, 1.5], fan_ratio > 0.
double tower_outlet_temp(double wet_bulb_c, double reject_ratio, double fan_ratio,
                         const config::PhysicsParams& p);

struct CondenserSolution {
  double cw_temp_c;
  double cop;
  double reject_ratio;
};

// Fixed-point solve (kCondenserIters iterations) of the cw/COP coupling for
// n_active staged chillers rejecting evap_load * (1 + 1/COP).
CondenserSolution condenser_loop(double evap_load_kw, double chws_c, double wet_bulb_c,
                                 int n_active, const config::SiteConfig& cfg);

// Minimum chillers covering the load (>= 1 whenever load > 0).
int chillers_required(double evap_load_kw, const config::SiteConfig& cfg);

// One explicit-Euler substep of dt_s in [1, 300] seconds. The commanded action
// must lie in the box; exogenous inputs must lie in bounds. Never throws for
// infeasible coil duty; the flag is carried on the returned state instead.
PlantState step(const PlantState& state, const ControlAction& action, const Exogenous& exo,
                const config::SiteConfig& cfg, double dt_s);

// Runs step() to convergence at constant action/exo; the returned state has
// clock 0 and serves as a reproducible initial condition.
PlantState steady_state(const ControlAction& action, const Exogenous& exo,
                        const config::SiteConfig& cfg, double dt_s = 60.0);

struct TraceRecord {
  Exogenous exo;
  ControlAction action;
  PlantState state;  // after the step
};

struct Trace {
  double timestep_s = 60.0;
  std::optional<PlantState> initial;
  std::vector<TraceRecord> records;
};

// Applies step() once per (action, exo) pair at spacing dt_s.
Trace rollout(const PlantState& initial, const std::vector<ControlAction>& actions,
              const std::vector<Exogenous>& exo, const config::SiteConfig& cfg, double dt_s);

// Expands per-period actions/exo to substeps, rolls out, and also returns the
// period-sampled view (period-end states; infeasible flag OR-ed per period).
struct PeriodRun {
  Trace substeps;
  Trace periods;
};
PeriodRun run_periods(const PlantState& initial, const std::vector<ControlAction>& actions,
                      const std::vector<Exogenous>& exo, const config::SiteConfig& cfg,
                      double period_s = 900.0, double substep_s = 60.0);

Trace period_view(const Trace& substeps, int substeps_per_period);

struct SlaViolation {
  std::string what;    // names the violated bound
  double margin;       // signed distance past the bound (+above max, -below min)
};

// Checks IT inlet temperature and supply-air relative humidity against the
// configured SLA band.
std::vector<SlaViolation> sla_check(const PlantState& state, const config::SiteConfig& cfg);

// Seeded synthetic week: diurnal utilization with Gaussian noise (sigma 0.05,
// clamped to [0,1]) and a phase-shifted diurnal wet bulb.
std::vector<Exogenous> synth_workload(int days, double dt_s, uint64_t seed);

// Seeded routine-operations schedule: setpoints stay in a narrow band around
// the commissioning point with small diurnal adjustments, per-period jitter,
// and a slow week-scale drift, so the trailing days partially leave the
// leading days' coverage the way live operational data does.
std::vector<ControlAction> operations_actions(int days, double period_s, uint64_t seed);

// Seeded identification sweep: a Latin-hypercube design over the action box
// (one stratum per level and knob, visited in seeded random order, held for a
// few periods each), keeping chws at least 6 K below the supply setpoint so
// the coil duty stays deliverable.
std::vector<ControlAction> excitation_actions(int days, double period_s, uint64_t seed);

}  // namespace tropictwin::plant
