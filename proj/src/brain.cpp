#include "tropictwin/brain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tropictwin/autodiff.hpp"
#include "tropictwin/psychro.hpp"
#include "tropictwin/util.hpp"

namespace tropictwin::brain {

namespace {

constexpr double kBaselineSupC = 20.0;
constexpr double kBaselineFan = 0.9;
constexpr double kBaselineChwsC = 7.0;
// Wet bulb enters parametric policies and CEM perturbations normalized to
// roughly [-1, 1] over its allowed band.
constexpr double kWbCenterC = 26.0;
constexpr double kWbHalfSpanC = 6.0;
constexpr uint64_t kStreamCem = 41;
constexpr uint64_t kStreamRestartBase = 1000;  // + period index

const double kBoxLo[3] = {plant::kSupplyMinC, plant::kFanMin, plant::kChwsMinC};
const double kBoxHi[3] = {plant::kSupplyMaxC, plant::kFanMax, plant::kChwsMaxC};

plant::ControlAction action_from_z(const double z[3], bool full_loop) {
  plant::ControlAction a;
  a.supply_setpoint_c = kBoxLo[0] + z[0] * (kBoxHi[0] - kBoxLo[0]);
  a.fan_ratio = kBoxLo[1] + z[1] * (kBoxHi[1] - kBoxLo[1]);
  a.chws_setpoint_c = full_loop ? kBoxLo[2] + z[2] * (kBoxHi[2] - kBoxLo[2]) : kBaselineChwsC;
  return plant::clamp_to_box(a);
}

struct WeekRun {
  plant::Trace periods;
  double mean_power = 0.0;
  double mean_penalty = 0.0;
  int violation_periods = 0;
  int violation_entries = 0;
};

WeekRun rollout_week(const Policy& pol, const config::SiteConfig& cfg,
                     const std::vector<plant::Exogenous>& exo, const ConstraintSet& cs,
                     double weight) {
  std::vector<plant::ControlAction> actions;
  actions.reserve(exo.size());
  for (std::size_t p = 0; p < exo.size(); ++p) actions.push_back(pol.action_at(p, exo[p]));
  plant::PlantState init = plant::steady_state(actions.front(), exo.front(), cfg);
  WeekRun run;
  run.periods = plant::run_periods(init, actions, exo, cfg).periods;
  for (const auto& rec : run.periods.records) {
    run.mean_power += rec.state.cooling_power_kw();
    run.mean_penalty += constraint_penalty(rec.state, cs, weight);
    auto v = plant::sla_check(rec.state, cfg);
    run.violation_entries += static_cast<int>(v.size());
    if (!v.empty()) ++run.violation_periods;
  }
  auto n = static_cast<double>(run.periods.records.size());
  run.mean_power /= n;
  run.mean_penalty /= n;
  return run;
}

// Tape graph of one period's objective: decision variables enter box
// normalized, pass through the trained twin, and the SLA terms are rebuilt
// from the predicted return state with the same psychrometric forms the
// plant uses. The constraint bounds are tape inputs too, so one graph serves
// every period and every margin tightening via set_input/recompute.
class ObjectiveGraph {
 public:
  ObjectiveGraph(const surrogate::MlpParams& model, const config::SiteConfig& cfg,
                 bool full_loop, double weight) {
    using autodiff::Var;
    using autodiff::exp;
    using autodiff::vmax;
    using autodiff::vmin;
    if (model.layers.front() != surrogate::kNumInputs ||
        model.layers.back() != surrogate::kNumTargets)
      throw std::invalid_argument("optimizer needs a 5-input 4-target twin");
    const auto& ph = cfg.physics;

    for (auto& zj : z_) zj = tape_.input(0.5);
    util_ = tape_.input(0.5);
    wb_ = tape_.input(kWbCenterC);
    inlet_max_ = tape_.input(0.0);
    rh_lo_ = tape_.input(0.0);
    rh_hi_ = tape_.input(100.0);

    Var sup = tape_.constant(kBoxLo[0]) + z_[0] * (kBoxHi[0] - kBoxLo[0]);
    Var fan = tape_.constant(kBoxLo[1]) + z_[1] * (kBoxHi[1] - kBoxLo[1]);
    Var chws = full_loop ? tape_.constant(kBoxLo[2]) + z_[2] * (kBoxHi[2] - kBoxLo[2])
                         : tape_.constant(kBaselineChwsC);

    std::array<Var, surrogate::kNumInputs> x = {util_, wb_, sup, fan, chws};
    std::vector<Var> h(surrogate::kNumInputs);
    for (int j = 0; j < surrogate::kNumInputs; ++j)
      h[j] = (x[j] - model.in_norm.mean[j]) / model.in_norm.scale[j];

    std::size_t pos = 0;
    for (std::size_t l = 1; l < model.layers.size(); ++l) {
      const int in = model.layers[l - 1], out = model.layers[l];
      const double* w = model.weights.data() + pos;
      const double* b = w + static_cast<std::size_t>(out) * in;
      std::vector<Var> next(out);
      for (int o = 0; o < out; ++o) {
        Var s = tape_.constant(b[o]);
        for (int i = 0; i < in; ++i) s = s + h[i] * w[static_cast<std::size_t>(o) * in + i];
        next[o] = (l + 1 < model.layers.size()) ? autodiff::tanh(s) : s;
      }
      h = std::move(next);
      pos += static_cast<std::size_t>(out) * in + out;
    }
    Var y_ret = tape_.constant(model.out_norm.mean[0]) + h[0] * model.out_norm.scale[0];
    Var y_rh = tape_.constant(model.out_norm.mean[1]) + h[1] * model.out_norm.scale[1];
    Var y_pow = tape_.constant(model.out_norm.mean[3]) + h[3] * model.out_norm.scale[3];

    auto magnus = [&](Var t) {
      return psychro::kMagnusC0 * exp(psychro::kMagnusC1 * t / (t + psychro::kMagnusC2));
    };
    Var t_ret = vmax(vmin(y_ret, 120.0), -100.0);
    Var rh_ret = vmax(vmin(y_rh, 100.0), 0.0);

    // IT inlet: supply air plus the recirculated share of the CRAH airflow
    // deficit against the servers' demand.
    Var airflow = tape_.constant(cfg.n_crah * cfg.crah_rated_airflow) * fan;
    Var q_it = tape_.constant(cfg.hall_it_design_load) *
               (ph.it_idle_fraction + (1.0 - ph.it_idle_fraction) * util_);
    Var v_it = q_it / (1.006 * plant::kServerDeltaTK);
    Var deficit = vmax(1.0 - airflow / v_it, 0.0);
    Var inlet = sup + ph.recirculation_gain * deficit * (t_ret - sup);

    // Supply RH from the condensing-coil moisture clamp at the predicted
    // return state: vapor pressure capped at saturation over the coil.
    Var pv_ret = rh_ret / 100.0 * magnus(t_ret);
    Var pv_sup = vmin(pv_ret, magnus(chws));
    Var rh_sup = 100.0 * pv_sup / magnus(sup);

    Var h_inlet = vmax(inlet - inlet_max_, 0.0);
    Var h_hi = vmax(rh_sup - rh_hi_, 0.0);
    Var h_lo = vmax(rh_lo_ - rh_sup, 0.0);
    Var penalty = weight * (h_inlet * h_inlet + h_hi * h_hi + h_lo * h_lo);

    Var power = full_loop ? y_pow : Var(tape_.constant(ph.fan_cubic_coeff) * fan * fan * fan);
    obj_ = power + penalty;
  }

  double eval(double util, double wb, const ConstraintSet& cs, const double z[3], double g[3]) {
    tape_.set_input(util_, util);
    tape_.set_input(wb_, wb);
    tape_.set_input(inlet_max_, cs.inlet_max_c);
    tape_.set_input(rh_lo_, cs.rh_lo_pct);
    tape_.set_input(rh_hi_, cs.rh_hi_pct);
    for (int j = 0; j < 3; ++j) tape_.set_input(z_[j], z[j]);
    tape_.recompute();
    tape_.backward(obj_);
    for (int j = 0; j < 3; ++j) g[j] = tape_.grad(z_[j]);
    return tape_.value(obj_);
  }

 private:
  autodiff::Tape tape_;
  autodiff::Var z_[3], util_, wb_, inlet_max_, rh_lo_, rh_hi_, obj_;
};

Policy lookup_optimizer(const surrogate::MlpParams& model, const config::SiteConfig& theta_cfg,
                        const std::vector<plant::Exogenous>& exo, const ConstraintSet& cs,
                        const OptimizeConfig& oc, bool full_loop, const std::string& label) {
  if (exo.empty()) throw std::invalid_argument("optimizer needs a nonempty forecast");
  ObjectiveGraph graph(model, theta_cfg, full_loop, oc.penalty_weight);

  const double z_base[3] = {(kBaselineSupC - kBoxLo[0]) / (kBoxHi[0] - kBoxLo[0]),
                            (kBaselineFan - kBoxLo[1]) / (kBoxHi[1] - kBoxLo[1]),
                            (kBaselineChwsC - kBoxLo[2]) / (kBoxHi[2] - kBoxLo[2])};
  Policy pol;
  pol.kind = PolicyKind::Lookup;
  pol.label = label;
  pol.lookup.resize(exo.size());

  const int restarts = full_loop ? oc.restarts : 1;
  auto solve_period = [&](std::size_t p, const ConstraintSet& tight) {
    Pcg32 rng(oc.seed, kStreamRestartBase + p);
    double best_obj = std::numeric_limits<double>::infinity();
    double best_z[3] = {z_base[0], z_base[1], z_base[2]};
    for (int r = 0; r < restarts; ++r) {
      std::vector<double> z(3);
      if (r == 0)
        z.assign(z_base, z_base + 3);
      else
        for (auto& zj : z) zj = rng.uniform();

      autodiff::AdamState adam;
      autodiff::AdamConfig acfg;
      acfg.lr = oc.lr;
      double local_best = std::numeric_limits<double>::infinity();
      double local_z[3];
      int stall = 0;
      bool converged = false;
      for (int step = 0; step < oc.max_steps; ++step) {
        double g[3];
        double obj =
            graph.eval(exo[p].it_utilization, exo[p].ambient_wet_bulb_c, tight, z.data(), g);
        if (obj < local_best - 1e-9) {
          local_best = obj;
          std::copy(z.begin(), z.end(), local_z);
          stall = 0;
        } else if (++stall >= oc.stall_steps) {
          converged = true;
          break;
        }
        std::vector<double> gv(g, g + 3);
        autodiff::adam_step(z, gv, adam, acfg);
        for (auto& zj : z) zj = std::clamp(zj, 0.0, 1.0);
      }
      if (!converged) pol.fallback = true;
      if (local_best < best_obj) {
        best_obj = local_best;
        std::copy(local_z, local_z + 3, best_z);
      }
    }
    pol.lookup[p] = action_from_z(best_z, full_loop);
  };

  // The twin is locally optimistic near constraint boundaries, so a schedule
  // that sits exactly on a predicted bound lands on the wrong side of the true
  // one roughly half the time. Solve against guard-tightened bounds, validate
  // the schedule with one plant rollout, and double the margins of periods the
  // plant still flags until the rollout is clean or the rounds run out.
  std::vector<double> bump(exo.size(), 1.0);
  std::vector<std::size_t> pending(exo.size());
  std::iota(pending.begin(), pending.end(), std::size_t{0});
  for (int round = 0;; ++round) {
    for (std::size_t p : pending) {
      ConstraintSet tight = cs;
      tight.inlet_max_c -= oc.inlet_margin_c * bump[p];
      tight.rh_lo_pct += oc.rh_margin_pct * bump[p];
      tight.rh_hi_pct -= oc.rh_margin_pct * bump[p];
      solve_period(p, tight);
    }
    if (round >= oc.repair_rounds) break;
    WeekRun check = rollout_week(pol, theta_cfg, exo, cs, oc.penalty_weight);
    pending.clear();
    for (std::size_t p = 0; p < check.periods.records.size(); ++p)
      if (!plant::sla_check(check.periods.records[p].state, theta_cfg).empty()) {
        pending.push_back(p);
        bump[p] *= 2.0;
      }
    if (pending.empty()) break;
  }
  return pol;
}

}  // namespace

ConstraintSet constraints_from(const config::SiteConfig& cfg) {
  return {cfg.sla_max_inlet_temp, cfg.sla_rh_min, cfg.sla_rh_max};
}

plant::ControlAction Policy::action_at(std::size_t period, const plant::Exogenous& exo) const {
  switch (kind) {
    case PolicyKind::Fixed:
      return plant::clamp_to_box(fixed);
    case PolicyKind::Lookup: {
      if (lookup.empty()) throw std::logic_error("lookup policy has no actions");
      return plant::clamp_to_box(lookup[std::min(period, lookup.size() - 1)]);
    }
    case PolicyKind::Parametric: {
      double wbn = (exo.ambient_wet_bulb_c - kWbCenterC) / kWbHalfSpanC;
      plant::ControlAction a;
      a.supply_setpoint_c = phi[0] + phi[1] * exo.it_utilization + phi[2] * wbn;
      a.fan_ratio = phi[3] + phi[4] * exo.it_utilization + phi[5] * wbn;
      a.chws_setpoint_c = phi[6] + phi[7] * exo.it_utilization + phi[8] * wbn;
      return plant::clamp_to_box(a);
    }
  }
  return plant::clamp_to_box(fixed);
}

Policy fixed_policy(const config::SiteConfig&) {
  Policy p;
  p.kind = PolicyKind::Fixed;
  p.fixed = {kBaselineSupC, kBaselineFan, kBaselineChwsC};
  p.label = "fixed";
  return p;
}

double constraint_penalty(const plant::PlantState& state, const ConstraintSet& cs, double weight) {
  if (weight < 0.0) throw std::invalid_argument("penalty weight must be nonnegative");
  double rh_sup = psychro::relative_humidity(state.supply_air.temp_c,
                                             state.supply_air.humidity_ratio,
                                             state.supply_air.pressure_kpa);
  double over_t = std::max(state.it_inlet_temp_c - cs.inlet_max_c, 0.0);
  double over_rh = std::max(rh_sup - cs.rh_hi_pct, 0.0);
  double under_rh = std::max(cs.rh_lo_pct - rh_sup, 0.0);
  return weight * (over_t * over_t + over_rh * over_rh + under_rh * under_rh);
}

Policy model_free_search(const config::SiteConfig& cfg, const std::vector<plant::Exogenous>& exo,
                         int budget, uint64_t seed, SearchLog* log) {
  if (budget < 100) throw std::invalid_argument("search budget must be at least 100 rollouts");
  if (exo.empty()) throw std::invalid_argument("search needs a nonempty forecast week");
  const ConstraintSet cs = constraints_from(cfg);
  const int pop = 32;
  const int elites = 8;  // 25 %

  // phi layout: per knob (supply, fan, chws): intercept, utilization slope,
  // normalized-wet-bulb slope.
  std::array<double, 9> mean = {kBaselineSupC, 0.0, 0.0, kBaselineFan, 0.0,
                                0.0,           kBaselineChwsC, 0.0, 0.0};
  const std::array<double, 9> sigma0 = {1.5, 0.8, 0.8, 0.10, 0.06, 0.06, 1.2, 0.6, 0.6};
  std::array<double, 9> sigma = sigma0;

  auto policy_of = [](const std::array<double, 9>& phi) {
    Policy p;
    p.kind = PolicyKind::Parametric;
    p.phi = phi;
    p.label = "cem";
    return p;
  };
  SearchLog scratch;
  SearchLog& lg = log ? *log : scratch;
  lg = SearchLog{};

  Pcg32 rng(seed, kStreamCem);
  int rollouts = 0;
  std::array<double, 9> best_phi = mean;
  double best_fitness = -std::numeric_limits<double>::infinity();
  bool converged = false;

  while (!converged && rollouts + pop <= budget) {
    std::vector<std::array<double, 9>> phis(pop);
    std::vector<double> fitness(pop);
    int gen_violations = 0;
    for (int m = 0; m < pop; ++m) {
      phis[m] = mean;
      if (m > 0)  // member 0 carries the current mean; generation 0's is the baseline
        for (int j = 0; j < 9; ++j) phis[m][j] += sigma[j] * rng.gaussian();
      WeekRun run = rollout_week(policy_of(phis[m]), cfg, exo, cs, kPenaltyWeight);
      ++rollouts;
      fitness[m] = -(run.mean_power + run.mean_penalty);
      gen_violations += run.violation_periods;
      if (fitness[m] > best_fitness) {
        best_fitness = fitness[m];
        best_phi = phis[m];
      }
    }
    lg.violation_periods_per_generation.push_back(gen_violations);
    lg.total_violation_periods += gen_violations;

    std::vector<int> order(pop);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return fitness[a] > fitness[b]; });
    for (int j = 0; j < 9; ++j) {
      double m1 = 0.0, m2 = 0.0;
      for (int e = 0; e < elites; ++e) m1 += phis[order[e]][j];
      m1 /= elites;
      for (int e = 0; e < elites; ++e) {
        double d = phis[order[e]][j] - m1;
        m2 += d * d;
      }
      mean[j] = m1;
      sigma[j] = std::max(std::sqrt(m2 / elites), 0.02 * sigma0[j]);
    }
    converged = true;
    for (int j = 0; j < 9; ++j) converged = converged && sigma[j] <= 0.05 * sigma0[j];
  }
  lg.budget_exhausted = !converged;

  // Final candidate is the elite mean; fall back to the best individual seen
  // if the mean (degenerately) underperforms it.
  double mean_fitness = -std::numeric_limits<double>::infinity();
  if (rollouts < budget) {
    WeekRun run = rollout_week(policy_of(mean), cfg, exo, cs, kPenaltyWeight);
    ++rollouts;
    mean_fitness = -(run.mean_power + run.mean_penalty);
    if (run.violation_periods > 0) {
      lg.violation_periods_per_generation.push_back(run.violation_periods);
      lg.total_violation_periods += run.violation_periods;
    }
  }
  Policy out = policy_of(mean_fitness >= best_fitness ? mean : best_phi);
  out.fallback = mean_fitness < best_fitness || !converged;
  return out;
}

Policy uni_pi_optimize(const surrogate::MlpParams& model, const config::SiteConfig& theta_cfg,
                       const std::vector<plant::Exogenous>& exo, const ConstraintSet& cs,
                       const OptimizeConfig& oc) {
  return lookup_optimizer(model, theta_cfg, exo, cs, oc, false, "unipi");
}

Policy multi_pi_optimize(const surrogate::MlpParams& model, const config::SiteConfig& theta_cfg,
                         const std::vector<plant::Exogenous>& exo, const ConstraintSet& cs,
                         const OptimizeConfig& oc) {
  return lookup_optimizer(model, theta_cfg, exo, cs, oc, true, "multipi");
}

EvalReport evaluate(const Policy& policy, const config::SiteConfig& cfg,
                    const std::vector<plant::Exogenous>& exo_week, uint64_t seed,
                    plant::Trace* periods_out) {
  (void)seed;  // rollouts are deterministic; kept for interface stability
  if (exo_week.empty()) throw std::invalid_argument("evaluation week is empty");
  const ConstraintSet cs = constraints_from(cfg);
  WeekRun run = rollout_week(policy, cfg, exo_week, cs, kPenaltyWeight);
  WeekRun base = rollout_week(fixed_policy(cfg), cfg, exo_week, cs, kPenaltyWeight);

  EvalReport r;
  r.policy_label = policy.label;
  double n = static_cast<double>(run.periods.records.size());
  for (const auto& rec : run.periods.records) {
    r.mean_fans_kw += rec.state.power_fans_kw;
    r.mean_pumps_kw += rec.state.power_pumps_kw;
    r.mean_chillers_kw += rec.state.power_chillers_kw;
    r.mean_towers_kw += rec.state.power_towers_kw;
  }
  r.mean_fans_kw /= n;
  r.mean_pumps_kw /= n;
  r.mean_chillers_kw /= n;
  r.mean_towers_kw /= n;
  r.mean_cooling_power_kw = run.mean_power;
  r.sla_violation_count = run.violation_entries;
  r.sla_violation_fraction = run.violation_periods / n;
  r.normalized_power = run.mean_power / base.mean_power;
  if (periods_out) *periods_out = std::move(run.periods);
  return r;
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["policy"] = r.policy_label;
  j["mean_cooling_power_kw"] = r.mean_cooling_power_kw;
  j["mean_fans_kw"] = r.mean_fans_kw;
  j["mean_pumps_kw"] = r.mean_pumps_kw;
  j["mean_chillers_kw"] = r.mean_chillers_kw;
  j["mean_towers_kw"] = r.mean_towers_kw;
  j["sla_violation_count"] = r.sla_violation_count;
  j["sla_violation_fraction"] = r.sla_violation_fraction;
  j["normalized_power"] = r.normalized_power;
  return j.dump(2) + "\n";
}

std::string eval_periods_csv(const plant::Trace& periods, const config::SiteConfig& cfg) {
  std::ostringstream out;
  out << "period,sup_set_c,fan_ratio,chws_set_c,power_kw,violations\n";
  for (std::size_t p = 0; p < periods.records.size(); ++p) {
    const auto& rec = periods.records[p];
    out << p << ',' << format_sig(rec.action.supply_setpoint_c, 6) << ','
        << format_sig(rec.action.fan_ratio, 6) << ','
        << format_sig(rec.action.chws_setpoint_c, 6) << ','
        << format_sig(rec.state.cooling_power_kw(), 6) << ','
        << plant::sla_check(rec.state, cfg).size() << '\n';
  }
  return out.str();
}

}  // namespace tropictwin::brain
