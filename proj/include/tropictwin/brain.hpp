#pragma once

// Cooling setpoint optimization over the action box: a fixed baseline, a
// model-free cross-entropy search rolled out on the true plant, and two
// surrogate-guided projected-gradient optimizers, one confined to the air
// loop and one spanning the full chilled-water loop.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tropictwin/config.hpp"
#include "tropictwin/plant.hpp"
#include "tropictwin/surrogate.hpp"

namespace tropictwin::brain {

inline constexpr double kPenaltyWeight = 1000.0;  // kW per squared SLA unit

struct ConstraintSet {
  double inlet_max_c = 27.0;
  double rh_lo_pct = 30.0;
  double rh_hi_pct = 60.0;
};

// Mirrors the SLA fields of the site config; the action box bounds live as
// plant constants and apply to every emitted action.
ConstraintSet constraints_from(const config::SiteConfig& cfg);

enum class PolicyKind { Fixed, Lookup, Parametric };

// Parametric payload: per action knob, an affine map intercept + slopes on
// (utilization, normalized wet bulb), clamped to the box on emission.
struct Policy {
  PolicyKind kind = PolicyKind::Fixed;
  plant::ControlAction fixed;
  std::vector<plant::ControlAction> lookup;
  std::array<double, 9> phi{};
  std::string label = "fixed";
  bool fallback = false;  // best-so-far despite non-convergence or exhausted budget

  plant::ControlAction action_at(std::size_t period, const plant::Exogenous& exo) const;
};

// The documented baseline operating point: supply 20 C, fan 0.9, chws 7 C.
Policy fixed_policy(const config::SiteConfig& cfg);

// weight * sum of squared hinges of the IT inlet excess over inlet_max and
// the supply RH excursions beyond [rh_lo, rh_hi]; zero iff the SLA holds.
double constraint_penalty(const plant::PlantState& state, const ConstraintSet& cs, double weight);

struct SearchLog {
  std::vector<int> violation_periods_per_generation;
  int total_violation_periods = 0;
  bool budget_exhausted = false;
};

// Cross-entropy search over the 9-parameter affine policy: population 32,
// elite fraction 25 %, seeded Gaussian perturbations, fitness = -(mean plant
// power + constraint penalty) from full rollouts of the forecast week.
// Generation 0 contains the unperturbed fixed point, so the result never
// regresses below the baseline; the log records SLA violations the search
// itself incurred on the plant. budget is the allowed rollout count (>= 100).
Policy model_free_search(const config::SiteConfig& cfg, const std::vector<plant::Exogenous>& exo,
                         int budget, uint64_t seed, SearchLog* log = nullptr);

struct OptimizeConfig {
  int max_steps = 500;   // per period and restart; hitting it sets fallback
  double lr = 0.02;      // Adam step in box-normalized coordinates
  int restarts = 8;      // full-loop optimizer only; first restart is the baseline
  int stall_steps = 30;  // convergence = no improvement over this window
  uint64_t seed = 0;
  double penalty_weight = kPenaltyWeight;
  // Guard band between the constraints the optimizer descends against and
  // the true SLA. The unpenalized optimum sits exactly on the constraint
  // boundary, so without a margin every knob-width of surrogate error sends
  // about half the periods past the real bound.
  double inlet_margin_c = 0.5;
  double rh_margin_pct = 2.0;
  // After each solve pass, one validation rollout of the schedule on the
  // plant model; periods it flags are re-solved with doubled margins, up to
  // this many extra passes.
  int repair_rounds = 4;
};

// Air-loop-only optimizer: per-period projected gradient on the tape over
// (supply setpoint, fan ratio) with chws pinned at the baseline 7 C,
// minimizing affinity-law fan power plus the constraint penalty with return
// temp/RH read from the surrogate. Returns a lookup policy.
Policy uni_pi_optimize(const surrogate::MlpParams& model, const config::SiteConfig& theta_cfg,
                       const std::vector<plant::Exogenous>& exo, const ConstraintSet& cs,
                       const OptimizeConfig& oc = {});

// Full-loop optimizer: per-period projected gradient over all three actions
// minimizing the surrogate's predicted total cooling power plus the
// constraint penalty, with seeded random restarts; best restart kept.
Policy multi_pi_optimize(const surrogate::MlpParams& model, const config::SiteConfig& theta_cfg,
                         const std::vector<plant::Exogenous>& exo, const ConstraintSet& cs,
                         const OptimizeConfig& oc = {});

struct EvalReport {
  std::string policy_label;
  double mean_cooling_power_kw = 0.0;
  double mean_fans_kw = 0.0;
  double mean_pumps_kw = 0.0;
  double mean_chillers_kw = 0.0;
  double mean_towers_kw = 0.0;
  int sla_violation_count = 0;          // violation entries summed over periods
  double sla_violation_fraction = 0.0;  // share of periods with any violation
  double normalized_power = 1.0;        // relative to the fixed baseline, 1.0 for it
};

// Full-plant rollout of the policy over the evaluation week. Power is
// normalized by the fixed baseline's mean on the same week, so the baseline
// itself reports exactly 1.0. The period-sampled rollout is returned through
// periods_out when given (feeds the per-period CSV).
EvalReport evaluate(const Policy& policy, const config::SiteConfig& cfg,
                    const std::vector<plant::Exogenous>& exo_week, uint64_t seed,
                    plant::Trace* periods_out = nullptr);

std::string eval_report_json(const EvalReport& r);

// `period,sup_set_c,fan_ratio,chws_set_c,power_kw,violations` rows.
std::string eval_periods_csv(const plant::Trace& periods, const config::SiteConfig& cfg);

}  // namespace tropictwin::brain
