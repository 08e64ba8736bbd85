#pragma once

// Recovers unknown plant coefficients from an operational trace by replaying
// the trace's actions through the simulator and descending the replay error.

#include <string>
#include <utility>
#include <vector>

#include "tropictwin/config.hpp"
#include "tropictwin/plant.hpp"

namespace tropictwin::calib {

struct CalibrationProblem {
  plant::Trace trace;
  std::vector<std::string> free_params;           // PhysicsParams field names
  std::vector<std::pair<double, double>> bounds;  // parallel to free_params
  std::vector<double> init;                       // parallel to free_params
  int max_iters = 300;
  double tol = 1e-12;  // best-loss improvement per 20-iteration window
};

inline const std::vector<std::string> kDefaultFreeParams = {
    "fan_cubic_coeff", "pump_cubic_coeff", "coil_ua", "chiller_cop_a0", "zone_heat_capacity"};

// Problem with init taken from cfg.physics and bounds [init/4, init*4].
CalibrationProblem make_problem(const plant::Trace& trace,
                                const std::vector<std::string>& free_params,
                                const config::SiteConfig& cfg);

// Throws std::invalid_argument naming the offending entry (unknown parameter
// name, empty free set, bounds or init out of order).
void validate_problem(const CalibrationProblem& p);

// Mean squared error of replaying the trace's actions and exogenous inputs
// under theta, against the recorded return temp/RH, supply temp, IT inlet
// temp, chw flow, and the five power meters, each scaled by its recorded
// range. Coil-infeasibility flag mismatches add a fixed finite penalty. The
// replay starts from the trace's stored initial state when present, else from
// the steady state of the first record's action under theta.
double simulation_loss(const config::PhysicsParams& theta, const plant::Trace& trace,
                       const config::SiteConfig& cfg);

struct ParamResult {
  std::string name;
  double init = 0.0;
  double recovered = 0.0;
  double sensitivity = 0.0;  // conditional sensitivity at init, see below
  bool identifiable = true;  // false when the descent gradient stayed < 1e-12
};

struct CalibrationResult {
  config::PhysicsParams theta_hat;
  std::vector<double> history;  // loss at each iterate
  std::vector<ParamResult> params;
  int iterations = 0;
  double final_loss = 0.0;
};

// Adam descent on simulation_loss over the free parameters. Gradients are
// central finite differences with relative step 1e-4, evaluation points and
// iterates projected into the bounds; stops at max_iters or when the best
// loss improves by less than tol over 20 iterations; returns the best-seen
// parameters. Parameters whose gradient never leaves [-1e-12, 1e-12] are
// reported as non-identifiable instead of failing.
CalibrationResult calibrate(const CalibrationProblem& problem, const config::SiteConfig& cfg);

struct SensitivityRow {
  std::string name;
  double value = 0.0;        // parameter value at the problem init
  double sensitivity = 0.0;  // conditional sensitivity of the replay residuals
  bool flagged = false;      // near zero against the strongest free parameter
};

// Finite-difference Jacobian of the replay residuals with respect to relative
// parameter changes at init, reduced to per-parameter conditional
// sensitivities 1/sqrt([(J^T J)^-1]_ii). The conditional form collapses for
// directions the trace cannot separate, e.g. the chiller COP slope against
// its intercept when the chilled-water setpoint never moves.
std::vector<SensitivityRow> identifiability_report(const CalibrationProblem& problem,
                                                   const config::SiteConfig& cfg);

// `param,init,recovered,truth_if_known,rel_err,sensitivity` rows. Truth
// columns are filled when the generating parameters are known (synthetic
// studies) and left empty otherwise.
std::string calibration_csv(const CalibrationResult& result, const config::PhysicsParams* truth);

void write_calibration_csv(const CalibrationResult& result, const config::PhysicsParams* truth,
                           const std::string& path);

}  // namespace tropictwin::calib
