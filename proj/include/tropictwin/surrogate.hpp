#pragma once

// MLP twin of the plant's period map (util, wet bulb, supply setpoint, fan
// ratio, chws setpoint) -> (return temp, return RH, chw flow, cooling power),
// trained either on data alone or with physics residuals at labeled plus
// Monte Carlo collocation points.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tropictwin/config.hpp"
#include "tropictwin/plant.hpp"

namespace tropictwin::surrogate {

inline constexpr int kNumInputs = 5;
inline constexpr int kNumTargets = 4;
inline const std::vector<int> kDefaultLayers = {5, 64, 64, 4};

struct Normalizer {
  std::vector<double> mean, scale;  // scale entries are always > 0
  double normalize(int i, double v) const { return (v - mean[i]) / scale[i]; }
  double denormalize(int i, double v) const { return mean[i] + scale[i] * v; }
};

struct Dataset {
  std::vector<std::array<double, kNumInputs>> inputs;
  std::vector<std::array<double, kNumTargets>> targets;
  std::string origin;
  std::size_t size() const { return inputs.size(); }
};

// One row per period: inputs are the period's action/exogenous pair, targets
// the period-end state. Rows that are not quasi-steady functions of their
// input are dropped: periods right after a setpoint move larger than 5 % of
// the box, and coil-infeasibility-flagged periods (the steady-coil physics
// enforced in training does not hold for either). Throws on non-finite
// values.
Dataset dataset_from_trace(const plant::Trace& period_trace);

// Row split at a period boundary (first `head_rows` rows vs the rest).
void split_rows(const Dataset& d, std::size_t head_rows, Dataset* head, Dataset* tail);

struct MlpParams {
  std::vector<int> layers = kDefaultLayers;
  std::vector<double> weights;  // per layer: W (out x in, row-major) then bias
  Normalizer in_norm, out_norm;
};

std::size_t weight_count(const std::vector<int>& layers);

// Seeded Gaussian fan-in init; normalizers start as identity.
MlpParams init_mlp(const std::vector<int>& layers, uint64_t seed);

// Forward map in physical units (inputs normalized, outputs denormalized).
std::array<double, kNumTargets> mlp_forward(const MlpParams& p,
                                            const std::array<double, kNumInputs>& x);

// Forward map in normalized space (general layer widths).
std::vector<double> mlp_forward_normalized(const MlpParams& p, const std::vector<double>& xn);

// Mean squared error over the batch in normalized target space.
double data_loss(const MlpParams& p, const Dataset& d);

struct Residuals {
  std::array<double, 3> raw;         // kW, kW, %RH
  std::array<double, 3> normalized;  // raw / target scale (power, power, RH)
};

// Steady-state physics residuals evaluated at a prediction vector y for input
// point x under calibrated parameters: (1) water-side delivered duty at the
// predicted flow vs air-side duty at the predicted return state, (2) predicted
// cooling power vs the staged fan/pump/chiller/tower decomposition, (3)
// predicted return RH vs the RH implied by the condensing moisture balance.
Residuals physics_residual(const std::array<double, kNumInputs>& x,
                           const std::array<double, kNumTargets>& y,
                           const config::SiteConfig& cfg, double power_scale, double rh_scale);

// Same, on the surrogate's own prediction at x.
Residuals physics_residual(const MlpParams& p, const std::array<double, kNumInputs>& x,
                           const config::SiteConfig& cfg);

struct TrainConfig {
  int epochs = 3000;
  int batch_size = 64;
  double lr = 2.5e-3;
  double lambda_d = 1.0;
  double lambda_p = 0.15;
  int n_collocation = 256;          // resampled each epoch
  double val_fraction = 0.10;       // held out from the training rows
  double physics_budget_eps = 0.25; // RMS normalized residual budget
  std::vector<int> layers = kDefaultLayers;
  uint64_t seed = 0;
};

struct TrainResult {
  MlpParams params;                  // best-validation weights
  std::vector<double> epoch_loss;    // composite training loss per epoch
  std::vector<double> val_loss;      // data loss on the held-out split
  int best_epoch = 0;
  double physics_rms = 0.0;          // RMS normalized residual, seeded probe set
  bool physics_within_budget = true;
};

// Data-only training (lambda_p = 0 path).
TrainResult train_data_driven(const Dataset& train, const TrainConfig& tc);

// Composite-loss training; theta_cfg carries the calibrated physics. With
// lambda_p = 0 this reproduces train_data_driven bit for bit on the same seed.
TrainResult train_piml(const Dataset& train, const config::SiteConfig& theta_cfg,
                       const TrainConfig& tc);

struct TargetError {
  std::string name;
  double mean_rel_err;  // mean |pred - actual| / range(actual)
  double max_rel_err;   // max  |pred - actual| / range(actual)
};

std::vector<TargetError> evaluate_errors(const MlpParams& p, const Dataset& test);

// Range-normalized error report; metric definition recorded in the header.
std::string error_report_csv(const std::vector<TargetError>& errs);

// Versioned text format, 9 significant digits.
std::string serialize_model(const MlpParams& p);
MlpParams deserialize_model(const std::string& text);
void save_model(const MlpParams& p, const std::string& path);
MlpParams load_model(const std::string& path);

}  // namespace tropictwin::surrogate
