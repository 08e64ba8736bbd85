#include "tropictwin/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tropictwin/autodiff.hpp"
#include "tropictwin/psychro.hpp"
#include "tropictwin/util.hpp"

namespace tropictwin::surrogate {

namespace {

constexpr double kCpWater = 4.186;      // kJ/(kg K), matches the plant coil
constexpr double kMinScale = 1e-9;      // z-score guard for constant columns
constexpr double kResidualScaleFloor = 1e-6;
constexpr double kGradClipNorm = 5.0;
constexpr double kMaxSettlingMove = 0.05;  // box-normalized action step, see dataset_from_trace

// RNG stream ids so optional stages never shift each other's draws.
constexpr uint64_t kStreamInit = 1, kStreamShuffle = 2, kStreamColloc = 3, kStreamValSplit = 4,
                   kStreamProbe = 5;

struct LayerOffsets {
  std::vector<std::size_t> w_off, b_off;
  std::size_t total = 0;
};

LayerOffsets layer_offsets(const std::vector<int>& layers) {
  if (layers.size() < 2) throw std::invalid_argument("mlp needs at least two layers");
  LayerOffsets off;
  std::size_t pos = 0;
  for (std::size_t l = 1; l < layers.size(); ++l) {
    if (layers[l] <= 0 || layers[l - 1] <= 0) throw std::invalid_argument("mlp layer width must be positive");
    off.w_off.push_back(pos);
    pos += static_cast<std::size_t>(layers[l]) * layers[l - 1];
    off.b_off.push_back(pos);
    pos += layers[l];
  }
  off.total = pos;
  return off;
}

// Activations per layer; acts[0] is the normalized input.
void forward_core(const std::vector<int>& layers, const LayerOffsets& off, const double* w,
                  const double* xn, std::vector<std::vector<double>>& acts) {
  const std::size_t nl = layers.size();
  acts.resize(nl);
  acts[0].assign(xn, xn + layers[0]);
  for (std::size_t l = 1; l < nl; ++l) {
    const int in = layers[l - 1], out = layers[l];
    acts[l].assign(out, 0.0);
    const double* W = w + off.w_off[l - 1];
    const double* b = w + off.b_off[l - 1];
    const double* a = acts[l - 1].data();
    double* z = acts[l].data();
    for (int o = 0; o < out; ++o) {
      double s = b[o];
      const double* row = W + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) s += row[i] * a[i];
      z[o] = (l + 1 < nl) ? std::tanh(s) : s;  // linear output layer
    }
  }
}

// Accumulates dL/dw into gw given dL/dy at the (linear) output.
void backward_core(const std::vector<int>& layers, const LayerOffsets& off, const double* w,
                   const std::vector<std::vector<double>>& acts, const double* delta_out,
                   double* gw) {
  const std::size_t nl = layers.size();
  std::vector<double> delta(delta_out, delta_out + layers[nl - 1]);
  std::vector<double> prev;
  for (std::size_t l = nl - 1; l >= 1; --l) {
    const int in = layers[l - 1], out = layers[l];
    const double* a = acts[l - 1].data();
    double* gW = gw + off.w_off[l - 1];
    double* gb = gw + off.b_off[l - 1];
    for (int o = 0; o < out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      double* row = gW + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) row[i] += d * a[i];
    }
    if (l == 1) break;
    prev.assign(in, 0.0);
    const double* W = w + off.w_off[l - 1];
    for (int o = 0; o < out; ++o) {
      const double d = delta[o];
      const double* row = W + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) prev[i] += row[i] * d;
    }
    const double* ah = acts[l - 1].data();
    for (int i = 0; i < in; ++i) prev[i] *= (1.0 - ah[i] * ah[i]);  // tanh'
    delta.swap(prev);
  }
}

Normalizer fit_normalizer(const std::vector<std::array<double, kNumInputs>>& rows) {
  Normalizer n;
  n.mean.assign(kNumInputs, 0.0);
  n.scale.assign(kNumInputs, 1.0);
  if (rows.empty()) return n;
  for (const auto& r : rows)
    for (int j = 0; j < kNumInputs; ++j) n.mean[j] += r[j];
  for (double& m : n.mean) m /= static_cast<double>(rows.size());
  for (int j = 0; j < kNumInputs; ++j) {
    double ss = 0.0;
    for (const auto& r : rows) ss += (r[j] - n.mean[j]) * (r[j] - n.mean[j]);
    n.scale[j] = std::max(std::sqrt(ss / static_cast<double>(rows.size())), kMinScale);
  }
  return n;
}

Normalizer fit_normalizer_t(const std::vector<std::array<double, kNumTargets>>& rows) {
  Normalizer n;
  n.mean.assign(kNumTargets, 0.0);
  n.scale.assign(kNumTargets, 1.0);
  if (rows.empty()) return n;
  for (const auto& r : rows)
    for (int j = 0; j < kNumTargets; ++j) n.mean[j] += r[j];
  for (double& m : n.mean) m /= static_cast<double>(rows.size());
  for (int j = 0; j < kNumTargets; ++j) {
    double ss = 0.0;
    for (const auto& r : rows) ss += (r[j] - n.mean[j]) * (r[j] - n.mean[j]);
    n.scale[j] = std::max(std::sqrt(ss / static_cast<double>(rows.size())), kMinScale);
  }
  return n;
}

// Z-score stats from the training rows, with scales floored at a fraction of
// each input's a-priori range. An operational trace can hold a setpoint
// constant; without the floor, collocation points elsewhere in the box would
// normalize to astronomical values.
Normalizer input_normalizer(const std::vector<std::array<double, kNumInputs>>& rows) {
  static const double kWidths[kNumInputs] = {
      1.0, plant::kWetBulbMaxC - plant::kWetBulbMinC, plant::kSupplyMaxC - plant::kSupplyMinC,
      plant::kFanMax - plant::kFanMin, plant::kChwsMaxC - plant::kChwsMinC};
  Normalizer n = fit_normalizer(rows);
  for (int j = 0; j < kNumInputs; ++j) n.scale[j] = std::max(n.scale[j], 0.25 * kWidths[j]);
  return n;
}

double magnus_raw(double t_c) {
  return psychro::kMagnusC0 * std::exp(psychro::kMagnusC1 * t_c / (t_c + psychro::kMagnusC2));
}

// Host-side replica of the graph's predicted air-side duty; only used to pick
// the discrete chiller stage count, so clamping for safety is harmless.
int staging_from_prediction(const std::array<double, kNumInputs>& x,
                            const std::array<double, kNumTargets>& y,
                            const config::SiteConfig& cfg) {
  const double fan = x[3];
  const double airflow = cfg.n_crah * cfg.crah_rated_airflow * fan;
  const double t_ret = std::clamp(y[0], -100.0, 120.0);
  const double rh = std::clamp(y[1], 0.0, 100.0);
  const double pv = std::min(rh / 100.0 * magnus_raw(t_ret), 90.0);
  const double w_ret = 0.622 * pv / (cfg.ambient_pressure - pv);
  const double psat_coil = magnus_raw(x[4]);
  const double w_coil = 0.622 * psat_coil / (cfg.ambient_pressure - psat_coil);
  const double w_sup = std::min(w_ret, w_coil);
  const double h_ret = psychro::moist_air_enthalpy(t_ret, w_ret);
  const double h_sup = psychro::moist_air_enthalpy(x[2], w_sup);
  const double q_air = airflow * (h_ret - h_sup);
  if (!(q_air > 0.0)) return 1;
  return plant::chillers_required(q_air, cfg);
}

// Reusable tape graph of the three residuals. Leaves: the five raw inputs,
// the four normalized outputs, and the (discrete, host-computed) stage count.
// Guard clamps only bind for wildly off-manifold predictions, so residuals at
// plant-consistent pairs are untouched.
class ResidualGraph {
 public:
  ResidualGraph(const config::SiteConfig& cfg, const Normalizer& out_norm, double power_scale,
                double rh_scale) {
    using autodiff::Var;
    const auto& ph = cfg.physics;
    // Build-time leaf values sit inside the box so every denominator is live.
    const double x0[kNumInputs] = {0.5, 26.0, 20.0, 0.7, 7.0};
    for (int j = 0; j < kNumInputs; ++j) x_[j] = tape_.input(x0[j]);
    for (int j = 0; j < kNumTargets; ++j) yn_[j] = tape_.input(0.0);
    n_act_ = tape_.input(1.0);

    Var util = x_[0], wb = x_[1], sup = x_[2], fan = x_[3], chws = x_[4];
    (void)util;
    Var y_ret = tape_.constant(out_norm.mean[0]) + tape_.constant(out_norm.scale[0]) * yn_[0];
    Var y_rh = tape_.constant(out_norm.mean[1]) + tape_.constant(out_norm.scale[1]) * yn_[1];
    Var y_flow = tape_.constant(out_norm.mean[2]) + tape_.constant(out_norm.scale[2]) * yn_[2];
    Var y_pow = tape_.constant(out_norm.mean[3]) + tape_.constant(out_norm.scale[3]) * yn_[3];

    const double pres = cfg.ambient_pressure;
    auto magnus = [&](Var t) {
      return psychro::kMagnusC0 * exp(psychro::kMagnusC1 * t / (t + psychro::kMagnusC2));
    };

    Var airflow = tape_.constant(cfg.n_crah * cfg.crah_rated_airflow) * fan;
    Var t_ret = vmax(vmin(y_ret, 120.0), -100.0);
    Var rh_b = vmax(vmin(y_rh, 100.0), 0.0);
    Var pv_ret = vmin(rh_b / 100.0 * magnus(t_ret), 90.0);
    Var w_ret = 0.622 * pv_ret / (pres - pv_ret);
    Var psat_coil = magnus(chws);
    Var w_coil = 0.622 * psat_coil / (pres - psat_coil);
    Var w_sup = vmin(w_ret, w_coil);
    Var h_ret = 1.006 * t_ret + w_ret * (2501.0 + 1.86 * t_ret);
    Var h_sup = 1.006 * sup + w_sup * (2501.0 + 1.86 * sup);
    Var q_air = airflow * (h_ret - h_sup);

    // Counterflow effectiveness duty at the predicted water flow.
    Var flow = vmax(y_flow, 1e-3);
    Var c_air = airflow * (1.006 + 1.86 * w_ret);
    Var c_w = kCpWater * flow;
    Var c_min = vmin(c_air, c_w);
    Var c_max = vmax(c_air, c_w);
    Var cr = vmin(c_min / c_max, 1.0 - 1e-12);
    Var ntu = ph.coil_ua / c_min;
    Var zz = exp(-ntu * (1.0 - cr));
    Var eff = (1.0 - zz) / (1.0 - cr * zz);
    Var q_del = eff * c_min * (t_ret - chws);
    Var r1 = q_del - q_air;

    // Power decomposition under the staged plant layout.
    Var p_fan = ph.fan_cubic_coeff * fan * fan * fan;
    Var flow_ratio = vmin(flow / (n_act_ * cfg.pump_rated_flow), plant::kPumpOverdrive);
    Var p_pump = n_act_ * ph.pump_cubic_coeff * flow_ratio * flow_ratio * flow_ratio;
    Var reject_cap = n_act_ * (cfg.chiller_capacity * plant::kRejectFactor);
    Var evap = q_del;
    Var cw = wb + ph.tower_approach_ref;
    Var cop = vmin(vmax(ph.chiller_cop_a0 + ph.chiller_cop_a1 * chws - ph.chiller_cop_a2 * cw,
                        plant::kCopMin),
                   plant::kCopMax);
    for (int it = 0; it < plant::kCondenserIters; ++it) {
      Var reject = evap * (1.0 + 1.0 / cop);
      Var ratio = vmin(vmax(reject / reject_cap, 0.0), 1.5);
      cw = wb + ph.tower_approach_ref * pow(ratio, ph.tower_exponent);
      cop = vmin(vmax(ph.chiller_cop_a0 + ph.chiller_cop_a1 * chws - ph.chiller_cop_a2 * cw,
                      plant::kCopMin),
                 plant::kCopMax);
    }
    Var p_chiller = evap / cop;
    Var p_tower =
        n_act_ * (cfg.n_towers_per_loop * cfg.tower_rated_fan_power);
    Var r2 = y_pow - (p_fan + p_pump + p_chiller + p_tower);

    // Condensing moisture balance implies the return humidity ratio.
    Var w_implied = w_coil + ph.moisture_gain / airflow;
    Var pv_implied = w_implied * pres / (0.622 + w_implied);
    Var r3 = y_rh - 100.0 * pv_implied / magnus(t_ret);

    r_norm_[0] = r1 / power_scale;
    r_norm_[1] = r2 / power_scale;
    r_norm_[2] = r3 / rh_scale;
    raw_[0] = r1;
    raw_[1] = r2;
    raw_[2] = r3;
    loss_ = (r_norm_[0] * r_norm_[0] + r_norm_[1] * r_norm_[1] + r_norm_[2] * r_norm_[2]) / 3.0;
  }

  // Returns the mean squared normalized residual at (x, yn, n_act).
  double eval(const std::array<double, kNumInputs>& x, const double* yn, int n_act) {
    for (int j = 0; j < kNumInputs; ++j) tape_.set_input(x_[j], x[j]);
    for (int j = 0; j < kNumTargets; ++j) tape_.set_input(yn_[j], yn[j]);
    tape_.set_input(n_act_, static_cast<double>(n_act));
    tape_.recompute();
    return tape_.value(loss_);
  }

  // d(loss)/d(yn_j) after eval().
  std::array<double, kNumTargets> output_grad() {
    tape_.backward(loss_);
    std::array<double, kNumTargets> g;
    for (int j = 0; j < kNumTargets; ++j) g[j] = tape_.grad(yn_[j]);
    return g;
  }

  Residuals residuals() const {
    Residuals r;
    for (int k = 0; k < 3; ++k) {
      r.raw[k] = tape_.value(raw_[k]);
      r.normalized[k] = tape_.value(r_norm_[k]);
    }
    return r;
  }

 private:
  autodiff::Tape tape_;
  autodiff::Var x_[kNumInputs]{}, yn_[kNumTargets]{}, n_act_{};
  autodiff::Var raw_[3]{}, r_norm_[3]{}, loss_{};
};

double residual_power_scale(const Normalizer& out_norm) {
  return std::max(out_norm.scale[3], kResidualScaleFloor);
}
double residual_rh_scale(const Normalizer& out_norm) {
  return std::max(out_norm.scale[1], kResidualScaleFloor);
}

std::array<double, kNumInputs> sample_collocation(Pcg32& rng) {
  std::array<double, kNumInputs> x;
  x[0] = rng.uniform(0.0, 1.0);
  x[1] = rng.uniform(plant::kWetBulbMinC, plant::kWetBulbMaxC);
  x[2] = rng.uniform(plant::kSupplyMinC, plant::kSupplyMaxC);
  x[3] = rng.uniform(plant::kFanMin, plant::kFanMax);
  x[4] = rng.uniform(plant::kChwsMinC, plant::kChwsMaxC);
  return x;
}

TrainResult train_impl(const Dataset& train, const config::SiteConfig* theta_cfg,
                       const TrainConfig& tc) {
  if (train.size() == 0) throw std::invalid_argument("training dataset is empty");
  if (train.inputs.size() != train.targets.size())
    throw std::invalid_argument("dataset inputs/targets size mismatch");
  if (tc.lambda_p > 0.0 && theta_cfg == nullptr)
    throw std::invalid_argument("physics-informed training needs calibrated parameters");
  if (tc.epochs <= 0 || tc.batch_size <= 0) throw std::invalid_argument("bad training config");

  const std::size_t n = train.size();
  MlpParams p = init_mlp(tc.layers, tc.seed);
  if (p.layers.front() != kNumInputs || p.layers.back() != kNumTargets)
    throw std::invalid_argument("twin layers must map 5 inputs to 4 targets");
  p.in_norm = input_normalizer(train.inputs);
  p.out_norm = fit_normalizer_t(train.targets);
  const LayerOffsets off = layer_offsets(p.layers);

  // Normalized copies of the rows.
  std::vector<std::array<double, kNumInputs>> xn(n);
  std::vector<std::array<double, kNumTargets>> tn(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < kNumInputs; ++j) xn[i][j] = p.in_norm.normalize(j, train.inputs[i][j]);
    for (int j = 0; j < kNumTargets; ++j) tn[i][j] = p.out_norm.normalize(j, train.targets[i][j]);
  }

  // Seeded validation split.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  {
    Pcg32 vrng(tc.seed, kStreamValSplit);
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(vrng.uniform() * static_cast<double>(i));
      if (j >= i) j = i - 1;
      std::swap(order[i - 1], order[j]);
    }
  }
  std::size_t n_val = static_cast<std::size_t>(std::floor(tc.val_fraction * static_cast<double>(n)));
  if (n_val >= n) n_val = n - 1;
  const std::size_t n_fit = n - n_val;
  std::vector<std::size_t> fit_idx(order.begin(), order.begin() + n_fit);
  std::vector<std::size_t> val_idx(order.begin() + n_fit, order.end());

  const bool physics = tc.lambda_p > 0.0;
  const double power_scale = residual_power_scale(p.out_norm);
  const double rh_scale = residual_rh_scale(p.out_norm);
  std::unique_ptr<ResidualGraph> graph;
  if (physics)
    graph = std::make_unique<ResidualGraph>(*theta_cfg, p.out_norm, power_scale, rh_scale);

  Pcg32 shuffle_rng(tc.seed, kStreamShuffle);
  Pcg32 colloc_rng(tc.seed, kStreamColloc);

  std::vector<double> grad(off.total, 0.0);
  autodiff::AdamState adam;
  autodiff::AdamConfig adam_cfg;
  adam_cfg.lr = tc.lr;
  std::vector<std::vector<double>> acts, acts_c;
  std::vector<std::array<double, kNumInputs>> colloc(physics ? tc.n_collocation : 0);

  TrainResult res;
  res.params = p;
  double best_val = std::numeric_limits<double>::infinity();
  res.best_epoch = -1;

  auto val_data_loss = [&](const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i : idx) {
      forward_core(p.layers, off, p.weights.data(), xn[i].data(), acts);
      const auto& out = acts.back();
      for (int j = 0; j < kNumTargets; ++j) {
        const double e = out[j] - tn[i][j];
        s += e * e;
      }
    }
    return s / (static_cast<double>(idx.size()) * kNumTargets);
  };

  // Physics contribution for one point: forward, residual loss, and the
  // chain of d(loss)/d(yn) back into the weight gradient.
  auto physics_point = [&](const std::array<double, kNumInputs>& x_raw, double chain_scale,
                           bool with_grad) {
    std::array<double, kNumInputs> xp;
    for (int j = 0; j < kNumInputs; ++j) xp[j] = p.in_norm.normalize(j, x_raw[j]);
    forward_core(p.layers, off, p.weights.data(), xp.data(), acts_c);
    const auto& yn_pred = acts_c.back();
    std::array<double, kNumTargets> y_raw;
    for (int j = 0; j < kNumTargets; ++j) y_raw[j] = p.out_norm.denormalize(j, yn_pred[j]);
    const int n_act = staging_from_prediction(x_raw, y_raw, *theta_cfg);
    const double lp = graph->eval(x_raw, yn_pred.data(), n_act);
    if (with_grad && chain_scale != 0.0) {
      auto gy = graph->output_grad();
      std::array<double, kNumTargets> delta;
      for (int j = 0; j < kNumTargets; ++j) delta[j] = chain_scale * gy[j];
      backward_core(p.layers, off, p.weights.data(), acts_c, delta.data(), grad.data());
    }
    return lp;
  };

  // Step decay settles the collocation-resampling noise late in training so
  // both the data fit and the residual enforcement can tighten.
  auto lr_at = [&tc](int epoch) {
    const double frac = (epoch + 1.0) / tc.epochs;
    return tc.lr * (frac <= 0.5 ? 1.0 : frac <= 0.8 ? 0.3 : 0.1);
  };

  std::vector<std::size_t> epoch_order = fit_idx;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    adam_cfg.lr = lr_at(epoch);
    for (std::size_t i = epoch_order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(shuffle_rng.uniform() * static_cast<double>(i));
      if (j >= i) j = i - 1;
      std::swap(epoch_order[i - 1], epoch_order[j]);
    }
    if (physics)
      for (auto& c : colloc) c = sample_collocation(colloc_rng);

    const std::size_t n_data_batches =
        (epoch_order.size() + tc.batch_size - 1) / tc.batch_size;
    std::size_t colloc_cursor = 0;
    double epoch_accum = 0.0;
    int n_batches = 0;
    for (std::size_t start = 0; start < epoch_order.size(); start += tc.batch_size) {
      const std::size_t stop = std::min(epoch_order.size(), start + tc.batch_size);
      const std::size_t bsz = stop - start;
      std::fill(grad.begin(), grad.end(), 0.0);

      double mse = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = epoch_order[k];
        forward_core(p.layers, off, p.weights.data(), xn[i].data(), acts);
        const auto& out = acts.back();
        std::array<double, kNumTargets> delta;
        for (int j = 0; j < kNumTargets; ++j) {
          const double e = out[j] - tn[i][j];
          mse += e * e;
          delta[j] = tc.lambda_d * 2.0 * e / (static_cast<double>(bsz) * kNumTargets);
        }
        backward_core(p.layers, off, p.weights.data(), acts, delta.data(), grad.data());
      }
      mse /= static_cast<double>(bsz) * kNumTargets;

      double phys_mean = 0.0;
      if (physics) {
        // Collocation points are consumed in slices across the epoch's
        // batches so the per-step cost stays proportional to the batch.
        const std::size_t per_batch =
            (colloc.size() + n_data_batches - 1) / std::max<std::size_t>(n_data_batches, 1);
        const std::size_t c_lo = std::min(colloc.size(), colloc_cursor);
        const std::size_t c_hi = std::min(colloc.size(), c_lo + per_batch);
        colloc_cursor = c_hi;
        const std::size_t n_points = bsz + (c_hi - c_lo);
        const double chain = tc.lambda_p / static_cast<double>(n_points);
        for (std::size_t k = start; k < stop; ++k)
          phys_mean += physics_point(train.inputs[epoch_order[k]], chain, true);
        for (std::size_t c = c_lo; c < c_hi; ++c) phys_mean += physics_point(colloc[c], chain, true);
        phys_mean /= static_cast<double>(n_points);
      }

      // Global-norm clip: the condenser unroll inside the physics term can
      // spike gradients near its clamp corners.
      double g2 = 0.0;
      for (double g : grad) g2 += g * g;
      if (g2 > kGradClipNorm * kGradClipNorm) {
        const double s = kGradClipNorm / std::sqrt(g2);
        for (double& g : grad) g *= s;
      }

      autodiff::adam_step(p.weights, grad, adam, adam_cfg);
      epoch_accum += tc.lambda_d * mse + tc.lambda_p * phys_mean;
      ++n_batches;
    }
    res.epoch_loss.push_back(epoch_accum / std::max(n_batches, 1));

    const double vl = val_data_loss(val_idx.empty() ? fit_idx : val_idx);
    res.val_loss.push_back(vl);
    if (vl < best_val) {
      best_val = vl;
      res.best_epoch = epoch;
      res.params.weights = p.weights;
    }
  }
  res.params.in_norm = p.in_norm;
  res.params.out_norm = p.out_norm;
  res.params.layers = p.layers;

  // Residual health of the returned weights on a fixed seeded probe set.
  if (physics) {
    Pcg32 probe_rng(tc.seed, kStreamProbe);
    ResidualGraph probe(*theta_cfg, p.out_norm, power_scale, rh_scale);
    double acc = 0.0;
    const int n_probe = 256;
    for (int i = 0; i < n_probe; ++i) {
      const auto x = sample_collocation(probe_rng);
      std::array<double, kNumInputs> xp;
      for (int j = 0; j < kNumInputs; ++j) xp[j] = res.params.in_norm.normalize(j, x[j]);
      forward_core(res.params.layers, off, res.params.weights.data(), xp.data(), acts);
      std::array<double, kNumTargets> y_raw;
      for (int j = 0; j < kNumTargets; ++j)
        y_raw[j] = res.params.out_norm.denormalize(j, acts.back()[j]);
      acc += probe.eval(x, acts.back().data(), staging_from_prediction(x, y_raw, *theta_cfg));
    }
    res.physics_rms = std::sqrt(acc / n_probe);
    res.physics_within_budget = res.physics_rms <= tc.physics_budget_eps;
  }
  return res;
}

}  // namespace

Dataset dataset_from_trace(const plant::Trace& period_trace) {
  Dataset d;
  d.origin = "trace";
  d.inputs.reserve(period_trace.records.size());
  d.targets.reserve(period_trace.records.size());
  const plant::ControlAction* prev = nullptr;
  for (const auto& r : period_trace.records) {
    // A period-end row is only a function of its own action/exogenous pair
    // once the zone has settled, so periods recorded right after a large
    // setpoint move are dropped (identification sweeps dwell several periods
    // per point; routine jitter stays far below the threshold). Feasibility
    // flagged periods are dropped too: the steady-coil balance the composite
    // loss enforces does not hold while the coil saturates.
    bool settling = false;
    if (prev) {
      double move = std::max(
          {std::abs(r.action.supply_setpoint_c - prev->supply_setpoint_c) /
               (plant::kSupplyMaxC - plant::kSupplyMinC),
           std::abs(r.action.fan_ratio - prev->fan_ratio) / (plant::kFanMax - plant::kFanMin),
           std::abs(r.action.chws_setpoint_c - prev->chws_setpoint_c) /
               (plant::kChwsMaxC - plant::kChwsMinC)});
      settling = move > kMaxSettlingMove;
    }
    prev = &r.action;
    if (settling || r.state.coil_infeasible) continue;
    std::array<double, kNumInputs> x = {r.exo.it_utilization, r.exo.ambient_wet_bulb_c,
                                        r.action.supply_setpoint_c, r.action.fan_ratio,
                                        r.action.chws_setpoint_c};
    const double rh = psychro::relative_humidity(r.state.return_air.temp_c, r.state.return_air.humidity_ratio,
                                                 psychro::kStandardPressureKpa);
    std::array<double, kNumTargets> y = {r.state.return_air.temp_c, rh, r.state.chw_flow_kgs,
                                         r.state.cooling_power_kw()};
    for (double v : x)
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite trace input");
    for (double v : y)
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite trace target");
    d.inputs.push_back(x);
    d.targets.push_back(y);
  }
  return d;
}

void split_rows(const Dataset& d, std::size_t head_rows, Dataset* head, Dataset* tail) {
  if (head_rows > d.size()) throw std::invalid_argument("split beyond dataset size");
  head->inputs.assign(d.inputs.begin(), d.inputs.begin() + head_rows);
  head->targets.assign(d.targets.begin(), d.targets.begin() + head_rows);
  head->origin = d.origin;
  tail->inputs.assign(d.inputs.begin() + head_rows, d.inputs.end());
  tail->targets.assign(d.targets.begin() + head_rows, d.targets.end());
  tail->origin = d.origin;
}

std::size_t weight_count(const std::vector<int>& layers) { return layer_offsets(layers).total; }

MlpParams init_mlp(const std::vector<int>& layers, uint64_t seed) {
  MlpParams p;
  p.layers = layers;
  const LayerOffsets off = layer_offsets(layers);
  p.weights.assign(off.total, 0.0);
  Pcg32 rng(seed, kStreamInit);
  for (std::size_t l = 1; l < layers.size(); ++l) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(layers[l - 1]));
    double* W = p.weights.data() + off.w_off[l - 1];
    const std::size_t cnt = static_cast<std::size_t>(layers[l]) * layers[l - 1];
    for (std::size_t k = 0; k < cnt; ++k) W[k] = sd * rng.gaussian();
    // biases stay zero
  }
  p.in_norm.mean.assign(layers.front(), 0.0);
  p.in_norm.scale.assign(layers.front(), 1.0);
  p.out_norm.mean.assign(layers.back(), 0.0);
  p.out_norm.scale.assign(layers.back(), 1.0);
  return p;
}

std::vector<double> mlp_forward_normalized(const MlpParams& p, const std::vector<double>& xn) {
  if (static_cast<int>(xn.size()) != p.layers.front())
    throw std::invalid_argument("input width mismatch");
  const LayerOffsets off = layer_offsets(p.layers);
  if (p.weights.size() != off.total) throw std::invalid_argument("weight vector size mismatch");
  std::vector<std::vector<double>> acts;
  forward_core(p.layers, off, p.weights.data(), xn.data(), acts);
  return acts.back();
}

std::array<double, kNumTargets> mlp_forward(const MlpParams& p,
                                            const std::array<double, kNumInputs>& x) {
  if (p.layers.front() != kNumInputs || p.layers.back() != kNumTargets)
    throw std::invalid_argument("twin layers must map 5 inputs to 4 targets");
  std::vector<double> xn(kNumInputs);
  for (int j = 0; j < kNumInputs; ++j) xn[j] = p.in_norm.normalize(j, x[j]);
  const auto out = mlp_forward_normalized(p, xn);
  std::array<double, kNumTargets> y;
  for (int j = 0; j < kNumTargets; ++j) y[j] = p.out_norm.denormalize(j, out[j]);
  return y;
}

double data_loss(const MlpParams& p, const Dataset& d) {
  if (d.size() == 0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto y = mlp_forward(p, d.inputs[i]);
    for (int j = 0; j < kNumTargets; ++j) {
      const double e = (y[j] - d.targets[i][j]) / p.out_norm.scale[j];
      s += e * e;
    }
  }
  return s / (static_cast<double>(d.size()) * kNumTargets);
}

Residuals physics_residual(const std::array<double, kNumInputs>& x,
                           const std::array<double, kNumTargets>& y,
                           const config::SiteConfig& cfg, double power_scale, double rh_scale) {
  if (!(power_scale > 0.0) || !(rh_scale > 0.0))
    throw std::invalid_argument("residual scales must be positive");
  Normalizer identity;
  identity.mean.assign(kNumTargets, 0.0);
  identity.scale.assign(kNumTargets, 1.0);
  ResidualGraph g(cfg, identity, power_scale, rh_scale);
  g.eval(x, y.data(), staging_from_prediction(x, y, cfg));
  return g.residuals();
}

Residuals physics_residual(const MlpParams& p, const std::array<double, kNumInputs>& x,
                           const config::SiteConfig& cfg) {
  const auto y = mlp_forward(p, x);
  return physics_residual(x, y, cfg, residual_power_scale(p.out_norm),
                          residual_rh_scale(p.out_norm));
}

TrainResult train_data_driven(const Dataset& train, const TrainConfig& tc) {
  TrainConfig c = tc;
  c.lambda_p = 0.0;
  return train_impl(train, nullptr, c);
}

TrainResult train_piml(const Dataset& train, const config::SiteConfig& theta_cfg,
                       const TrainConfig& tc) {
  if (tc.lambda_p > 0.0) return train_impl(train, &theta_cfg, tc);
  return train_impl(train, nullptr, tc);
}

std::vector<TargetError> evaluate_errors(const MlpParams& p, const Dataset& test) {
  static const char* kNames[kNumTargets] = {"ret_temp_c", "ret_rh_pct", "chw_flow_kgs",
                                            "cooling_power_kw"};
  if (test.size() == 0) throw std::invalid_argument("empty evaluation dataset");
  std::array<double, kNumTargets> lo, hi, mean_abs{}, max_abs{};
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (const auto& t : test.targets)
    for (int j = 0; j < kNumTargets; ++j) {
      lo[j] = std::min(lo[j], t[j]);
      hi[j] = std::max(hi[j], t[j]);
    }
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto y = mlp_forward(p, test.inputs[i]);
    for (int j = 0; j < kNumTargets; ++j) {
      const double e = std::abs(y[j] - test.targets[i][j]);
      mean_abs[j] += e;
      max_abs[j] = std::max(max_abs[j], e);
    }
  }
  std::vector<TargetError> out(kNumTargets);
  for (int j = 0; j < kNumTargets; ++j) {
    const double range = std::max(hi[j] - lo[j], 1e-9);
    out[j].name = kNames[j];
    out[j].mean_rel_err = mean_abs[j] / static_cast<double>(test.size()) / range;
    out[j].max_rel_err = max_abs[j] / range;
  }
  return out;
}

std::string error_report_csv(const std::vector<TargetError>& errs) {
  std::string s = "target,mean_rel_err,max_rel_err\n";
  for (const auto& e : errs) {
    s += e.name;
    s += ',';
    s += format_sig(e.mean_rel_err, 6);
    s += ',';
    s += format_sig(e.max_rel_err, 6);
    s += '\n';
  }
  return s;
}

std::string serialize_model(const MlpParams& p) {
  std::ostringstream os;
  os << "tropictwin-mlp v1\n";
  os << "layers";
  for (int l : p.layers) os << ' ' << l;
  os << '\n';
  auto emit = [&os](const char* tag, const std::vector<double>& v) {
    os << tag;
    for (double x : v) os << ' ' << format_sig(x, 9);
    os << '\n';
  };
  emit("in_mean", p.in_norm.mean);
  emit("in_scale", p.in_norm.scale);
  emit("out_mean", p.out_norm.mean);
  emit("out_scale", p.out_norm.scale);
  os << "weights " << p.weights.size() << '\n';
  for (std::size_t i = 0; i < p.weights.size(); ++i)
    os << format_sig(p.weights[i], 9) << ((i + 1) % 8 == 0 ? '\n' : ' ');
  if (p.weights.size() % 8 != 0) os << '\n';
  return os.str();
}

MlpParams deserialize_model(const std::string& text) {
  std::istringstream is(text);
  std::string tok, ver;
  is >> tok >> ver;
  if (tok != "tropictwin-mlp" || ver != "v1")
    throw std::runtime_error("unrecognized model header");
  MlpParams p;
  is >> tok;
  if (tok != "layers") throw std::runtime_error("expected layers line");
  {
    std::string rest;
    std::getline(is, rest);
    std::istringstream ls(rest);
    int w;
    p.layers.clear();
    while (ls >> w) p.layers.push_back(w);
  }
  const LayerOffsets off = layer_offsets(p.layers);
  auto read_vec = [&is](const char* tag, std::vector<double>& v, std::size_t want) {
    std::string t;
    is >> t;
    if (t != tag) throw std::runtime_error(std::string("expected ") + tag);
    v.resize(want);
    for (auto& x : v)
      if (!(is >> x)) throw std::runtime_error(std::string("short read in ") + tag);
  };
  read_vec("in_mean", p.in_norm.mean, p.layers.front());
  read_vec("in_scale", p.in_norm.scale, p.layers.front());
  read_vec("out_mean", p.out_norm.mean, p.layers.back());
  read_vec("out_scale", p.out_norm.scale, p.layers.back());
  std::size_t count = 0;
  is >> tok >> count;
  if (tok != "weights") throw std::runtime_error("expected weights line");
  if (count != off.total) throw std::runtime_error("weight count does not match layers");
  p.weights.resize(count);
  for (auto& w : p.weights)
    if (!(is >> w)) throw std::runtime_error("short read in weights");
  for (double s : p.in_norm.scale)
    if (!(s > 0.0)) throw std::runtime_error("non-positive input scale");
  for (double s : p.out_norm.scale)
    if (!(s > 0.0)) throw std::runtime_error("non-positive output scale");
  return p;
}

void save_model(const MlpParams& p, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model file for writing: " + path);
  f << serialize_model(p);
  if (!f.good()) throw std::runtime_error("failed writing model file: " + path);
}

MlpParams load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_model(ss.str());
}

}  // namespace tropictwin::surrogate
