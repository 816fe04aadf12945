#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wermlab/dgp.hpp"
#include "wermlab/models.hpp"

namespace wermlab::pipeline {

enum class Task { regression, classification };
enum class MarginConvention { raw, half };  // |2 eta - 1| vs |eta - 1/2|

// ---------------------------------------------------------------------------
// Weight models
// ---------------------------------------------------------------------------

// Nonnegative per-sample weight function. `scale` multiplies the raw value
// before the floor/cap clamp (used e.g. for balanced precision weights
// C / sigma2*). floor = 0 and cap = inf leave the raw value untouched.
struct WeightModel {
  enum class Kind {
    constant,
    oracle_margin,
    estimated_margin,
    oracle_precision,
    estimated_precision,
  };

  Kind kind = Kind::constant;
  double constant = 1.0;
  MarginConvention convention = MarginConvention::half;
  double scale = 1.0;
  double floor = 0.0;
  double cap = std::numeric_limits<double>::infinity();
  std::optional<dgp::DgpSpec> spec;       // oracle kinds
  std::optional<models::MlpParams> model; // estimated kinds

  static WeightModel make_constant(double c);
  static WeightModel oracle_margin(dgp::DgpSpec spec, MarginConvention conv);
  static WeightModel estimated_margin(models::MlpParams eta_hat);
  static WeightModel oracle_precision(dgp::DgpSpec spec);
  static WeightModel estimated_precision(models::MlpParams sigma2_hat);
  WeightModel& with_bounds(double floor_, double cap_);
  WeightModel& with_scale(double scale_);

  double eval(std::span<const double> x, std::optional<std::int32_t> latent) const;
  std::vector<double> evaluate(const dgp::Dataset& data) const;
  const char* kind_name() const;
};

// ---------------------------------------------------------------------------
// Fit configuration
// ---------------------------------------------------------------------------

struct FitConfig {
  int steps = 5000;
  double step_size = 1e-2;
  int hidden = 0;  // 0 = per-task default (64 regression, 16 classification)
  std::uint64_t seed = 0;
  bool sample_split = true;
  double weight_floor = 0.0;
  double weight_cap = std::numeric_limits<double>::infinity();
  models::LossKind loss_choice_for_eta = models::LossKind::cross_entropy;
  bool joint_variance_fit = false;   // variance by joint (mean, variance) NLL
  bool standardize_inputs = true;    // fit in standardized coordinates

  void validate() const;
  int hidden_for(Task task) const;
  std::string to_json_text() const;
  static FitConfig from_json_text(const std::string& text);
};

// Per-dimension input statistics used by two_step when standardize_inputs is
// on. Fits run on (x - mean) / sd; the affine map is folded back into every
// returned model, so all public models consume raw inputs.
struct InputStats {
  std::vector<double> mean;
  std::vector<double> sd;
};
InputStats input_stats(const dgp::Dataset& data);
dgp::Dataset standardized_copy(const dgp::Dataset& data, const InputStats& stats);

// ---------------------------------------------------------------------------
// Fits
// ---------------------------------------------------------------------------

struct GdResult {
  models::MlpParams params;
  double final_loss = 0.0;
};

// Full-batch gradient descent at fixed step size. Weights are evaluated once
// up front and stay fixed. Throws DivergenceError naming the step on a
// non-finite loss.
GdResult gd_fit(const models::MlpParams& init, const dgp::Dataset& data,
                models::LossKind kind, const WeightModel& weights,
                const FitConfig& cfg,
                const models::MlpParams* frozen_mean = nullptr);

// Joint (mean, variance) negative log-likelihood descent; both parameter
// bundles move each step.
struct JointNllResult {
  models::MlpParams mean;
  models::MlpParams variance;
  double final_loss = 0.0;
};
JointNllResult gd_fit_joint_nll(const models::MlpParams& mean_init,
                                const models::MlpParams& var_init,
                                const dgp::Dataset& data, const FitConfig& cfg);

// ---------------------------------------------------------------------------
// Exact 0-1 threshold ERM
// ---------------------------------------------------------------------------

struct WeightedPoint {
  double x;
  double y;  // +1 / -1
  double w;  // >= 0
};

struct ThresholdFit {
  double beta = 0.0;
  double loss = 0.0;
};

// Minimizes sum_i w_i 1{sign(x_i - beta) != y_i} exactly over the candidate
// set {x_min - 1} u {midpoints of consecutive distinct x} u {x_max + 1},
// breaking ties toward the smallest candidate. O(n log n).
ThresholdFit exact_threshold_erm(std::span<const WeightedPoint> points);

// Coordinate-wise exact ERM on a basis dataset (latent coordinate required);
// coordinates without samples get beta_j = 0.
models::ThresholdHypothesis exact_basis_erm(const dgp::Dataset& data,
                                            const WeightModel& weights);
models::ThresholdHypothesis exact_basis_erm(const dgp::Dataset& data,
                                            std::span<const double> sample_weights);

// ---------------------------------------------------------------------------
// Two-step estimation
// ---------------------------------------------------------------------------

struct TwoStepResult {
  models::MlpParams erm_model;
  WeightModel weight_model;
  models::MlpParams werm_model;
  std::vector<std::uint32_t> stage1_indices;  // weight stage
  std::vector<std::uint32_t> stage2_indices;  // weighted ERM stage
  FitConfig config;
  double erm_final_loss = 0.0;
  double weight_final_loss = 0.0;
  double werm_final_loss = 0.0;

  std::string provenance_json() const;
};

// Regression: squared-loss ERM for the mean, frozen-mean NLL for sigma2_hat,
// then weighted squared-loss ERM with 1/sigma2_hat weights. Classification:
// eta_hat by cfg.loss_choice_for_eta, then weighted cross-entropy with
// |eta_hat - 1/2| weights; the eta_hat model doubles as the ERM classifier.
// With sample_split on, data are split even/odd by position after a seeded
// shuffle: the even half feeds the weight stage, the odd half the wERM stage.
TwoStepResult two_step(const dgp::Dataset& data, Task task, const FitConfig& cfg);

}  // namespace wermlab::pipeline
