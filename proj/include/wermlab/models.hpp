#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wermlab/dgp.hpp"

namespace wermlab::models {

// ---------------------------------------------------------------------------
// Hypotheses
// ---------------------------------------------------------------------------

enum class Head { identity, sigmoid, variance };

// One hidden tanh layer, scalar output, head-transformed:
//   identity  -> mean estimate
//   sigmoid   -> probability in (0, 1)
//   variance  -> exp(pre-head) clamped into [var_floor, var_ceil]
// Parameters live in one flat vector laid out as [w1 | b1 | w2 | b2] with w1
// stored row-major by hidden unit.
struct MlpParams {
  int in_dim = 0;
  int hidden = 0;
  Head head = Head::identity;
  double var_floor = 1e-3;
  double var_ceil = 1e3;
  std::vector<double> theta;

  std::size_t size() const { return theta.size(); }
  double* w1() { return theta.data(); }
  const double* w1() const { return theta.data(); }
  double* b1() { return theta.data() + static_cast<std::size_t>(in_dim) * hidden; }
  const double* b1() const { return theta.data() + static_cast<std::size_t>(in_dim) * hidden; }
  double* w2() { return b1() + hidden; }
  const double* w2() const { return b1() + hidden; }
  double& b2() { return theta[theta.size() - 1]; }
  double b2() const { return theta[theta.size() - 1]; }

  void validate() const;
  std::string to_json_text() const;
  static MlpParams from_json_text(const std::string& text);
};

// Glorot-style uniform init: weights ~ Uniform(-s, s) with
// s = sqrt(6 / (fan_in + fan_out)) per layer; biases zero.
MlpParams mlp_init(int in_dim, int hidden, Head head, std::uint64_t seed,
                   double var_floor = 1e-3, double var_ceil = 1e3);

double predict(const MlpParams& h, std::span<const double> x);

// Per-coordinate threshold classifier, prediction sign(x_j - beta_j) on the
// axis carrying x. sign(0) = +1 globally.
struct ThresholdHypothesis {
  std::vector<double> beta;
  void validate() const;
};

double predict(const ThresholdHypothesis& h, std::span<const double> x);

// +1/-1 label from a hypothesis: threshold output directly, sigmoid head via
// the eta >= 1/2 rule, identity/variance heads via sign of the output.
int predict_label(const MlpParams& h, std::span<const double> x);
inline int predict_label(const ThresholdHypothesis& h, std::span<const double> x) {
  return predict(h, x) >= 0.0 ? 1 : -1;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

enum class LossKind {
  squared,
  weighted_squared,
  cross_entropy,
  weighted_cross_entropy,
  nll_frozen_mean,
  zero_one,  // evaluation only
};

bool is_weighted(LossKind kind);
bool is_differentiable(LossKind kind);
const char* loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Mean of per-sample losses (weighted kinds multiply each term by the sample
// weight), with the exact analytic gradient in the flat parameter layout.
//
// Conventions: labels are mapped {-1,+1} -> {0,1} whenever the model carries
// a sigmoid head (cross-entropy and squared alike); nll_frozen_mean requires
// a variance head and per-sample frozen mean values
//   l_i = log v(x_i) + (y_i - m_i)^2 / v(x_i).
// `weights` must be empty for unweighted kinds and of batch length otherwise.
LossGrad loss_and_grad(const MlpParams& h, const dgp::Dataset& batch,
                       LossKind kind, std::span<const double> weights,
                       std::span<const double> frozen_mean = {});

// 0-1 disagreement of label predictions with the batch labels (no gradient).
double zero_one_loss(const MlpParams& h, const dgp::Dataset& batch);

std::vector<double> frozen_predictions(const MlpParams& mean_model,
                                       const dgp::Dataset& batch);

// Rewrites the first layer so that the net evaluated on raw inputs equals the
// original net evaluated on (x - mean) / sd. Stays inside the same class:
//   tanh(w x' + b) = tanh((w / sd) x + (b - w mean / sd)).
void fold_input_affine(MlpParams& p, std::span<const double> mean,
                       std::span<const double> sd);

}  // namespace wermlab::models
