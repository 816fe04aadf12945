#include "wermlab/models.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "wermlab/common.hpp"
#include "wermlab/rng.hpp"

namespace wermlab::models {

using nlohmann::json;

// ---------------------------------------------------------------------------
// MlpParams
// ---------------------------------------------------------------------------

void MlpParams::validate() const {
  if (in_dim < 1 || hidden < 1)
    throw std::invalid_argument("mlp: in_dim and hidden must be >= 1");
  const std::size_t want =
      static_cast<std::size_t>(in_dim) * hidden + hidden + hidden + 1;
  if (theta.size() != want) throw std::invalid_argument("mlp: bad parameter count");
  for (double v : theta)
    if (!std::isfinite(v)) throw std::invalid_argument("mlp: non-finite parameter");
  if (head == Head::variance && !(var_floor > 0.0 && var_ceil >= var_floor))
    throw std::invalid_argument("mlp: variance head needs 0 < var_floor <= var_ceil");
}

MlpParams mlp_init(int in_dim, int hidden, Head head, std::uint64_t seed,
                   double var_floor, double var_ceil) {
  if (in_dim < 1 || hidden < 1)
    throw std::invalid_argument("mlp_init: in_dim and hidden must be >= 1");
  MlpParams p;
  p.in_dim = in_dim;
  p.hidden = hidden;
  p.head = head;
  p.var_floor = var_floor;
  p.var_ceil = var_ceil;
  p.theta.assign(static_cast<std::size_t>(in_dim) * hidden + 2 * hidden + 1, 0.0);
  rng::Xoshiro256pp gen(seed);
  const double s1 = std::sqrt(6.0 / (in_dim + hidden));
  const double s2 = std::sqrt(6.0 / (hidden + 1));
  double* w1 = p.w1();
  for (int i = 0; i < in_dim * hidden; ++i) w1[i] = gen.uniform(-s1, s1);
  double* w2 = p.w2();
  for (int i = 0; i < hidden; ++i) w2[i] = gen.uniform(-s2, s2);
  p.validate();
  return p;
}

static const char* head_name(Head h) {
  switch (h) {
    case Head::identity: return "identity";
    case Head::sigmoid: return "sigmoid";
    default: return "variance";
  }
}

static Head head_from_name(const std::string& s) {
  if (s == "identity") return Head::identity;
  if (s == "sigmoid") return Head::sigmoid;
  if (s == "variance") return Head::variance;
  throw ConfigError("unknown head '" + s + "'");
}

std::string MlpParams::to_json_text() const {
  json j;
  j["in_dim"] = in_dim;
  j["hidden"] = hidden;
  j["head"] = head_name(head);
  j["var_floor"] = var_floor;
  j["var_ceil"] = var_ceil;
  j["params"] = theta;
  return j.dump();
}

MlpParams MlpParams::from_json_text(const std::string& text) {
  json j = json::parse(text);
  MlpParams p;
  p.in_dim = j.at("in_dim").get<int>();
  p.hidden = j.at("hidden").get<int>();
  p.head = head_from_name(j.at("head").get<std::string>());
  p.var_floor = j.at("var_floor").get<double>();
  p.var_ceil = j.at("var_ceil").get<double>();
  p.theta = j.at("params").get<std::vector<double>>();
  p.validate();
  return p;
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

static double stable_sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

static double apply_head(const MlpParams& h, double u) {
  switch (h.head) {
    case Head::identity: return u;
    case Head::sigmoid: return stable_sigmoid(u);
    default: {
      const double v = std::exp(u);
      if (v < h.var_floor) return h.var_floor;
      if (v > h.var_ceil) return h.var_ceil;
      return v;
    }
  }
}

static double preactivation(const MlpParams& h, std::span<const double> x,
                            double* hidden_out) {
  const double* w1 = h.w1();
  const double* b1 = h.b1();
  const double* w2 = h.w2();
  double u = h.b2();
  for (int k = 0; k < h.hidden; ++k) {
    double a = b1[k];
    const double* row = w1 + static_cast<std::size_t>(k) * h.in_dim;
    for (int d = 0; d < h.in_dim; ++d) a += row[d] * x[d];
    const double t = std::tanh(a);
    if (hidden_out) hidden_out[k] = t;
    u += w2[k] * t;
  }
  return u;
}

double predict(const MlpParams& h, std::span<const double> x) {
  if (static_cast<int>(x.size()) != h.in_dim)
    throw std::invalid_argument("predict: dimension mismatch");
  return apply_head(h, preactivation(h, x, nullptr));
}

void ThresholdHypothesis::validate() const {
  if (beta.empty()) throw std::invalid_argument("threshold: beta must be nonempty");
  for (double b : beta)
    if (!std::isfinite(b)) throw std::invalid_argument("threshold: non-finite beta");
}

double predict(const ThresholdHypothesis& h, std::span<const double> x) {
  if (x.size() != h.beta.size())
    throw std::invalid_argument("threshold predict: dimension mismatch");
  if (h.beta.size() == 1) return x[0] - h.beta[0] >= 0.0 ? 1.0 : -1.0;
  // d > 1 is only defined on the coordinate axes: locate the carrying axis.
  int j = -1;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (x[k] != 0.0) {
      if (j >= 0)
        throw std::domain_error("threshold predict: x is off the coordinate axes");
      j = static_cast<int>(k);
    }
  }
  if (j < 0) j = 0;  // x = 0 falls back to the first coordinate
  return x[j] - h.beta[j] >= 0.0 ? 1.0 : -1.0;
}

int predict_label(const MlpParams& h, std::span<const double> x) {
  const double out = predict(h, x);
  if (h.head == Head::sigmoid) return out >= 0.5 ? 1 : -1;
  return out >= 0.0 ? 1 : -1;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

bool is_weighted(LossKind kind) {
  return kind == LossKind::weighted_squared || kind == LossKind::weighted_cross_entropy;
}

bool is_differentiable(LossKind kind) { return kind != LossKind::zero_one; }

const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::squared: return "squared";
    case LossKind::weighted_squared: return "weighted_squared";
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::weighted_cross_entropy: return "weighted_cross_entropy";
    case LossKind::nll_frozen_mean: return "nll_frozen_mean";
    default: return "zero_one";
  }
}

LossKind loss_kind_from_name(const std::string& name) {
  for (LossKind k : {LossKind::squared, LossKind::weighted_squared,
                     LossKind::cross_entropy, LossKind::weighted_cross_entropy,
                     LossKind::nll_frozen_mean, LossKind::zero_one})
    if (name == loss_kind_name(k)) return k;
  throw ConfigError("unknown loss kind '" + name + "'");
}

static double softplus(double t) {
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

LossGrad loss_and_grad(const MlpParams& h, const dgp::Dataset& batch,
                       LossKind kind, std::span<const double> weights,
                       std::span<const double> frozen_mean) {
  h.validate();
  if (!is_differentiable(kind))
    throw std::invalid_argument("loss_and_grad: zero_one loss has no gradient");
  if (batch.dim() != h.in_dim)
    throw std::invalid_argument("loss_and_grad: dimension mismatch");
  const std::size_t n = batch.n();
  if (n == 0) throw std::invalid_argument("loss_and_grad: empty batch");
  const bool weighted = is_weighted(kind);
  if (weighted) {
    if (weights.size() != n)
      throw std::invalid_argument("loss_and_grad: weights must match batch length");
    for (double w : weights)
      if (!(w >= 0.0))
        throw std::invalid_argument("loss_and_grad: negative weight");
  } else if (!weights.empty()) {
    throw std::invalid_argument("loss_and_grad: weights not accepted for this loss kind");
  }
  const bool ce = kind == LossKind::cross_entropy || kind == LossKind::weighted_cross_entropy;
  if (ce && h.head != Head::sigmoid)
    throw std::invalid_argument("loss_and_grad: cross-entropy requires a sigmoid head");
  if (kind == LossKind::nll_frozen_mean) {
    if (h.head != Head::variance)
      throw std::invalid_argument("loss_and_grad: nll_frozen_mean requires a variance head");
    if (frozen_mean.size() != n)
      throw std::invalid_argument("loss_and_grad: frozen mean values must match batch length");
  }

  LossGrad out;
  out.grad.assign(h.theta.size(), 0.0);
  double* gw1 = out.grad.data();
  double* gb1 = gw1 + static_cast<std::size_t>(h.in_dim) * h.hidden;
  double* gw2 = gb1 + h.hidden;
  double* gb2 = gw2 + h.hidden;
  const double* w2 = h.w2();
  std::vector<double> t(h.hidden);

  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = batch.x(i);
    const double y = batch.y(i);
    const double u = preactivation(h, x, t.data());
    double li;     // per-sample loss before weighting
    double g;      // d li / d u
    switch (kind) {
      case LossKind::squared:
      case LossKind::weighted_squared: {
        if (h.head == Head::sigmoid) {
          const double target = y > 0.0 ? 1.0 : 0.0;
          const double p = stable_sigmoid(u);
          const double r = p - target;
          li = r * r;
          g = 2.0 * r * p * (1.0 - p);
        } else if (h.head == Head::variance) {
          const double v = std::exp(u);
          const double vc = std::min(std::max(v, h.var_floor), h.var_ceil);
          const double dv = (v > h.var_floor && v < h.var_ceil) ? v : 0.0;
          const double r = vc - y;
          li = r * r;
          g = 2.0 * r * dv;
        } else {
          const double r = u - y;
          li = r * r;
          g = 2.0 * r;
        }
        break;
      }
      case LossKind::cross_entropy:
      case LossKind::weighted_cross_entropy: {
        const double target = y > 0.0 ? 1.0 : 0.0;
        li = target == 1.0 ? softplus(-u) : softplus(u);
        g = stable_sigmoid(u) - target;
        break;
      }
      default: {  // nll_frozen_mean
        const double v = std::exp(u);
        const double vc = std::min(std::max(v, h.var_floor), h.var_ceil);
        const bool interior = v > h.var_floor && v < h.var_ceil;
        const double r = y - frozen_mean[i];
        li = std::log(vc) + r * r / vc;
        g = interior ? 1.0 - r * r / vc : 0.0;
        break;
      }
    }
    if (weighted) {
      const double w = weights[i];
      li *= w;
      g *= w;
    }
    loss += li;
    // Backward pass into the flat gradient.
    *gb2 += g;
    for (int k = 0; k < h.hidden; ++k) {
      const double tk = t[k];
      gw2[k] += g * tk;
      const double ga = g * w2[k] * (1.0 - tk * tk);
      gb1[k] += ga;
      double* row = gw1 + static_cast<std::size_t>(k) * h.in_dim;
      for (int d = 0; d < h.in_dim; ++d) row[d] += ga * x[d];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.loss = loss * inv_n;
  for (double& gv : out.grad) gv *= inv_n;
  return out;
}

double zero_one_loss(const MlpParams& h, const dgp::Dataset& batch) {
  double err = 0.0;
  for (std::size_t i = 0; i < batch.n(); ++i) {
    const int lab = predict_label(h, batch.x(i));
    if ((batch.y(i) > 0.0) != (lab > 0)) err += 1.0;
  }
  return err / static_cast<double>(batch.n());
}

std::vector<double> frozen_predictions(const MlpParams& mean_model,
                                       const dgp::Dataset& batch) {
  std::vector<double> out(batch.n());
  for (std::size_t i = 0; i < batch.n(); ++i) out[i] = predict(mean_model, batch.x(i));
  return out;
}

void fold_input_affine(MlpParams& p, std::span<const double> mean,
                       std::span<const double> sd) {
  if (static_cast<int>(mean.size()) != p.in_dim || sd.size() != mean.size())
    throw std::invalid_argument("fold_input_affine: dimension mismatch");
  double* w1 = p.w1();
  double* b1 = p.b1();
  for (int k = 0; k < p.hidden; ++k) {
    double* row = w1 + static_cast<std::size_t>(k) * p.in_dim;
    double shift = 0.0;
    for (int d = 0; d < p.in_dim; ++d) {
      row[d] /= sd[d];
      shift += row[d] * mean[d];
    }
    b1[k] -= shift;
  }
}

}  // namespace wermlab::models
