#include "wermlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "wermlab/common.hpp"
#include "wermlab/rng.hpp"

namespace wermlab::pipeline {

using nlohmann::json;
using models::Head;
using models::LossKind;
using models::MlpParams;
using models::ThresholdHypothesis;

// ---------------------------------------------------------------------------
// WeightModel
// ---------------------------------------------------------------------------

WeightModel WeightModel::make_constant(double c) {
  if (!(c > 0.0) || !std::isfinite(c))
    throw std::invalid_argument("weight model: constant must be positive");
  WeightModel w;
  w.kind = Kind::constant;
  w.constant = c;
  return w;
}

WeightModel WeightModel::oracle_margin(dgp::DgpSpec spec, MarginConvention conv) {
  WeightModel w;
  w.kind = Kind::oracle_margin;
  w.convention = conv;
  w.spec = std::move(spec);
  return w;
}

WeightModel WeightModel::estimated_margin(MlpParams eta_hat) {
  if (eta_hat.head != Head::sigmoid)
    throw std::invalid_argument("weight model: estimated margin needs a sigmoid head");
  WeightModel w;
  w.kind = Kind::estimated_margin;
  w.model = std::move(eta_hat);
  return w;
}

WeightModel WeightModel::oracle_precision(dgp::DgpSpec spec) {
  WeightModel w;
  w.kind = Kind::oracle_precision;
  w.spec = std::move(spec);
  return w;
}

WeightModel WeightModel::estimated_precision(MlpParams sigma2_hat) {
  if (sigma2_hat.head != Head::variance)
    throw std::invalid_argument("weight model: estimated precision needs a variance head");
  WeightModel w;
  w.kind = Kind::estimated_precision;
  w.model = std::move(sigma2_hat);
  return w;
}

WeightModel& WeightModel::with_bounds(double floor_, double cap_) {
  if (!(floor_ >= 0.0) || !(cap_ >= floor_))
    throw std::invalid_argument("weight model: needs 0 <= floor <= cap");
  floor = floor_;
  cap = cap_;
  return *this;
}

WeightModel& WeightModel::with_scale(double scale_) {
  if (!(scale_ > 0.0) || !std::isfinite(scale_))
    throw std::invalid_argument("weight model: scale must be positive");
  scale = scale_;
  return *this;
}

const char* WeightModel::kind_name() const {
  switch (kind) {
    case Kind::constant: return "constant";
    case Kind::oracle_margin: return "oracle_margin";
    case Kind::estimated_margin: return "estimated_margin";
    case Kind::oracle_precision: return "oracle_precision";
    default: return "estimated_precision";
  }
}

double WeightModel::eval(std::span<const double> x,
                         std::optional<std::int32_t> latent) const {
  double v;
  switch (kind) {
    case Kind::constant:
      v = constant;
      break;
    case Kind::oracle_margin: {
      const auto e = dgp::oracle_eval(*spec, x, latent);
      if (!e.omega_raw.has_value())
        throw std::invalid_argument("oracle margin weight: margin undefined here");
      v = convention == MarginConvention::raw ? *e.omega_raw : *e.omega_half;
      break;
    }
    case Kind::estimated_margin:
      v = std::abs(models::predict(*model, x) - 0.5);
      break;
    case Kind::oracle_precision: {
      const auto e = dgp::oracle_eval(*spec, x, latent);
      if (!e.sigma2_star.has_value())
        throw std::invalid_argument("oracle precision weight: variance undefined here");
      v = 1.0 / *e.sigma2_star;
      break;
    }
    default:
      v = 1.0 / models::predict(*model, x);
      break;
  }
  v *= scale;
  if (v < floor) v = floor;
  if (v > cap) v = cap;
  if (!(v >= 0.0) || !std::isfinite(v))
    throw std::runtime_error("weight model: produced a non-finite weight");
  return v;
}

std::vector<double> WeightModel::evaluate(const dgp::Dataset& data) const {
  std::vector<double> out(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    std::optional<std::int32_t> latent;
    if (data.has_latent()) latent = data.latent(i);
    out[i] = eval(data.x(i), latent);
  }
  return out;
}

// ---------------------------------------------------------------------------
// FitConfig
// ---------------------------------------------------------------------------

void FitConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("fit config: steps must be >= 1");
  if (!(step_size > 0.0) || !std::isfinite(step_size))
    throw std::invalid_argument("fit config: step_size must be positive");
  if (hidden < 0) throw std::invalid_argument("fit config: hidden must be >= 0");
  if (!(weight_floor >= 0.0) || !(weight_cap >= weight_floor))
    throw std::invalid_argument("fit config: needs 0 <= weight_floor <= weight_cap");
  if (loss_choice_for_eta != LossKind::squared &&
      loss_choice_for_eta != LossKind::cross_entropy)
    throw std::invalid_argument("fit config: eta loss must be squared or cross_entropy");
}

int FitConfig::hidden_for(Task task) const {
  if (hidden > 0) return hidden;
  return task == Task::regression ? 64 : 16;
}

std::string FitConfig::to_json_text() const {
  json j;
  j["steps"] = steps;
  j["step_size"] = step_size;
  j["hidden"] = hidden;
  j["seed"] = seed;
  j["sample_split"] = sample_split;
  j["weight_floor"] = weight_floor;
  if (std::isfinite(weight_cap)) j["weight_cap"] = weight_cap;
  j["loss_choice_for_eta"] = models::loss_kind_name(loss_choice_for_eta);
  j["joint_variance_fit"] = joint_variance_fit;
  j["standardize_inputs"] = standardize_inputs;
  return j.dump();
}

FitConfig FitConfig::from_json_text(const std::string& text) {
  json j = json::parse(text);
  FitConfig c;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "steps") c.steps = it.value().get<int>();
    else if (k == "step_size") c.step_size = it.value().get<double>();
    else if (k == "hidden") c.hidden = it.value().get<int>();
    else if (k == "seed") c.seed = it.value().get<std::uint64_t>();
    else if (k == "sample_split") c.sample_split = it.value().get<bool>();
    else if (k == "weight_floor") c.weight_floor = it.value().get<double>();
    else if (k == "weight_cap") c.weight_cap = it.value().get<double>();
    else if (k == "loss_choice_for_eta")
      c.loss_choice_for_eta = models::loss_kind_from_name(it.value().get<std::string>());
    else if (k == "joint_variance_fit") c.joint_variance_fit = it.value().get<bool>();
    else if (k == "standardize_inputs") c.standardize_inputs = it.value().get<bool>();
    else throw ConfigError("unknown key '" + k + "' in fit config");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Gradient-descent fits
// ---------------------------------------------------------------------------

GdResult gd_fit(const MlpParams& init, const dgp::Dataset& data, LossKind kind,
                const WeightModel& weights, const FitConfig& cfg,
                const MlpParams* frozen_mean) {
  cfg.validate();
  if (!models::is_differentiable(kind))
    throw std::invalid_argument("gd_fit: loss kind has no gradient");
  std::vector<double> w;
  if (models::is_weighted(kind)) w = weights.evaluate(data);
  std::vector<double> frozen;
  if (kind == LossKind::nll_frozen_mean) {
    if (frozen_mean == nullptr)
      throw std::invalid_argument("gd_fit: nll_frozen_mean needs a frozen mean model");
    frozen = models::frozen_predictions(*frozen_mean, data);
  }
  GdResult res;
  res.params = init;
  double loss = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    auto lg = models::loss_and_grad(res.params, data, kind, w, frozen);
    loss = lg.loss;
    if (!std::isfinite(loss))
      throw DivergenceError("gd_fit: non-finite loss at step " + std::to_string(step),
                            static_cast<std::uint64_t>(step));
    double* th = res.params.theta.data();
    const double* g = lg.grad.data();
    const double lr = cfg.step_size;
    for (std::size_t i = 0; i < lg.grad.size(); ++i) th[i] -= lr * g[i];
  }
  res.final_loss = loss;
  return res;
}

JointNllResult gd_fit_joint_nll(const MlpParams& mean_init, const MlpParams& var_init,
                                const dgp::Dataset& data, const FitConfig& cfg) {
  cfg.validate();
  if (var_init.head != Head::variance || mean_init.head != Head::identity)
    throw std::invalid_argument("joint nll: needs an identity mean and a variance head");
  JointNllResult res{mean_init, var_init, 0.0};
  const std::size_t n = data.n();
  std::vector<double> mu(n);
  for (int step = 0; step < cfg.steps; ++step) {
    // Alternating exact gradients of the shared objective
    //   mean over i of log v(x_i) + (y_i - mu(x_i))^2 / v(x_i).
    for (std::size_t i = 0; i < n; ++i) mu[i] = models::predict(res.mean, data.x(i));
    auto var_lg = models::loss_and_grad(res.variance, data, LossKind::nll_frozen_mean, {}, mu);
    // Mean gradient: d/dmu of (y - mu)^2 / v = -2 (y - mu) / v, i.e. a
    // weighted squared loss with weights 1/v(x_i).
    std::vector<double> inv_v(n);
    for (std::size_t i = 0; i < n; ++i)
      inv_v[i] = 1.0 / models::predict(res.variance, data.x(i));
    auto mean_lg = models::loss_and_grad(res.mean, data, LossKind::weighted_squared, inv_v);
    if (!std::isfinite(var_lg.loss) || !std::isfinite(mean_lg.loss))
      throw DivergenceError("joint nll: non-finite loss at step " + std::to_string(step),
                            static_cast<std::uint64_t>(step));
    for (std::size_t i = 0; i < mean_lg.grad.size(); ++i)
      res.mean.theta[i] -= cfg.step_size * mean_lg.grad[i];
    for (std::size_t i = 0; i < var_lg.grad.size(); ++i)
      res.variance.theta[i] -= cfg.step_size * var_lg.grad[i];
    res.final_loss = var_lg.loss;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Exact threshold ERM
// ---------------------------------------------------------------------------

ThresholdFit exact_threshold_erm(std::span<const WeightedPoint> points) {
  if (points.empty())
    throw std::invalid_argument("exact_threshold_erm: empty input");
  std::vector<WeightedPoint> pts(points.begin(), points.end());
  for (const auto& p : pts) {
    if (!(p.w >= 0.0)) throw std::invalid_argument("exact_threshold_erm: negative weight");
    if (p.y != 1.0 && p.y != -1.0)
      throw std::invalid_argument("exact_threshold_erm: labels must be +-1");
  }
  std::sort(pts.begin(), pts.end(),
            [](const WeightedPoint& a, const WeightedPoint& b) { return a.x < b.x; });

  // A threshold just above position i misclassifies the positives at or
  // below i and the negatives above it. Keeping separate prefix/suffix sums
  // avoids cancellation in the per-candidate losses.
  const std::size_t n = pts.size();
  std::vector<double> suffix_minus(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;)
    suffix_minus[i] = suffix_minus[i + 1] + (pts[i].y < 0.0 ? pts[i].w : 0.0);

  ThresholdFit best{pts.front().x - 1.0, suffix_minus[0]};
  double prefix_plus = 0.0;
  std::size_t i = 0;
  while (i < n) {
    // Pass the whole group of equal x values; their prediction flips to -1.
    const double xg = pts[i].x;
    while (i < n && pts[i].x == xg) {
      if (pts[i].y > 0.0) prefix_plus += pts[i].w;
      ++i;
    }
    const double loss = prefix_plus + suffix_minus[i];
    const double candidate = i < n ? std::midpoint(xg, pts[i].x) : pts.back().x + 1.0;
    if (loss < best.loss) best = {candidate, loss};
  }
  return best;
}

ThresholdHypothesis exact_basis_erm(const dgp::Dataset& data,
                                    std::span<const double> sample_weights) {
  if (!data.has_latent())
    throw std::invalid_argument("exact_basis_erm: latent coordinate metadata required");
  if (sample_weights.size() != data.n())
    throw std::invalid_argument("exact_basis_erm: weight vector length mismatch");
  const int d = data.dim();
  std::vector<std::vector<WeightedPoint>> per_coord(d);
  for (std::size_t i = 0; i < data.n(); ++i) {
    const int j = data.latent(i);
    if (j < 0 || j >= d)
      throw std::invalid_argument("exact_basis_erm: latent coordinate out of range");
    per_coord[j].push_back({data.x(i)[j], data.y(i), sample_weights[i]});
  }
  ThresholdHypothesis h;
  h.beta.assign(d, 0.0);
  for (int j = 0; j < d; ++j)
    if (!per_coord[j].empty()) h.beta[j] = exact_threshold_erm(per_coord[j]).beta;
  return h;
}

ThresholdHypothesis exact_basis_erm(const dgp::Dataset& data, const WeightModel& weights) {
  return exact_basis_erm(data, weights.evaluate(data));
}

// ---------------------------------------------------------------------------
// Two-step estimation
// ---------------------------------------------------------------------------

namespace {

// Stage tags for seed derivation inside two_step.
constexpr std::uint64_t kSplitStream = 17;
constexpr std::uint64_t kErmInit = 1;
constexpr std::uint64_t kWeightInit = 2;
constexpr std::uint64_t kWermInit = 3;

std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>> split_indices(
    std::size_t n, std::uint64_t seed) {
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  rng::Xoshiro256pp gen(rng::derive_stream(seed, kSplitStream));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t k = static_cast<std::size_t>(gen.below(i));
    std::swap(perm[i - 1], perm[k]);
  }
  std::vector<std::uint32_t> even, odd;
  even.reserve((n + 1) / 2);
  odd.reserve(n / 2);
  for (std::size_t i = 0; i < n; ++i)
    (i % 2 == 0 ? even : odd).push_back(perm[i]);
  std::sort(even.begin(), even.end());
  std::sort(odd.begin(), odd.end());
  return {std::move(even), std::move(odd)};
}

}  // namespace

InputStats input_stats(const dgp::Dataset& data) {
  const int dim = data.dim();
  InputStats s;
  s.mean.assign(dim, 0.0);
  s.sd.assign(dim, 1.0);
  const auto n = static_cast<double>(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto x = data.x(i);
    for (int d = 0; d < dim; ++d) s.mean[d] += x[d];
  }
  for (int d = 0; d < dim; ++d) s.mean[d] /= n;
  std::vector<double> var(dim, 0.0);
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto x = data.x(i);
    for (int d = 0; d < dim; ++d) {
      const double c = x[d] - s.mean[d];
      var[d] += c * c;
    }
  }
  for (int d = 0; d < dim; ++d) {
    const double sd = std::sqrt(var[d] / n);
    s.sd[d] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

dgp::Dataset standardized_copy(const dgp::Dataset& data, const InputStats& stats) {
  const int dim = data.dim();
  std::vector<double> xs(data.xs_flat().begin(), data.xs_flat().end());
  for (std::size_t i = 0; i < data.n(); ++i)
    for (int d = 0; d < dim; ++d)
      xs[i * dim + d] = (xs[i * dim + d] - stats.mean[d]) / stats.sd[d];
  std::vector<double> ys(data.ys().begin(), data.ys().end());
  std::vector<std::int32_t> latent;
  if (data.has_latent()) {
    latent.resize(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) latent[i] = data.latent(i);
  }
  return dgp::Dataset(dim, std::move(xs), std::move(ys), std::move(latent),
                      data.provenance());
}

TwoStepResult two_step(const dgp::Dataset& raw, Task task, const FitConfig& cfg) {
  cfg.validate();
  if (raw.n() < 2) throw std::invalid_argument("two_step: need at least 2 samples");
  if (task == Task::regression && raw.dim() != 1)
    throw std::invalid_argument("two_step: regression task expects 1-d inputs");

  TwoStepResult res;
  res.config = cfg;
  if (cfg.sample_split) {
    auto [even, odd] = split_indices(raw.n(), cfg.seed);
    res.stage1_indices = std::move(even);
    res.stage2_indices = std::move(odd);
  } else {
    res.stage1_indices.resize(raw.n());
    std::iota(res.stage1_indices.begin(), res.stage1_indices.end(), 0u);
    res.stage2_indices = res.stage1_indices;
  }

  // Fits run in standardized coordinates; the affine map is folded back into
  // the first layer of every model before it leaves this function.
  InputStats stats;
  stats.mean.assign(raw.dim(), 0.0);
  stats.sd.assign(raw.dim(), 1.0);
  if (cfg.standardize_inputs) stats = input_stats(raw);
  const dgp::Dataset data = cfg.standardize_inputs ? standardized_copy(raw, stats) : raw;
  const dgp::Dataset stage1 = cfg.sample_split ? data.subset(res.stage1_indices) : data;
  const dgp::Dataset stage2 = cfg.sample_split ? data.subset(res.stage2_indices) : data;
  const int hidden = cfg.hidden_for(task);
  const auto ones = WeightModel::make_constant(1.0);
  const auto fold = [&](MlpParams& p) {
    if (cfg.standardize_inputs) models::fold_input_affine(p, stats.mean, stats.sd);
  };

  if (task == Task::regression) {
    auto erm = gd_fit(
        models::mlp_init(data.dim(), hidden, Head::identity,
                         rng::derive_stream(cfg.seed, kErmInit)),
        stage1, LossKind::squared, ones, cfg);
    MlpParams sigma2;
    double sigma2_loss;
    const auto var_init = models::mlp_init(data.dim(), hidden, Head::variance,
                                           rng::derive_stream(cfg.seed, kWeightInit));
    if (cfg.joint_variance_fit) {
      const auto mean_init = models::mlp_init(data.dim(), hidden, Head::identity,
                                              rng::derive_stream(cfg.seed, kWeightInit + 10));
      auto joint = gd_fit_joint_nll(mean_init, var_init, stage1, cfg);
      sigma2 = std::move(joint.variance);
      sigma2_loss = joint.final_loss;
    } else {
      auto vfit = gd_fit(var_init, stage1, LossKind::nll_frozen_mean, ones, cfg, &erm.params);
      sigma2 = std::move(vfit.params);
      sigma2_loss = vfit.final_loss;
    }
    // Weights are evaluated in the same (standardized) coordinates the wERM
    // stage trains in; the returned weight model carries the folded net.
    auto wm_fit = WeightModel::estimated_precision(sigma2)
                      .with_bounds(cfg.weight_floor, cfg.weight_cap);
    auto werm = gd_fit(
        models::mlp_init(data.dim(), hidden, Head::identity,
                         rng::derive_stream(cfg.seed, kWermInit)),
        stage2, LossKind::weighted_squared, wm_fit, cfg);
    fold(sigma2);
    auto wm = WeightModel::estimated_precision(sigma2)
                  .with_bounds(cfg.weight_floor, cfg.weight_cap);
    fold(erm.params);
    fold(werm.params);
    res.erm_model = std::move(erm.params);
    res.weight_model = std::move(wm);
    res.werm_model = std::move(werm.params);
    res.erm_final_loss = erm.final_loss;
    res.weight_final_loss = sigma2_loss;
    res.werm_final_loss = werm.final_loss;
  } else {
    auto eta = gd_fit(
        models::mlp_init(data.dim(), hidden, Head::sigmoid,
                         rng::derive_stream(cfg.seed, kErmInit)),
        stage1, cfg.loss_choice_for_eta, ones, cfg);
    auto wm_fit = WeightModel::estimated_margin(eta.params)
                      .with_bounds(cfg.weight_floor, cfg.weight_cap);
    auto werm = gd_fit(
        models::mlp_init(data.dim(), hidden, Head::sigmoid,
                         rng::derive_stream(cfg.seed, kWermInit)),
        stage2, LossKind::weighted_cross_entropy, wm_fit, cfg);
    fold(eta.params);
    auto wm = WeightModel::estimated_margin(eta.params)
                  .with_bounds(cfg.weight_floor, cfg.weight_cap);
    fold(werm.params);
    res.erm_model = std::move(eta.params);
    res.weight_model = std::move(wm);
    res.werm_model = std::move(werm.params);
    res.erm_final_loss = eta.final_loss;
    res.weight_final_loss = eta.final_loss;
    res.werm_final_loss = werm.final_loss;
  }
  return res;
}

std::string TwoStepResult::provenance_json() const {
  json j;
  j["config"] = json::parse(config.to_json_text());
  std::string idx;
  idx.reserve(stage1_indices.size() * 4);
  for (auto i : stage1_indices) idx += std::to_string(i) + ",";
  idx += "|";
  for (auto i : stage2_indices) idx += std::to_string(i) + ",";
  j["split_digest"] = fnv1a64(idx);
  j["n_stage1"] = stage1_indices.size();
  j["n_stage2"] = stage2_indices.size();
  j["erm_final_loss"] = erm_final_loss;
  j["weight_final_loss"] = weight_final_loss;
  j["werm_final_loss"] = werm_final_loss;
  j["weight_model"] = weight_model.kind_name();
  return j.dump();
}

}  // namespace wermlab::pipeline
