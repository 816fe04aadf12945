#include "wermlab/risk.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "wermlab/common.hpp"
#include "wermlab/rng.hpp"

namespace wermlab::risk {

using dgp::Dataset;

Evaluator evaluator_of(const models::MlpParams& m) {
  return [m](std::span<const double> x) { return models::predict(m, x); };
}

Evaluator evaluator_of(const models::ThresholdHypothesis& h) {
  return [h](std::span<const double> x) { return models::predict(h, x); };
}

Labeler labeler_of(const models::MlpParams& m) {
  return [m](std::span<const double> x) { return models::predict_label(m, x); };
}

Labeler labeler_of(const models::ThresholdHypothesis& h) {
  return [h](std::span<const double> x) { return models::predict_label(h, x); };
}

double empirical_quantile(std::span<const double> values, double alpha) {
  if (values.empty()) throw std::invalid_argument("empirical_quantile: empty values");
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("empirical_quantile: alpha must lie in (0, 1]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<std::int64_t>(sorted.size());
  // Smallest k with k / n >= alpha, guarded against rounding in alpha * n.
  auto k = static_cast<std::int64_t>(std::ceil(alpha * static_cast<double>(n)));
  while (k > 1 && static_cast<double>(k - 1) / static_cast<double>(n) >= alpha) --k;
  while (k < n && static_cast<double>(k) / static_cast<double>(n) < alpha) ++k;
  return sorted[static_cast<std::size_t>(k - 1)];
}

static int bayes_label(const dgp::DgpSpec& spec, const Dataset& data, std::size_t i) {
  std::optional<std::int32_t> latent;
  if (data.has_latent()) latent = data.latent(i);
  return dgp::oracle_eval(spec, data.x(i), latent).bayes_label;
}

SelectiveRisk selective_risk_regression(const dgp::RegressionDgpSpec& spec,
                                        const Evaluator& model,
                                        const Evaluator& sigma2_model, double alpha,
                                        const Dataset& test,
                                        const Dataset& quantile_source) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("selective risk: alpha must lie in (0, 1]");
  double cut = std::numeric_limits<double>::infinity();
  if (alpha < 1.0) {
    std::vector<double> vals(quantile_source.n());
    for (std::size_t i = 0; i < quantile_source.n(); ++i)
      vals[i] = sigma2_model(quantile_source.x(i));
    cut = empirical_quantile(vals, alpha);
  }
  double sum = 0.0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < test.n(); ++i) {
    const auto x = test.x(i);
    if (sigma2_model(x) <= cut) {
      const double d = dgp::RegressionDgpSpec::f_star(x[0]) - model(x);
      sum += d * d;
      ++kept;
    }
  }
  SelectiveRisk r;
  r.n_selected = kept;
  if (kept > 0) r.risk = sum / static_cast<double>(kept);
  return r;
}

SelectiveRisk selective_risk_classification(const dgp::DgpSpec& spec,
                                            const Labeler& model,
                                            const Evaluator& margin_model,
                                            double alpha, const Dataset& test,
                                            const Dataset& quantile_source) {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("selective risk: alpha must lie in (0, 1]");
  double cut = -std::numeric_limits<double>::infinity();
  if (alpha < 1.0) {
    std::vector<double> vals(quantile_source.n());
    for (std::size_t i = 0; i < quantile_source.n(); ++i)
      vals[i] = margin_model(quantile_source.x(i));
    cut = empirical_quantile(vals, 1.0 - alpha);
  }
  double sum = 0.0;
  std::size_t kept = 0;
  for (std::size_t i = 0; i < test.n(); ++i) {
    const auto x = test.x(i);
    if (margin_model(x) >= cut) {
      sum += model(x) != bayes_label(spec, test, i) ? 1.0 : 0.0;
      ++kept;
    }
  }
  SelectiveRisk r;
  r.n_selected = kept;
  if (kept > 0) r.risk = sum / static_cast<double>(kept);
  return r;
}

ExcessDecomposition conditional_excess_decomposition(const dgp::DgpSpec& spec,
                                                     const Labeler& model, double c,
                                                     std::size_t mc_n,
                                                     std::uint64_t seed) {
  if (mc_n < 10000)
    throw std::invalid_argument("conditional_excess_decomposition: mc_n below 1e4 is too noisy");
  if (!(c > 0.0)) throw std::invalid_argument("conditional_excess_decomposition: c must be positive");
  if (std::holds_alternative<dgp::RegressionDgpSpec>(spec))
    throw std::invalid_argument("conditional_excess_decomposition: classification DGP required");
  const Dataset data = dgp::sample(spec, mc_n, seed);
  double s_lhs = 0.0, s2_lhs = 0.0, s_bound = 0.0, s2_bound = 0.0;
  for (std::size_t i = 0; i < mc_n; ++i) {
    const auto x = data.x(i);
    std::optional<std::int32_t> latent;
    if (data.has_latent()) latent = data.latent(i);
    const auto e = dgp::oracle_eval(spec, x, latent);
    const int fhat = model(x);
    const int fstar = e.bayes_label;
    const int y = data.y(i) > 0.0 ? 1 : -1;
    const double lhs_i = (fhat != y ? 1.0 : 0.0) - (fstar != y ? 1.0 : 0.0);
    const double w = *e.omega_raw;
    const double bound_i =
        (w < c ? c : 0.0) + (fhat != fstar ? w * w / c : 0.0);
    s_lhs += lhs_i;
    s2_lhs += lhs_i * lhs_i;
    s_bound += bound_i;
    s2_bound += bound_i * bound_i;
  }
  const auto n = static_cast<double>(mc_n);
  ExcessDecomposition out;
  out.lhs = s_lhs / n;
  out.bound = s_bound / n;
  out.stderr_lhs = std::sqrt(std::max(0.0, s2_lhs / n - out.lhs * out.lhs) / n);
  out.stderr_bound = std::sqrt(std::max(0.0, s2_bound / n - out.bound * out.bound) / n);
  return out;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

namespace {

// Seed-stream tags within one sweep cell.
constexpr std::uint64_t kTrain = 1, kVal = 2, kTest = 3, kFit = 4;

struct SeedRun {
  std::vector<SweepCell> cells;
};

}  // namespace

SelectiveRiskCurve sweep(const dgp::DgpSpec& spec, std::span<const double> alphas,
                         std::span<const std::uint64_t> seeds,
                         const pipeline::FitConfig& cfg, const SweepSizes& sizes,
                         const SweepOptions& opts) {
  if (alphas.empty() || seeds.empty())
    throw std::invalid_argument("sweep: alphas and seeds must be nonempty");
  cfg.validate();
  const bool regression = std::holds_alternative<dgp::RegressionDgpSpec>(spec);
  const auto task = regression ? pipeline::Task::regression : pipeline::Task::classification;

  std::vector<SeedRun> runs(seeds.size());
  parallel_for(seeds.size(), opts.threads, [&](std::size_t si) {
    const std::uint64_t seed = seeds[si];
    const Dataset train = dgp::sample(spec, sizes.n_train, rng::derive_stream(seed, kTrain));
    const Dataset val = dgp::sample(spec, sizes.n_val, rng::derive_stream(seed, kVal));
    const Dataset test = dgp::sample(spec, sizes.n_test, rng::derive_stream(seed, kTest));
    pipeline::FitConfig cell_cfg = cfg;
    cell_cfg.seed = rng::derive_stream(seed, kFit);
    const auto ts = pipeline::two_step(train, task, cell_cfg);

    SeedRun run;
    run.cells.reserve(alphas.size());
    if (regression) {
      const auto& rspec = std::get<dgp::RegressionDgpSpec>(spec);
      Evaluator erm = evaluator_of(ts.erm_model);
      Evaluator werm = evaluator_of(ts.werm_model);
      Evaluator sigma2;
      if (opts.oracle_selection) {
        sigma2 = [](std::span<const double> x) {
          return dgp::RegressionDgpSpec::sigma2_star(x[0]);
        };
      } else {
        sigma2 = evaluator_of(*ts.weight_model.model);
      }
      for (double a : alphas) {
        auto re = selective_risk_regression(rspec, erm, sigma2, a, test, val);
        auto rw = selective_risk_regression(rspec, werm, sigma2, a, test, val);
        run.cells.push_back({seed, a, re.n_selected, re.risk, rw.risk});
      }
    } else {
      Labeler erm = labeler_of(ts.erm_model);
      Labeler werm = labeler_of(ts.werm_model);
      const models::MlpParams eta_hat = ts.erm_model;
      Evaluator margin;
      if (opts.oracle_selection) {
        const dgp::DgpSpec oracle_spec = spec;
        // Oracle-margin selection is only well-defined where the margin is a
        // function of x alone; the basis DGP qualifies.
        margin = [oracle_spec](std::span<const double> x) {
          return *dgp::oracle_eval(oracle_spec, x, std::nullopt).omega_half;
        };
      } else {
        margin = [eta_hat](std::span<const double> x) {
          return std::abs(models::predict(eta_hat, x) - 0.5);
        };
      }
      for (double a : alphas) {
        auto re = selective_risk_classification(spec, erm, margin, a, test, val);
        auto rw = selective_risk_classification(spec, werm, margin, a, test, val);
        run.cells.push_back({seed, a, re.n_selected, re.risk, rw.risk});
      }
    }
    runs[si] = std::move(run);
  });

  SelectiveRiskCurve curve;
  curve.task = regression ? "regression" : "classification";
  for (auto& run : runs)
    curve.cells.insert(curve.cells.end(), run.cells.begin(), run.cells.end());

  for (std::size_t ai = 0; ai < alphas.size(); ++ai) {
    SweepAggregate agg;
    agg.alpha = alphas[ai];
    std::vector<double> erm_vals, werm_vals;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const auto& cell = curve.cells[si * alphas.size() + ai];
      if (cell.risk_erm && cell.risk_werm) {
        erm_vals.push_back(*cell.risk_erm);
        werm_vals.push_back(*cell.risk_werm);
      }
    }
    agg.n_seeds = erm_vals.size();
    auto mean_std = [](const std::vector<double>& v) {
      double m = 0.0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      double s2 = 0.0;
      for (double x : v) s2 += (x - m) * (x - m);
      const double sd = v.size() > 1 ? std::sqrt(s2 / static_cast<double>(v.size() - 1)) : 0.0;
      return std::pair<double, double>{m, sd};
    };
    if (!erm_vals.empty()) {
      std::tie(agg.mean_erm, agg.std_erm) = mean_std(erm_vals);
      std::tie(agg.mean_werm, agg.std_werm) = mean_std(werm_vals);
    }
    curve.aggregate.push_back(agg);
  }
  return curve;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

static std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

static std::string fmt_opt(const std::optional<double>& v) {
  return v.has_value() ? fmt(*v) : "nan";
}

std::string sweep_csv(const SelectiveRiskCurve& curve, const std::string& provenance) {
  std::string out = "# " + provenance + "\n";
  out += "task,seed,alpha,n_selected,risk_erm,risk_werm\n";
  for (const auto& c : curve.cells) {
    out += curve.task + "," + std::to_string(c.seed) + "," + fmt(c.alpha) + "," +
           std::to_string(c.n_selected) + "," + fmt_opt(c.risk_erm) + "," +
           fmt_opt(c.risk_werm) + "\n";
  }
  return out;
}

std::string sweep_aggregate_csv(const SelectiveRiskCurve& curve,
                                const std::string& provenance) {
  std::string out = "# " + provenance + "\n";
  out += "alpha,mean_erm,std_erm,mean_werm,std_werm\n";
  for (const auto& a : curve.aggregate) {
    out += fmt(a.alpha) + "," + fmt(a.mean_erm) + "," + fmt(a.std_erm) + "," +
           fmt(a.mean_werm) + "," + fmt(a.std_werm) + "\n";
  }
  return out;
}

}  // namespace wermlab::risk
