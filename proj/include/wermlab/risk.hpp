#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wermlab/dgp.hpp"
#include "wermlab/pipeline.hpp"

namespace wermlab::risk {

// Scalar evaluator over inputs; adapters below build them from hypotheses.
using Evaluator = std::function<double(std::span<const double>)>;

Evaluator evaluator_of(const models::MlpParams& m);
Evaluator evaluator_of(const models::ThresholdHypothesis& h);
// +1/-1 label function of a classifier.
using Labeler = std::function<int(std::span<const double>)>;
Labeler labeler_of(const models::MlpParams& m);
Labeler labeler_of(const models::ThresholdHypothesis& h);

// Type-1 empirical quantile: smallest value v in the sorted list such that
// count(values <= v) / n >= alpha. alpha must lie in (0, 1].
double empirical_quantile(std::span<const double> values, double alpha);

struct SelectiveRisk {
  std::optional<double> risk;  // absent when the selected set is empty
  std::size_t n_selected = 0;
};

// Mean squared error against f* over test points whose estimated variance
// falls at or below the alpha-quantile of the estimated variance on
// quantile_source (low-variance tail; alpha is the retained fraction).
// alpha = 1 keeps every point exactly.
SelectiveRisk selective_risk_regression(const dgp::RegressionDgpSpec& spec,
                                        const Evaluator& model,
                                        const Evaluator& sigma2_model,
                                        double alpha, const dgp::Dataset& test,
                                        const dgp::Dataset& quantile_source);

// Disagreement with the Bayes classifier over test points whose margin is at
// or above the (1 - alpha)-quantile of the margin on quantile_source
// (high-margin tail; alpha is the retained fraction). alpha = 1 keeps every
// point exactly.
SelectiveRisk selective_risk_classification(const dgp::DgpSpec& spec,
                                            const Labeler& model,
                                            const Evaluator& margin_model,
                                            double alpha, const dgp::Dataset& test,
                                            const dgp::Dataset& quantile_source);

// Monte Carlo check of the low-margin decomposition
//   lhs   = E[1{f != y} - 1{f* != y}]
//   bound = P(omega_raw < c) * c + E[omega_raw^2 1{f != f*}] / c
// on a classification/basis DGP, with standard errors.
struct ExcessDecomposition {
  double lhs = 0.0;
  double bound = 0.0;
  double stderr_lhs = 0.0;
  double stderr_bound = 0.0;
};
ExcessDecomposition conditional_excess_decomposition(const dgp::DgpSpec& spec,
                                                     const Labeler& model, double c,
                                                     std::size_t mc_n,
                                                     std::uint64_t seed);

// ---------------------------------------------------------------------------
// Coverage sweep
// ---------------------------------------------------------------------------

struct SweepCell {
  std::uint64_t seed = 0;
  double alpha = 0.0;
  std::size_t n_selected = 0;
  std::optional<double> risk_erm;
  std::optional<double> risk_werm;
};

struct SweepAggregate {
  double alpha = 0.0;
  double mean_erm = 0.0, std_erm = 0.0;
  double mean_werm = 0.0, std_werm = 0.0;
  std::size_t n_seeds = 0;
};

struct SelectiveRiskCurve {
  std::string task;
  std::vector<SweepCell> cells;          // ordered by (seed, alpha)
  std::vector<SweepAggregate> aggregate; // ordered by alpha
};

struct SweepSizes {
  std::size_t n_train = 20000;
  std::size_t n_val = 4286;
  std::size_t n_test = 4286;
};

struct SweepOptions {
  bool oracle_selection = false;  // select on the oracle margin / variance
  unsigned threads = 1;
};

// For each seed: draw train/validation/test sets, run the two-step pipeline,
// and evaluate both estimators at every coverage level. Quantile cutoffs are
// computed on the validation set.
SelectiveRiskCurve sweep(const dgp::DgpSpec& spec, std::span<const double> alphas,
                         std::span<const std::uint64_t> seeds,
                         const pipeline::FitConfig& cfg, const SweepSizes& sizes,
                         const SweepOptions& opts = {});

// CSV serialization (schemas documented in the README). `provenance` is
// emitted as a leading comment line.
std::string sweep_csv(const SelectiveRiskCurve& curve, const std::string& provenance);
std::string sweep_aggregate_csv(const SelectiveRiskCurve& curve,
                                const std::string& provenance);

}  // namespace wermlab::risk
