#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wermlab/dgp.hpp"
#include "wermlab/pipeline.hpp"
#include "wermlab/risk.hpp"

namespace wermlab::diagnostics {

// ---------------------------------------------------------------------------
// Exact enumeration on the basis DGP
// ---------------------------------------------------------------------------
//
// Threshold losses are piecewise constant in beta, so every functional below
// is a finite sum over the four support segments of each coordinate
// (mass m, label probability eta, margin w = |2 eta - 1|):
//
//   +0.1 atom        m = gamma/32,       eta = 1
//   -0.1 atom        m = gamma/32,       eta = 0
//   [1, 2]           m = 1 - 3 gamma/32, eta = (1 + gamma)/2
//   [-2, -1]         m = gamma/32,       eta = 0
//
// A threshold classifies sign(alpha - beta_j); its disagreement region with
// the Bayes rule inside an interval segment is again an interval, so each
// segment contributes closed-form mass. Two independent routes are exposed:
// excess_plain integrates the label law E[l(f) - l(f*)] directly, while
// excess_identity sums E[w 1{f != f*}]; they agree by the label-noise
// identity and are computed from different expressions.
struct BasisFunctionals {
  double p_disagree = 0.0;        // P(f != f*)
  double excess_plain = 0.0;      // E[delta loss], label-law route
  double excess_identity = 0.0;   // E[omega_raw 1{f != f*}], margin route
  double excess_weighted = 0.0;   // E[omega_raw delta loss] = E[omega_raw^2 1{dis}]
  double var_plain = 0.0;         // Var[delta loss]
  double probe_mean = 0.0;        // E[w(x) delta loss] for the probe weight
  double probe_second = 0.0;      // E[(w(x) delta loss)^2]
  double probe_var = 0.0;
  double mass_high_margin = 0.0;  // P(omega_raw > gamma)
  double cond_err_high_margin = 0.0;  // E[1{f != f*} | omega_raw > gamma]
};

// probe_weight: optional weight attached to the probe functionals; must be
// constant on segments (constant and oracle-margin kinds qualify).
BasisFunctionals enumerate_threshold(const dgp::BasisDgpSpec& spec,
                                     std::span<const double> beta,
                                     const pipeline::WeightModel* probe_weight = nullptr);

// P(omega_raw < c) under the basis DGP.
double basis_margin_below(const dgp::BasisDgpSpec& spec, double c);

// ---------------------------------------------------------------------------
// Bernstein probes
// ---------------------------------------------------------------------------

struct BernsteinCheckSpec {
  double B = 1.0;             // claimed multiplier
  double additive_eps = 0.0;  // relaxed-condition additive slack
  double loss_bound_a = 1.0;
  double lipschitz_L = 1.0;
  double weight_bound_c1 = 1.0;
  double noise_bound_c2 = 1.0;
  double variance_floor_c3 = 1.0;
  double gamma = 1.0;

  void validate() const;
};

enum class ProbeMethod { auto_select, monte_carlo, exact_enumeration };

struct BernsteinReport {
  double mean_hat = 0.0;
  double var_hat = 0.0;
  double stderr_mean = 0.0;
  double stderr_var = 0.0;
  double slack = 0.0;      // B * mean + additive_eps - var
  double tolerance = 0.0;  // 4 (B se_mean + se_var) for MC, 1e-12 for exact
  ProbeMethod method = ProbeMethod::monte_carlo;
  std::size_t n_mc = 0;
  bool pass = false;
};

// Estimates mean and variance of w(x) (l(f, z) - l(f*, z)) and checks the
// relaxed Bernstein predicate Var <= B E + eps. Exact enumeration is chosen
// automatically on the basis DGP with 0-1 loss and a segment-constant weight;
// everything else runs Monte Carlo over fresh draws.
BernsteinReport bernstein_probe(const dgp::DgpSpec& spec, const risk::Evaluator& f,
                                const pipeline::WeightModel& weight,
                                models::LossKind loss, const BernsteinCheckSpec& check,
                                std::size_t n_mc, std::uint64_t seed,
                                ProbeMethod method = ProbeMethod::auto_select);

// Convenience overload for threshold hypotheses on the basis DGP.
BernsteinReport bernstein_probe(const dgp::BasisDgpSpec& spec,
                                const models::ThresholdHypothesis& f,
                                const pipeline::WeightModel& weight,
                                const BernsteinCheckSpec& check,
                                std::size_t n_mc, std::uint64_t seed,
                                ProbeMethod method = ProbeMethod::auto_select);

// Monte Carlo estimate of E[(w_hat - w_star)^2] between two weight models.
double measure_weight_eps(const dgp::DgpSpec& spec, const pipeline::WeightModel& w_hat,
                          const pipeline::WeightModel& w_star, std::size_t n,
                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// Lower-bound (ERM vs wERM separation) experiment
// ---------------------------------------------------------------------------

struct LowerboundTrial {
  std::uint64_t trial = 0;
  double beta_erm = 0.0;   // first coordinate
  double beta_werm = 0.0;
  double err_erm = 0.0;    // conditional disagreement with f* on {omega > gamma}
  double err_werm = 0.0;
};

struct LowerboundResult {
  std::vector<LowerboundTrial> trials;
  double erm_fail_freq = 0.0;   // fraction of trials with err_erm >= 0.015
  double mean_err_erm = 0.0;
  double mean_err_werm = 0.0;
  double sign_test_p = 1.0;     // two-sided, zeros dropped
  double werm_q50 = 0.0, werm_q90 = 0.0, werm_q95 = 0.0;
};

// Per trial: draw n points, run exact basis ERM with unit weights and with a
// perturbed margin weight w = max(0, omega_raw + Uniform(-delta, delta)),
// delta = sqrt(3 weight_eps), and record conditional errors on the
// high-margin region by exact enumeration.
LowerboundResult lowerbound_experiment(const dgp::BasisDgpSpec& spec, std::size_t n,
                                       std::size_t trials, double weight_eps,
                                       std::uint64_t seed, unsigned threads = 1);

// Exact two-sided sign test p-value for paired samples (ties dropped).
double sign_test_two_sided(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Rate experiment
// ---------------------------------------------------------------------------

enum class Estimator { erm, werm };

struct RateCell {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  double risk = 0.0;
};

struct RateResult {
  std::vector<RateCell> cells;                       // ordered by (n, seed)
  std::vector<std::pair<std::size_t, double>> medians;
  std::vector<std::size_t> excluded_ns;              // zero-median grid points
  double slope = 0.0;
  double intercept = 0.0;
  bool degenerate = false;  // fewer than 3 usable grid points
};

// For each (n, seed) cell: fit on fresh n samples (exact threshold ERM on the
// basis DGP, gradient descent otherwise) and evaluate the excess risk by
// exact enumeration (basis) or quadrature (regression). The werm estimator
// uses oracle weights (raw margin / precision) and is scored on the
// oracle-weighted excess; erm uses unit weights and the plain excess. The
// slope is the log-log least-squares fit through per-n medians, with
// zero-risk medians excluded.
RateResult rate_experiment(const dgp::DgpSpec& spec, std::span<const std::size_t> n_grid,
                           std::span<const std::uint64_t> seeds, Estimator estimator,
                           const pipeline::FitConfig& cfg, unsigned threads = 1);

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct BernsteinRow {
  std::string dgp;
  std::string hypothesis_id;
  BernsteinReport report;
  double B = 0.0;
  double additive_eps = 0.0;
};

std::string bernstein_csv(std::span<const BernsteinRow> rows, const std::string& provenance);
std::string rates_csv(const RateResult& result, Estimator estimator,
                      const std::string& provenance);
std::string lowerbound_csv(const LowerboundResult& result, std::size_t n,
                           const std::string& provenance);

}  // namespace wermlab::diagnostics
