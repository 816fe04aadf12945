#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "wermlab/diagnostics.hpp"
#include "wermlab/dgp.hpp"
#include "wermlab/rng.hpp"

using namespace wermlab;
using diagnostics::BernsteinCheckSpec;
using diagnostics::ProbeMethod;
using dgp::BasisDgpSpec;
using models::ThresholdHypothesis;
using pipeline::MarginConvention;
using pipeline::WeightModel;

TEST_CASE("exact probe: oracle classifier has zero mean and variance") {
  BasisDgpSpec spec{1, 0.2};
  ThresholdHypothesis bayes{{0.0}};  // any beta in (-0.1, 0.1] matches f*
  BernsteinCheckSpec check;
  check.B = 1.0;
  check.gamma = spec.gamma;
  const auto w = WeightModel::oracle_margin(spec, MarginConvention::raw);
  const auto rep = diagnostics::bernstein_probe(spec, bayes, w, check, 0, 0);
  CHECK(rep.method == ProbeMethod::exact_enumeration);
  CHECK(rep.mean_hat == 0.0);
  CHECK(rep.var_hat == 0.0);
  CHECK(rep.pass);
}

TEST_CASE("exact probe frozen values at beta = 0.5, gamma = 0.2") {
  // Only the +0.1 atom disagrees: the weighted excess loss is Bernoulli with
  // success probability gamma/32.
  BasisDgpSpec spec{1, 0.2};
  ThresholdHypothesis h{{0.5}};
  BernsteinCheckSpec check;
  check.B = 1.0;
  check.gamma = spec.gamma;
  const auto w = WeightModel::oracle_margin(spec, MarginConvention::raw);
  const auto rep = diagnostics::bernstein_probe(spec, h, w, check, 0, 0);
  CHECK(rep.mean_hat == doctest::Approx(0.00625).epsilon(1e-12));
  CHECK(rep.var_hat == doctest::Approx(0.0062109375).epsilon(1e-12));
  CHECK(rep.slack >= 0.0);
  CHECK(rep.pass);

  const auto fn = diagnostics::enumerate_threshold(spec, h.beta);
  CHECK(fn.excess_plain == doctest::Approx(0.00625).epsilon(1e-12));
  CHECK(fn.p_disagree == doctest::Approx(0.00625).epsilon(1e-12));
}

TEST_CASE("balanced and plain Bernstein conditions hold for random thresholds") {
  for (double gamma : {0.05, 0.2}) {
    BasisDgpSpec spec{1, gamma};
    const auto oracle_w = WeightModel::oracle_margin(spec, MarginConvention::raw);
    const auto unit_w = WeightModel::make_constant(1.0);
    BernsteinCheckSpec balanced;
    balanced.B = 1.0;
    balanced.gamma = gamma;
    BernsteinCheckSpec plain;
    plain.B = 1.0 / gamma;
    plain.gamma = gamma;
    rng::Xoshiro256pp gen(404);
    for (int t = 0; t < 2000; ++t) {
      ThresholdHypothesis h{{gen.uniform(-2.5, 2.5)}};
      const auto rb = diagnostics::bernstein_probe(spec, h, oracle_w, balanced, 0, 0);
      CHECK(rb.slack >= -1e-12);
      const auto rp = diagnostics::bernstein_probe(spec, h, unit_w, plain, 0, 0);
      CHECK(rp.slack >= -1e-12);
    }
  }
}

TEST_CASE("monte carlo and exact probes agree within 4 standard errors") {
  BasisDgpSpec spec{1, 0.2};
  ThresholdHypothesis h{{1.3}};
  BernsteinCheckSpec check;
  check.B = 1.0;
  check.gamma = spec.gamma;
  const auto w = WeightModel::oracle_margin(spec, MarginConvention::raw);
  const auto exact = diagnostics::bernstein_probe(spec, h, w, check, 0, 0);
  const auto mc = diagnostics::bernstein_probe(spec, h, w, check, 200000, 31,
                                               ProbeMethod::monte_carlo);
  CHECK(std::abs(mc.mean_hat - exact.mean_hat) <= 4.0 * mc.stderr_mean + 1e-9);
  CHECK(std::abs(mc.var_hat - exact.var_hat) <= 4.0 * mc.stderr_var + 1e-9);
}

TEST_CASE("regression probe with truncated noise passes the stated multipliers") {
  dgp::RegressionDgpSpec rspec;
  rspec.noise = dgp::NoiseKind::truncated_gaussian;
  rspec.c2 = 2.0;
  const dgp::DgpSpec spec = rspec;
  risk::Evaluator f = [](std::span<const double> x) {
    return dgp::RegressionDgpSpec::f_star(x[0]) + 0.5;
  };
  const double max_s2 = rspec.max_sigma2();
  BernsteinCheckSpec plain;
  plain.B = 8.0 * max_s2;
  plain.noise_bound_c2 = rspec.noise_bound();
  plain.variance_floor_c3 = rspec.min_sigma2();
  plain.gamma = 1.0 / max_s2;
  const auto rep = diagnostics::bernstein_probe(spec, f, WeightModel::make_constant(1.0),
                                                models::LossKind::squared, plain,
                                                100000, 7);
  CHECK(rep.pass);
  // The shifted hypothesis has mean excess exactly 1/4.
  CHECK(std::abs(rep.mean_hat - 0.25) <= 4.0 * rep.stderr_mean);

  BernsteinCheckSpec balanced = plain;
  balanced.B = 1.0;
  const double c3 = rspec.min_sigma2();
  const double C = 1.0 / (2.0 * (1.0 + 4.0 / c3));
  auto w = WeightModel::oracle_precision(spec).with_scale(C);
  const auto rb = diagnostics::bernstein_probe(spec, f, w, models::LossKind::squared,
                                               balanced, 100000, 8);
  CHECK(rb.pass);
}

TEST_CASE("probe input validation") {
  BernsteinCheckSpec bad;
  bad.B = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  BasisDgpSpec spec{1, 0.2};
  BernsteinCheckSpec check;
  const dgp::DgpSpec vspec = spec;
  risk::Evaluator f = [](std::span<const double>) { return 1.0; };
  CHECK_THROWS_AS(diagnostics::bernstein_probe(vspec, f, WeightModel::make_constant(1.0),
                                               models::LossKind::cross_entropy, check,
                                               100, 1),
                  std::invalid_argument);
}

TEST_CASE("sign test on an obvious separation") {
  std::vector<double> a = {3, 3, 3, 3, 3, 3, 3, 3, 3, 3};
  std::vector<double> b = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  CHECK(diagnostics::sign_test_two_sided(a, b) == doctest::Approx(2.0 / 1024.0));
  CHECK(diagnostics::sign_test_two_sided(a, a) == 1.0);
}

TEST_CASE("lowerbound experiment: separation at reduced scale") {
  BasisDgpSpec spec{1, 0.05};
  const auto res = diagnostics::lowerbound_experiment(spec, 6000, 100, 0.0, 99);
  CHECK(res.mean_err_werm < res.mean_err_erm);
  CHECK(res.erm_fail_freq > 0.0);
  // wERM protects the high-margin region in nearly every trial.
  std::size_t small = 0;
  for (const auto& t : res.trials)
    if (t.err_werm <= 0.02) ++small;
  CHECK(static_cast<double>(small) / res.trials.size() >= 0.9);
}

TEST_CASE("lowerbound: trials without a +0.1 atom sample keep ERM and wERM equal") {
  BasisDgpSpec spec{1, 0.2};
  const std::size_t n = 200;  // atom unsampled with sizeable probability
  std::size_t matched = 0, without_atom = 0;
  for (std::uint64_t t = 0; t < 60; ++t) {
    const auto data = dgp::sample_basis(spec, n, rng::derive_stream(7, t));
    bool has_atom = false;
    for (std::size_t i = 0; i < data.n(); ++i)
      if (data.x(i)[0] == 0.1) has_atom = true;
    if (has_atom) continue;
    ++without_atom;
    std::vector<double> ones(data.n(), 1.0), oracle(data.n());
    for (std::size_t i = 0; i < data.n(); ++i)
      oracle[i] = dgp::omega_raw_from_eta(spec.eta_star(data.x(i)[0]));
    const auto erm = pipeline::exact_basis_erm(data, ones);
    const auto werm = pipeline::exact_basis_erm(data, oracle);
    if (erm.beta[0] == werm.beta[0]) ++matched;
  }
  REQUIRE(without_atom > 0);
  CHECK(matched == without_atom);
}

TEST_CASE("lowerbound experiment validates its inputs") {
  BasisDgpSpec spec{1, 0.05};
  CHECK_THROWS_AS(diagnostics::lowerbound_experiment(spec, 100, 10, 0.0, 1),
                  std::invalid_argument);
}

TEST_CASE("rate experiment: gamma = 0 is degenerate (all risks zero)") {
  BasisDgpSpec spec{1, 0.0};
  const dgp::DgpSpec vspec = spec;
  std::vector<std::size_t> grid = {100, 200, 400, 1000};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  pipeline::FitConfig cfg;
  const auto res = diagnostics::rate_experiment(vspec, grid, seeds,
                                                diagnostics::Estimator::werm, cfg);
  CHECK(res.degenerate);
  for (const auto& c : res.cells) CHECK(c.risk == 0.0);
  CHECK(res.excluded_ns.size() == grid.size());
}

TEST_CASE("rate experiment rejects a narrow grid") {
  BasisDgpSpec spec{1, 0.2};
  const dgp::DgpSpec vspec = spec;
  std::vector<std::size_t> grid = {100, 200, 300, 400};  // less than a decade
  std::vector<std::uint64_t> seeds = {1};
  pipeline::FitConfig cfg;
  CHECK_THROWS_AS(diagnostics::rate_experiment(vspec, grid, seeds,
                                               diagnostics::Estimator::erm, cfg),
                  std::invalid_argument);
}

TEST_CASE("measured weight eps is zero for identical models") {
  BasisDgpSpec spec{1, 0.2};
  const dgp::DgpSpec vspec = spec;
  const auto w = WeightModel::oracle_margin(vspec, MarginConvention::raw);
  CHECK(diagnostics::measure_weight_eps(vspec, w, w, 2000, 3) == 0.0);
}

TEST_CASE("diagnostics csv schemas") {
  BasisDgpSpec spec{1, 0.2};
  ThresholdHypothesis h{{0.5}};
  BernsteinCheckSpec check;
  check.gamma = spec.gamma;
  const auto w = WeightModel::oracle_margin(spec, MarginConvention::raw);
  const auto rep = diagnostics::bernstein_probe(spec, h, w, check, 0, 0);
  std::vector<diagnostics::BernsteinRow> rows = {{"basis", "h0", rep, 1.0, 0.0}};
  const auto csv = diagnostics::bernstein_csv(rows, "prov");
  CHECK(csv.find("dgp,hypothesis_id,method,n_mc,mean_hat,var_hat,B,additive_eps,slack,pass") !=
        std::string::npos);
  CHECK(csv.find("basis,h0,exact_enumeration") != std::string::npos);
}
