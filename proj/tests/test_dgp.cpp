#include <doctest.h>

#include <cmath>
#include <map>
#include <stdexcept>

#include "wermlab/dgp.hpp"
#include "wermlab/rng.hpp"

using namespace wermlab;
using dgp::BasisDgpSpec;
using dgp::ClassificationDgpSpec;
using dgp::RegressionDgpSpec;

namespace {
double x1(double v) { return v; }  // readability helper for 1-d spans
}  // namespace

TEST_CASE("regression oracle values at pinned points") {
  RegressionDgpSpec spec;
  const double x0[1] = {0.0};
  auto e = dgp::oracle_eval(spec, std::span<const double>(x0, 1));
  CHECK(*e.f_star == doctest::Approx(0.0));
  CHECK(*e.sigma2_star == doctest::Approx(0.09));
  const double x10[1] = {10.0};
  e = dgp::oracle_eval(spec, std::span<const double>(x10, 1));
  CHECK(*e.sigma2_star == doctest::Approx(9.09));
}

TEST_CASE("regression sampling is bitwise deterministic") {
  RegressionDgpSpec spec;
  const auto a = dgp::sample_regression(spec, 512, 5);
  const auto b = dgp::sample_regression(spec, 512, 5);
  REQUIRE(a.n() == b.n());
  for (std::size_t i = 0; i < a.n(); ++i) {
    CHECK(a.x(i)[0] == b.x(i)[0]);
    CHECK(a.y(i) == b.y(i));
  }
  const auto c = dgp::sample_regression(spec, 512, 6);
  CHECK(a.y(0) != c.y(0));
}

TEST_CASE("standardized regression residuals have unit variance") {
  RegressionDgpSpec spec;
  const std::size_t n = 100000;
  const auto data = dgp::sample_regression(spec, n, 321);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = data.x(i)[0];
    const double z = (data.y(i) - RegressionDgpSpec::f_star(x)) /
                     std::sqrt(RegressionDgpSpec::sigma2_star(x));
    s += z;
    s2 += z * z;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("truncated noise is bounded with unit variance") {
  RegressionDgpSpec spec;
  spec.noise = dgp::NoiseKind::truncated_gaussian;
  spec.c2 = 2.0;
  const double bound = spec.noise_bound();
  CHECK(bound > 2.0);  // rescaling inflates the truncation point
  const std::size_t n = 100000;
  const auto data = dgp::sample_regression(spec, n, 77);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = data.x(i)[0];
    const double z = (data.y(i) - RegressionDgpSpec::f_star(x)) /
                     std::sqrt(RegressionDgpSpec::sigma2_star(x));
    CHECK(std::abs(z) <= bound);
    s += z;
    s2 += z * z;
  }
  const double mean = s / n;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
  CHECK(s2 / n - mean * mean == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("classification: no flips when p_flip = 0") {
  ClassificationDgpSpec spec;
  spec.p_flip = 0.0;
  const auto data = dgp::sample_classification(spec, 5000, 9);
  REQUIRE(data.has_latent());
  for (std::size_t i = 0; i < data.n(); ++i) {
    const int y_init = spec.phi_star(data.x(i)) > 0.5 ? 1 : -1;
    CHECK(static_cast<int>(data.y(i)) == y_init);
  }
}

TEST_CASE("classification: flip fraction on cluster 0' matches p_flip") {
  ClassificationDgpSpec spec;  // benchmark values, p_flip = 0.49
  const std::size_t n = 100000;
  const auto data = dgp::sample_classification(spec, n, 2024);
  std::size_t n0p = 0, flipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (data.latent(i) != static_cast<std::int32_t>(dgp::ClusterId::k0_prime)) continue;
    ++n0p;
    const int y_init = spec.phi_star(data.x(i)) > 0.5 ? 1 : -1;
    if (static_cast<int>(data.y(i)) != y_init) ++flipped;
  }
  CHECK(n0p > 40000);  // prior 0.5
  const double frac = static_cast<double>(flipped) / static_cast<double>(n0p);
  CHECK(frac == doctest::Approx(0.49).epsilon(0.01 / 0.49));
}

TEST_CASE("classification oracle: eta through the latent cluster") {
  ClassificationDgpSpec spec;
  const double x[2] = {-10.0, 0.0};
  auto e = dgp::oracle_eval(spec, std::span<const double>(x, 2),
                            static_cast<std::int32_t>(dgp::ClusterId::k0_prime));
  CHECK(*e.eta_star == doctest::Approx(0.49));
  CHECK(*e.omega_half == doctest::Approx(0.01));
  CHECK(e.bayes_label == -1);
  // Without the latent id only the Bayes label is available.
  auto e2 = dgp::oracle_eval(spec, std::span<const double>(x, 2), std::nullopt);
  CHECK(!e2.eta_star.has_value());
  CHECK(e2.bayes_label == -1);
  const double xr[2] = {3.0, 0.0};
  auto e3 = dgp::oracle_eval(spec, std::span<const double>(xr, 2),
                             static_cast<std::int32_t>(dgp::ClusterId::k1));
  CHECK(*e3.eta_star == doctest::Approx(1.0));
  CHECK(e3.bayes_label == 1);
}

TEST_CASE("margin helpers at the zero-margin point") {
  CHECK(dgp::omega_half_from_eta(0.5) == doctest::Approx(0.0));
  CHECK(dgp::omega_raw_from_eta(0.5) == doctest::Approx(0.0));
  CHECK(dgp::bayes_label_from_eta(0.5) == 1);  // sign(0) = +1 convention
}

TEST_CASE("basis eta values on the four segments") {
  BasisDgpSpec spec{1, 0.2};
  CHECK(spec.eta_star(0.1) == doctest::Approx(1.0));
  CHECK(spec.eta_star(1.5) == doctest::Approx(0.6));
  CHECK(spec.eta_star(-0.1) == doctest::Approx(0.0));
  CHECK(spec.eta_star(-1.5) == doctest::Approx(0.0));

  const double xp[1] = {1.5};
  auto e = dgp::oracle_eval(spec, std::span<const double>(xp, 1));
  CHECK(*e.eta_star == doctest::Approx(0.6));
  CHECK(*e.omega_raw == doctest::Approx(0.2));
  CHECK(e.bayes_label == 1);
}

TEST_CASE("basis samples: atom labels are deterministic, negatives are -1") {
  BasisDgpSpec spec{1, 0.2};
  const auto data = dgp::sample_basis(spec, 200000, 55);
  std::size_t atom_count = 0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const double a = data.x(i)[0];
    if (a == 0.1) {
      ++atom_count;
      CHECK(data.y(i) == 1.0);
    } else if (a < 0.0) {
      CHECK(data.y(i) == -1.0);
    }
    const double eta = spec.eta_star(a);
    const bool allowed = eta == 0.0 || eta == 0.5 || eta == (1.0 + spec.gamma) / 2.0 ||
                         eta == 1.0;
    CHECK(allowed);
    CHECK(dgp::omega_raw_from_eta(eta) >= spec.gamma - 1e-12);
  }
  // Atom mass gamma/32 within 3 standard errors.
  const double p = spec.gamma / 32.0;
  const double se = std::sqrt(p * (1 - p) / static_cast<double>(data.n()));
  CHECK(std::abs(static_cast<double>(atom_count) / data.n() - p) <= 3.0 * se);
}

TEST_CASE("basis d > 1 keeps samples on the axes with latent coordinate") {
  BasisDgpSpec spec{3, 0.1};
  const auto data = dgp::sample_basis(spec, 3000, 8);
  for (std::size_t i = 0; i < data.n(); ++i) {
    const int j = data.latent(i);
    for (int k = 0; k < 3; ++k)
      if (k != j) CHECK(data.x(i)[k] == 0.0);
    CHECK(data.x(i)[j] != 0.0);
  }
}

TEST_CASE("invalid specs are rejected at construction") {
  RegressionDgpSpec r;
  r.x_low = 5.0;
  r.x_high = 5.0;
  CHECK_THROWS_AS(r.validate(), std::invalid_argument);

  ClassificationDgpSpec c;
  c.p_flip = 0.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  ClassificationDgpSpec c2;
  c2.clusters[0].prior = 0.4;
  CHECK_THROWS_AS(c2.validate(), std::invalid_argument);
  ClassificationDgpSpec c3;
  c3.covariance = {1.0, 2.0, 2.0, 1.0};  // not positive definite
  CHECK_THROWS_AS(c3.validate(), std::invalid_argument);

  BasisDgpSpec b{0, 0.2};
  CHECK_THROWS_AS(b.validate(), std::invalid_argument);
  BasisDgpSpec b2{1, 1.0};
  CHECK_THROWS_AS(b2.validate(), std::invalid_argument);
  BasisDgpSpec b3{1, 0.05};
  CHECK_NOTHROW(b3.validate());

  CHECK_THROWS_AS(dgp::sample_regression(RegressionDgpSpec{}, 0, 1),
                  std::invalid_argument);
}

TEST_CASE("basis oracle rejects off-support points") {
  BasisDgpSpec spec{2, 0.2};
  const double off_axis[2] = {1.0, 1.0};
  CHECK_THROWS_AS(dgp::oracle_eval(spec, std::span<const double>(off_axis, 2)),
                  std::domain_error);
  const double off_support[2] = {0.5, 0.0};
  CHECK_THROWS_AS(dgp::oracle_eval(spec, std::span<const double>(off_support, 2)),
                  std::domain_error);
  const double zero[2] = {0.0, 0.0};
  CHECK_THROWS_AS(dgp::oracle_eval(spec, std::span<const double>(zero, 2)),
                  std::domain_error);
}

TEST_CASE("spec JSON round trip preserves the digest") {
  dgp::DgpSpec spec = ClassificationDgpSpec{};
  const auto text = dgp::to_canonical_json(spec);
  const auto back = dgp::dgp_from_json_text(text);
  CHECK(dgp::to_canonical_json(back) == text);
  CHECK(dgp::spec_digest(back) == dgp::spec_digest(spec));

  dgp::DgpSpec rb = BasisDgpSpec{2, 0.05};
  CHECK(dgp::spec_digest(dgp::dgp_from_json_text(dgp::to_canonical_json(rb))) ==
        dgp::spec_digest(rb));
}

TEST_CASE("classification sampling: empirical priors match") {
  ClassificationDgpSpec spec;
  const std::size_t n = 100000;
  const auto data = dgp::sample_classification(spec, n, 4);
  std::map<std::int32_t, std::size_t> counts;
  for (std::size_t i = 0; i < n; ++i) ++counts[data.latent(i)];
  CHECK(static_cast<double>(counts[1]) / n == doctest::Approx(0.50).epsilon(0.02));
  CHECK(static_cast<double>(counts[0]) / n == doctest::Approx(0.25).epsilon(0.03));
  CHECK(static_cast<double>(counts[2]) / n == doctest::Approx(0.20).epsilon(0.03));
  CHECK(static_cast<double>(counts[3]) / n == doctest::Approx(0.05).epsilon(0.05));
}
