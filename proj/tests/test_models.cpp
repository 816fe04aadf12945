#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "wermlab/dgp.hpp"
#include "wermlab/models.hpp"
#include "wermlab/rng.hpp"

using namespace wermlab;
using models::Head;
using models::LossKind;
using models::MlpParams;
using models::ThresholdHypothesis;

namespace {

dgp::Dataset make_batch(int dim, std::vector<double> xs, std::vector<double> ys,
                        std::vector<std::int32_t> latent = {}) {
  return dgp::Dataset(dim, std::move(xs), std::move(ys), std::move(latent), {});
}

// Central finite differences of the mean loss in the flat parameter layout.
std::vector<double> fd_gradient(const MlpParams& p, const dgp::Dataset& batch,
                                LossKind kind, std::span<const double> weights,
                                std::span<const double> frozen, double h = 1e-5) {
  std::vector<double> g(p.theta.size());
  for (std::size_t i = 0; i < p.theta.size(); ++i) {
    MlpParams hi = p, lo = p;
    hi.theta[i] += h;
    lo.theta[i] -= h;
    const double fhi = models::loss_and_grad(hi, batch, kind, weights, frozen).loss;
    const double flo = models::loss_and_grad(lo, batch, kind, weights, frozen).loss;
    g[i] = (fhi - flo) / (2.0 * h);
  }
  return g;
}

double max_rel_err(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("mlp_init: parameter count and determinism") {
  const auto p = models::mlp_init(1, 32, Head::identity, 7);
  CHECK(p.size() == 97);  // 1*32 + 32 + 32 + 1
  const auto q = models::mlp_init(1, 32, Head::identity, 7);
  CHECK(p.theta == q.theta);
  const auto r = models::mlp_init(1, 32, Head::identity, 8);
  CHECK(p.theta != r.theta);
  CHECK_THROWS_AS(models::mlp_init(1, 0, Head::identity, 1), std::invalid_argument);
}

TEST_CASE("threshold predictions follow the sign convention") {
  ThresholdHypothesis h{{0.0}};
  const double a[1] = {0.1};
  CHECK(models::predict(h, std::span<const double>(a, 1)) == 1.0);
  const double b[1] = {0.0};
  CHECK(models::predict(h, std::span<const double>(b, 1)) == 1.0);  // sign(0) = +1
  const double c[1] = {-0.1};
  CHECK(models::predict(h, std::span<const double>(c, 1)) == -1.0);
}

TEST_CASE("threshold prediction is invariant to positive scaling") {
  rng::Xoshiro256pp gen(3);
  for (int t = 0; t < 200; ++t) {
    const double beta = gen.uniform(-2, 2);
    const double x = gen.uniform(-3, 3);
    const double c = std::exp(gen.uniform(-3, 3));
    ThresholdHypothesis h{{beta}}, hs{{c * beta}};
    const double xv[1] = {x}, xs[1] = {c * x};
    CHECK(models::predict(h, std::span<const double>(xv, 1)) ==
          models::predict(hs, std::span<const double>(xs, 1)));
  }
}

TEST_CASE("variance head clamps at the floor") {
  auto p = models::mlp_init(1, 4, Head::variance, 1, 0.05, 100.0);
  // Force the pre-head output to -100.
  for (int k = 0; k < 4; ++k) p.w2()[k] = 0.0;
  p.b2() = -100.0;
  const double x[1] = {0.3};
  CHECK(models::predict(p, std::span<const double>(x, 1)) == 0.05);
  p.b2() = 100.0;
  CHECK(models::predict(p, std::span<const double>(x, 1)) == 100.0);
}

TEST_CASE("head ranges hold for extreme inputs") {
  const auto ps = models::mlp_init(2, 8, Head::sigmoid, 11);
  const auto pv = models::mlp_init(2, 8, Head::variance, 12, 1e-3, 1e3);
  rng::Xoshiro256pp gen(5);
  for (int t = 0; t < 500; ++t) {
    const double x[2] = {gen.uniform(-1e3, 1e3), gen.uniform(-1e3, 1e3)};
    const double s = models::predict(ps, std::span<const double>(x, 2));
    CHECK(s > 0.0);
    CHECK(s < 1.0);
    const double v = models::predict(pv, std::span<const double>(x, 2));
    CHECK(v >= 1e-3);
    CHECK(v <= 1e3);
  }
}

TEST_CASE("all-zero weights annihilate loss and gradient") {
  const auto p = models::mlp_init(1, 4, Head::identity, 2);
  const auto batch = make_batch(1, {0.5, -0.25, 2.0}, {1.0, -1.0, 0.5});
  const std::vector<double> w(3, 0.0);
  const auto lg = models::loss_and_grad(p, batch, LossKind::weighted_squared, w);
  CHECK(lg.loss == 0.0);
  for (double g : lg.grad) CHECK(g == 0.0);
}

TEST_CASE("analytic gradients match central differences") {
  rng::Xoshiro256pp gen(17);
  const int draws = 10;
  for (LossKind kind : {LossKind::squared, LossKind::weighted_squared,
                        LossKind::cross_entropy, LossKind::weighted_cross_entropy,
                        LossKind::nll_frozen_mean}) {
    const bool ce = kind == LossKind::cross_entropy || kind == LossKind::weighted_cross_entropy;
    const bool nll = kind == LossKind::nll_frozen_mean;
    const Head head = ce ? Head::sigmoid : (nll ? Head::variance : Head::identity);
    for (int t = 0; t < draws; ++t) {
      const auto p = models::mlp_init(2, 5, head, 1000 + t, 1e-4, 1e4);
      std::vector<double> xs, ys;
      const std::size_t n = 6;
      for (std::size_t i = 0; i < n; ++i) {
        xs.push_back(gen.uniform(-2, 2));
        xs.push_back(gen.uniform(-2, 2));
        ys.push_back(ce ? (gen.uniform01() < 0.5 ? 1.0 : -1.0) : gen.uniform(-2, 2));
      }
      const auto batch = make_batch(2, xs, ys);
      std::vector<double> w;
      if (models::is_weighted(kind))
        for (std::size_t i = 0; i < n; ++i) w.push_back(gen.uniform(0.0, 2.0));
      std::vector<double> frozen;
      if (nll)
        for (std::size_t i = 0; i < n; ++i) frozen.push_back(gen.uniform(-1, 1));
      const auto lg = models::loss_and_grad(p, batch, kind, w, frozen);
      const auto fd = fd_gradient(p, batch, kind, w, frozen);
      CHECK(max_rel_err(lg.grad, fd) <= 1e-4);
    }
  }
}

TEST_CASE("near-linear single-unit gradient matches finite differences") {
  auto p = models::mlp_init(1, 1, Head::identity, 9);
  for (double& v : p.theta) v *= 0.01;  // keep tanh in its linear regime
  const auto batch = make_batch(1, {0.7}, {0.3});
  const auto lg = models::loss_and_grad(p, batch, LossKind::squared, {});
  const auto fd = fd_gradient(p, batch, LossKind::squared, {}, {});
  CHECK(max_rel_err(lg.grad, fd) <= 1e-4);
}

TEST_CASE("weight homogeneity: c*w scales loss and gradient by c") {
  rng::Xoshiro256pp gen(23);
  const auto p = models::mlp_init(1, 6, Head::identity, 31);
  std::vector<double> xs, ys, w;
  for (int i = 0; i < 8; ++i) {
    xs.push_back(gen.uniform(-2, 2));
    ys.push_back(gen.uniform(-2, 2));
    w.push_back(gen.uniform(0.0, 3.0));
  }
  const auto batch = make_batch(1, xs, ys);
  const double c = 2.7;
  std::vector<double> cw(w);
  for (double& v : cw) v *= c;
  const auto a = models::loss_and_grad(p, batch, LossKind::weighted_squared, w);
  const auto b = models::loss_and_grad(p, batch, LossKind::weighted_squared, cw);
  CHECK(b.loss == doctest::Approx(c * a.loss).epsilon(1e-12));
  for (std::size_t i = 0; i < a.grad.size(); ++i)
    CHECK(b.grad[i] == doctest::Approx(c * a.grad[i]).epsilon(1e-12));
}

TEST_CASE("nll with frozen zero mean is stationary at the residual second moment") {
  // Constant-variance model: only the output bias is active.
  auto p = models::mlp_init(1, 1, Head::variance, 3, 1e-4, 1e4);
  p.w1()[0] = 0.0;
  p.b1()[0] = 0.0;
  p.w2()[0] = 0.0;
  rng::Xoshiro256pp gen(8);
  std::vector<double> xs, ys;
  for (int i = 0; i < 64; ++i) {
    xs.push_back(gen.uniform(-1, 1));
    ys.push_back(gen.normal());
  }
  double m = 0.0;
  for (double y : ys) m += y * y;
  m /= static_cast<double>(ys.size());
  p.b2() = std::log(m);  // sigma^2 = m
  const auto batch = make_batch(1, xs, ys);
  const std::vector<double> frozen(ys.size(), 0.0);
  const auto lg = models::loss_and_grad(p, batch, LossKind::nll_frozen_mean, {}, frozen);
  CHECK(std::abs(lg.grad[lg.grad.size() - 1]) < 1e-12);
}

TEST_CASE("loss argument validation") {
  const auto p = models::mlp_init(1, 2, Head::identity, 1);
  const auto batch = make_batch(1, {0.1, 0.2}, {1.0, -1.0});
  CHECK_THROWS_AS(models::loss_and_grad(p, batch, LossKind::zero_one, {}),
                  std::invalid_argument);
  const std::vector<double> neg = {1.0, -0.5};
  CHECK_THROWS_AS(models::loss_and_grad(p, batch, LossKind::weighted_squared, neg),
                  std::invalid_argument);
  const std::vector<double> short_w = {1.0};
  CHECK_THROWS_AS(models::loss_and_grad(p, batch, LossKind::weighted_squared, short_w),
                  std::invalid_argument);
  CHECK_THROWS_AS(models::loss_and_grad(p, batch, LossKind::cross_entropy, {}),
                  std::invalid_argument);  // identity head
  const double bad[2] = {0.0, 0.0};
  CHECK_THROWS_AS(models::predict(p, std::span<const double>(bad, 2)),
                  std::invalid_argument);
}

TEST_CASE("mlp JSON round trip") {
  const auto p = models::mlp_init(2, 3, Head::variance, 77, 0.01, 50.0);
  const auto q = MlpParams::from_json_text(p.to_json_text());
  CHECK(q.in_dim == p.in_dim);
  CHECK(q.hidden == p.hidden);
  CHECK(q.head == p.head);
  CHECK(q.var_floor == p.var_floor);
  CHECK(q.theta == p.theta);
}
