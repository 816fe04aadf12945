#include "wermlab/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "wermlab/common.hpp"
#include "wermlab/rng.hpp"

namespace wermlab::dgp {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Regression spec
// ---------------------------------------------------------------------------

void RegressionDgpSpec::validate() const {
  if (!std::isfinite(x_low) || !std::isfinite(x_high) || !(x_low < x_high))
    throw std::invalid_argument("regression spec: requires x_low < x_high");
  if (noise == NoiseKind::truncated_gaussian && !(c2 > 0.0 && std::isfinite(c2)))
    throw std::invalid_argument("regression spec: truncation point c2 must be positive");
}

double RegressionDgpSpec::f_star(double x) { return x * std::sin(x); }

double RegressionDgpSpec::sigma2_star(double x) { return 0.09 * (1.0 + x * x); }

double RegressionDgpSpec::max_sigma2() const {
  double m = std::max(std::abs(x_low), std::abs(x_high));
  return sigma2_star(m);
}

double RegressionDgpSpec::min_sigma2() const {
  double m = (x_low <= 0.0 && x_high >= 0.0)
                 ? 0.0
                 : std::min(std::abs(x_low), std::abs(x_high));
  return sigma2_star(m);
}

static double std_normal_pdf(double t) {
  return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
}

static double std_normal_cdf(double t) {
  return 0.5 * std::erfc(-t / std::numbers::sqrt2);
}

double RegressionDgpSpec::truncated_sd() const {
  // Var of N(0,1) restricted to (-c, c): 1 - 2 c phi(c) / (2 Phi(c) - 1).
  const double mass = 2.0 * std_normal_cdf(c2) - 1.0;
  return std::sqrt(1.0 - 2.0 * c2 * std_normal_pdf(c2) / mass);
}

double RegressionDgpSpec::noise_bound() const {
  if (noise == NoiseKind::gaussian) return std::numeric_limits<double>::infinity();
  return c2 / truncated_sd();
}

// ---------------------------------------------------------------------------
// Classification spec
// ---------------------------------------------------------------------------

void ClassificationDgpSpec::validate() const {
  if (clusters.empty()) throw std::invalid_argument("classification spec: no clusters");
  double total = 0.0;
  for (const auto& c : clusters) {
    if (!(c.prior >= 0.0) || !std::isfinite(c.prior))
      throw std::invalid_argument("classification spec: bad prior");
    total += c.prior;
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw std::invalid_argument("classification spec: priors must sum to 1");
  const double a = covariance[0], b = covariance[1], c = covariance[2], d = covariance[3];
  if (b != c) throw std::invalid_argument("classification spec: covariance not symmetric");
  if (!(a > 0.0) || !(a * d - b * c > 0.0))
    throw std::invalid_argument("classification spec: covariance not positive definite");
  if (!(p_flip >= 0.0 && p_flip < 0.5))
    throw std::invalid_argument("classification spec: p_flip must lie in [0, 0.5)");
}

double ClassificationDgpSpec::phi_star(std::span<const double> x) const {
  // Equal covariance cancels the normalizing constant; work with
  // p_k * exp(-q_k / 2), q_k the Mahalanobis form.
  const double a = covariance[0], b = covariance[1], d = covariance[3];
  const double det = a * d - b * b;
  const double ia = d / det, ib = -b / det, id = a / det;
  double pos = 0.0, total = 0.0;
  for (const auto& c : clusters) {
    const double dx = x[0] - c.mean[0];
    const double dy = x[1] - c.mean[1];
    const double q = ia * dx * dx + 2.0 * ib * dx * dy + id * dy * dy;
    const double w = c.prior * std::exp(-0.5 * q);
    total += w;
    if (c.id == ClusterId::k1 || c.id == ClusterId::k1_prime) pos += w;
  }
  return pos / total;
}

// ---------------------------------------------------------------------------
// Basis spec
// ---------------------------------------------------------------------------

void BasisDgpSpec::validate() const {
  if (d < 1) throw std::invalid_argument("basis spec: d must be >= 1");
  // Masses and eta* are well-defined for gamma in [0, 1); the separation
  // regime of the lower-bound construction additionally wants gamma < 1/12.
  if (!(gamma >= 0.0) || !(gamma < 1.0))
    throw std::invalid_argument("basis spec: gamma must lie in [0, 1)");
  if (gamma == 0.0) return;  // degenerate testing case, single segment
  // Mass identity checked in exact rational arithmetic: gamma is a dyadic
  // rational m / 2^k, so the four masses share denominator 2^(k+5) and their
  // numerators must sum to it exactly.
  int exp = 0;
  const double frac = std::frexp(gamma, &exp);  // gamma = frac * 2^exp
  const auto m = static_cast<__int128>(std::ldexp(frac, 53));  // integer mantissa
  const int k = 53 - exp;  // gamma = m / 2^k
  if (k + 5 > 120) throw std::invalid_argument("basis spec: gamma too small");
  const __int128 den = static_cast<__int128>(1) << (k + 5);
  const __int128 sum = m + m + m + (den - 3 * m);
  if (sum != den) throw std::invalid_argument("basis spec: segment masses do not sum to 1");
}

double BasisDgpSpec::eta_star(double alpha) const {
  if (alpha < 0.0) return 0.0;
  double inner = 1.0;
  if (alpha == 0.1) inner += 1.0;
  if (alpha >= 1.0) inner += gamma;
  return 0.5 * inner;
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

static json regression_to_json(const RegressionDgpSpec& s) {
  json j;
  j["kind"] = "regression";
  j["x_low"] = s.x_low;
  j["x_high"] = s.x_high;
  j["noise_kind"] = s.noise == NoiseKind::gaussian ? "gaussian" : "truncated_gaussian";
  if (s.noise == NoiseKind::truncated_gaussian) j["c2"] = s.c2;
  return j;
}

static json classification_to_json(const ClassificationDgpSpec& s) {
  json j;
  j["kind"] = "classification";
  json cl = json::array();
  static const char* names[] = {"0", "0'", "1", "1'"};
  for (const auto& c : s.clusters) {
    cl.push_back({{"id", names[static_cast<int>(c.id)]},
                  {"prior", c.prior},
                  {"mean", {c.mean[0], c.mean[1]}}});
  }
  j["clusters"] = cl;
  j["covariance"] = {s.covariance[0], s.covariance[1], s.covariance[2], s.covariance[3]};
  j["p_flip"] = s.p_flip;
  return j;
}

static json basis_to_json(const BasisDgpSpec& s) {
  return json{{"kind", "basis"}, {"d", s.d}, {"gamma", s.gamma}};
}

std::string to_canonical_json(const DgpSpec& spec) {
  json j = std::visit(
      [](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, RegressionDgpSpec>) return regression_to_json(s);
        else if constexpr (std::is_same_v<T, ClassificationDgpSpec>) return classification_to_json(s);
        else return basis_to_json(s);
      },
      spec);
  return j.dump();
}

static ClusterId cluster_id_from_name(const std::string& name) {
  if (name == "0") return ClusterId::k0;
  if (name == "0'") return ClusterId::k0_prime;
  if (name == "1") return ClusterId::k1;
  if (name == "1'") return ClusterId::k1_prime;
  throw ConfigError("unknown cluster id '" + name + "'");
}

static void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) { ok = true; break; }
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in dgp spec");
  }
}

DgpSpec dgp_from_json_text(const std::string& text) {
  json j = json::parse(text);
  if (!j.is_object() || !j.contains("kind"))
    throw ConfigError("dgp spec: missing 'kind'");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "regression") {
    reject_unknown_keys(j, {"kind", "x_low", "x_high", "noise_kind", "c2"});
    RegressionDgpSpec s;
    if (j.contains("x_low")) s.x_low = j.at("x_low").get<double>();
    if (j.contains("x_high")) s.x_high = j.at("x_high").get<double>();
    if (j.contains("noise_kind")) {
      const std::string nk = j.at("noise_kind").get<std::string>();
      if (nk == "gaussian") s.noise = NoiseKind::gaussian;
      else if (nk == "truncated_gaussian") s.noise = NoiseKind::truncated_gaussian;
      else throw ConfigError("dgp spec: unknown noise_kind '" + nk + "'");
    }
    if (j.contains("c2")) s.c2 = j.at("c2").get<double>();
    s.validate();
    return s;
  }
  if (kind == "classification") {
    reject_unknown_keys(j, {"kind", "clusters", "covariance", "p_flip"});
    ClassificationDgpSpec s;
    if (j.contains("clusters")) {
      s.clusters.clear();
      for (const auto& c : j.at("clusters")) {
        reject_unknown_keys(c, {"id", "prior", "mean"});
        Cluster cl;
        cl.id = cluster_id_from_name(c.at("id").get<std::string>());
        cl.prior = c.at("prior").get<double>();
        auto mean = c.at("mean");
        cl.mean = {mean.at(0).get<double>(), mean.at(1).get<double>()};
        s.clusters.push_back(cl);
      }
    }
    if (j.contains("covariance")) {
      auto cv = j.at("covariance");
      if (cv.size() != 4) throw ConfigError("dgp spec: covariance must have 4 entries");
      for (int i = 0; i < 4; ++i) s.covariance[i] = cv.at(i).get<double>();
    }
    if (j.contains("p_flip")) s.p_flip = j.at("p_flip").get<double>();
    s.validate();
    return s;
  }
  if (kind == "basis") {
    reject_unknown_keys(j, {"kind", "d", "gamma"});
    BasisDgpSpec s;
    s.d = j.at("d").get<int>();
    s.gamma = j.at("gamma").get<double>();
    s.validate();
    return s;
  }
  throw ConfigError("dgp spec: unknown kind '" + kind + "'");
}

std::uint64_t spec_digest(const DgpSpec& spec) {
  return fnv1a64(to_canonical_json(spec));
}

std::string dgp_kind_name(const DgpSpec& spec) {
  return std::visit(
      [](const auto& s) -> std::string {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, RegressionDgpSpec>) return "regression";
        else if constexpr (std::is_same_v<T, ClassificationDgpSpec>) return "classification";
        else return "basis";
      },
      spec);
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

Dataset::Dataset(int dim, std::vector<double> xs, std::vector<double> ys,
                 std::vector<std::int32_t> latent, Provenance prov)
    : dim_(dim), xs_(std::move(xs)), ys_(std::move(ys)),
      latent_(std::move(latent)), prov_(prov) {
  if (xs_.size() != ys_.size() * static_cast<std::size_t>(dim_))
    throw std::invalid_argument("dataset: x block size mismatch");
  if (!latent_.empty() && latent_.size() != ys_.size())
    throw std::invalid_argument("dataset: latent size mismatch");
}

Dataset Dataset::subset(std::span<const std::uint32_t> indices) const {
  std::vector<double> xs;
  xs.reserve(indices.size() * dim_);
  std::vector<double> ys;
  ys.reserve(indices.size());
  std::vector<std::int32_t> latent;
  if (has_latent()) latent.reserve(indices.size());
  for (std::uint32_t i : indices) {
    auto xi = x(i);
    xs.insert(xs.end(), xi.begin(), xi.end());
    ys.push_back(ys_[i]);
    if (has_latent()) latent.push_back(latent_[i]);
  }
  Provenance p = prov_;
  p.n = indices.size();
  return Dataset(dim_, std::move(xs), std::move(ys), std::move(latent), p);
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

static void require_n(std::size_t n) {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
}

Dataset sample_regression(const RegressionDgpSpec& spec, std::size_t n,
                          std::uint64_t seed) {
  spec.validate();
  require_n(n);
  rng::Xoshiro256pp gen(seed);
  const double inv_sd =
      spec.noise == NoiseKind::truncated_gaussian ? 1.0 / spec.truncated_sd() : 1.0;
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = gen.uniform(spec.x_low, spec.x_high);
    double xi;
    if (spec.noise == NoiseKind::gaussian) {
      xi = gen.normal();
    } else {
      do {
        xi = gen.normal();
      } while (!(std::abs(xi) < spec.c2));
      xi *= inv_sd;
    }
    xs[i] = x;
    ys[i] = RegressionDgpSpec::f_star(x) + std::sqrt(RegressionDgpSpec::sigma2_star(x)) * xi;
  }
  return Dataset(1, std::move(xs), std::move(ys), {},
                 Provenance{spec_digest(spec), seed, n});
}

Dataset sample_classification(const ClassificationDgpSpec& spec, std::size_t n,
                              std::uint64_t seed) {
  spec.validate();
  require_n(n);
  rng::Xoshiro256pp gen(seed);
  // Cholesky factor of the shared covariance.
  const double a = spec.covariance[0], b = spec.covariance[1], d = spec.covariance[3];
  const double l11 = std::sqrt(a);
  const double l21 = b / l11;
  const double l22 = std::sqrt(d - l21 * l21);
  std::vector<double> xs(2 * n), ys(n);
  std::vector<std::int32_t> latent(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double uc = gen.uniform01();
    std::size_t k = 0;
    double acc = 0.0;
    for (; k + 1 < spec.clusters.size(); ++k) {
      acc += spec.clusters[k].prior;
      if (uc < acc) break;
    }
    const Cluster& cl = spec.clusters[k];
    const auto [z1, z2] = gen.normal_pair();
    const double x0 = cl.mean[0] + l11 * z1;
    const double x1 = cl.mean[1] + l21 * z1 + l22 * z2;
    // A flip uniform is drawn for every sample and applied only on cluster 0'.
    const double uf = gen.uniform01();
    const double q[2] = {x0, x1};
    int y = spec.phi_star(std::span<const double>(q, 2)) > 0.5 ? 1 : -1;
    if (cl.id == ClusterId::k0_prime && uf < spec.p_flip) y = -y;
    xs[2 * i] = x0;
    xs[2 * i + 1] = x1;
    ys[i] = y;
    latent[i] = static_cast<std::int32_t>(cl.id);
  }
  return Dataset(2, std::move(xs), std::move(ys), std::move(latent),
                 Provenance{spec_digest(spec), seed, n});
}

Dataset sample_basis(const BasisDgpSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  require_n(n);
  rng::Xoshiro256pp gen(seed);
  const double g32 = spec.gamma / 32.0;
  std::vector<double> xs(static_cast<std::size_t>(spec.d) * n, 0.0);
  std::vector<double> ys(n);
  std::vector<std::int32_t> latent(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Fixed draw shape per sample: coordinate, segment, amplitude, label.
    const double uj = gen.uniform01();
    const double us = gen.uniform01();
    const double ua = gen.uniform01();
    const double uy = gen.uniform01();
    const int j = std::min(static_cast<int>(uj * spec.d), spec.d - 1);
    double alpha;
    if (us < g32) alpha = 0.1;
    else if (us < 2.0 * g32) alpha = -0.1;
    else if (us < 1.0 - g32) alpha = 1.0 + ua;
    else alpha = -2.0 + ua;
    xs[static_cast<std::size_t>(spec.d) * i + j] = alpha;
    ys[i] = uy < spec.eta_star(alpha) ? 1.0 : -1.0;
    latent[i] = j;
  }
  return Dataset(spec.d, std::move(xs), std::move(ys), std::move(latent),
                 Provenance{spec_digest(spec), seed, n});
}

Dataset sample(const DgpSpec& spec, std::size_t n, std::uint64_t seed) {
  return std::visit(
      [&](const auto& s) -> Dataset {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, RegressionDgpSpec>) return sample_regression(s, n, seed);
        else if constexpr (std::is_same_v<T, ClassificationDgpSpec>) return sample_classification(s, n, seed);
        else return sample_basis(s, n, seed);
      },
      spec);
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

OracleEval oracle_eval(const RegressionDgpSpec& spec, std::span<const double> x) {
  if (x.size() != 1) throw std::invalid_argument("regression oracle: x must be scalar");
  OracleEval e;
  e.f_star = RegressionDgpSpec::f_star(x[0]);
  e.sigma2_star = RegressionDgpSpec::sigma2_star(x[0]);
  return e;
}

OracleEval oracle_eval(const ClassificationDgpSpec& spec, std::span<const double> x,
                       std::optional<std::int32_t> latent) {
  if (x.size() != 2) throw std::invalid_argument("classification oracle: x must be 2-d");
  OracleEval e;
  const double phi = spec.phi_star(x);
  if (latent.has_value()) {
    const auto id = static_cast<ClusterId>(*latent);
    double eta;
    if (id == ClusterId::k0_prime) {
      // Labels on 0' are flipped with probability p_flip from the phi*-side.
      eta = phi > 0.5 ? 1.0 - spec.p_flip : spec.p_flip;
    } else {
      eta = phi > 0.5 ? 1.0 : 0.0;
    }
    e.eta_star = eta;
    e.omega_raw = omega_raw_from_eta(eta);
    e.omega_half = omega_half_from_eta(eta);
    e.bayes_label = bayes_label_from_eta(eta);
  } else {
    e.bayes_label = phi > 0.5 ? 1 : -1;
  }
  return e;
}

BasisPoint basis_locate(const BasisDgpSpec& spec, std::span<const double> x) {
  if (static_cast<int>(x.size()) != spec.d)
    throw std::invalid_argument("basis oracle: dimension mismatch");
  int j = -1;
  for (int k = 0; k < spec.d; ++k) {
    if (x[k] != 0.0) {
      if (j >= 0) throw std::domain_error("basis oracle: x is off the coordinate axes");
      j = k;
    }
  }
  if (j < 0) throw std::domain_error("basis oracle: x = 0 is off the support");
  const double alpha = x[j];
  const double a = std::abs(alpha);
  if (!(a == 0.1 || (a >= 1.0 && a <= 2.0)))
    throw std::domain_error("basis oracle: amplitude off the support");
  return {j, alpha};
}

OracleEval oracle_eval(const BasisDgpSpec& spec, std::span<const double> x) {
  const BasisPoint p = basis_locate(spec, x);
  OracleEval e;
  const double eta = spec.eta_star(p.alpha);
  e.eta_star = eta;
  e.omega_raw = omega_raw_from_eta(eta);
  e.omega_half = omega_half_from_eta(eta);
  e.bayes_label = bayes_label_from_eta(eta);
  return e;
}

OracleEval oracle_eval(const DgpSpec& spec, std::span<const double> x,
                       std::optional<std::int32_t> latent) {
  return std::visit(
      [&](const auto& s) -> OracleEval {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, RegressionDgpSpec>) return oracle_eval(s, x);
        else if constexpr (std::is_same_v<T, ClassificationDgpSpec>) return oracle_eval(s, x, latent);
        else return oracle_eval(s, x);
      },
      spec);
}

}  // namespace wermlab::dgp
