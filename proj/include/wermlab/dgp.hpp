#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace wermlab::dgp {

// ---------------------------------------------------------------------------
// Spec types
// ---------------------------------------------------------------------------

enum class NoiseKind { gaussian, truncated_gaussian };

// Univariate heteroscedastic regression benchmark:
//   x ~ Uniform[x_low, x_high],  y = f*(x) + sqrt(sigma2*(x)) * xi,
//   f*(x) = x sin x,  sigma2*(x) = 0.09 (1 + x^2).
// xi is standard Gaussian by default; the truncated variant restricts a
// standard normal to (-c2, c2) and rescales it back to unit variance, which
// keeps the noise bounded by c2 / sd(truncated).
struct RegressionDgpSpec {
  double x_low = 0.0;
  double x_high = 10.0;
  NoiseKind noise = NoiseKind::gaussian;
  double c2 = 2.0;  // truncation point of the raw normal (truncated kind only)

  void validate() const;
  static double f_star(double x);
  static double sigma2_star(double x);
  double max_sigma2() const;  // sup over [x_low, x_high]
  double min_sigma2() const;
  // Bound on the rescaled noise; +inf for the gaussian kind.
  double noise_bound() const;
  // Standard deviation of a standard normal truncated to (-c2, c2).
  double truncated_sd() const;
};

// Labels 0, 0', 1, 1' of the four-cluster mixture.
enum class ClusterId : std::int32_t { k0 = 0, k0_prime = 1, k1 = 2, k1_prime = 3 };

struct Cluster {
  ClusterId id;
  double prior;
  std::array<double, 2> mean;
};

// Two-dimensional class-conditional Gaussian mixture with equal covariance
// and label noise injected on cluster 0' only. Default values are the
// four-cluster benchmark used by the experiments.
struct ClassificationDgpSpec {
  std::vector<Cluster> clusters = {
      {ClusterId::k0_prime, 0.50, {-10.0, 0.0}},
      {ClusterId::k0, 0.25, {-3.0, 0.0}},
      {ClusterId::k1, 0.20, {3.0, 0.0}},
      {ClusterId::k1_prime, 0.05, {12.0, 0.0}},
  };
  std::array<double, 4> covariance = {2.0, 0.5, 0.5, 2.0};  // row-major
  double p_flip = 0.49;

  void validate() const;
  // P(cluster in {1, 1'} | x) by Bayes rule over the mixture.
  double phi_star(std::span<const double> x) const;
};

// Axis-supported construction: x = alpha * e_j with
//   j ~ Uniform{1..d},
//   alpha = +0.1        w.p. gamma/32
//           -0.1        w.p. gamma/32
//           Uniform(1,2)  w.p. 1 - 3 gamma/32
//           Uniform(-2,-1) w.p. gamma/32,
// and eta*(alpha e_j) = 1/2 * 1{alpha >= 0} * (1 + 1{|alpha| = 0.1}
//                                                + 1{|alpha| >= 1} gamma),
// i.e. eta* = 1 on the +0.1 atom, (1+gamma)/2 on [1,2] and 0 on the negative
// side. gamma = 0 is accepted as a degenerate testing case (the whole mass
// sits on [1,2] with eta* = 1/2).
struct BasisDgpSpec {
  int d = 1;
  double gamma = 0.2;

  void validate() const;
  double eta_star(double alpha) const;
  // Disagreement-region margin |2 eta* - 1| of a segment, see oracle_eval.
};

using DgpSpec = std::variant<RegressionDgpSpec, ClassificationDgpSpec, BasisDgpSpec>;

// Canonical JSON (sorted keys, no whitespace) and its FNV-1a digest.
std::string to_canonical_json(const DgpSpec& spec);
DgpSpec dgp_from_json_text(const std::string& text);
std::uint64_t spec_digest(const DgpSpec& spec);
std::string dgp_kind_name(const DgpSpec& spec);

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct Provenance {
  std::uint64_t spec_digest = 0;
  std::uint64_t seed = 0;
  std::uint64_t n = 0;
};

// Immutable collection of labeled samples. x vectors are stored row-major;
// latent holds the generating cluster (classification) or coordinate index
// (basis) and is empty when the DGP has no latent structure.
class Dataset {
 public:
  Dataset() = default;
  Dataset(int dim, std::vector<double> xs, std::vector<double> ys,
          std::vector<std::int32_t> latent, Provenance prov);

  int dim() const { return dim_; }
  std::size_t n() const { return ys_.size(); }
  std::span<const double> x(std::size_t i) const {
    return {xs_.data() + static_cast<std::size_t>(dim_) * i,
            static_cast<std::size_t>(dim_)};
  }
  double y(std::size_t i) const { return ys_[i]; }
  bool has_latent() const { return !latent_.empty(); }
  std::int32_t latent(std::size_t i) const { return latent_[i]; }
  std::span<const double> xs_flat() const { return xs_; }
  std::span<const double> ys() const { return ys_; }
  const Provenance& provenance() const { return prov_; }

  Dataset subset(std::span<const std::uint32_t> indices) const;

 private:
  int dim_ = 0;
  std::vector<double> xs_;
  std::vector<double> ys_;
  std::vector<std::int32_t> latent_;
  Provenance prov_;
};

Dataset sample_regression(const RegressionDgpSpec& spec, std::size_t n,
                          std::uint64_t seed);
Dataset sample_classification(const ClassificationDgpSpec& spec, std::size_t n,
                              std::uint64_t seed);
Dataset sample_basis(const BasisDgpSpec& spec, std::size_t n, std::uint64_t seed);
Dataset sample(const DgpSpec& spec, std::size_t n, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Oracle access
// ---------------------------------------------------------------------------

// The margin is stored under both conventions in use:
//   omega_raw  = |2 eta* - 1|   (two-sided margin, diagnostics / enumeration)
//   omega_half = |eta* - 1/2|   (plug-in margin, classification pipeline)
struct OracleEval {
  std::optional<double> f_star;
  std::optional<double> sigma2_star;
  std::optional<double> eta_star;
  std::optional<double> omega_raw;
  std::optional<double> omega_half;
  int bayes_label = 0;  // +1 / -1 where defined
};

inline double omega_raw_from_eta(double eta) { return std::abs(2.0 * eta - 1.0); }
inline double omega_half_from_eta(double eta) { return std::abs(eta - 0.5); }
// Global sign convention: sign(0) = +1. Bayes label is +1 iff eta >= 1/2.
inline int bayes_label_from_eta(double eta) { return eta >= 0.5 ? 1 : -1; }

OracleEval oracle_eval(const RegressionDgpSpec& spec, std::span<const double> x);
// Classification eta*/omega* are defined through the generating cluster: the
// latent id must be supplied to fill them; the Bayes label alone only needs x.
OracleEval oracle_eval(const ClassificationDgpSpec& spec, std::span<const double> x,
                       std::optional<std::int32_t> latent);
OracleEval oracle_eval(const BasisDgpSpec& spec, std::span<const double> x);
OracleEval oracle_eval(const DgpSpec& spec, std::span<const double> x,
                       std::optional<std::int32_t> latent);

// Amplitude and coordinate of an on-axis point; throws std::domain_error off
// the axes or off the support.
struct BasisPoint {
  int coordinate;  // 0-based
  double alpha;
};
BasisPoint basis_locate(const BasisDgpSpec& spec, std::span<const double> x);

}  // namespace wermlab::dgp
