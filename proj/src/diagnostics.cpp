#include "wermlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "wermlab/common.hpp"
#include "wermlab/rng.hpp"

namespace wermlab::diagnostics {

using dgp::BasisDgpSpec;
using dgp::Dataset;
using models::LossKind;
using pipeline::WeightModel;

// ---------------------------------------------------------------------------
// Basis enumeration
// ---------------------------------------------------------------------------

namespace {

struct Segment {
  double mass;   // within-coordinate probability
  double eta;
  double w_raw;  // |2 eta - 1| held exactly (gamma on the noisy segment)
  bool atom;
  double lo, hi;  // interval bounds, or the atom position in lo
};

std::vector<Segment> basis_segments(const BasisDgpSpec& spec) {
  const double g32 = spec.gamma / 32.0;
  return {
      {g32, 1.0, 1.0, true, 0.1, 0.1},
      {g32, 0.0, 1.0, true, -0.1, -0.1},
      {1.0 - 3.0 * g32, spec.eta_star(1.5), spec.gamma, false, 1.0, 2.0},
      {g32, 0.0, 1.0, false, -2.0, -1.0},
  };
}

// Fraction of the segment where sign(alpha - beta) disagrees with the Bayes
// label of the segment. sign(0) = +1.
double disagree_fraction(const Segment& s, double beta) {
  const int fstar = s.eta >= 0.5 ? 1 : -1;
  if (s.atom) {
    const int f = s.lo - beta >= 0.0 ? 1 : -1;
    return f != fstar ? 1.0 : 0.0;
  }
  // Predicted +1 on [max(lo, beta), hi] (alpha >= beta).
  const double len = s.hi - s.lo;
  double frac_pos;
  if (beta <= s.lo) frac_pos = 1.0;
  else if (beta >= s.hi) frac_pos = 0.0;
  else frac_pos = (s.hi - beta) / len;
  return fstar == 1 ? 1.0 - frac_pos : frac_pos;
}

// E[1{y != f}] within a segment for threshold beta (f = sign(alpha - beta)).
double segment_error(const Segment& s, double beta) {
  const double err_pos = 1.0 - s.eta;  // P(y != +1)
  const double err_neg = s.eta;        // P(y != -1)
  if (s.atom) {
    const int f = s.lo - beta >= 0.0 ? 1 : -1;
    return f == 1 ? err_pos : err_neg;
  }
  const double len = s.hi - s.lo;
  double frac_pos;
  if (beta <= s.lo) frac_pos = 1.0;
  else if (beta >= s.hi) frac_pos = 0.0;
  else frac_pos = (s.hi - beta) / len;
  return frac_pos * err_pos + (1.0 - frac_pos) * err_neg;
}

double segment_bayes_error(const Segment& s) { return std::min(s.eta, 1.0 - s.eta); }

double probe_weight_on_segment(const WeightModel& w, const Segment& s,
                               const BasisDgpSpec& spec, int coordinate) {
  switch (w.kind) {
    case WeightModel::Kind::constant:
    case WeightModel::Kind::oracle_margin: {
      std::vector<double> x(spec.d, 0.0);
      x[coordinate] = s.atom ? s.lo : 0.5 * (s.lo + s.hi);
      return w.eval(x, coordinate);
    }
    default:
      throw std::invalid_argument(
          "exact enumeration: probe weight must be constant on segments");
  }
}

}  // namespace

BasisFunctionals enumerate_threshold(const BasisDgpSpec& spec,
                                     std::span<const double> beta,
                                     const WeightModel* probe_weight) {
  spec.validate();
  if (static_cast<int>(beta.size()) != spec.d)
    throw std::invalid_argument("enumerate_threshold: beta dimension mismatch");
  const auto segments = basis_segments(spec);
  BasisFunctionals out;
  const double coord_mass = 1.0 / spec.d;
  double dis_high = 0.0;
  for (int j = 0; j < spec.d; ++j) {
    const double bj = beta[j];
    for (const auto& s : segments) {
      if (s.mass == 0.0) continue;
      const double m = coord_mass * s.mass;
      const double dis = disagree_fraction(s, bj);
      const double md = m * dis;
      const double w_raw = s.w_raw;
      out.p_disagree += md;
      out.excess_plain += m * (segment_error(s, bj) - segment_bayes_error(s));
      out.excess_identity += md * w_raw;
      out.excess_weighted += md * w_raw * w_raw;
      if (probe_weight != nullptr) {
        const double pw = probe_weight_on_segment(*probe_weight, s, spec, j);
        out.probe_mean += md * pw * w_raw;
        out.probe_second += md * pw * pw;
      }
      if (w_raw > spec.gamma) {
        out.mass_high_margin += m;
        dis_high += md;
      }
    }
  }
  out.var_plain = out.p_disagree - out.excess_plain * out.excess_plain;
  out.probe_var = out.probe_second - out.probe_mean * out.probe_mean;
  if (out.mass_high_margin > 0.0)
    out.cond_err_high_margin = dis_high / out.mass_high_margin;
  return out;
}

double basis_margin_below(const BasisDgpSpec& spec, double c) {
  double p = 0.0;
  for (const auto& s : basis_segments(spec))
    if (s.w_raw < c) p += s.mass;
  return p;
}

// ---------------------------------------------------------------------------
// Bernstein probes
// ---------------------------------------------------------------------------

void BernsteinCheckSpec::validate() const {
  if (!(B > 0.0) || !std::isfinite(B))
    throw std::invalid_argument("bernstein check: B must be positive and finite");
  if (!(additive_eps >= 0.0))
    throw std::invalid_argument("bernstein check: additive_eps must be >= 0");
  for (double v : {loss_bound_a, lipschitz_L, weight_bound_c1, noise_bound_c2,
                   variance_floor_c3, gamma})
    if (!(v > 0.0) || !std::isfinite(v))
      throw std::invalid_argument("bernstein check: bounds must be positive and finite");
}

namespace {

struct Moments {
  double mean = 0.0, m2 = 0.0, m4 = 0.0;
  std::size_t n = 0;
};

// Raw-moment accumulation; values are O(1) here so cancellation is benign.
Moments accumulate(std::span<const double> values) {
  double s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0;
  for (double v : values) {
    s1 += v;
    const double v2 = v * v;
    s2 += v2;
    s3 += v2 * v;
    s4 += v2 * v2;
  }
  const auto n = static_cast<double>(values.size());
  Moments m;
  m.n = values.size();
  m.mean = s1 / n;
  m.m2 = std::max(0.0, s2 / n - m.mean * m.mean);
  m.m4 = std::max(0.0, s4 / n - 4.0 * m.mean * s3 / n + 6.0 * m.mean * m.mean * s2 / n -
                           3.0 * m.mean * m.mean * m.mean * m.mean);
  return m;
}

bool exact_supported(const dgp::DgpSpec& spec, const WeightModel& w, LossKind loss) {
  if (!std::holds_alternative<BasisDgpSpec>(spec)) return false;
  if (loss != LossKind::zero_one) return false;
  return w.kind == WeightModel::Kind::constant || w.kind == WeightModel::Kind::oracle_margin;
}

}  // namespace

BernsteinReport bernstein_probe(const dgp::DgpSpec& spec, const risk::Evaluator& f,
                                const WeightModel& weight, LossKind loss,
                                const BernsteinCheckSpec& check, std::size_t n_mc,
                                std::uint64_t seed, ProbeMethod method) {
  check.validate();
  if (loss != LossKind::zero_one && loss != LossKind::squared)
    throw std::invalid_argument("bernstein_probe: loss must be zero_one or squared");
  if (method == ProbeMethod::auto_select)
    method = exact_supported(spec, weight, loss) ? ProbeMethod::exact_enumeration
                                                 : ProbeMethod::monte_carlo;

  BernsteinReport rep;
  rep.method = method;
  if (method == ProbeMethod::exact_enumeration) {
    // Enumeration needs the threshold parameters, not just an evaluator; the
    // ThresholdHypothesis overload handles that path.
    throw std::invalid_argument(
        "bernstein_probe: exact enumeration requires a ThresholdHypothesis (use the "
        "dedicated overload)");
  }

  // Monte Carlo over fresh draws in fixed-size chunks.
  const std::size_t chunk = 1 << 16;
  double s1 = 0.0, s2 = 0.0, s3 = 0.0, s4 = 0.0;
  std::size_t done = 0;
  std::uint64_t chunk_idx = 0;
  while (done < n_mc) {
    const std::size_t m = std::min(chunk, n_mc - done);
    const Dataset data = dgp::sample(spec, m, rng::derive_stream(seed, chunk_idx++));
    for (std::size_t i = 0; i < m; ++i) {
      const auto x = data.x(i);
      std::optional<std::int32_t> latent;
      if (data.has_latent()) latent = data.latent(i);
      const auto e = dgp::oracle_eval(spec, x, latent);
      double h;
      if (loss == LossKind::zero_one) {
        const int y = data.y(i) > 0.0 ? 1 : -1;
        const int fx = f(x) >= 0.0 ? 1 : -1;
        h = (fx != y ? 1.0 : 0.0) - (e.bayes_label != y ? 1.0 : 0.0);
      } else {
        const double y = data.y(i);
        const double rf = y - f(x);
        const double rs = y - *e.f_star;
        h = rf * rf - rs * rs;
      }
      h *= weight.eval(x, latent);
      s1 += h;
      const double h2 = h * h;
      s2 += h2;
      s3 += h2 * h;
      s4 += h2 * h2;
    }
    done += m;
  }
  const auto n = static_cast<double>(n_mc);
  rep.n_mc = n_mc;
  rep.mean_hat = s1 / n;
  rep.var_hat = std::max(0.0, s2 / n - rep.mean_hat * rep.mean_hat);
  const double m4 = std::max(
      0.0, s4 / n - 4.0 * rep.mean_hat * s3 / n + 6.0 * rep.mean_hat * rep.mean_hat * s2 / n -
               3.0 * std::pow(rep.mean_hat, 4));
  rep.stderr_mean = std::sqrt(rep.var_hat / n);
  rep.stderr_var = std::sqrt(std::max(0.0, m4 - rep.var_hat * rep.var_hat) / n);
  rep.slack = check.B * rep.mean_hat + check.additive_eps - rep.var_hat;
  rep.tolerance = 4.0 * (check.B * rep.stderr_mean + rep.stderr_var);
  rep.pass = rep.slack >= -rep.tolerance;
  return rep;
}

BernsteinReport bernstein_probe(const BasisDgpSpec& spec,
                                const models::ThresholdHypothesis& f,
                                const WeightModel& weight,
                                const BernsteinCheckSpec& check, std::size_t n_mc,
                                std::uint64_t seed, ProbeMethod method) {
  check.validate();
  const dgp::DgpSpec vspec = spec;
  if (method == ProbeMethod::auto_select)
    method = exact_supported(vspec, weight, LossKind::zero_one)
                 ? ProbeMethod::exact_enumeration
                 : ProbeMethod::monte_carlo;
  if (method == ProbeMethod::monte_carlo)
    return bernstein_probe(vspec, risk::evaluator_of(f), weight, LossKind::zero_one,
                           check, n_mc, seed, method);
  const auto fn = enumerate_threshold(spec, f.beta, &weight);
  BernsteinReport rep;
  rep.method = ProbeMethod::exact_enumeration;
  rep.n_mc = 0;
  rep.mean_hat = fn.probe_mean;
  rep.var_hat = fn.probe_var;
  rep.stderr_mean = 0.0;
  rep.stderr_var = 0.0;
  rep.slack = check.B * rep.mean_hat + check.additive_eps - rep.var_hat;
  rep.tolerance = 1e-12;
  rep.pass = rep.slack >= -rep.tolerance;
  return rep;
}

double measure_weight_eps(const dgp::DgpSpec& spec, const WeightModel& w_hat,
                          const WeightModel& w_star, std::size_t n, std::uint64_t seed) {
  const Dataset data = dgp::sample(spec, n, seed);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<std::int32_t> latent;
    if (data.has_latent()) latent = data.latent(i);
    const double d = w_hat.eval(data.x(i), latent) - w_star.eval(data.x(i), latent);
    s += d * d;
  }
  return s / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Lower-bound experiment
// ---------------------------------------------------------------------------

double sign_test_two_sided(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("sign test: length mismatch");
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > b[i]) ++pos;
    else if (a[i] < b[i]) ++neg;
  }
  const std::size_t m = pos + neg;
  if (m == 0) return 1.0;
  const std::size_t k = std::max(pos, neg);
  // Two-sided exact binomial tail: 2 P(Bin(m, 1/2) >= k), capped at 1.
  double tail = 0.0;
  for (std::size_t i = k; i <= m; ++i) {
    const double logp = std::lgamma(static_cast<double>(m) + 1.0) -
                        std::lgamma(static_cast<double>(i) + 1.0) -
                        std::lgamma(static_cast<double>(m - i) + 1.0) -
                        static_cast<double>(m) * std::log(2.0);
    tail += std::exp(logp);
  }
  return std::min(1.0, 2.0 * tail);
}

LowerboundResult lowerbound_experiment(const BasisDgpSpec& spec, std::size_t n,
                                       std::size_t trials, double weight_eps,
                                       std::uint64_t seed, unsigned threads) {
  spec.validate();
  if (trials < 50)
    throw std::invalid_argument("lowerbound_experiment: needs at least 50 trials");
  if (!(weight_eps >= 0.0))
    throw std::invalid_argument("lowerbound_experiment: weight_eps must be >= 0");
  const double delta = std::sqrt(3.0 * weight_eps);

  LowerboundResult res;
  res.trials.resize(trials);
  parallel_for(trials, threads, [&](std::size_t t) {
    const Dataset data = dgp::sample_basis(spec, n, rng::derive_stream(seed, 2 * t));
    // ERM: unit weights.
    std::vector<double> ones(data.n(), 1.0);
    const auto erm = pipeline::exact_basis_erm(data, ones);
    // wERM: oracle margin plus clipped uniform noise of matched second moment.
    rng::Xoshiro256pp noise(rng::derive_stream(seed, 2 * t + 1));
    std::vector<double> w(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) {
      const double omega =
          dgp::omega_raw_from_eta(spec.eta_star(data.x(i)[data.latent(i)]));
      const double perturbed =
          weight_eps > 0.0 ? omega + noise.uniform(-delta, delta) : omega;
      w[i] = std::max(0.0, perturbed);
    }
    const auto werm = pipeline::exact_basis_erm(data, w);
    LowerboundTrial rec;
    rec.trial = t;
    rec.beta_erm = erm.beta[0];
    rec.beta_werm = werm.beta[0];
    rec.err_erm = enumerate_threshold(spec, erm.beta).cond_err_high_margin;
    rec.err_werm = enumerate_threshold(spec, werm.beta).cond_err_high_margin;
    res.trials[t] = rec;
  });

  std::vector<double> erm_errs(trials), werm_errs(trials);
  std::size_t fails = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    erm_errs[t] = res.trials[t].err_erm;
    werm_errs[t] = res.trials[t].err_werm;
    if (erm_errs[t] >= 0.015) ++fails;
    res.mean_err_erm += erm_errs[t];
    res.mean_err_werm += werm_errs[t];
  }
  res.erm_fail_freq = static_cast<double>(fails) / static_cast<double>(trials);
  res.mean_err_erm /= static_cast<double>(trials);
  res.mean_err_werm /= static_cast<double>(trials);
  res.sign_test_p = sign_test_two_sided(erm_errs, werm_errs);
  res.werm_q50 = risk::empirical_quantile(werm_errs, 0.5);
  res.werm_q90 = risk::empirical_quantile(werm_errs, 0.9);
  res.werm_q95 = risk::empirical_quantile(werm_errs, 0.95);
  return res;
}

// ---------------------------------------------------------------------------
// Rate experiment
// ---------------------------------------------------------------------------

namespace {

// Composite Simpson integral over [lo, hi] (panels even).
double simpson(const std::function<double(double)>& f, double lo, double hi, int panels) {
  const double h = (hi - lo) / panels;
  double s = f(lo) + f(hi);
  for (int i = 1; i < panels; ++i) s += f(lo + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return s * h / 3.0;
}

double regression_excess(const dgp::RegressionDgpSpec& spec, const models::MlpParams& m,
                         bool weighted) {
  const auto f = [&](double x) {
    const double xv[1] = {x};
    const double d =
        dgp::RegressionDgpSpec::f_star(x) - models::predict(m, std::span<const double>(xv, 1));
    const double sq = d * d;
    return weighted ? sq / dgp::RegressionDgpSpec::sigma2_star(x) : sq;
  };
  return simpson(f, spec.x_low, spec.x_high, 2000) / (spec.x_high - spec.x_low);
}

}  // namespace

RateResult rate_experiment(const dgp::DgpSpec& spec, std::span<const std::size_t> n_grid,
                           std::span<const std::uint64_t> seeds, Estimator estimator,
                           const pipeline::FitConfig& cfg, unsigned threads) {
  std::vector<std::size_t> grid(n_grid.begin(), n_grid.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  if (grid.size() < 4 || grid.front() == 0 ||
      grid.back() < 10 * grid.front())
    throw std::invalid_argument(
        "rate_experiment: n_grid needs >= 4 distinct values spanning a decade");
  if (seeds.empty()) throw std::invalid_argument("rate_experiment: seeds must be nonempty");
  if (std::holds_alternative<dgp::ClassificationDgpSpec>(spec))
    throw std::invalid_argument("rate_experiment: basis or regression DGP required");

  RateResult res;
  res.cells.resize(grid.size() * seeds.size());
  parallel_for(res.cells.size(), threads, [&](std::size_t idx) {
    const std::size_t gi = idx / seeds.size();
    const std::size_t si = idx % seeds.size();
    const std::size_t n = grid[gi];
    const std::uint64_t cell_seed = rng::derive_stream(seeds[si], 7000 + gi);
    double risk = 0.0;
    if (std::holds_alternative<BasisDgpSpec>(spec)) {
      const auto& bspec = std::get<BasisDgpSpec>(spec);
      const Dataset data = dgp::sample_basis(bspec, n, cell_seed);
      const auto weights =
          estimator == Estimator::werm
              ? WeightModel::oracle_margin(spec, pipeline::MarginConvention::raw)
              : WeightModel::make_constant(1.0);
      const auto fit = pipeline::exact_basis_erm(data, weights);
      const auto fn = enumerate_threshold(bspec, fit.beta);
      risk = estimator == Estimator::werm ? fn.excess_weighted : fn.excess_plain;
    } else {
      const auto& rspec = std::get<dgp::RegressionDgpSpec>(spec);
      const Dataset data = dgp::sample_regression(rspec, n, cell_seed);
      pipeline::FitConfig cell_cfg = cfg;
      cell_cfg.seed = rng::derive_stream(cell_seed, 1);
      const int hidden = cell_cfg.hidden_for(pipeline::Task::regression);
      const auto init = models::mlp_init(1, hidden, models::Head::identity,
                                         rng::derive_stream(cell_cfg.seed, 1));
      if (estimator == Estimator::werm) {
        auto w = WeightModel::oracle_precision(spec)
                     .with_bounds(cfg.weight_floor, cfg.weight_cap);
        auto fit = pipeline::gd_fit(init, data, LossKind::weighted_squared, w, cell_cfg);
        risk = regression_excess(rspec, fit.params, true);
      } else {
        auto fit = pipeline::gd_fit(init, data, LossKind::squared,
                                    WeightModel::make_constant(1.0), cell_cfg);
        risk = regression_excess(rspec, fit.params, false);
      }
    }
    res.cells[idx] = RateCell{n, seeds[si], risk};
  });

  // Per-n medians across seeds; zero medians excluded from the fit.
  std::vector<double> log_n, log_med;
  for (std::size_t gi = 0; gi < grid.size(); ++gi) {
    std::vector<double> vals(seeds.size());
    for (std::size_t si = 0; si < seeds.size(); ++si)
      vals[si] = res.cells[gi * seeds.size() + si].risk;
    const double med = risk::empirical_quantile(vals, 0.5);
    res.medians.emplace_back(grid[gi], med);
    if (med > 0.0) {
      log_n.push_back(std::log(static_cast<double>(grid[gi])));
      log_med.push_back(std::log(med));
    } else {
      res.excluded_ns.push_back(grid[gi]);
    }
  }
  if (log_n.size() < 3) {
    res.degenerate = true;
    res.slope = std::numeric_limits<double>::quiet_NaN();
    res.intercept = std::numeric_limits<double>::quiet_NaN();
    return res;
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < log_n.size(); ++i) {
    mx += log_n[i];
    my += log_med[i];
  }
  mx /= static_cast<double>(log_n.size());
  my /= static_cast<double>(log_n.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < log_n.size(); ++i) {
    sxy += (log_n[i] - mx) * (log_med[i] - my);
    sxx += (log_n[i] - mx) * (log_n[i] - mx);
  }
  res.slope = sxy / sxx;
  res.intercept = my - res.slope * mx;
  return res;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

static std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string bernstein_csv(std::span<const BernsteinRow> rows, const std::string& provenance) {
  std::string out = "# " + provenance + "\n";
  out += "dgp,hypothesis_id,method,n_mc,mean_hat,var_hat,B,additive_eps,slack,pass\n";
  for (const auto& r : rows) {
    out += r.dgp + "," + r.hypothesis_id + "," +
           (r.report.method == ProbeMethod::exact_enumeration ? "exact_enumeration"
                                                              : "monte_carlo") +
           "," + std::to_string(r.report.n_mc) + "," + fmt(r.report.mean_hat) + "," +
           fmt(r.report.var_hat) + "," + fmt(r.B) + "," + fmt(r.additive_eps) + "," +
           fmt(r.report.slack) + "," + (r.report.pass ? "1" : "0") + "\n";
  }
  return out;
}

std::string rates_csv(const RateResult& result, Estimator estimator,
                      const std::string& provenance) {
  const char* name = estimator == Estimator::werm ? "werm" : "erm";
  std::string out = "# " + provenance + "\n";
  out += "n,seed,estimator,excess_risk\n";
  for (const auto& c : result.cells) {
    out += std::to_string(c.n) + "," + std::to_string(c.seed) + "," + name + "," +
           fmt(c.risk) + "\n";
  }
  return out;
}

std::string lowerbound_csv(const LowerboundResult& result, std::size_t n,
                           const std::string& provenance) {
  std::string out = "# " + provenance + "\n";
  out += "trial,n,beta_erm,beta_werm,err_erm,err_werm\n";
  for (const auto& t : result.trials) {
    out += std::to_string(t.trial) + "," + std::to_string(n) + "," + fmt(t.beta_erm) +
           "," + fmt(t.beta_werm) + "," + fmt(t.err_erm) + "," + fmt(t.err_werm) + "\n";
  }
  return out;
}

}  // namespace wermlab::diagnostics
