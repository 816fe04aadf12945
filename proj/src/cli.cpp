#include "wermlab/cli.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wermlab/common.hpp"
#include "wermlab/dgp.hpp"
#include "wermlab/diagnostics.hpp"
#include "wermlab/pipeline.hpp"
#include "wermlab/risk.hpp"
#include "wermlab/rng.hpp"
#include "wermlab/svg.hpp"

namespace wermlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "wermlab 0.1.0";

struct ExperimentConfig {
  std::string command;  // optional in the document; must match argv if present
  dgp::DgpSpec dgp_spec;
  pipeline::FitConfig fit;
  json eval = json::object();
  std::string output_dir;
  std::uint64_t base_seed = 0;
  std::uint64_t digest = 0;  // FNV-1a of the canonical config dump
  unsigned threads = 1;
};

void reject_unknown(const json& j, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) { ok = true; break; }
    if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
  }
}

ExperimentConfig load_config(const std::string& path, const std::string& command,
                             const std::string& out_override,
                             const std::optional<std::uint64_t>& seed_override,
                             unsigned threads) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path + ": cannot open config file");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    // nlohmann reports byte offsets; recover the line for the message.
    std::ifstream g(path);
    std::string text((std::istreambuf_iterator<char>(g)), std::istreambuf_iterator<char>());
    std::size_t line = 1;
    for (std::size_t i = 0; i < std::min(e.byte, text.size()); ++i)
      if (text[i] == '\n') ++line;
    throw ConfigError(path + ":" + std::to_string(line) + ": " + e.what());
  }
  reject_unknown(j, {"command", "dgp", "fit", "eval", "output_dir", "base_seed"}, path);
  ExperimentConfig cfg;
  if (j.contains("command")) {
    cfg.command = j.at("command").get<std::string>();
    if (cfg.command != command)
      throw ConfigError(path + ": config command '" + cfg.command +
                        "' does not match subcommand '" + command + "'");
  }
  if (!j.contains("base_seed")) throw ConfigError(path + ": missing 'base_seed'");
  cfg.base_seed = j.at("base_seed").get<std::uint64_t>();
  if (seed_override) cfg.base_seed = *seed_override;
  if (!j.contains("dgp")) throw ConfigError(path + ": missing 'dgp'");
  try {
    cfg.dgp_spec = dgp::dgp_from_json_text(j.at("dgp").dump());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (j.contains("fit")) {
    try {
      cfg.fit = pipeline::FitConfig::from_json_text(j.at("fit").dump());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  if (j.contains("eval")) cfg.eval = j.at("eval");
  cfg.output_dir = out_override.empty()
                       ? j.value("output_dir", std::string("."))
                       : out_override;
  cfg.threads = threads;

  // Canonical digest over the effective configuration.
  json canon;
  canon["command"] = command;
  canon["dgp"] = json::parse(dgp::to_canonical_json(cfg.dgp_spec));
  canon["fit"] = json::parse(cfg.fit.to_json_text());
  canon["eval"] = cfg.eval;
  canon["base_seed"] = cfg.base_seed;
  cfg.digest = fnv1a64(canon.dump());

  fs::create_directories(cfg.output_dir);
  // Probe writability up front so failures map to exit code 1.
  const fs::path probe = fs::path(cfg.output_dir) / ".wermlab_probe";
  {
    std::ofstream p(probe);
    if (!p) throw ConfigError(cfg.output_dir + ": output_dir is not writable");
  }
  fs::remove(probe);
  return cfg;
}

std::string provenance_line(const ExperimentConfig& cfg) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "config_digest=%016" PRIx64 " base_seed=%" PRIu64 " tool=%s",
                cfg.digest, cfg.base_seed, kToolVersion);
  return buf;
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << body;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

int cmd_gen(const ExperimentConfig& cfg) {
  reject_unknown(cfg.eval, {"n"}, "eval");
  if (!cfg.eval.contains("n")) throw ConfigError("eval: gen requires 'n'");
  const auto n = cfg.eval.at("n").get<std::int64_t>();
  if (n < 1) throw ConfigError("eval: n must be >= 1");
  const auto data = dgp::sample(cfg.dgp_spec, static_cast<std::size_t>(n), cfg.base_seed);
  std::string out = "# " + provenance_line(cfg) + "\n";
  for (int d = 0; d < data.dim(); ++d) out += "x" + std::to_string(d) + ",";
  out += "y,latent\n";
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (double v : data.x(i)) out += fmt(v) + ",";
    out += fmt(data.y(i)) + ",";
    if (data.has_latent()) out += std::to_string(data.latent(i));
    out += "\n";
  }
  write_text(fs::path(cfg.output_dir) / "dataset.csv", out);
  std::printf("gen: wrote %zu samples to %s/dataset.csv\n", data.n(), cfg.output_dir.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

int cmd_fit(const ExperimentConfig& cfg) {
  reject_unknown(cfg.eval, {"n_train"}, "eval");
  const auto n = cfg.eval.value("n_train", std::int64_t{20000});
  if (n < 2) throw ConfigError("eval: n_train must be >= 2");
  const bool regression = std::holds_alternative<dgp::RegressionDgpSpec>(cfg.dgp_spec);
  const auto task = regression ? pipeline::Task::regression : pipeline::Task::classification;
  const auto data = dgp::sample(cfg.dgp_spec, static_cast<std::size_t>(n),
                                rng::derive_stream(cfg.base_seed, 1));
  pipeline::FitConfig fit = cfg.fit;
  fit.seed = rng::derive_stream(cfg.base_seed, 4);
  const auto res = pipeline::two_step(data, task, fit);
  const fs::path dir(cfg.output_dir);
  write_text(dir / "model_erm.json", res.erm_model.to_json_text());
  write_text(dir / "model_werm.json", res.werm_model.to_json_text());
  if (res.weight_model.model)
    write_text(dir / "model_weight.json", res.weight_model.model->to_json_text());
  json prov = json::parse(res.provenance_json());
  prov["provenance"] = provenance_line(cfg);
  write_text(dir / "fit_provenance.json", prov.dump(2) + "\n");
  std::printf("fit: task=%s n=%zu erm_loss=%.6g werm_loss=%.6g\n",
              regression ? "regression" : "classification", data.n(), res.erm_final_loss,
              res.werm_final_loss);
  return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

std::vector<std::uint64_t> seeds_from_eval(const json& eval, std::uint64_t base_seed) {
  std::vector<std::uint64_t> seeds;
  if (eval.contains("seeds")) {
    for (const auto& s : eval.at("seeds")) seeds.push_back(s.get<std::uint64_t>());
  } else {
    const auto k = eval.value("n_seeds", std::int64_t{10});
    if (k < 1) throw ConfigError("eval: n_seeds must be >= 1");
    for (std::int64_t i = 0; i < k; ++i)
      seeds.push_back(rng::derive_stream(base_seed, 100 + static_cast<std::uint64_t>(i)));
  }
  if (seeds.empty()) throw ConfigError("eval: empty seed list");
  return seeds;
}

void write_sweep_svg(const risk::SelectiveRiskCurve& curve, const fs::path& path,
                     const std::string& provenance) {
  svg::Series erm{"ERM", {}, {}}, werm{"wERM", {}, {}};
  for (const auto& a : curve.aggregate) {
    erm.points.push_back({a.alpha, a.mean_erm});
    erm.band.push_back({a.mean_erm - a.std_erm, a.mean_erm + a.std_erm});
    werm.points.push_back({a.alpha, a.mean_werm});
    werm.band.push_back({a.mean_werm - a.std_werm, a.mean_werm + a.std_werm});
  }
  svg::write_svg_curve({erm, werm}, "coverage alpha", "selective risk", path.string(),
                       provenance);
}

int cmd_sweep(const ExperimentConfig& cfg) {
  reject_unknown(cfg.eval,
                 {"alphas", "seeds", "n_seeds", "n_train", "n_val", "n_test",
                  "selection"},
                 "eval");
  std::vector<double> alphas;
  if (cfg.eval.contains("alphas")) {
    for (const auto& a : cfg.eval.at("alphas")) alphas.push_back(a.get<double>());
  } else {
    for (int i = 1; i <= 10; ++i) alphas.push_back(0.1 * i);
  }
  const auto seeds = seeds_from_eval(cfg.eval, cfg.base_seed);
  risk::SweepSizes sizes;
  sizes.n_train = cfg.eval.value("n_train", std::int64_t{20000});
  sizes.n_val = cfg.eval.value("n_val", std::int64_t{4286});
  sizes.n_test = cfg.eval.value("n_test", std::int64_t{4286});
  risk::SweepOptions opts;
  opts.threads = cfg.threads;
  const std::string selection = cfg.eval.value("selection", std::string("estimated"));
  if (selection == "oracle") opts.oracle_selection = true;
  else if (selection != "estimated")
    throw ConfigError("eval: selection must be 'estimated' or 'oracle'");

  const auto curve = risk::sweep(cfg.dgp_spec, alphas, seeds, cfg.fit, sizes, opts);
  const std::string prov = provenance_line(cfg);
  const fs::path dir(cfg.output_dir);
  write_text(dir / "sweep.csv", risk::sweep_csv(curve, prov));
  write_text(dir / "sweep_agg.csv", risk::sweep_aggregate_csv(curve, prov));
  write_sweep_svg(curve, dir / "sweep.svg", prov);
  for (const auto& a : curve.aggregate)
    std::printf("sweep: alpha=%.3f erm=%.6g+-%.2g werm=%.6g+-%.2g\n", a.alpha, a.mean_erm,
                a.std_erm, a.mean_werm, a.std_werm);
  return 0;
}

// ---------------------------------------------------------------------------
// bernstein
// ---------------------------------------------------------------------------

int cmd_bernstein(const ExperimentConfig& cfg) {
  reject_unknown(cfg.eval, {"n_mc", "n_thresholds", "threshold_lo", "threshold_hi"},
                 "eval");
  const auto n_mc = cfg.eval.value("n_mc", std::int64_t{1000000});
  const auto n_thresholds = cfg.eval.value("n_thresholds", std::int64_t{10000});
  std::vector<diagnostics::BernsteinRow> rows;
  double min_slack = std::numeric_limits<double>::infinity();
  bool all_pass = true;

  if (std::holds_alternative<dgp::BasisDgpSpec>(cfg.dgp_spec)) {
    const auto& bspec = std::get<dgp::BasisDgpSpec>(cfg.dgp_spec);
    const double lo = cfg.eval.value("threshold_lo", -2.5);
    const double hi = cfg.eval.value("threshold_hi", 2.5);
    rng::Xoshiro256pp gen(rng::derive_stream(cfg.base_seed, 11));
    const auto oracle_w =
        pipeline::WeightModel::oracle_margin(cfg.dgp_spec, pipeline::MarginConvention::raw);
    const auto unit_w = pipeline::WeightModel::make_constant(1.0);
    diagnostics::BernsteinCheckSpec balanced;
    balanced.B = 1.0;
    balanced.gamma = bspec.gamma;
    diagnostics::BernsteinCheckSpec plain;
    plain.B = 1.0 / bspec.gamma;
    plain.gamma = bspec.gamma;
    for (std::int64_t t = 0; t < n_thresholds; ++t) {
      models::ThresholdHypothesis h;
      h.beta.assign(bspec.d, 0.0);
      for (int j = 0; j < bspec.d; ++j) h.beta[j] = gen.uniform(lo, hi);
      const auto rb = diagnostics::bernstein_probe(bspec, h, oracle_w, balanced, 0, 0);
      const auto rp = diagnostics::bernstein_probe(bspec, h, unit_w, plain, 0, 0);
      min_slack = std::min({min_slack, rb.slack, rp.slack});
      all_pass = all_pass && rb.pass && rp.pass;
      if (t < 64) {  // keep the CSV bounded; summary covers the rest
        rows.push_back({"basis", "threshold_" + std::to_string(t), rb, balanced.B, 0.0});
        rows.push_back({"basis", "threshold_" + std::to_string(t) + "_plain", rp, plain.B, 0.0});
      }
    }
    std::printf("bernstein: basis gamma=%.4g thresholds=%" PRId64 " min_slack=%.3g %s\n",
                bspec.gamma, n_thresholds, min_slack, all_pass ? "PASS" : "FAIL");
  } else if (std::holds_alternative<dgp::RegressionDgpSpec>(cfg.dgp_spec)) {
    const auto& rspec = std::get<dgp::RegressionDgpSpec>(cfg.dgp_spec);
    // Shifted-mean hypothesis f* + 1/2 probed under the plain and the
    // balanced precision weights.
    risk::Evaluator f = [](std::span<const double> x) {
      return dgp::RegressionDgpSpec::f_star(x[0]) + 0.5;
    };
    const double c3 = rspec.min_sigma2();
    const double max_s2 = rspec.max_sigma2();
    diagnostics::BernsteinCheckSpec plain;
    plain.B = 8.0 * max_s2;
    plain.noise_bound_c2 = std::isfinite(rspec.noise_bound()) ? rspec.noise_bound() : 1.0;
    plain.variance_floor_c3 = c3;
    plain.gamma = 1.0 / max_s2;
    diagnostics::BernsteinCheckSpec balanced = plain;
    balanced.B = 1.0;
    const double C = 1.0 / (2.0 * (1.0 + 4.0 / c3));
    const auto unit_w = pipeline::WeightModel::make_constant(1.0);
    auto prec_w = pipeline::WeightModel::oracle_precision(cfg.dgp_spec).with_scale(C);
    const auto rp = diagnostics::bernstein_probe(cfg.dgp_spec, f, unit_w,
                                                 models::LossKind::squared, plain,
                                                 static_cast<std::size_t>(n_mc),
                                                 rng::derive_stream(cfg.base_seed, 21));
    const auto rb = diagnostics::bernstein_probe(cfg.dgp_spec, f, prec_w,
                                                 models::LossKind::squared, balanced,
                                                 static_cast<std::size_t>(n_mc),
                                                 rng::derive_stream(cfg.base_seed, 22));
    rows.push_back({"regression", "fstar_shift_plain", rp, plain.B, 0.0});
    rows.push_back({"regression", "fstar_shift_balanced", rb, balanced.B, 0.0});
    min_slack = std::min(rp.slack, rb.slack);
    all_pass = rp.pass && rb.pass;
    std::printf("bernstein: regression n_mc=%" PRId64 " plain_slack=%.4g balanced_slack=%.4g %s\n",
                n_mc, rp.slack, rb.slack, all_pass ? "PASS" : "FAIL");
  } else {
    throw ConfigError("bernstein: basis or regression DGP required");
  }
  write_text(fs::path(cfg.output_dir) / "bernstein.csv",
             diagnostics::bernstein_csv(rows, provenance_line(cfg)));
  return 0;
}

// ---------------------------------------------------------------------------
// rates
// ---------------------------------------------------------------------------

int cmd_rates(const ExperimentConfig& cfg) {
  reject_unknown(cfg.eval, {"n_grid", "n_seeds", "seeds", "estimator"}, "eval");
  std::vector<std::size_t> grid;
  if (cfg.eval.contains("n_grid")) {
    for (const auto& v : cfg.eval.at("n_grid")) grid.push_back(v.get<std::size_t>());
  } else {
    grid = {250, 500, 1000, 2000, 4000, 8000, 16000};
  }
  const auto seeds = seeds_from_eval(cfg.eval, cfg.base_seed);
  const std::string est = cfg.eval.value("estimator", std::string("werm"));
  const auto estimator =
      est == "werm" ? diagnostics::Estimator::werm
                    : (est == "erm" ? diagnostics::Estimator::erm
                                    : throw ConfigError("eval: estimator must be erm or werm"));
  const auto res = diagnostics::rate_experiment(cfg.dgp_spec, grid, seeds, estimator,
                                                cfg.fit, cfg.threads);
  write_text(fs::path(cfg.output_dir) / "rates.csv",
             diagnostics::rates_csv(res, estimator, provenance_line(cfg)));
  if (res.degenerate) {
    std::printf("rates: degenerate (fewer than 3 nonzero medians)\n");
  } else {
    std::printf("rates: estimator=%s slope=%.4f intercept=%.4f excluded=%zu\n", est.c_str(),
                res.slope, res.intercept, res.excluded_ns.size());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// lowerbound
// ---------------------------------------------------------------------------

int cmd_lowerbound(const ExperimentConfig& cfg) {
  reject_unknown(cfg.eval, {"n", "trials", "weight_eps"}, "eval");
  if (!std::holds_alternative<dgp::BasisDgpSpec>(cfg.dgp_spec))
    throw ConfigError("lowerbound: basis DGP required");
  const auto& bspec = std::get<dgp::BasisDgpSpec>(cfg.dgp_spec);
  const auto n = cfg.eval.value("n", std::int64_t{6000});
  const auto trials = cfg.eval.value("trials", std::int64_t{400});
  const double weight_eps = cfg.eval.value("weight_eps", 0.0);
  const auto res = diagnostics::lowerbound_experiment(
      bspec, static_cast<std::size_t>(n), static_cast<std::size_t>(trials), weight_eps,
      rng::derive_stream(cfg.base_seed, 31), cfg.threads);
  write_text(fs::path(cfg.output_dir) / "lowerbound.csv",
             diagnostics::lowerbound_csv(res, static_cast<std::size_t>(n),
                                         provenance_line(cfg)));
  std::printf(
      "lowerbound: trials=%" PRId64 " erm_fail_freq=%.4f mean_err erm=%.5f werm=%.5f "
      "sign_p=%.3g werm_q95=%.5f\n",
      trials, res.erm_fail_freq, res.mean_err_erm, res.mean_err_werm, res.sign_test_p,
      res.werm_q95);
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct CsvTable {
  std::string provenance;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      t.provenance = line.size() > 2 ? line.substr(2) : "";
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (t.header.empty()) t.header = std::move(cells);
    else t.rows.push_back(std::move(cells));
  }
  return t;
}

int cmd_report(const ExperimentConfig& cfg) {
  // report regenerates figures from whatever CSVs exist; eval keys from the
  // original run are ignored rather than rejected.
  const fs::path dir(cfg.output_dir);
  bool wrote = false;
  if (fs::exists(dir / "sweep_agg.csv")) {
    const auto t = read_csv(dir / "sweep_agg.csv");
    risk::SelectiveRiskCurve curve;
    for (const auto& r : t.rows) {
      risk::SweepAggregate a;
      a.alpha = std::stod(r[0]);
      a.mean_erm = std::stod(r[1]);
      a.std_erm = std::stod(r[2]);
      a.mean_werm = std::stod(r[3]);
      a.std_werm = std::stod(r[4]);
      curve.aggregate.push_back(a);
    }
    write_sweep_svg(curve, dir / "sweep.svg", t.provenance);
    std::printf("report: wrote sweep.svg\n");
    wrote = true;
  }
  if (fs::exists(dir / "rates.csv")) {
    // Median per n on log10 axes.
    const auto t = read_csv(dir / "rates.csv");
    std::map<std::size_t, std::vector<double>> by_n;
    for (const auto& r : t.rows)
      by_n[static_cast<std::size_t>(std::stoull(r[0]))].push_back(std::stod(r[3]));
    svg::Series med{"median excess risk", {}, {}};
    for (auto& [n, vals] : by_n) {
      const double m = risk::empirical_quantile(vals, 0.5);
      if (m > 0.0)
        med.points.push_back({std::log10(static_cast<double>(n)), std::log10(m)});
    }
    if (med.points.size() >= 2) {
      svg::write_svg_curve({med}, "log10 n", "log10 median excess risk",
                           (dir / "rates.svg").string(), t.provenance);
      std::printf("report: wrote rates.svg\n");
      wrote = true;
    }
  }
  if (!wrote) std::printf("report: no known CSVs found in %s\n", cfg.output_dir.c_str());
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Weighted-ERM synthetic experiment toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed_override;
  unsigned threads = 0;
  if (const char* env = std::getenv("WERMLAB_THREADS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env) threads = static_cast<unsigned>(v);
  }

  const std::vector<std::string> names = {"gen",   "fit",        "sweep",  "bernstein",
                                          "rates", "lowerbound", "report"};
  std::vector<CLI::App*> subs;
  for (const auto& n : names) {
    auto* sub = app.add_subcommand(n);
    sub->add_option("--config", config_path, "experiment config JSON")->required();
    sub->add_option("--out", out_dir, "output directory (overrides config)");
    std::uint64_t seed_tmp = 0;
    sub->add_option_function<std::uint64_t>(
        "--seed", [&seed_override](std::uint64_t v) { seed_override = v; },
        "base seed override");
    (void)seed_tmp;
    sub->add_option("--threads", threads, "worker threads (0 = auto)");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      return app.exit(e);
    }
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  }

  std::string command;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (subs[i]->parsed()) command = names[i];

  try {
    const auto cfg = load_config(config_path, command, out_dir, seed_override,
                                 resolve_threads(threads));
    if (command == "gen") return cmd_gen(cfg);
    if (command == "fit") return cmd_fit(cfg);
    if (command == "sweep") return cmd_sweep(cfg);
    if (command == "bernstein") return cmd_bernstein(cfg);
    if (command == "rates") return cmd_rates(cfg);
    if (command == "lowerbound") return cmd_lowerbound(cfg);
    if (command == "report") return cmd_report(cfg);
    std::fprintf(stderr, "unknown command\n");
    return 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 2;
  }
}

}  // namespace wermlab::cli
