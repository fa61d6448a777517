// mfsv: simulate, estimate and study multivariate factor stochastic volatility models.
//
// Exit codes: 0 success, 2 usage error, 3 success with convergence flags,
// 4 hard failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mfsv/bpf.hpp"
#include "mfsv/csv.hpp"
#include "mfsv/json_io.hpp"
#include "mfsv/montecarlo.hpp"
#include "mfsv/pipeline.hpp"

namespace {

using namespace mfsv;
namespace jio = mfsv::json;
using Json = nlohmann::json;

constexpr int exit_ok = 0;
constexpr int exit_usage = 2;
constexpr int exit_flagged = 3;
constexpr int exit_failure = 4;

struct Common {
  std::vector<std::string> argv;
  std::string manifest_path;
};

std::string manifest_target(const Common& c, const std::string& primary) {
  return c.manifest_path.empty() ? primary + ".manifest.json" : c.manifest_path;
}

std::vector<std::string> series_labels(long n, long k, const std::vector<std::string>& labels) {
  std::vector<std::string> out;
  for (long m = 0; m < n + k; ++m) out.push_back(jio::series_name(m, n, labels));
  return out;
}

// ---- simulate ----

struct SimulateArgs {
  std::string params;
  long n = 10;
  long k = 1;
  long T = 1000;
  std::uint64_t seed = 1;
  std::string out;
  std::string latent;
  std::string params_out;
};

int run_simulate(const SimulateArgs& a, const Common& c) {
  Theta1 t1;
  Theta2 t2;
  if (!a.params.empty()) {
    auto p = jio::params_from(jio::read_file(a.params));
    t1 = std::move(p.theta1);
    t2 = std::move(p.theta2);
  } else {
    std::tie(t1, t2) = build_design_params(a.n, a.k);
  }
  const auto sim = simulate(t1, t2, a.T, a.seed);
  const long n = t1.n_series(), k = t1.n_factors();
  std::vector<std::string> header;
  for (long i = 0; i < n; ++i) header.push_back("y" + std::to_string(i + 1));
  csv::write_file(a.out, "mfsv.returns", header, sim.returns);
  if (!a.latent.empty()) {
    std::vector<std::string> lh;
    for (const auto& s : series_labels(n, k, {})) lh.push_back("x_" + s);
    for (const auto& s : series_labels(n, k, {})) lh.push_back("h_" + s);
    Matrix both(a.T, 2 * (n + k));
    both << sim.latent_x, sim.latent_h;
    csv::write_file(a.latent, "mfsv.latent", lh, both);
  }
  if (!a.params_out.empty()) jio::write_file(a.params_out, jio::params_document(t1, t2));
  const Json config = {{"T", a.T}, {"params", jio::params_document(t1, t2)}};
  jio::write_file(manifest_target(c, a.out), jio::manifest("simulate", c.argv, config, a.seed, Json::object(), {}));
  return exit_ok;
}

// ---- estimate ----

struct EstimateArgs {
  std::string data;
  long k = 1;
  bool no_standardize = false;
  long H = 0;
  bool H_adaptive = false;
  std::string start = "qml";
  std::string starts_file;
  std::uint64_t seed = 20240601;
  unsigned threads = 1;
  int iterate_emm = 1;
  bool step1_only = false;
  bool no_inference = false;
  long fisher_S = 1000;
  double em_tol = 1e-6;
  int em_max_iters = 10000;
  std::string out;
  std::string extracted_csv;
  std::string w_csv;
  std::string garch_csv;
};

int run_estimate(const EstimateArgs& a, const Common& c) {
  std::vector<csv::IngestWarning> warnings;
  const auto panel = csv::ingest(a.data, !a.no_standardize, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w.message << "\n";

  EstimateConfig cfg;
  cfg.em.tol_frobenius = a.em_tol;
  cfg.em.max_iters = a.em_max_iters;
  cfg.emm.adaptive_H = a.H <= 0 || a.H_adaptive;
  if (a.H > 0) cfg.emm.H = a.H;
  cfg.emm.start_mode = a.start == "user" ? StartMode::user : StartMode::qml;
  cfg.emm.sweeps = a.iterate_emm;
  cfg.step1_only = a.step1_only;
  cfg.inference = !a.no_inference;
  cfg.fisher.S = a.fisher_S;
  cfg.seed = a.seed;
  cfg.threads = a.threads;
  if (cfg.emm.start_mode == StartMode::user) {
    if (a.starts_file.empty()) throw CLI::ValidationError("--start user requires --starts FILE");
    cfg.user_starts = jio::params_from(jio::read_file(a.starts_file)).theta2;
  }

  const auto result = estimate(panel, a.k, cfg);
  const long n = panel.n_series(), k = a.k;
  Json doc = jio::estimate_document(result, panel.labels(), !a.no_standardize);
  const Json config = {{"data", a.data},
                       {"k", k},
                       {"standardize", !a.no_standardize},
                       {"H_mode", cfg.emm.adaptive_H ? "adaptive" : "fixed"},
                       {"H", result.H},
                       {"start", a.start},
                       {"iterate_emm", a.iterate_emm},
                       {"step1_only", a.step1_only},
                       {"inference", cfg.inference},
                       {"fisher_S", a.fisher_S},
                       {"em_tol", a.em_tol},
                       {"em_max_iters", a.em_max_iters},
                       {"threads", a.threads}};
  doc["manifest"] = jio::manifest("estimate", c.argv, config, a.seed, doc["timings"], result.flags);
  if (a.out.empty()) {
    std::cout << doc.dump(2) << "\n";
  } else {
    jio::write_file(a.out, doc);
    if (!c.manifest_path.empty()) jio::write_file(c.manifest_path, doc["manifest"]);
  }

  if (!a.extracted_csv.empty())
    csv::write_file(a.extracted_csv, "mfsv.extracted", series_labels(n, k, panel.labels()), result.x_hat);
  if (!a.w_csv.empty() && result.vcov) {
    auto names = jio::parameter_names(n, k);
    names.resize(static_cast<std::size_t>(result.vcov->W.cols()));
    csv::write_file(a.w_csv, "mfsv.vcov", names, result.vcov->W);
  }
  if (!a.garch_csv.empty() && result.has_step2()) {
    Matrix d2(result.x_hat.rows(), n + k);
    for (long m = 0; m < n + k; ++m) {
      const Vector col = result.x_hat.col(m);
      const auto path = garch_variance_path(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                                            result.emm[static_cast<std::size_t>(m)].aux.params);
      d2.col(m) = Eigen::Map<const Vector>(path.data(), static_cast<long>(path.size()));
    }
    csv::write_file(a.garch_csv, "mfsv.garch-variance", series_labels(n, k, panel.labels()), d2);
  }
  return result.convergence_flagged() ? exit_flagged : exit_ok;
}

// ---- montecarlo ----

struct MonteCarloArgs {
  std::string design;
  long n = 10;
  long k = 1;
  long T = 1000;
  long R = 10;
  long H = 0;
  std::string start = "qml";
  bool step1_only = false;
  bool inference = false;
  long fisher_S = 1000;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string out;
};

int run_montecarlo(const MonteCarloArgs& a, const Common& c, const CLI::App& sub) {
  McDesign d;
  if (!a.design.empty()) {
    d = jio::design_from(jio::read_file(a.design));
    if (sub.count("--R")) d.R = a.R;
    if (sub.count("--seed")) d.base_seed = a.seed;
  } else {
    d.N = a.n;
    d.k = a.k;
    d.T = a.T;
    d.R = a.R;
    d.adaptive_H = a.H <= 0;
    d.H = a.H > 0 ? a.H : 10;
    d.start_mode = a.start == "user" ? StartMode::user : StartMode::qml;
    d.step1_only = a.step1_only;
    d.inference = a.inference;
    d.fisher_S = a.fisher_S;
    d.base_seed = a.seed;
  }
  const auto res = run_study(d, a.threads);
  std::filesystem::create_directories(a.out);
  const std::string dir = a.out + "/";

  const auto names = jio::parameter_names(d.N, d.k);
  std::vector<std::string> header{"rep", "ok", "discarded", "outliers", "seconds"};
  for (const auto& nm : names) header.push_back(nm);
  const bool with_se = d.inference && !d.step1_only;
  if (with_se)
    for (const auto& nm : names) header.push_back("se_" + nm);
  std::vector<std::vector<std::string>> rows, timing;
  for (const auto& r : res.reps) {
    std::vector<std::string> row{std::to_string(r.index), r.ok ? "1" : "0", r.discarded() ? "1" : "0",
                                 std::to_string(r.outliers.size()), csv::format_number(r.seconds)};
    for (Eigen::Index i = 0; i < r.estimate.size(); ++i) row.push_back(csv::format_number(r.estimate(i)));
    if (with_se)
      for (Eigen::Index i = 0; i < r.estimate.size(); ++i)
        row.push_back(r.se.size() ? csv::format_number(r.se(i)) : "nan");
    rows.push_back(std::move(row));
    timing.push_back({std::to_string(r.index), std::to_string(d.T), csv::format_number(r.seconds)});
  }
  {
    std::ofstream f(dir + "replications.csv");
    csv::write_rows(f, "mfsv.mc-replications", header, rows);
  }
  {
    std::vector<std::vector<std::string>> srows;
    for (const auto& s : res.summary)
      srows.push_back({s.block, csv::format_number(s.mse), csv::format_number(s.std_ratio)});
    std::ofstream f(dir + "summary.csv");
    csv::write_rows(f, "mfsv.mc-summary", {"block", "mse", "std_ratio"}, srows);
  }
  {
    std::ofstream f(dir + "timing.csv");
    csv::write_rows(f, "mfsv.mc-timing", {"rep", "T", "seconds"}, timing);
  }
  Json failures = Json::array();
  bool any_failed = false;
  for (const auto& r : res.reps) {
    if (!r.ok) any_failed = true;
    if (!r.ok || !r.outliers.empty())
      failures.push_back({{"rep", r.index}, {"error", r.error}, {"outliers", r.outliers}});
  }
  Json summary = Json::object();
  for (const auto& s : res.summary) summary[s.block] = {{"mse", s.mse}, {"std_ratio", s.std_ratio}};
  const Json design = jio::design_document(d);
  Json study = {{"schema", jio::study_schema},
                {"design", design},
                {"kept", res.kept},
                {"outlier_pct", res.outlier_pct},
                {"mean_seconds", res.mean_seconds},
                {"summary", summary},
                {"discarded", failures}};
  study["manifest"] = jio::manifest("montecarlo", c.argv, design, d.base_seed,
                                     {{"mean_seconds", res.mean_seconds}}, {});
  jio::write_file(dir + "study.json", study);
  if (!c.manifest_path.empty()) jio::write_file(c.manifest_path, study["manifest"]);
  std::cout << Json({{"outlier_pct", res.outlier_pct}, {"kept", res.kept}, {"summary", summary}}).dump(2) << "\n";
  return any_failed ? exit_flagged : exit_ok;
}

// ---- filter ----

struct FilterArgs {
  std::string params;
  std::string data;
  long series = 1;
  long particles = 1000;
  std::uint64_t seed = 1;
  bool standardize = false;
  std::string out;
};

int run_filter(const FilterArgs& a, const Common& c) {
  const auto p = jio::params_from(jio::read_file(a.params));
  const auto panel = csv::ingest(a.data, p.standardized || a.standardize);
  const long n = p.theta1.n_series(), k = p.theta1.n_factors();
  if (panel.n_series() != n) throw Error(ErrorCode::invalid_dimensions, "data width does not match the parameters");
  if (a.series < 1 || a.series > n + k)
    throw CLI::ValidationError("--series must lie in 1..N+k (" + std::to_string(n + k) + ")");
  StaticFactorEstimate est;
  est.B_star = p.theta1.loadings;
  est.Sigma_star = p.theta1.sigma2;
  est.Gamma_star = p.theta1.gamma2;
  est.Pi_star = projection_matrix(est.B_star.matrix(), est.Sigma_star, est.Gamma_star);
  const Matrix x_hat = extract_series(est, panel);
  const long m = a.series - 1;
  const Vector col = x_hat.col(m);
  const auto f = bootstrap_filter(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                                  p.theta2.arsv[static_cast<std::size_t>(m)], a.particles, a.seed);
  Matrix table(col.size(), 4);
  for (long t = 0; t < col.size(); ++t) {
    const auto ti = static_cast<std::size_t>(t);
    table.row(t) << static_cast<double>(t + 1), f.filtered_mean[ti], f.filtered_var[ti], f.ess[ti];
  }
  csv::write_file(a.out, "mfsv.filter", {"t", "filtered_mean", "filtered_var", "ess"}, table);
  const Json summary = {{"schema", "mfsv.filter-summary/1"},
                        {"series", a.series},
                        {"name", jio::series_name(m, n, p.labels)},
                        {"particles", a.particles},
                        {"loglik", f.loglik}};
  std::cout << summary.dump(2) << "\n";
  const Json config = {{"params", a.params}, {"data", a.data}, {"series", a.series}, {"particles", a.particles},
                       {"standardize", p.standardized || a.standardize}};
  jio::write_file(manifest_target(c, a.out), jio::manifest("filter", c.argv, config, a.seed, Json::object(), {}));
  return exit_ok;
}

// ---- scree ----

struct ScreeArgs {
  std::string data;
  bool no_standardize = false;
  long top = 10;
  std::string out;
};

int run_scree(const ScreeArgs& a, const Common&) {
  const auto panel = csv::ingest(a.data, !a.no_standardize);
  const auto s = scree(panel);
  const long rows = std::min<long>(a.top, s.eigenvalues.size());
  Matrix table(rows, 3);
  for (long i = 0; i < rows; ++i) table.row(i) << static_cast<double>(i + 1), s.eigenvalues(i), s.cumulative_share(i);
  const std::vector<std::string> header{"rank", "eigenvalue", "cumulative_share"};
  if (a.out.empty())
    csv::write(std::cout, "mfsv.scree", header, table);
  else
    csv::write_file(a.out, "mfsv.scree", header, table);
  return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulation and two-step estimation of multivariate factor stochastic volatility models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mfsv::version));
  Common common;
  for (int i = 0; i < argc; ++i) common.argv.emplace_back(argv[i]);
  const unsigned default_threads = mfsv::default_threads();

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Simulate returns from the model");
  sim->add_option("--params", sa.params, "Parameter JSON (mfsv.params/1); default: design grid");
  sim->add_option("--N", sa.n, "Series for the design grid")->check(CLI::Range(5L, 100000L));
  sim->add_option("--k", sa.k, "Factors for the design grid")->check(CLI::Range(1L, 3L));
  sim->add_option("--T", sa.T, "Observations")->required()->check(CLI::PositiveNumber);
  sim->add_option("--seed", sa.seed, "RNG seed");
  sim->add_option("--out", sa.out, "Returns CSV")->required();
  sim->add_option("--latent", sa.latent, "Latent x and h CSV");
  sim->add_option("--params-out", sa.params_out, "Write the parameters used");
  sim->add_option("--manifest", common.manifest_path, "Manifest path (default <out>.manifest.json)");

  EstimateArgs ea;
  ea.threads = default_threads;
  auto* est = app.add_subcommand("estimate", "Two-step estimation on a return panel");
  est->add_option("--data", ea.data, "Returns CSV")->required()->check(CLI::ExistingFile);
  est->add_option("--k", ea.k, "Number of factors")->required()->check(CLI::PositiveNumber);
  est->add_flag("--no-standardize", ea.no_standardize, "Use returns as given");
  auto* h_opt = est->add_option("--H", ea.H, "Fixed number of simulated paths")->check(CLI::PositiveNumber);
  est->add_flag("--H-adaptive", ea.H_adaptive, "H = round(1e5 / T) (default)")->excludes(h_opt);
  est->add_option("--start", ea.start, "Starting values")->check(CLI::IsMember({"qml", "user"}));
  est->add_option("--starts", ea.starts_file, "Parameter JSON with user starting values")->check(CLI::ExistingFile);
  est->add_option("--seed", ea.seed, "RNG seed");
  est->add_option("--threads", ea.threads, "Worker threads")->check(CLI::PositiveNumber);
  est->add_option("--iterate-emm", ea.iterate_emm, "EMM sweeps (1 = non-iterated)")->check(CLI::Range(1, 20));
  est->add_flag("--step1-only", ea.step1_only, "Stop after the static factor model");
  est->add_flag("--no-inference", ea.no_inference, "Skip standard errors");
  est->add_option("--fisher-S", ea.fisher_S, "Simulated samples for the information matrix")->check(CLI::Range(2L, 1000000L));
  est->add_option("--em-tol", ea.em_tol, "EM Frobenius tolerance")->check(CLI::PositiveNumber);
  est->add_option("--em-max-iters", ea.em_max_iters, "EM iteration cap")->check(CLI::PositiveNumber);
  est->add_option("--out", ea.out, "Result JSON (default stdout)");
  est->add_option("--extracted-csv", ea.extracted_csv, "Extracted residuals and factors");
  est->add_option("--W-csv", ea.w_csv, "Full covariance matrix of the estimates");
  est->add_option("--garch-csv", ea.garch_csv, "Auxiliary GARCH variance paths");
  est->add_option("--manifest", common.manifest_path, "Also write the manifest here");

  MonteCarloArgs ma;
  ma.threads = default_threads;
  auto* mc = app.add_subcommand("montecarlo", "Monte Carlo study on the design grid");
  mc->add_option("--design", ma.design, "Design JSON (mfsv.design/1)")->check(CLI::ExistingFile);
  mc->add_option("--N", ma.n, "Series")->check(CLI::Range(5L, 100000L));
  mc->add_option("--k", ma.k, "Factors")->check(CLI::Range(1L, 3L));
  mc->add_option("--T", ma.T, "Observations")->check(CLI::PositiveNumber);
  mc->add_option("--R", ma.R, "Replications")->check(CLI::PositiveNumber);
  mc->add_option("--H", ma.H, "Fixed H (default adaptive)")->check(CLI::PositiveNumber);
  mc->add_option("--start", ma.start, "Starting values")->check(CLI::IsMember({"qml", "user"}));
  mc->add_flag("--step1-only", ma.step1_only, "Static factor model only");
  mc->add_flag("--inference", ma.inference, "Compute standard errors per replication");
  mc->add_option("--fisher-S", ma.fisher_S, "Simulated samples for the information matrix")->check(CLI::Range(2L, 1000000L));
  mc->add_option("--seed", ma.seed, "Base seed");
  mc->add_option("--threads", ma.threads, "Worker threads")->check(CLI::PositiveNumber);
  mc->add_option("--out", ma.out, "Output directory")->required();
  mc->add_option("--manifest", common.manifest_path, "Also write the manifest here");

  FilterArgs fa;
  auto* flt = app.add_subcommand("filter", "Bootstrap particle filter for one extracted series");
  flt->add_option("--params", fa.params, "Estimate or parameter JSON")->required()->check(CLI::ExistingFile);
  flt->add_option("--data", fa.data, "Returns CSV")->required()->check(CLI::ExistingFile);
  flt->add_option("--series", fa.series, "Series index, 1-based (factors follow the N residuals)")->required();
  flt->add_option("--particles", fa.particles, "Particles")->check(CLI::Range(100L, 100000000L));
  flt->add_option("--seed", fa.seed, "RNG seed");
  flt->add_flag("--standardize", fa.standardize, "Standardize the data (implied by estimate JSON that did)");
  flt->add_option("--out", fa.out, "Filtered path CSV")->required();
  flt->add_option("--manifest", common.manifest_path, "Manifest path (default <out>.manifest.json)");

  ScreeArgs sc;
  auto* scr = app.add_subcommand("scree", "Sorted eigenvalues of the sample covariance");
  scr->add_option("--data", sc.data, "Returns CSV")->required()->check(CLI::ExistingFile);
  scr->add_flag("--no-standardize", sc.no_standardize, "Use returns as given");
  scr->add_option("--top", sc.top, "Eigenvalues to report")->check(CLI::PositiveNumber);
  scr->add_option("--out", sc.out, "CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    if (*sim) return run_simulate(sa, common);
    if (*est) return run_estimate(ea, common);
    if (*mc) {
      if (ma.design.empty() && !mc->count("--T")) throw CLI::ValidationError("montecarlo needs --design or --T");
      return run_montecarlo(ma, common, *mc);
    }
    if (*flt) return run_filter(fa, common);
    if (*scr) return run_scree(sc, common);
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return exit_usage;
  } catch (const mfsv::Error& e) {
    std::cerr << "error [" << mfsv::to_string(e.code()) << "]: " << e.what() << "\n";
    return exit_failure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_failure;
  }
  return exit_usage;
}
