#pragma once

// JSON documents for parameters, estimation results, Monte Carlo designs and
// run manifests. Every document carries "schema": "<name>/<version>".

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfsv/montecarlo.hpp"
#include "mfsv/pipeline.hpp"
#include "mfsv/version.hpp"

namespace mfsv::json {

using nlohmann::json;

inline constexpr const char* params_schema = "mfsv.params/1";
inline constexpr const char* estimate_schema = "mfsv.estimate/1";
inline constexpr const char* design_schema = "mfsv.design/1";
inline constexpr const char* manifest_schema = "mfsv.manifest/1";
inline constexpr const char* study_schema = "mfsv.study/1";

inline json matrix_rows(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json vector_list(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Matrix to_matrix(const json& rows) {
  if (!rows.is_array() || rows.empty()) throw Error(ErrorCode::parse_error, "expected a non-empty matrix");
  const auto r = static_cast<long>(rows.size());
  const auto c = static_cast<long>(rows.at(0).size());
  Matrix m(r, c);
  for (long i = 0; i < r; ++i) {
    if (static_cast<long>(rows.at(i).size()) != c) throw Error(ErrorCode::parse_error, "ragged matrix");
    for (long j = 0; j < c; ++j) m(i, j) = rows.at(i).at(j).get<double>();
  }
  return m;
}

inline Vector to_vector(const json& list) {
  Vector v(static_cast<long>(list.size()));
  for (std::size_t i = 0; i < list.size(); ++i) v(static_cast<long>(i)) = list.at(i).get<double>();
  return v;
}

inline std::string series_name(long m, long n, const std::vector<std::string>& labels = {}) {
  if (m < n) return labels.empty() ? "eps" + std::to_string(m + 1) : labels[static_cast<std::size_t>(m)];
  return "factor" + std::to_string(m - n + 1);
}

/// Names in pack_theta order followed by mu[1..N+k].
inline std::vector<std::string> parameter_names(long n, long k) {
  std::vector<std::string> out;
  for (long j = 0; j < k; ++j)
    for (long i = j + 1; i < n; ++i)
      out.push_back("b_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
  for (long i = 0; i < n; ++i) out.push_back("sigma2_" + std::to_string(i + 1));
  for (long j = 0; j < k; ++j) out.push_back("gamma2_" + std::to_string(j + 1));
  for (long m = 0; m < n + k; ++m) {
    out.push_back("phi_" + std::to_string(m + 1));
    out.push_back("sigma_eta_" + std::to_string(m + 1));
  }
  for (long m = 0; m < n + k; ++m) out.push_back("mu_" + std::to_string(m + 1));
  return out;
}

inline json arsv_list(const Theta2& t2) {
  json out = json::array();
  for (const auto& p : t2.arsv) out.push_back({{"mu", p.mu}, {"phi", p.phi}, {"sigma_eta", p.sigma_eta}});
  return out;
}

inline Theta2 arsv_from(const json& list) {
  Theta2 t2;
  for (const auto& e : list)
    t2.arsv.push_back({e.value("mu", 0.0), e.at("phi").get<double>(), e.at("sigma_eta").get<double>()});
  return t2;
}

inline json params_document(const Theta1& t1, const Theta2& t2) {
  return {{"schema", params_schema},
          {"N", t1.n_series()},
          {"k", t1.n_factors()},
          {"loadings", matrix_rows(t1.loadings.matrix())},
          {"sigma2", vector_list(t1.sigma2)},
          {"gamma2", vector_list(t1.gamma2)},
          {"arsv", arsv_list(t2)}};
}

struct ModelParams {
  Theta1 theta1;
  Theta2 theta2;
  bool standardized = false;
  std::vector<std::string> labels;
};

/// Accepts a parameter document or an estimation result that has a step-two block.
inline ModelParams params_from(const json& doc) {
  const std::string schema = doc.value("schema", "");
  ModelParams out;
  if (schema == params_schema) {
    out.theta1 = Theta1{LoadingMatrix(to_matrix(doc.at("loadings"))), to_vector(doc.at("sigma2")),
                        to_vector(doc.at("gamma2"))};
    out.theta2 = arsv_from(doc.at("arsv"));
  } else if (schema == estimate_schema) {
    const auto& s1 = doc.at("step1");
    out.theta1 = Theta1{LoadingMatrix(to_matrix(s1.at("loadings")), 1e-6, 0.0), to_vector(s1.at("sigma2")),
                        to_vector(s1.at("gamma2"))};
    if (!doc.contains("step2") || doc.at("step2").empty())
      throw Error(ErrorCode::parse_error, "estimate document has no step-two results");
    out.theta2 = arsv_from(doc.at("step2"));
    out.standardized = doc.value("standardized", false);
    out.labels = doc.value("labels", std::vector<std::string>{});
  } else {
    throw Error(ErrorCode::parse_error, "unsupported schema '" + schema + "'");
  }
  out.theta1.validate();
  if (static_cast<long>(out.theta2.size()) != out.theta1.n_series() + out.theta1.n_factors())
    throw Error(ErrorCode::parse_error, "arsv list must have N+k entries");
  out.theta2.validate();
  return out;
}

inline json estimate_document(const EstimateResult& r, const std::vector<std::string>& labels,
                              bool standardized) {
  const long n = r.n_series(), k = r.n_factors();
  const auto& s1 = r.step1;
  json doc = {{"schema", estimate_schema},
              {"N", n},
              {"k", k},
              {"T", r.x_hat.rows()},
              {"standardized", standardized},
              {"labels", labels}};
  doc["step1"] = {{"loadings", matrix_rows(s1.B_star.matrix())},
                  {"sigma2", vector_list(s1.Sigma_star)},
                  {"gamma2", vector_list(s1.Gamma_star)},
                  {"projection", matrix_rows(s1.Pi_star)},
                  {"loglik", s1.loglik},
                  {"iterations", s1.iterations},
                  {"converged", s1.converged}};
  if (r.has_step2()) {
    doc["H"] = r.H;
    json step2 = json::array();
    for (const auto& e : r.emm) {
      json item = {{"series", e.series},
                   {"name", series_name(e.series, n, labels)},
                   {"mu", e.params.mu},
                   {"phi", e.params.phi},
                   {"sigma_eta", e.params.sigma_eta},
                   {"distance", e.distance},
                   {"gap_inf", e.gap_inf},
                   {"root_found", e.root_found},
                   {"used_minimizer", e.used_minimizer},
                   {"evals", e.evals},
                   {"seconds", e.seconds},
                   {"aux", {{"alpha1", e.aux.params.alpha1},
                            {"alpha2", e.aux.params.alpha2},
                            {"psi", e.aux.params.psi_hat},
                            {"converged", e.aux.converged},
                            {"boundary", e.aux.boundary}}},
                   {"flags", e.flags}};
      if (!r.qml.empty()) {
        const auto& q = r.qml[static_cast<std::size_t>(e.series)];
        item["qml_start"] = {{"mu", q.mu0}, {"phi", q.phi0}, {"sigma_eta", q.sigma_eta0}, {"fallback", q.fallback}};
      }
      step2.push_back(std::move(item));
    }
    doc["step2"] = std::move(step2);
  }
  if (r.vcov) {
    const auto names = parameter_names(n, k);
    const Vector theta = r.theta();
    json params = json::array();
    for (long c = 0; c < theta.size(); ++c)
      params.push_back({{"name", names[static_cast<std::size_t>(c)]}, {"estimate", theta(c)}, {"se", r.vcov->se(c)}});
    for (long m = 0; m < n + k; ++m)
      params.push_back({{"name", names[static_cast<std::size_t>(theta.size() + m)]},
                        {"estimate", r.vcov->mu(m)},
                        {"se", r.vcov->se_mu(m)}});
    doc["inference"] = {{"convention", VcovResult::convention},
                        {"T", r.vcov->n_obs},
                        {"H", r.vcov->H},
                        {"parameters", std::move(params)},
                        {"fisher", {{"S", r.fisher->draws},
                                    {"condition", r.fisher->condition},
                                    {"rank_deficient", r.fisher->rank_deficient}}},
                        {"pseudo_inverse", r.vcov->pseudo_inverse},
                        {"flags", r.vcov->flags}};
  }
  doc["flags"] = r.flags;
  doc["timings"] = {{"step1", r.times.step1},
                    {"qml", r.times.qml},
                    {"emm", r.times.emm},
                    {"inference", r.times.inference},
                    {"total", r.times.total}};
  return doc;
}

inline json design_document(const McDesign& d) {
  const auto [t1, t2] = d.truth();
  return {{"schema", design_schema},
          {"N", d.N},
          {"k", d.k},
          {"T", d.T},
          {"R", d.R},
          {"H_mode", d.adaptive_H ? "adaptive" : "fixed"},
          {"H", d.H},
          {"start_mode", d.start_mode == StartMode::qml ? "qml" : "user"},
          {"step1_only", d.step1_only},
          {"inference", d.inference},
          {"fisher_S", d.fisher_S},
          {"base_seed", d.base_seed},
          {"loading_grid", "column j: b[j+1..N, j] evenly spaced; 0.9->0.1, 0.2->0.8, 0.1->0.7"},
          {"true_theta", params_document(t1, t2)}};
}

inline McDesign design_from(const json& doc) {
  if (doc.value("schema", "") != design_schema)
    throw Error(ErrorCode::parse_error, "expected schema " + std::string(design_schema));
  McDesign d;
  d.N = doc.at("N").get<long>();
  d.k = doc.at("k").get<long>();
  d.T = doc.at("T").get<long>();
  d.R = doc.value("R", 10L);
  const std::string hmode = doc.value("H_mode", "adaptive");
  if (hmode != "adaptive" && hmode != "fixed") throw Error(ErrorCode::parse_error, "H_mode must be adaptive or fixed");
  d.adaptive_H = hmode == "adaptive";
  d.H = doc.value("H", 10L);
  const std::string start = doc.value("start_mode", "qml");
  if (start != "qml" && start != "user") throw Error(ErrorCode::parse_error, "start_mode must be qml or user");
  d.start_mode = start == "qml" ? StartMode::qml : StartMode::user;
  d.step1_only = doc.value("step1_only", false);
  d.inference = doc.value("inference", false);
  d.fisher_S = doc.value("fisher_S", 1000L);
  d.base_seed = doc.value("base_seed", std::uint64_t{1});
  if (doc.contains("true_theta")) {
    const auto p = params_from(doc.at("true_theta"));
    d.true_theta = std::make_pair(p.theta1, p.theta2);
  }
  return d;
}

inline json read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, path + ": " + e.what());
  }
}

inline void write_file(const std::string& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path);
  out << doc.dump(2) << "\n";
  if (!out) throw Error(ErrorCode::io_error, "write failed for " + path);
}

inline json manifest(const std::string& command, const std::vector<std::string>& argv, const json& config,
                     std::uint64_t seed, const json& timings, const std::vector<std::string>& flags) {
  return {{"schema", manifest_schema},
          {"command", command},
          {"argv", argv},
          {"config", config},
          {"seed", seed},
          {"version", version},
          {"timings", timings},
          {"flags", flags}};
}

}  // namespace mfsv::json
