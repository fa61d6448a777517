#pragma once

// End-to-end estimation: step one, extraction, starting values, EMM and
// (optionally) asymptotic inference.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mfsv/emm.hpp"
#include "mfsv/inference.hpp"
#include "mfsv/qml.hpp"
#include "mfsv/static_ml.hpp"

namespace mfsv {

struct EstimateConfig {
  EmConfig em;
  EmmConfig emm;
  bool step1_only = false;
  bool inference = true;
  FisherOptions fisher;
  JacobianOptions jacobian;
  std::optional<Theta2> user_starts;  // used when emm.start_mode == user
  std::uint64_t seed = 20240601;
  unsigned threads = 1;
  double near_zero_gamma = 0.05;      // relative to the largest factor variance
};

struct StageTimes {
  double step1 = 0.0;
  double qml = 0.0;
  double emm = 0.0;
  double inference = 0.0;
  double total = 0.0;
};

struct EstimateResult {
  StaticFactorEstimate step1;
  Matrix x_hat;
  std::vector<QmlStart> qml;
  Theta2 starts;
  std::vector<EmmSeriesResult> emm;
  long H = 0;
  std::optional<FisherResult> fisher;
  std::optional<VcovResult> vcov;
  std::vector<std::string> flags;
  StageTimes times;

  long n_series() const { return step1.n_series(); }
  long n_factors() const { return step1.n_factors(); }
  bool has_step2() const { return !emm.empty(); }
  Theta2 theta2() const { return theta2_from(emm); }
  Vector theta() const { return pack_theta(step1.theta1(), theta2()); }

  /// True when any stage raised a convergence or rank flag.
  bool convergence_flagged() const { return !flags.empty(); }
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class Fn>
auto run_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error(e.code(), std::string(stage) + ": " + e.what());
  }
}

}  // namespace detail

inline std::vector<QmlStart> qml_starts(const Matrix& x_hat, unsigned threads) {
  std::vector<QmlStart> out(static_cast<std::size_t>(x_hat.cols()));
  parallel_for(out.size(), threads, [&](std::size_t m) {
    const Vector col = x_hat.col(static_cast<long>(m));
    out[m] = qml_fit(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())));
  });
  return out;
}

inline EstimateResult estimate(const ReturnPanel& panel, long k, const EstimateConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const auto t_all = clock::now();
  EstimateResult out;

  auto t0 = clock::now();
  out.step1 = detail::run_stage("step1", [&] { return em_fit(panel, k, cfg.em); });
  out.x_hat = extract_series(out.step1, panel);
  out.times.step1 = detail::seconds_since(t0);
  if (!out.step1.converged) out.flags.emplace_back("step1-non-convergence");
  const double gmax = out.step1.Gamma_star.maxCoeff();
  for (long j = 0; j < k; ++j)
    if (out.step1.Gamma_star(j) < cfg.near_zero_gamma * gmax)
      out.flags.push_back("near-zero-factor-variance:" + std::to_string(j + 1));
  if (cfg.step1_only) {
    out.times.total = detail::seconds_since(t_all);
    return out;
  }

  const long n_total = panel.n_series() + k;
  t0 = clock::now();
  if (cfg.emm.start_mode == StartMode::qml) {
    out.qml = detail::run_stage("qml", [&] { return qml_starts(out.x_hat, cfg.threads); });
    for (const auto& q : out.qml) out.starts.arsv.push_back({q.mu0, q.phi0, q.sigma_eta0});
    for (long m = 0; m < n_total; ++m)
      if (out.qml[static_cast<std::size_t>(m)].fallback)
        out.flags.push_back("qml-fallback:" + std::to_string(m));
  } else {
    if (!cfg.user_starts || static_cast<long>(cfg.user_starts->size()) != n_total)
      throw Error(ErrorCode::invalid_argument, "user start mode needs N+k starting values");
    out.starts = *cfg.user_starts;
  }
  out.times.qml = detail::seconds_since(t0);

  t0 = clock::now();
  EmmConfig emm_cfg = cfg.emm;
  emm_cfg.seed = rng::derive(cfg.seed, 1);
  emm_cfg.threads = cfg.threads;
  out.H = resolve_H(emm_cfg, panel.n_obs());
  out.emm = detail::run_stage("emm", [&] { return emm_fit_all(out.x_hat, out.step1, out.starts, emm_cfg); });
  out.times.emm = detail::seconds_since(t0);
  for (const auto& r : out.emm)
    for (const auto& f : r.flags) out.flags.push_back(f + ":" + std::to_string(r.series));

  if (cfg.inference) {
    t0 = clock::now();
    detail::run_stage("inference", [&] {
      std::vector<GarchAuxParams> aux;
      for (const auto& r : out.emm) aux.push_back(r.aux.params);
      const AuxPoint beta = AuxPoint::from(out.step1, std::move(aux));
      const Theta1 t1 = out.step1.theta1();
      const Theta2 t2 = out.theta2();
      FisherOptions fo = cfg.fisher;
      fo.threads = cfg.threads;
      out.fisher = simulated_fisher(t1, t2, beta, panel.n_obs(), rng::derive(cfg.seed, 2), fo);
      JacobianOptions jo = cfg.jacobian;
      jo.threads = cfg.threads;
      const Matrix d = score_jacobian(t1, t2, beta, panel.n_obs(), out.H, rng::derive(cfg.seed, 3), jo);
      out.vcov = emm_vcov(pack_theta(t1, t2), panel.n_series(), k, panel.n_obs(), out.H,
                          out.fisher->info, d);
      return 0;
    });
    if (out.fisher->rank_deficient) out.flags.emplace_back("fisher-rank-deficient");
    for (const auto& f : out.vcov->flags) out.flags.push_back("vcov-" + f);
    out.times.inference = detail::seconds_since(t0);
  }
  out.times.total = detail::seconds_since(t_all);
  return out;
}

struct ScreeResult {
  Vector eigenvalues;  // descending
  Vector cumulative_share;
};

inline ScreeResult scree(const ReturnPanel& panel) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sample_covariance(panel), Eigen::EigenvaluesOnly);
  ScreeResult out;
  out.eigenvalues = eig.eigenvalues().reverse();
  out.cumulative_share.resize(out.eigenvalues.size());
  const double total = out.eigenvalues.sum();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < out.eigenvalues.size(); ++i) {
    acc += out.eigenvalues(i);
    out.cumulative_share(i) = total > 0.0 ? acc / total : 0.0;
  }
  return out;
}

}  // namespace mfsv
