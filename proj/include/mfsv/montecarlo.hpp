#pragma once

// Monte Carlo study: design parameters, replication loop, outlier filtering
// and block summaries (MSE, ratio of MC std to mean asymptotic SE).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mfsv/dgp.hpp"
#include "mfsv/pipeline.hpp"

namespace mfsv {

inline Vector evenly_spaced(double first, double last, long count) {
  if (count == 1) return Vector::Constant(1, first);
  return Vector::LinSpaced(count, first, last);
}

/// Simulation design: loadings on evenly spaced grids, error ARSV parameters
/// on grids across series, factor parameters from a fixed list.
inline std::pair<Theta1, Theta2> build_design_params(long n, long k) {
  if (n < 5) throw Error(ErrorCode::invalid_dimensions, "design needs N >= 5");
  if (k < 1 || k > 3) throw Error(ErrorCode::invalid_dimensions, "design supports 1 <= k <= 3");
  Matrix b = Matrix::Zero(n, k);
  const double first[3] = {0.9, 0.2, 0.1};
  const double last[3] = {0.1, 0.8, 0.7};
  for (long j = 0; j < k; ++j) {
    b(j, j) = 1.0;
    b.col(j).tail(n - j - 1) = evenly_spaced(first[j], last[j], n - j - 1);
  }
  Theta2 t2;
  const Vector phi = evenly_spaced(0.9, 0.99, n);
  const Vector mu = evenly_spaced(-2.0, -1.1, n);
  const Vector sig = evenly_spaced(0.6, 0.15, n);
  for (long i = 0; i < n; ++i) t2.arsv.push_back({mu(i), phi(i), sig(i)});
  const double fphi[3] = {0.99, 0.95, 0.91};
  const double fsig[3] = {0.2, 0.3, 0.4};
  for (long j = 0; j < k; ++j) t2.arsv.push_back({0.0, fphi[j], fsig[j]});
  Theta1 t1{LoadingMatrix(b), Vector(n), Vector(k)};
  for (long i = 0; i < n; ++i) t1.sigma2(i) = psi_from_arsv(t2.arsv[static_cast<std::size_t>(i)]);
  for (long j = 0; j < k; ++j) t1.gamma2(j) = psi_from_arsv(t2.arsv[static_cast<std::size_t>(n + j)]);
  return {std::move(t1), std::move(t2)};
}

/// Replication outlier rules. Series m >= n_series are factors.
inline std::vector<std::string> outlier_check(const Theta2& est, const Theta2& truth, long n_series) {
  if (est.size() != truth.size()) throw Error(ErrorCode::invalid_dimensions, "theta2 size mismatch");
  std::vector<std::string> flags;
  for (std::size_t m = 0; m < est.size(); ++m) {
    const auto& e = est.arsv[m];
    const auto& t = truth.arsv[m];
    const std::string tag = ":" + std::to_string(m);
    if (e.phi < 0.0 || e.phi < t.phi / 10.0) flags.push_back("small-phi" + tag);
    if (std::abs(e.sigma_eta) > 10.0 * std::abs(t.sigma_eta)) flags.push_back("large-sigma" + tag);
    if (static_cast<long>(m) < n_series) {
      if (std::abs(e.mu) > 10.0 * std::abs(t.mu)) flags.push_back("large-mu" + tag);
    } else if (std::abs(e.mu) > 9.0) {
      flags.push_back("large-factor-mu" + tag);
    }
  }
  return flags;
}

/// Positions of the reported parameter blocks in the extended vector
/// (pack_theta layout followed by the N+k constants mu).
inline std::map<std::string, std::vector<long>> parameter_blocks(long n, long k) {
  const ThetaLayout lay{n, k};
  std::map<std::string, std::vector<long>> out;
  auto& all = out["all"];
  for (long c = 0; c < lay.loadings(); ++c) out["B"].push_back(c);
  for (long i = 0; i < n; ++i) out["Sigma"].push_back(lay.sigma2(i));
  for (long j = 0; j < k; ++j) out["Gamma"].push_back(lay.gamma2(j));
  for (long m = 0; m < n + k; ++m) {
    const std::string side = m < n ? "eps" : "f";
    out["mu_" + side].push_back(lay.size() + m);
    out["phi_" + side].push_back(lay.phi(m));
    out["sigma_" + side].push_back(lay.sigma_eta(m));
  }
  for (long c = 0; c < lay.size() + n + k; ++c) all.push_back(c);
  return out;
}

/// (1 / (dim R)) sum_r sum_i (est_ri - truth_i)^2 over the selected indices.
inline double mse(const std::vector<Vector>& estimates, const Vector& truth,
                  const std::vector<long>& block) {
  if (estimates.empty()) throw Error(ErrorCode::invalid_argument, "no replications");
  if (block.empty()) throw Error(ErrorCode::invalid_argument, "empty block");
  double acc = 0.0;
  for (const auto& e : estimates)
    for (long i : block) acc += (e(i) - truth(i)) * (e(i) - truth(i));
  return acc / static_cast<double>(block.size() * estimates.size());
}

/// MC standard deviation over mean asymptotic SE, averaged over the block.
inline double std_ratio(const std::vector<Vector>& estimates, const std::vector<Vector>& ses,
                        const std::vector<long>& block) {
  const auto r = static_cast<double>(estimates.size());
  if (estimates.size() < 2 || ses.size() != estimates.size())
    throw Error(ErrorCode::invalid_argument, "std ratio needs matching estimates and SEs");
  if (block.empty()) throw Error(ErrorCode::invalid_argument, "empty block");
  double total = 0.0;
  for (long i : block) {
    double mean = 0.0, mean_se = 0.0;
    for (std::size_t j = 0; j < estimates.size(); ++j) {
      mean += estimates[j](i);
      mean_se += ses[j](i);
    }
    mean /= r;
    mean_se /= r;
    if (!(mean_se > 0.0)) throw Error(ErrorCode::invalid_argument, "zero asymptotic SE");
    double var = 0.0;
    for (const auto& e : estimates) var += (e(i) - mean) * (e(i) - mean);
    total += std::sqrt(var / (r - 1.0)) / mean_se;
  }
  return total / static_cast<double>(block.size());
}

struct McDesign {
  long N = 10;
  long k = 1;
  long T = 1000;
  long R = 10;
  bool adaptive_H = true;
  long H = 10;
  StartMode start_mode = StartMode::qml;
  bool step1_only = false;
  bool inference = false;
  long fisher_S = 1000;
  std::uint64_t base_seed = 1;
  std::optional<std::pair<Theta1, Theta2>> true_theta;  // default: build_design_params

  std::pair<Theta1, Theta2> truth() const { return true_theta ? *true_theta : build_design_params(N, k); }
};

struct McReplication {
  long index = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Vector estimate;  // extended vector; step-two entries NaN when absent
  Vector se;        // extended SEs; empty without inference
  std::vector<std::string> outliers;
  std::vector<std::string> flags;
  double seconds = 0.0;

  bool discarded() const { return !ok || !outliers.empty(); }
};

struct McBlockSummary {
  std::string block;
  double mse = std::numeric_limits<double>::quiet_NaN();
  double std_ratio = std::numeric_limits<double>::quiet_NaN();
};

struct McResult {
  McDesign design;
  Vector truth;  // extended
  std::vector<McReplication> reps;
  std::vector<McBlockSummary> summary;
  long kept = 0;
  double outlier_pct = 0.0;
  double mean_seconds = 0.0;
};

inline Vector extended_truth(const Theta1& t1, const Theta2& t2) {
  const Vector th = pack_theta(t1, t2);
  Vector out(th.size() + static_cast<long>(t2.size()));
  out.head(th.size()) = th;
  for (std::size_t m = 0; m < t2.size(); ++m) out(th.size() + static_cast<long>(m)) = t2.arsv[m].mu;
  return out;
}

/// One replication: simulate at the design truth, estimate, record.
inline McReplication run_replication(const McDesign& d, const Theta1& t1, const Theta2& t2, long r) {
  McReplication rep;
  rep.index = r;
  rep.seed = rng::derive(d.base_seed, static_cast<std::uint64_t>(r));
  const auto t0 = std::chrono::steady_clock::now();
  const ThetaLayout lay{d.N, d.k};
  rep.estimate = Vector::Constant(lay.size() + d.N + d.k, std::numeric_limits<double>::quiet_NaN());
  try {
    const auto sim = simulate(t1, t2, d.T, rng::derive(rep.seed, 0));
    const ReturnPanel panel(sim.returns);
    EstimateConfig cfg;
    cfg.seed = rng::derive(rep.seed, 1);
    cfg.step1_only = d.step1_only;
    cfg.inference = d.inference && !d.step1_only;
    cfg.emm.adaptive_H = d.adaptive_H;
    cfg.emm.H = d.H;
    cfg.emm.start_mode = d.start_mode;
    cfg.fisher.S = d.fisher_S;
    if (d.start_mode == StartMode::user) cfg.user_starts = t2;
    const auto res = estimate(panel, d.k, cfg);
    const Theta1 e1 = res.step1.theta1();
    rep.estimate.head(lay.static_size()) = pack_theta(e1, t2).head(lay.static_size());
    if (res.has_step2()) {
      const Theta2 e2 = res.theta2();
      rep.estimate.head(lay.size()) = pack_theta(e1, e2);
      for (std::size_t m = 0; m < e2.size(); ++m)
        rep.estimate(lay.size() + static_cast<long>(m)) = e2.arsv[m].mu;
      rep.outliers = outlier_check(e2, t2, d.N);
    }
    if (res.vcov) {
      rep.se.resize(rep.estimate.size());
      rep.se << res.vcov->se, res.vcov->se_mu;
    }
    rep.flags = res.flags;
    rep.ok = true;
  } catch (const std::exception& e) {
    rep.error = e.what();
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

/// Summaries over kept replications, in replication-index order.
inline void summarize(McResult& res) {
  const auto& d = res.design;
  std::vector<Vector> est, se;
  double secs = 0.0;
  for (const auto& r : res.reps) {
    secs += r.seconds;
    if (r.discarded()) continue;
    est.push_back(r.estimate);
    if (r.se.size() > 0) se.push_back(r.se);
  }
  res.kept = static_cast<long>(est.size());
  res.outlier_pct = res.reps.empty() ? 0.0
                                     : 100.0 * static_cast<double>(res.reps.size() - est.size()) /
                                           static_cast<double>(res.reps.size());
  res.mean_seconds = res.reps.empty() ? 0.0 : secs / static_cast<double>(res.reps.size());
  res.summary.clear();
  const auto blocks = parameter_blocks(d.N, d.k);
  for (const char* name : {"B", "Sigma", "Gamma", "mu_eps", "mu_f", "phi_eps", "phi_f", "sigma_eps",
                           "sigma_f", "all"}) {
    McBlockSummary s;
    s.block = name;
    const auto& idx = blocks.at(name);
    if (!est.empty() && std::isfinite(est.front()(idx.front())) && std::isfinite(est.front()(idx.back())))
      s.mse = mse(est, res.truth, idx);
    if (se.size() == est.size() && se.size() >= 2) {
      try {
        s.std_ratio = std_ratio(est, se, idx);
      } catch (const Error&) {
      }
    }
    res.summary.push_back(s);
  }
}

inline McResult run_study(const McDesign& design, unsigned workers = 1) {
  if (design.R < 1) throw Error(ErrorCode::invalid_argument, "R must be >= 1");
  const auto [t1, t2] = design.truth();
  if (t1.n_series() != design.N || t1.n_factors() != design.k)
    throw Error(ErrorCode::invalid_dimensions, "true parameters do not match N and k");
  McResult res;
  res.design = design;
  res.truth = extended_truth(t1, t2);
  res.reps.resize(static_cast<std::size_t>(design.R));
  parallel_for(res.reps.size(), workers, [&](std::size_t r) {
    res.reps[r] = run_replication(design, t1, t2, static_cast<long>(r));
  });
  summarize(res);
  return res;
}

}  // namespace mfsv
