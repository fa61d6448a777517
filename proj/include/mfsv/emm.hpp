#pragma once

// Step two: equation-by-equation EMM with GARCH(1,1) auxiliary scores.
//
// For series m the auxiliary model is fitted to the observed extracted series,
// and (phi_m, sigma_m) are chosen so that the GARCH score, pooled over H
// simulated paths extracted with the step-one projection, matches the observed
// score. The constant mu_m always follows from psi_m.
//
// Extraction is linear in the latent series, x_tilde = L x, and only series m
// moves during its fit. The simulation is therefore done once at the initial
// parameters; each evaluation replays series m from the stored draws and adds
// L_mm (x_m(theta) - x_m(theta0)) to the stored extracted column.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mfsv/dgp.hpp"
#include "mfsv/garch.hpp"
#include "mfsv/optim.hpp"
#include "mfsv/parallel.hpp"
#include "mfsv/static_ml.hpp"

namespace mfsv {

enum class StartMode { user, qml };

struct EmmConfig {
  long H = 10;
  bool adaptive_H = true;  // H = round(1e5 / T)
  std::uint64_t seed = 20240601;
  double distance_tol = 1e-6;
  int max_evals = 500;
  StartMode start_mode = StartMode::qml;
  double phi_margin = 1e-4;  // phi in [-1 + margin, 1 - margin]
  double sigma_min = 1e-6;
  double sigma_max = 10.0;
  double jacobian_step = 1e-4;
  int sweeps = 1;  // > 1 re-simulates at the previous sweep's estimates
  unsigned threads = 1;
};

inline long resolve_H(const EmmConfig& cfg, long n_obs) {
  if (n_obs < 1) throw Error(ErrorCode::invalid_argument, "T must be >= 1");
  if (!cfg.adaptive_H) {
    if (cfg.H < 1) throw Error(ErrorCode::invalid_argument, "H must be >= 1");
    return cfg.H;
  }
  return std::max(1L, std::lround(1e5 / static_cast<double>(n_obs)));
}

struct EmmSeriesResult {
  long series = 0;
  ArsvParams params;             // mu derived from psi
  double distance = 0.0;         // squared moment gap, identity weight
  double gap_inf = 0.0;          // max abs moment gap
  bool root_found = false;
  bool used_minimizer = false;
  bool at_bound = false;
  int evals = 0;
  GarchFit aux;                  // auxiliary fit on the observed series
  GarchScore target = GarchScore::Zero();
  double seconds = 0.0;
  std::vector<std::string> flags;

  bool converged() const { return root_found; }
};

/// Simulated paths shared by all per-series fits: stored draws, the latent
/// series at the initial parameters, and their extracted counterparts.
class EmmSimulation {
 public:
  EmmSimulation(const StaticFactorEstimate& est1, const Theta2& initial, long n_obs, long n_paths,
                std::uint64_t seed, unsigned threads = 1)
      : psi_(est1.psi()), n_obs_(n_obs) {
    const long n_total = est1.n_series() + est1.n_factors();
    if (static_cast<long>(initial.size()) != n_total)
      throw Error(ErrorCode::invalid_dimensions, "initial theta2 must hold N+k entries");
    if (n_paths < 1 || n_obs < 1) throw Error(ErrorCode::invalid_argument, "need H >= 1, T >= 1");
    initial_ = initial.with_mu_from_psi(psi_);
    initial_.validate();
    const Matrix l = extraction_map(est1.B_star.matrix(), est1.Pi_star);
    l_diag_ = l.diagonal();
    draws_.resize(static_cast<std::size_t>(n_paths));
    latent_.resize(static_cast<std::size_t>(n_paths));
    extracted_.resize(static_cast<std::size_t>(n_paths));
    parallel_for(draws_.size(), threads, [&](std::size_t j) {
      draws_[j] = draw_panel(rng::derive(seed, j), n_total, n_obs);
      latent_[j] = latent_from_draws(initial_, draws_[j]);
      extracted_[j] = latent_[j] * l.transpose();
    });
  }

  long n_obs() const { return n_obs_; }
  long n_paths() const { return static_cast<long>(draws_.size()); }
  long n_total() const { return static_cast<long>(initial_.size()); }
  const Theta2& initial() const { return initial_; }
  const Vector& psi() const { return psi_; }

  /// Pooled mean GARCH score of extracted series m with (phi, sigma) replacing
  /// its initial pair. Non-finite output signals a degenerate simulation.
  GarchScore moment(long m, double phi, double sigma, const GarchAuxParams& aux) const {
    const auto mi = static_cast<std::size_t>(m);
    ArsvParams p{mu_from_psi(psi_(m), phi, sigma), phi, sigma};
    std::vector<double> x(static_cast<std::size_t>(n_obs_));
    GarchScore total = GarchScore::Zero();
    const double lmm = l_diag_(m);
    for (std::size_t j = 0; j < draws_.size(); ++j) {
      arsv_path(p, draws_[j][mi], x.data());
      const auto base = extracted_[j].col(m);
      const auto x0 = latent_[j].col(m);
      for (long t = 0; t < n_obs_; ++t) {
        const auto ti = static_cast<std::size_t>(t);
        x[ti] = base(t) + lmm * (x[ti] - x0(t));
      }
      const auto s = garch_score_sums(x, aux);
      if (!s.finite) {
        total.setConstant(std::numeric_limits<double>::quiet_NaN());
        return total;
      }
      total += s.score;
    }
    return total / static_cast<double>(n_obs_ * n_paths());
  }

 private:
  Vector psi_;
  long n_obs_;
  Theta2 initial_;
  Vector l_diag_;
  std::vector<std::vector<ArsvDraws>> draws_;
  std::vector<Matrix> latent_;     // T x (N+k) per path
  std::vector<Matrix> extracted_;  // T x (N+k) per path
};

namespace detail {

struct Box {
  double lo[2];
  double hi[2];
  bool inside(double a, double b) const {
    return a >= lo[0] && a <= hi[0] && b >= lo[1] && b <= hi[1];
  }
};

}  // namespace detail

/// Fits series m of the extracted observed matrix x_hat. `start` supplies
/// (phi, sigma) for series m; the simulation holds the other series fixed.
inline EmmSeriesResult emm_fit_series(long m, const Matrix& x_hat, const EmmSimulation& sim,
                                      const ArsvParams& start, const EmmConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (m < 0 || m >= sim.n_total() || x_hat.cols() != sim.n_total())
    throw Error(ErrorCode::invalid_dimensions, "series index or x_hat width mismatch");
  EmmSeriesResult out;
  out.series = m;
  const double psi = sim.psi()(m);

  const Vector col = x_hat.col(m);
  out.aux = fit_garch_pml(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                          psi);
  if (out.aux.boundary) out.flags.emplace_back("aux-boundary");
  out.target = garch_score(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                           out.aux.params);

  const detail::Box box{{-1.0 + cfg.phi_margin, cfg.sigma_min}, {1.0 - cfg.phi_margin, cfg.sigma_max}};
  auto gap = [&](double phi, double sigma) -> Eigen::Vector2d {
    ++out.evals;
    return sim.moment(m, phi, sigma, out.aux.params) - out.target;
  };
  auto sq = [](const Eigen::Vector2d& g) {
    return g.allFinite() ? g.squaredNorm() : std::numeric_limits<double>::infinity();
  };

  double z[2] = {std::clamp(start.phi, box.lo[0], box.hi[0]),
                 std::clamp(start.sigma_eta, box.lo[1], box.hi[1])};
  Eigen::Vector2d g = gap(z[0], z[1]);
  if (!g.allFinite())
    throw Error(ErrorCode::degenerate_simulation,
                "simulated GARCH score undefined for series " + std::to_string(m));

  auto newton = [&](int budget) {
    while (out.evals < budget) {
      if (g.lpNorm<Eigen::Infinity>() < cfg.distance_tol) return true;
      Eigen::Matrix2d jac;
      bool ok = true;
      for (int i = 0; i < 2 && ok; ++i) {
        const double h = cfg.jacobian_step * std::max(std::abs(z[i]), 1e-2);
        double up[2] = {z[0], z[1]}, dn[2] = {z[0], z[1]};
        up[i] = std::min(z[i] + h, box.hi[i]);
        dn[i] = std::max(z[i] - h, box.lo[i]);
        const Eigen::Vector2d gu = gap(up[0], up[1]);
        const Eigen::Vector2d gd = gap(dn[0], dn[1]);
        jac.col(i) = (gu - gd) / (up[i] - dn[i]);
        ok = jac.col(i).allFinite();
      }
      if (!ok) return false;
      const Eigen::Vector2d delta = jac.fullPivLu().solve(-g);
      if (!delta.allFinite()) return false;
      const double f0 = sq(g);
      bool moved = false;
      for (double lambda = 1.0; lambda > 1e-6 && out.evals < budget; lambda *= 0.5) {
        const double a = z[0] + lambda * delta(0), b = z[1] + lambda * delta(1);
        if (!box.inside(a, b)) continue;
        const Eigen::Vector2d gn = gap(a, b);
        if (sq(gn) < (1.0 - 1e-4 * lambda) * f0) {
          z[0] = a;
          z[1] = b;
          g = gn;
          moved = true;
          break;
        }
      }
      if (!moved) return false;
    }
    return g.lpNorm<Eigen::Infinity>() < cfg.distance_tol;
  };

  out.root_found = newton(cfg.max_evals);
  if (!out.root_found && out.evals < cfg.max_evals) {
    // The distance need not fall monotonically towards the root, so restart from the best grid points.
    std::vector<std::pair<double, std::array<double, 2>>> grid;
    for (double phi : {-0.5, 0.0, 0.5, 0.8, 0.9, 0.95, 0.98, 0.99, 0.995})
      for (double sigma : {0.05, 0.1, 0.2, 0.4, 0.8, 1.6}) {
        const double a = std::clamp(phi, box.lo[0], box.hi[0]), b = std::clamp(sigma, box.lo[1], box.hi[1]);
        grid.push_back({sq(gap(a, b)), {a, b}});
      }
    std::stable_sort(grid.begin(), grid.end(),
                     [](const auto& l, const auto& r) { return l.first < r.first; });
    double best_z[2] = {z[0], z[1]};
    Eigen::Vector2d best_g = g;
    for (std::size_t i = 0; i < 3 && i < grid.size() && !out.root_found && out.evals < cfg.max_evals; ++i) {
      if (!std::isfinite(grid[i].first)) break;
      z[0] = grid[i].second[0];
      z[1] = grid[i].second[1];
      g = gap(z[0], z[1]);
      out.root_found = newton(std::min(cfg.max_evals, out.evals + 120));
      if (out.root_found || sq(g) < sq(best_g)) {
        best_z[0] = z[0];
        best_z[1] = z[1];
        best_g = g;
      }
    }
    z[0] = best_z[0];
    z[1] = best_z[1];
    g = best_g;
  }
  if (!out.root_found && out.evals < cfg.max_evals) {
    out.used_minimizer = true;
    Vector x0(2), lo(2), hi(2);
    x0 << z[0], z[1];
    lo << box.lo[0], box.lo[1];
    hi << box.hi[0], box.hi[1];
    optim::NelderMeadOptions nm;
    nm.max_evals = std::max(10, cfg.max_evals - out.evals);
    nm.f_tol = 1e-16;
    nm.x_tol = 1e-10;
    const auto res = optim::nelder_mead([&](const Vector& v) { return sq(gap(v(0), v(1))); }, x0,
                                        lo, hi, nm);
    if (res.value < sq(g)) {
      z[0] = res.x(0);
      z[1] = res.x(1);
      g = gap(z[0], z[1]);
    }
    // The minimizer may land in the basin of an interior root.
    if (box.inside(z[0], z[1])) out.root_found = newton(out.evals + 60);
  }

  out.params = ArsvParams{mu_from_psi(psi, z[0], z[1]), z[0], z[1]};
  out.gap_inf = g.lpNorm<Eigen::Infinity>();
  out.distance = g.squaredNorm();
  const double tol_b = 1e-8;
  out.at_bound = z[0] <= box.lo[0] + tol_b || z[0] >= box.hi[0] - tol_b ||
                 z[1] <= box.lo[1] + tol_b || z[1] >= box.hi[1] - tol_b;
  if (out.at_bound) out.flags.emplace_back("boundary");
  if (out.used_minimizer) out.flags.emplace_back("minimizer-fallback");
  if (!out.root_found) out.flags.emplace_back("non-convergence");
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// All N+k series. Starts carry (phi, sigma) per series; their mu values are
/// ignored. Results do not depend on cfg.threads.
inline std::vector<EmmSeriesResult> emm_fit_all(const Matrix& x_hat, const StaticFactorEstimate& est1,
                                                const Theta2& starts, const EmmConfig& cfg) {
  const long n_total = est1.n_series() + est1.n_factors();
  if (x_hat.cols() != n_total || static_cast<long>(starts.size()) != n_total)
    throw Error(ErrorCode::invalid_dimensions, "x_hat and starts must cover N+k series");
  const long n_obs = x_hat.rows();
  const long n_paths = resolve_H(cfg, n_obs);
  Theta2 current = starts;
  std::vector<EmmSeriesResult> results(static_cast<std::size_t>(n_total));
  for (int sweep = 0; sweep < std::max(1, cfg.sweeps); ++sweep) {
    const EmmSimulation sim(est1, current, n_obs, n_paths, cfg.seed, cfg.threads);
    parallel_for(results.size(), cfg.threads, [&](std::size_t m) {
      results[m] = emm_fit_series(static_cast<long>(m), x_hat, sim, current.arsv[m], cfg);
    });
    for (std::size_t m = 0; m < results.size(); ++m) current.arsv[m] = results[m].params;
  }
  return results;
}

inline Theta2 theta2_from(const std::vector<EmmSeriesResult>& results) {
  Theta2 out;
  for (const auto& r : results) out.arsv.push_back(r.params);
  return out;
}

}  // namespace mfsv
