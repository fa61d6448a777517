#pragma once

// Auxiliary GARCH(1,1) with variance targeting:
//
//   delta2_t = (1 - a1 - a2) psi + a1 x_{t-1}^2 + a2 delta2_{t-1},
//
// started at delta2_0 = x_0^2 = psi (so delta2_1 = psi). The constant is pinned
// by the external estimate psi; only (a1, a2) are free.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mfsv/model.hpp"
#include "mfsv/optim.hpp"

namespace mfsv {

struct GarchAuxParams {
  double alpha1 = 0.05;
  double alpha2 = 0.9;
  double psi_hat = 1.0;

  bool interior() const {
    return alpha1 > 0.0 && alpha2 > 0.0 && alpha1 + alpha2 < 1.0 && psi_hat > 0.0;
  }

  void validate() const {
    if (!interior())
      throw Error(ErrorCode::invalid_argument,
                  "GARCH parameters need a1 > 0, a2 > 0, a1 + a2 < 1 and psi > 0");
  }
};

using GarchScore = Eigen::Vector2d;

namespace detail {

inline void check_series(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "series has non-finite values");
}

}  // namespace detail

/// Conditional variances delta2_1..delta2_T.
inline std::vector<double> garch_variance_path(std::span<const double> x, const GarchAuxParams& p) {
  p.validate();
  detail::check_series(x);
  std::vector<double> d2(x.size());
  const double c = (1.0 - p.alpha1 - p.alpha2) * p.psi_hat;
  double prev_x2 = p.psi_hat;
  double prev_d2 = p.psi_hat;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double cur = c + p.alpha1 * prev_x2 + p.alpha2 * prev_d2;
    d2[t] = cur;
    prev_x2 = x[t] * x[t];
    prev_d2 = cur;
  }
  return d2;
}

/// Accumulated log-likelihood and score over one series; both are sums, not means.
struct GarchSums {
  double loglik = 0.0;
  GarchScore score = GarchScore::Zero();
  long n = 0;
  bool finite = true;
};

/// One pass of the variance and derivative recursions. Skips input checks; the
/// EMM inner loop calls this on millions of simulated observations.
template <bool Loglik, bool Score>
GarchSums garch_pass(std::span<const double> x, const GarchAuxParams& p) {
  GarchSums s;
  const double c = (1.0 - p.alpha1 - p.alpha2) * p.psi_hat;
  double prev_x2 = p.psi_hat;
  double prev_d2 = p.psi_hat;
  double g1 = 0.0, g2 = 0.0;  // d delta2 / d(a1, a2)
  double ll = 0.0, q1 = 0.0, q2 = 0.0;
  for (double xt : x) {
    const double d2 = c + p.alpha1 * prev_x2 + p.alpha2 * prev_d2;
    if constexpr (Score) {
      g1 = (prev_x2 - p.psi_hat) + p.alpha2 * g1;
      g2 = (prev_d2 - p.psi_hat) + p.alpha2 * g2;
    }
    const double x2 = xt * xt;
    const double inv = 1.0 / d2;
    const double ratio = x2 * inv;
    if constexpr (Loglik) ll -= std::log(d2) + ratio;
    if constexpr (Score) {
      const double w = (ratio - 1.0) * inv;
      q1 += w * g1;
      q2 += w * g2;
    }
    prev_x2 = x2;
    prev_d2 = d2;
  }
  s.loglik = ll;
  s.score = GarchScore(q1, q2);
  s.n = static_cast<long>(x.size());
  s.finite = std::isfinite(ll) && std::isfinite(q1) && std::isfinite(q2) && std::isfinite(prev_d2) &&
             prev_d2 > 0.0;
  return s;
}

inline GarchSums garch_accumulate(std::span<const double> x, const GarchAuxParams& p,
                                  bool with_score = true) {
  return with_score ? garch_pass<true, true>(x, p) : garch_pass<true, false>(x, p);
}

/// Score sums only.
inline GarchSums garch_score_sums(std::span<const double> x, const GarchAuxParams& p) {
  return garch_pass<false, true>(x, p);
}

/// -(1/T) sum_t (ln delta2_t + x_t^2 / delta2_t).
inline double garch_loglik(std::span<const double> x, const GarchAuxParams& p) {
  p.validate();
  detail::check_series(x);
  if (x.empty()) throw Error(ErrorCode::invalid_argument, "empty series");
  const auto s = garch_accumulate(x, p, false);
  if (!s.finite) throw Error(ErrorCode::numerical_degeneracy, "GARCH variance is not positive");
  return s.loglik / static_cast<double>(x.size());
}

/// Mean over t of q_t = (1/delta2_t)(d delta2_t / d beta)(x_t^2/delta2_t - 1).
inline GarchScore garch_score(std::span<const double> x, const GarchAuxParams& p) {
  p.validate();
  detail::check_series(x);
  if (x.empty()) throw Error(ErrorCode::invalid_argument, "empty series");
  const auto s = garch_score_sums(x, p);
  if (!s.finite) throw Error(ErrorCode::numerical_degeneracy, "GARCH score is not finite");
  return s.score / static_cast<double>(x.size());
}

/// Smooth bijection from R^2 onto the open simplex {a1 > 0, a2 > 0, a1 + a2 < 1}.
struct SimplexMap {
  static std::array<double, 2> to_alpha(double u, double v) {
    const double m = std::max({0.0, u, v});
    const double eu = std::exp(u - m), ev = std::exp(v - m), e0 = std::exp(-m);
    const double z = e0 + eu + ev;
    return {eu / z, ev / z};
  }
  static std::array<double, 2> from_alpha(double a1, double a2) {
    const double rest = 1.0 - a1 - a2;
    return {std::log(a1 / rest), std::log(a2 / rest)};
  }
};

struct GarchFit {
  GarchAuxParams params;
  double loglik = 0.0;
  GarchScore score = GarchScore::Zero();
  bool converged = false;
  bool boundary = false;
};

struct GarchFitOptions {
  long min_obs = 50;
  double alpha_floor = 1e-8;
  double boundary_tol = 1e-4;
  double score_tol = 1e-9;
};

/// Pseudo-ML estimate of (a1, a2) with psi pinned. Optimizes over the simplex
/// map with BFGS, then polishes with Newton steps on the analytic score.
inline GarchFit fit_garch_pml(std::span<const double> x, double psi_hat,
                              const GarchFitOptions& opt = {}) {
  if (static_cast<long>(x.size()) < opt.min_obs)
    throw Error(ErrorCode::invalid_argument,
                "GARCH fit needs at least " + std::to_string(opt.min_obs) + " observations");
  if (!(psi_hat > 0.0)) throw Error(ErrorCode::invalid_variance, "psi_hat must be > 0");
  detail::check_series(x);
  const double inv_n = 1.0 / static_cast<double>(x.size());

  auto params_of = [&](const Vector& z) {
    auto [a1, a2] = SimplexMap::to_alpha(z(0), z(1));
    return GarchAuxParams{std::max(a1, opt.alpha_floor), std::max(a2, opt.alpha_floor), psi_hat};
  };
  auto objective = [&](const Vector& z) {
    const auto s = garch_accumulate(x, params_of(z), false);
    return s.finite ? -s.loglik * inv_n : std::numeric_limits<double>::infinity();
  };
  auto gradient = [&](const Vector& z) {
    const auto p = params_of(z);
    const GarchScore q = garch_score_sums(x, p).score * inv_n;
    // d alpha / d z for the softmax-type map.
    const double a1 = p.alpha1, a2 = p.alpha2;
    Vector g(2);
    g(0) = -(q(0) * a1 * (1.0 - a1) - q(1) * a1 * a2);
    g(1) = -(-q(0) * a1 * a2 + q(1) * a2 * (1.0 - a2));
    return g;
  };

  Vector best_z;
  double best_f = std::numeric_limits<double>::infinity();
  for (const auto& start : {std::array{0.05, 0.90}, std::array{0.10, 0.80},
                            std::array{0.20, 0.50}, std::array{0.03, 0.96}}) {
    const auto z0 = SimplexMap::from_alpha(start[0], start[1]);
    Vector z(2);
    z << z0[0], z0[1];
    const double f = objective(z);
    if (f < best_f) {
      best_f = f;
      best_z = z;
    }
  }
  optim::BfgsOptions bopt;
  bopt.grad_tol = 1e-10;
  bopt.max_iter = 300;
  const auto res = optim::bfgs(objective, gradient, best_z, bopt);

  GarchFit fit;
  fit.params = params_of(res.x);
  fit.converged = res.converged;

  // Newton polish in alpha space on the analytic score.
  auto score_at = [&](double a1, double a2) {
    return GarchScore(garch_score_sums(x, GarchAuxParams{a1, a2, psi_hat}).score * inv_n);
  };
  GarchScore q = score_at(fit.params.alpha1, fit.params.alpha2);
  for (int it = 0; it < 20 && q.lpNorm<Eigen::Infinity>() > opt.score_tol; ++it) {
    const double a1 = fit.params.alpha1, a2 = fit.params.alpha2;
    const double h1 = 1e-6 * std::max(a1, 1e-3), h2 = 1e-6 * std::max(a2, 1e-3);
    if (a1 <= h1 || a2 <= h2 || a1 + a2 + std::max(h1, h2) >= 1.0) break;
    Eigen::Matrix2d jac;
    jac.col(0) = (score_at(a1 + h1, a2) - score_at(a1 - h1, a2)) / (2.0 * h1);
    jac.col(1) = (score_at(a1, a2 + h2) - score_at(a1, a2 - h2)) / (2.0 * h2);
    const Eigen::Vector2d delta = jac.fullPivLu().solve(-q);
    if (!delta.allFinite()) break;
    double lambda = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 30; ++ls, lambda *= 0.5) {
      const double n1 = a1 + lambda * delta(0), n2 = a2 + lambda * delta(1);
      if (n1 <= 0.0 || n2 <= 0.0 || n1 + n2 >= 1.0) continue;
      const GarchScore qn = score_at(n1, n2);
      if (qn.lpNorm<Eigen::Infinity>() < q.lpNorm<Eigen::Infinity>()) {
        fit.params.alpha1 = n1;
        fit.params.alpha2 = n2;
        q = qn;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  fit.score = q;
  fit.loglik = garch_accumulate(x, fit.params, false).loglik * inv_n;
  const double a1 = fit.params.alpha1, a2 = fit.params.alpha2;
  fit.boundary = a1 < opt.boundary_tol || a2 < opt.boundary_tol || a1 + a2 > 1.0 - opt.boundary_tol;
  if (!fit.boundary && q.lpNorm<Eigen::Infinity>() < 1e-7) fit.converged = true;
  return fit;
}

}  // namespace mfsv
