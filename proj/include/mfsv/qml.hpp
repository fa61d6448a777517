#pragma once

// Quasi-ML starting values for one ARSV series. The log-squared series
//
//   ln x_t^2 = h_t + u*_t,  h_t - mu = phi (h_{t-1} - mu) + sigma eta_t,
//
// is treated as a linear Gaussian state space with u* ~ (-1.2704, pi^2/2) and
// filtered with the Kalman recursions.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "mfsv/model.hpp"
#include "mfsv/optim.hpp"

namespace mfsv {

inline constexpr double log_chi2_mean = -1.2704;
inline constexpr double log_chi2_var = std::numbers::pi * std::numbers::pi / 2.0;

/// ln(x_t^2 + offset * s^2), s^2 the sample variance of x.
inline std::vector<double> log_square_transform(std::span<const double> x, double offset = 1e-8) {
  if (!(offset > 0.0)) throw Error(ErrorCode::invalid_argument, "offset must be > 0");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(std::max<std::size_t>(x.size(), 1));
  double s2 = 0.0;
  for (double v : x) s2 += (v - mean) * (v - mean);
  s2 /= static_cast<double>(std::max<std::size_t>(x.size(), 1));
  if (!(s2 > 0.0)) s2 = 1.0;
  std::vector<double> out(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) out[t] = std::log(x[t] * x[t] + offset * s2);
  return out;
}

/// Gaussian log-likelihood of y_t = h_t + c + v_t, v_t ~ N(0, r), h an AR(1)
/// around mu started from its stationary law.
inline double kalman_loglik(std::span<const double> y, double mu, double phi, double sigma,
                            double obs_offset, double obs_var) {
  if (!(std::abs(phi) < 1.0)) return -std::numeric_limits<double>::infinity();
  const double q = sigma * sigma;
  double a = 0.0;                        // predicted h - mu
  double p = q / (1.0 - phi * phi);      // its variance
  double ll = 0.0;
  constexpr double log_2pi = 1.8378770664093453;
  for (double yt : y) {
    const double f = p + obs_var;
    const double v = yt - mu - obs_offset - a;
    ll -= 0.5 * (log_2pi + std::log(f) + v * v / f);
    const double gain = p / f;
    const double a_upd = a + gain * v;
    const double p_upd = p * (1.0 - gain);
    a = phi * a_upd;
    p = phi * phi * p_upd + q;
  }
  return ll;
}

struct QmlStart {
  double mu0 = 0.0;
  double phi0 = 0.9;
  double sigma_eta0 = 0.2;
  double qml_loglik = 0.0;
  bool fallback = false;
};

struct QmlOptions {
  double offset = 1e-8;
  long min_obs = 100;
  double sigma_floor = 1e-6;
  double phi_limit = 0.9999;
};

inline QmlStart qml_fit(std::span<const double> x, const QmlOptions& opt = {}) {
  if (static_cast<long>(x.size()) < opt.min_obs)
    throw Error(ErrorCode::invalid_argument, "QML fit needs at least 100 observations");
  const auto y = log_square_transform(x, opt.offset);
  double second = 0.0;
  for (double v : x) second += v * v;
  second /= static_cast<double>(x.size());

  // z = (logit-type map of phi, log sigma, mu)
  auto phi_of = [&](double z) { return opt.phi_limit * std::tanh(z); };
  auto sigma_of = [&](double z) { return opt.sigma_floor + std::exp(z); };
  auto objective = [&](const Vector& z) {
    const double ll = kalman_loglik(y, z(2), phi_of(z(0)), sigma_of(z(1)), log_chi2_mean,
                                    log_chi2_var);
    return std::isfinite(ll) ? -ll / static_cast<double>(y.size())
                             : std::numeric_limits<double>::infinity();
  };
  auto gradient = [&](const Vector& z) { return optim::numeric_gradient(objective, z, 1e-6); };

  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= static_cast<double>(y.size());

  QmlStart fallback;
  fallback.fallback = true;
  fallback.mu0 = second > 0.0 ? std::log(second) - 0.2 * 0.2 / (2.0 * (1.0 - 0.81)) : 0.0;

  Vector best;
  double best_f = std::numeric_limits<double>::infinity();
  for (const auto& [phi, sigma] : {std::pair{0.95, 0.2}, std::pair{0.9, 0.4}, std::pair{0.5, 0.5}}) {
    Vector z(3);
    z << std::atanh(phi / opt.phi_limit), std::log(sigma - opt.sigma_floor), ybar - log_chi2_mean;
    const double f = objective(z);
    if (f < best_f) {
      best_f = f;
      best = z;
    }
  }
  if (!std::isfinite(best_f)) return fallback;

  optim::BfgsOptions bopt;
  bopt.grad_tol = 1e-7;
  bopt.f_tol = 1e-13;
  bopt.max_iter = 400;
  const auto res = optim::bfgs(objective, gradient, best, bopt);
  if (!res.x.allFinite() || !std::isfinite(res.value)) return fallback;

  QmlStart out;
  out.phi0 = phi_of(res.x(0));
  out.sigma_eta0 = sigma_of(res.x(1));
  out.mu0 = res.x(2);
  out.qml_loglik = -res.value * static_cast<double>(y.size());
  if (!(std::abs(out.phi0) < 1.0) || !std::isfinite(out.mu0)) return fallback;
  return out;
}

}  // namespace mfsv
