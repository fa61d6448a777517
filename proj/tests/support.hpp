#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

#include "mfsv/dgp.hpp"
#include "mfsv/montecarlo.hpp"
#include "mfsv/static_ml.hpp"

namespace mfsv::support {

/// Central difference of a scalar function along coordinate i.
inline double central_diff(const std::function<double(const Vector&)>& f, const Vector& x, Eigen::Index i,
                           double h) {
  Vector up = x, dn = x;
  up(i) += h;
  dn(i) -= h;
  return (f(up) - f(dn)) / (2.0 * h);
}

/// Fourth-order central stencil; truncation O(h^4) allows a larger step and less rounding.
inline double central_diff4(const std::function<double(const Vector&)>& f, const Vector& x, Eigen::Index i,
                            double h) {
  auto at = [&](double d) {
    Vector y = x;
    y(i) += d;
    return f(y);
  };
  return (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
}

inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                               double rel = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) g(i) = central_diff(f, x, i, rel * std::max(std::abs(x(i)), 1.0));
  return g;
}

/// Relative error with an absolute floor for entries near zero.
inline double rel_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Step-one estimate placed exactly at the truth.
inline StaticFactorEstimate estimate_at(const Theta1& t1) {
  StaticFactorEstimate est;
  est.B_star = t1.loadings;
  est.Sigma_star = t1.sigma2;
  est.Gamma_star = t1.gamma2;
  est.Pi_star = projection_matrix(t1.loadings.matrix(), t1.sigma2, t1.gamma2);
  est.B_underline = t1.loadings.matrix() * t1.gamma2.cwiseSqrt().asDiagonal();
  est.converged = true;
  return est;
}

/// GARCH(1,1) data in the variance-targeting form with unconditional variance psi.
inline std::vector<double> simulate_garch(double a1, double a2, double psi, long n, std::uint64_t seed) {
  rng::NormalStream normal(seed);
  std::vector<double> x(static_cast<std::size_t>(n));
  double prev_x2 = psi, prev_d2 = psi;
  for (auto& v : x) {
    const double d2 = (1.0 - a1 - a2) * psi + a1 * prev_x2 + a2 * prev_d2;
    v = std::sqrt(d2) * normal();
    prev_x2 = v * v;
    prev_d2 = d2;
  }
  return x;
}

inline std::vector<double> column(const Matrix& m, Eigen::Index c) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index t = 0; t < m.rows(); ++t) out[static_cast<std::size_t>(t)] = m(t, c);
  return out;
}

}  // namespace mfsv::support
