#pragma once

// Small dense optimizers used by the estimators: BFGS with backtracking line
// search and a box-constrained Nelder-Mead simplex.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

#include "mfsv/model.hpp"

namespace mfsv::optim {

struct Result {
  Vector x;
  double value = std::numeric_limits<double>::infinity();
  int evals = 0;
  int iterations = 0;
  bool converged = false;
};

/// Central differences with relative step.
template <class F>
Vector numeric_gradient(F&& f, const Vector& x, double rel_step = 1e-6) {
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * std::max(1.0, std::abs(x(i)));
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

struct BfgsOptions {
  double grad_tol = 1e-8;
  double f_tol = 1e-14;
  int max_iter = 500;
};

/// Minimizes f with gradient g. Non-finite objective values are treated as +inf
/// and rejected by the line search.
template <class F, class G>
Result bfgs(F&& f, G&& grad, Vector x0, const BfgsOptions& opt = {}) {
  const auto n = x0.size();
  Result res;
  res.x = std::move(x0);
  res.value = f(res.x);
  ++res.evals;
  if (!std::isfinite(res.value)) return res;
  Vector g = grad(res.x);
  Matrix hinv = Matrix::Identity(n, n);
  for (int it = 0; it < opt.max_iter; ++it) {
    res.iterations = it + 1;
    if (!g.allFinite()) break;
    if (g.lpNorm<Eigen::Infinity>() < opt.grad_tol) {
      res.converged = true;
      break;
    }
    Vector dir = -hinv * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      hinv.setIdentity();
      dir = -g;
      slope = -g.squaredNorm();
    }
    double step = 1.0;
    Vector x_new;
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + step * dir;
      f_new = f(x_new);
      ++res.evals;
      if (std::isfinite(f_new) && f_new <= res.value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // Line search stalled: we are at numerical precision of the objective.
      res.converged = g.lpNorm<Eigen::Infinity>() < std::sqrt(opt.grad_tol);
      break;
    }
    Vector g_new = grad(x_new);
    const Vector s = x_new - res.x;
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    const double f_change = std::abs(res.value - f_new);
    res.x = std::move(x_new);
    g = std::move(g_new);
    const double f_old = res.value;
    res.value = f_new;
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Matrix eye = Matrix::Identity(n, n);
      hinv = (eye - rho * s * y.transpose()) * hinv * (eye - rho * y * s.transpose()) +
             rho * s * s.transpose();
    }
    if (f_change <= opt.f_tol * std::max(1.0, std::abs(f_old)) &&
        g.lpNorm<Eigen::Infinity>() < std::sqrt(opt.grad_tol)) {
      res.converged = true;
      break;
    }
  }
  return res;
}

struct NelderMeadOptions {
  double initial_step = 0.1;  // relative simplex size
  double f_tol = 1e-12;
  double x_tol = 1e-10;
  int max_evals = 2000;
};

/// Box-constrained Nelder-Mead: trial points are projected onto [lower, upper].
template <class F>
Result nelder_mead(F&& f, const Vector& x0, const Vector& lower, const Vector& upper,
                   const NelderMeadOptions& opt = {}) {
  const auto n = x0.size();
  auto project = [&](Vector x) {
    for (Eigen::Index i = 0; i < n; ++i) x(i) = std::clamp(x(i), lower(i), upper(i));
    return x;
  };
  Result res;
  auto eval = [&](const Vector& x) {
    ++res.evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Vector> pts;
  std::vector<double> vals;
  pts.push_back(project(x0));
  vals.push_back(eval(pts[0]));
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector p = pts[0];
    double h = opt.initial_step * std::max(std::abs(p(i)), 0.1);
    if (p(i) + h > upper(i)) h = -h;
    p(i) += h;
    pts.push_back(project(p));
    vals.push_back(eval(pts.back()));
  }

  std::vector<std::size_t> order(pts.size());
  while (res.evals < opt.max_evals) {
    ++res.iterations;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return vals[a] < vals[b]; });
    const auto best = order.front();
    const auto worst = order.back();
    const auto second_worst = order[order.size() - 2];

    double spread = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i)
      spread = std::max(spread, (pts[order[i]] - pts[best]).lpNorm<Eigen::Infinity>());
    if (std::abs(vals[worst] - vals[best]) <= opt.f_tol * (std::abs(vals[best]) + opt.f_tol) &&
        spread <= opt.x_tol * (1.0 + pts[best].lpNorm<Eigen::Infinity>())) {
      res.converged = true;
      break;
    }

    Vector centroid = Vector::Zero(n);
    for (std::size_t i = 0; i < pts.size(); ++i)
      if (i != worst) centroid += pts[i];
    centroid /= static_cast<double>(n);

    const Vector xr = project(centroid + (centroid - pts[worst]));
    const double fr = eval(xr);
    if (fr < vals[best]) {
      const Vector xe = project(centroid + 2.0 * (centroid - pts[worst]));
      const double fe = eval(xe);
      if (fe < fr) {
        pts[worst] = xe;
        vals[worst] = fe;
      } else {
        pts[worst] = xr;
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second_worst]) {
      pts[worst] = xr;
      vals[worst] = fr;
      continue;
    }
    const bool outside = fr < vals[worst];
    const Vector xc = outside ? project(centroid + 0.5 * (xr - centroid))
                              : project(centroid + 0.5 * (pts[worst] - centroid));
    const double fc = eval(xc);
    if (fc < (outside ? fr : vals[worst])) {
      pts[worst] = xc;
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i == best) continue;
      pts[i] = project(pts[best] + 0.5 * (pts[i] - pts[best]));
      vals[i] = eval(pts[i]);
    }
  }
  const auto best_it = std::min_element(vals.begin(), vals.end());
  res.x = pts[static_cast<std::size_t>(best_it - vals.begin())];
  res.value = *best_it;
  return res;
}

}  // namespace mfsv::optim
