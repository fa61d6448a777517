#pragma once

// Step one: maximum likelihood for the static factor model
//
//   y_t = B g_t + e_t,  e_t ~ N(0, Sigma),  g_t ~ N(0, Gamma).
//
// The EM loop runs in the principal-component parametrization (factor
// covariance I, loadings "B_underline") on the majorized negative
// log-likelihood: the concave log-det part is replaced by its tangent plane at
// the current iterate, so each loading update is a gradient step on a convex
// surrogate. The result is then rotated to the identified parametrization
// (unit diagonal, zeros above it) with diagonal factor variances Gamma.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "mfsv/model.hpp"

namespace mfsv {

struct EmConfig {
  double step_size = 0.005;  // base step d of the adaptive-moments update
  int max_iters = 10000;
  double tol_frobenius = 1e-6;
  double variance_floor = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  bool record_trace = false;
};

struct StaticFactorEstimate {
  LoadingMatrix B_star;
  Vector Sigma_star;
  Vector Gamma_star;
  Matrix Pi_star;        // k x N projection
  Matrix B_underline;    // unrotated loadings at convergence
  double loglik = 0.0;   // Gaussian log-likelihood including constants
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // surrogate change per iteration (<= 0)

  long n_series() const { return B_star.n_series(); }
  long n_factors() const { return B_star.n_factors(); }

  Theta1 theta1() const { return Theta1{B_star, Sigma_star, Gamma_star}; }

  Vector psi() const {
    Vector out(n_series() + n_factors());
    out << Sigma_star, Gamma_star;
    return out;
  }
};

/// (1/T) sum_t (y_t - ybar)(y_t - ybar)'.
inline Matrix sample_covariance(const ReturnPanel& panel) {
  const Matrix& y = panel.data();
  if (y.rows() < 2) throw Error(ErrorCode::invalid_dimensions, "sample covariance needs T >= 2");
  const Matrix centered = y.rowwise() - y.colwise().mean();
  Matrix a = (centered.transpose() * centered) / static_cast<double>(y.rows());
  return 0.5 * (a + a.transpose());
}

namespace detail {

struct Factorized {
  Eigen::LLT<Matrix> llt;
  double log_det = 0.0;
};

inline Factorized factorize(const Matrix& c) {
  Factorized f{Eigen::LLT<Matrix>(c), 0.0};
  if (f.llt.info() != Eigen::Success)
    throw Error(ErrorCode::singular_matrix, "covariance matrix is not positive definite");
  f.log_det = 2.0 * f.llt.matrixLLT().diagonal().array().log().sum();
  return f;
}

inline Matrix pca_covariance(const Matrix& b, const Vector& sigma) {
  Matrix c = b * b.transpose();
  c.diagonal() += sigma;
  return c;
}

}  // namespace detail

/// ln det(BB' + Sigma) + tr((BB' + Sigma)^{-1} A); the negative log-likelihood
/// up to the factor T/2 and constants.
inline double negloglik_objective(const Matrix& b, const Vector& sigma, const Matrix& a) {
  const auto f = detail::factorize(detail::pca_covariance(b, sigma));
  return f.log_det + f.llt.solve(a).trace();
}

/// Majorized objective around the anchor (B_l, Sigma_l), as a function of B:
///   ln det C_l + tr[2 B_l' C_l^{-1} (B - B_l)] + tr[(BB' + Sigma_l)^{-1} A].
inline double majorized_objective(const Matrix& b, const Matrix& b_anchor,
                                  const Vector& sigma_anchor, const Matrix& a) {
  const auto fl = detail::factorize(detail::pca_covariance(b_anchor, sigma_anchor));
  const double tangent = 2.0 * (b_anchor.transpose() * fl.llt.solve(b - b_anchor)).trace();
  const auto fb = detail::factorize(detail::pca_covariance(b, sigma_anchor));
  return fl.log_det + tangent + fb.llt.solve(a).trace();
}

/// Gradient of the majorized objective at its anchor:
///   2[(BB'+Sigma)^{-1} - (BB'+Sigma)^{-1} A (BB'+Sigma)^{-1}] B.
inline Matrix gd_gradient(const Matrix& b, const Vector& sigma, const Matrix& a) {
  if (!(sigma.array() > 0.0).all())
    throw Error(ErrorCode::invalid_variance, "Sigma entries must be > 0");
  const auto f = detail::factorize(detail::pca_covariance(b, sigma));
  const Matrix cinv_b = f.llt.solve(b);
  return 2.0 * (cinv_b - f.llt.solve(a * cinv_b));
}

struct PcaInit {
  Matrix loadings;  // N x k, columns eigenvector * sqrt(eigenvalue)
  Vector sigma2;
};

/// Principal-component starting values. Each column's first nonzero entry is
/// made positive to fix the sign indeterminacy.
inline PcaInit pca_init(const Matrix& a, long k, double variance_floor = 1e-6) {
  const auto n = a.rows();
  if (a.cols() != n) throw Error(ErrorCode::invalid_dimensions, "A must be square");
  if (k < 1 || k > n) throw Error(ErrorCode::invalid_dimensions, "need 1 <= k <= N");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (a + a.transpose()));
  if (eig.info() != Eigen::Success)
    throw Error(ErrorCode::singular_matrix, "eigendecomposition failed");
  const Vector& vals = eig.eigenvalues();  // ascending
  const double top = vals(n - 1);
  const double rank_tol = std::max(1e-12 * std::abs(top), 1e-300);
  if (!(vals(n - k) > rank_tol))
    throw Error(ErrorCode::rank_deficient,
                "k = " + std::to_string(k) + " exceeds the numeric rank of A");
  PcaInit out;
  out.loadings.resize(n, k);
  for (long j = 0; j < k; ++j) {
    Vector v = eig.eigenvectors().col(n - 1 - j);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(v(i)) > 1e-12) {
        if (v(i) < 0.0) v = -v;
        break;
      }
    }
    out.loadings.col(j) = v * std::sqrt(vals(n - 1 - j));
  }
  out.sigma2 = (a.diagonal() - out.loadings.rowwise().squaredNorm())
                   .cwiseMax(variance_floor);
  return out;
}

struct Rotation {
  LoadingMatrix B_star;
  Vector gamma2;
};

/// Rotates PCA-parametrized loadings to the identified form:
/// Q from QR of (top k x k block)', W = diag(B Q), B* = B Q W^{-1}, Gamma* = W W'.
inline Rotation rotate(const Matrix& b_underline) {
  const auto n = b_underline.rows();
  const auto k = b_underline.cols();
  if (k < 1 || n < k) throw Error(ErrorCode::invalid_dimensions, "need 1 <= k <= N");
  const Matrix top_t = b_underline.topRows(k).transpose();
  Eigen::HouseholderQR<Matrix> qr(top_t);
  const Matrix q = qr.householderQ() * Matrix::Identity(k, k);
  const Matrix bq = b_underline * q;
  const Vector w = bq.topRows(k).diagonal();
  const double scale = std::max(b_underline.topRows(k).cwiseAbs().maxCoeff(), 1e-300);
  for (Eigen::Index j = 0; j < k; ++j)
    if (!(std::abs(w(j)) > 1e-12 * scale))
      throw Error(ErrorCode::rotation_failure,
                  "leading k x k block of the loadings is numerically singular");
  Matrix bstar = bq * w.cwiseInverse().asDiagonal();
  for (Eigen::Index j = 0; j < k; ++j) {
    bstar(j, j) = 1.0;
    for (Eigen::Index i = 0; i < j; ++i) bstar(i, j) = 0.0;
  }
  return Rotation{LoadingMatrix(std::move(bstar), 1e-6, 0.0), w.array().square().matrix()};
}

/// Pi* = (Gamma^{-1} + B' Sigma^{-1} B)^{-1} B' Sigma^{-1}.
inline Matrix projection_matrix(const Matrix& b, const Vector& sigma2, const Vector& gamma2) {
  const Matrix bt_sinv = b.transpose() * sigma2.cwiseInverse().asDiagonal();
  Matrix m = bt_sinv * b;
  m.diagonal() += gamma2.cwiseInverse();
  return m.ldlt().solve(bt_sinv);
}

/// Fills B*, Sigma*, Gamma*, Pi* from unrotated loadings and Sigma.
inline void finalize_estimate(StaticFactorEstimate& est, const Matrix& b_underline,
                              const Vector& sigma) {
  auto rot = rotate(b_underline);
  est.B_underline = b_underline;
  est.B_star = std::move(rot.B_star);
  est.Gamma_star = std::move(rot.gamma2);
  est.Sigma_star = sigma;
  est.Pi_star = projection_matrix(est.B_star.matrix(), est.Sigma_star, est.Gamma_star);
}

/// EM with gradient-descent loading updates on the majorized likelihood.
///
/// Each iteration takes an adaptive-moments step B <- B - d * mhat/(sqrt(vhat)+eps)
/// along the gradient of the majorized objective anchored at the current
/// iterate. A step that would raise the majorized objective is halved until it
/// does not, so accepted loading updates are monotone on the surrogate. Sigma
/// then takes the EM update diag(A - B_new B_old' C_old^{-1} A). Stops when
/// both Frobenius changes fall below tol.
inline StaticFactorEstimate em_fit(const ReturnPanel& panel, long k, const EmConfig& cfg = {}) {
  const long n = panel.n_series();
  if (k < 1 || k > n) throw Error(ErrorCode::invalid_dimensions, "need 1 <= k <= N");
  if (!(cfg.step_size > 0.0) || !(cfg.tol_frobenius > 0.0) || !(cfg.variance_floor > 0.0))
    throw Error(ErrorCode::invalid_argument, "EM step size, tolerance and floor must be > 0");

  const Matrix a = sample_covariance(panel);
  auto init = pca_init(a, k, cfg.variance_floor);
  Matrix b = std::move(init.loadings);
  Vector sigma = std::move(init.sigma2);

  StaticFactorEstimate est;
  Matrix m1 = Matrix::Zero(n, k);
  Matrix m2 = Matrix::Zero(n, k);
  double bias1 = 1.0, bias2 = 1.0;

  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    const auto fc = detail::factorize(detail::pca_covariance(b, sigma));
    const Matrix cinv_b = fc.llt.solve(b);
    const Matrix cinv_a = fc.llt.solve(a);
    const Matrix grad = 2.0 * (cinv_b - fc.llt.solve(a * cinv_b));
    // Surrogate at its anchor equals the true objective there.
    const double f_anchor = fc.log_det + cinv_a.trace();

    m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad;
    m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad.cwiseAbs2();
    bias1 *= cfg.beta1;
    bias2 *= cfg.beta2;
    const Matrix step =
        cfg.step_size * ((m1 / (1.0 - bias1)).array() /
                         ((m2 / (1.0 - bias2)).array().sqrt() + cfg.adam_eps))
                            .matrix();

    Matrix b_new = b;
    double surrogate = f_anchor;
    for (double scale = 1.0; scale > 1e-12; scale *= 0.5) {
      const Matrix trial = b - scale * step;
      double value = std::numeric_limits<double>::infinity();
      try {
        const auto ft = detail::factorize(detail::pca_covariance(trial, sigma));
        value = fc.log_det + 2.0 * (cinv_b.transpose() * (trial - b)).trace() +
                ft.llt.solve(a).trace();
      } catch (const Error&) {
      }
      if (value <= f_anchor) {
        b_new = trial;
        surrogate = value;
        break;
      }
    }
    const Vector sigma_new =
        (a.diagonal() - (b_new * (b.transpose() * cinv_a)).diagonal()).cwiseMax(cfg.variance_floor);
    if (cfg.record_trace) est.objective_trace.push_back(surrogate - f_anchor);

    const double db = (b_new - b).norm();
    const double ds = (sigma_new - sigma).norm();
    b = std::move(b_new);
    sigma = sigma_new;
    if (db < cfg.tol_frobenius && ds < cfg.tol_frobenius) {
      est.converged = true;
      ++it;
      break;
    }
  }
  est.iterations = it;
  est.loglik = -0.5 * static_cast<double>(panel.n_obs()) *
               (negloglik_objective(b, sigma, a) +
                static_cast<double>(n) * std::log(2.0 * std::numbers::pi));
  finalize_estimate(est, b, sigma);
  return est;
}

/// g_t = Pi* (y_t - ybar); returns T x k.
inline Matrix project_factors(const StaticFactorEstimate& est, const ReturnPanel& panel) {
  if (panel.n_series() != est.n_series())
    throw Error(ErrorCode::invalid_dimensions, "panel width does not match the estimate");
  const Matrix& y = panel.data();
  const Matrix centered = y.rowwise() - y.colwise().mean();
  return centered * est.Pi_star.transpose();
}

/// e_t = y_t - B* g_t; returns T x N.
inline Matrix residuals(const StaticFactorEstimate& est, const ReturnPanel& panel,
                        const Matrix& g_hat) {
  if (panel.n_series() != est.n_series() || g_hat.cols() != est.n_factors() ||
      g_hat.rows() != panel.n_obs())
    throw Error(ErrorCode::invalid_dimensions, "residuals dimension mismatch");
  return panel.data() - g_hat * est.B_star.matrix().transpose();
}

/// Extracted series x_hat = (e_hat, g_hat) as a T x (N+k) matrix. The panel is
/// centered first so the residuals are centered as well.
inline Matrix extract_series(const StaticFactorEstimate& est, const ReturnPanel& panel) {
  const Matrix& y = panel.data();
  const ReturnPanel centered(y.rowwise() - y.colwise().mean());
  const Matrix g = project_factors(est, centered);
  Matrix out(panel.n_obs(), est.n_series() + est.n_factors());
  out << residuals(est, centered, g), g;
  return out;
}

/// Linear map L with x_extracted' = L x' for zero-mean latent rows x = (eps, f):
/// y = [I | B] x, g = Pi y, e = (I - B Pi) y.
inline Matrix extraction_map(const Matrix& b, const Matrix& pi) {
  const auto n = b.rows();
  const auto k = b.cols();
  Matrix to_y(n, n + k);
  to_y << Matrix::Identity(n, n), b;
  Matrix l(n + k, n + k);
  l.topRows(n) = (Matrix::Identity(n, n) - b * pi) * to_y;
  l.bottomRows(k) = pi * to_y;
  return l;
}

}  // namespace mfsv
