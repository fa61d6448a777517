#pragma once

// Parameterization of the multivariate factor stochastic volatility model:
//
//   y_t = B f_t + eps_t,   x_t = (eps_t', f_t')',
//   x_{t,m} = exp(h_{t,m}/2) u_{t,m},
//   h_{t,m} = mu_m + phi_m (h_{t-1,m} - mu_m) + sigma_eta_m eta_{t,m}.
//
// Series are always ordered idiosyncratic errors 1..N first, then factors 1..k.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mfsv/error.hpp"

namespace mfsv {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Number of free parameters: N k - k(k+1)/2 loadings plus 3 ARSV parameters per series.
inline long param_count(long n_series, long n_factors) {
  if (n_series < 1 || n_factors < 1 || n_factors > n_series)
    throw Error(ErrorCode::invalid_dimensions,
                "param_count requires 1 <= k <= N (N=" + std::to_string(n_series) +
                    ", k=" + std::to_string(n_factors) + ")");
  return n_series * n_factors - n_factors * (n_factors + 1) / 2 + 3 * (n_series + n_factors);
}

/// Number of free loadings (below the unit diagonal).
inline long free_loading_count(long n_series, long n_factors) {
  return n_series * n_factors - n_factors * (n_factors + 1) / 2;
}

struct ArsvParams {
  double mu = 0.0;
  double phi = 0.0;
  double sigma_eta = 0.0;

  bool stationary() const { return std::abs(phi) < 1.0; }

  /// Stationary variance of the log-variance process.
  double h_variance() const { return sigma_eta * sigma_eta / (1.0 - phi * phi); }

  void validate() const {
    if (!std::isfinite(mu) || !std::isfinite(phi) || !std::isfinite(sigma_eta))
      throw Error(ErrorCode::invalid_argument, "ARSV parameters must be finite");
    if (!stationary())
      throw Error(ErrorCode::nonstationary, "|phi| must be < 1, got " + std::to_string(phi));
    if (sigma_eta < 0.0)
      throw Error(ErrorCode::invalid_argument, "sigma_eta must be >= 0");
  }
};

/// Unconditional variance psi = E[x^2] of an ARSV series.
inline double psi_from_arsv(const ArsvParams& p) {
  if (!p.stationary())
    throw Error(ErrorCode::nonstationary, "|phi| must be < 1, got " + std::to_string(p.phi));
  return std::exp(p.mu + 0.5 * p.h_variance());
}

/// Log-variance level implied by an unconditional variance psi.
inline double mu_from_psi(double psi, double phi, double sigma_eta) {
  if (!(psi > 0.0))
    throw Error(ErrorCode::invalid_variance, "psi must be > 0, got " + std::to_string(psi));
  if (!(std::abs(phi) < 1.0))
    throw Error(ErrorCode::nonstationary, "|phi| must be < 1, got " + std::to_string(phi));
  return std::log(psi) - sigma_eta * sigma_eta / (2.0 * (1.0 - phi * phi));
}

/// N x k loadings with b_jj = 1 and b_ij = 0 for j > i in the leading k x k block.
class LoadingMatrix {
 public:
  static constexpr double kDefaultRankTol = 1e-10;

  LoadingMatrix() = default;

  /// Validates the identification pattern (to `pattern_tol`) and the rank condition.
  explicit LoadingMatrix(Matrix b, double pattern_tol = 1e-12,
                         double rank_tol = kDefaultRankTol)
      : b_(std::move(b)) {
    const auto n = b_.rows();
    const auto k = b_.cols();
    if (k < 1 || n < k)
      throw Error(ErrorCode::invalid_dimensions,
                  "loadings must be N x k with 1 <= k <= N");
    if (!b_.allFinite())
      throw Error(ErrorCode::invalid_argument, "loadings must be finite");
    for (Eigen::Index j = 0; j < k; ++j) {
      if (std::abs(b_(j, j) - 1.0) > pattern_tol)
        throw Error(ErrorCode::invalid_argument,
                    "loading b_" + std::to_string(j + 1) + std::to_string(j + 1) +
                        " must equal 1");
      for (Eigen::Index i = 0; i < j; ++i)
        if (std::abs(b_(i, j)) > pattern_tol)
          throw Error(ErrorCode::invalid_argument,
                      "loadings above the unit diagonal must be zero");
      b_(j, j) = 1.0;
      for (Eigen::Index i = 0; i < j; ++i) b_(i, j) = 0.0;
    }
    if (!has_full_rank(b_, rank_tol))
      throw Error(ErrorCode::rank_deficient, "loading matrix does not have rank k");
  }

  /// Builds the identified matrix from the free loadings b_21..b_N1, b_32..b_N2, ...
  static LoadingMatrix from_free(long n_series, long n_factors, const Vector& free) {
    if (free.size() != free_loading_count(n_series, n_factors))
      throw Error(ErrorCode::invalid_dimensions, "wrong number of free loadings");
    Matrix b = Matrix::Zero(n_series, n_factors);
    Eigen::Index p = 0;
    for (long j = 0; j < n_factors; ++j) {
      b(j, j) = 1.0;
      for (long i = j + 1; i < n_series; ++i) b(i, j) = free(p++);
    }
    return LoadingMatrix(std::move(b));
  }

  /// Relative singular-value rank test: sigma_min > tol * sigma_max.
  static bool has_full_rank(const Matrix& b, double tol = kDefaultRankTol) {
    Eigen::JacobiSVD<Matrix> svd(b);
    const Vector& s = svd.singularValues();
    if (s.size() == 0 || !(s(0) > 0.0)) return false;
    return s(s.size() - 1) > tol * s(0);
  }

  Vector free_params() const {
    Vector out(free_loading_count(n_series(), n_factors()));
    Eigen::Index p = 0;
    for (Eigen::Index j = 0; j < b_.cols(); ++j)
      for (Eigen::Index i = j + 1; i < b_.rows(); ++i) out(p++) = b_(i, j);
    return out;
  }

  const Matrix& matrix() const { return b_; }
  long n_series() const { return static_cast<long>(b_.rows()); }
  long n_factors() const { return static_cast<long>(b_.cols()); }

 private:
  Matrix b_;
};

/// First-step parameters: loadings plus unconditional variances.
struct Theta1 {
  LoadingMatrix loadings;
  Vector sigma2;  // N idiosyncratic variances
  Vector gamma2;  // k factor variances

  long n_series() const { return loadings.n_series(); }
  long n_factors() const { return loadings.n_factors(); }

  void validate() const {
    if (sigma2.size() != n_series() || gamma2.size() != n_factors())
      throw Error(ErrorCode::invalid_dimensions, "variance vectors do not match loadings");
    if (!(sigma2.array() > 0.0).all() || !(gamma2.array() > 0.0).all() ||
        !sigma2.allFinite() || !gamma2.allFinite())
      throw Error(ErrorCode::invalid_variance, "all unconditional variances must be > 0");
  }

  /// psi = (sigma2', gamma2')', the unconditional variances of x_t.
  Vector psi() const {
    Vector out(n_series() + n_factors());
    out << sigma2, gamma2;
    return out;
  }

  /// Implied covariance of y_t: B diag(gamma2) B' + diag(sigma2).
  Matrix implied_covariance() const {
    const Matrix& b = loadings.matrix();
    Matrix c = b * gamma2.asDiagonal() * b.transpose();
    c.diagonal() += sigma2;
    return c;
  }
};

/// Second-step parameters, one ARSV triple per series (errors then factors).
struct Theta2 {
  std::vector<ArsvParams> arsv;

  std::size_t size() const { return arsv.size(); }

  void validate() const {
    for (const auto& p : arsv) p.validate();
  }

  /// Replaces every mu with the level implied by psi.
  Theta2 with_mu_from_psi(const Vector& psi) const {
    if (static_cast<Eigen::Index>(arsv.size()) != psi.size())
      throw Error(ErrorCode::invalid_dimensions, "psi length does not match theta2");
    Theta2 out = *this;
    for (std::size_t m = 0; m < arsv.size(); ++m)
      out.arsv[m].mu = mu_from_psi(psi(static_cast<Eigen::Index>(m)), arsv[m].phi,
                                   arsv[m].sigma_eta);
    return out;
  }
};

/// T x N matrix of returns.
class ReturnPanel {
 public:
  ReturnPanel() = default;

  explicit ReturnPanel(Matrix data, std::vector<std::string> labels = {})
      : data_(std::move(data)), labels_(std::move(labels)) {
    if (data_.rows() < 2)
      throw Error(ErrorCode::invalid_dimensions, "a return panel needs T >= 2 rows");
    if (data_.cols() < 1)
      throw Error(ErrorCode::invalid_dimensions, "a return panel needs N >= 1 columns");
    if (!data_.allFinite())
      throw Error(ErrorCode::invalid_argument, "return panel contains non-finite entries");
    if (!labels_.empty() && static_cast<Eigen::Index>(labels_.size()) != data_.cols())
      throw Error(ErrorCode::invalid_dimensions, "label count does not match columns");
  }

  const Matrix& data() const { return data_; }
  const std::vector<std::string>& labels() const { return labels_; }
  long n_obs() const { return static_cast<long>(data_.rows()); }
  long n_series() const { return static_cast<long>(data_.cols()); }

 private:
  Matrix data_;
  std::vector<std::string> labels_;
};

/// Conditional covariance B diag(Gamma_t) B' + diag(Sigma_t).
inline Matrix conditional_covariance(const LoadingMatrix& b, const Vector& gamma_t,
                                     const Vector& sigma_t) {
  if (gamma_t.size() != b.n_factors() || sigma_t.size() != b.n_series())
    throw Error(ErrorCode::invalid_dimensions, "conditional_covariance dimension mismatch");
  const Matrix& bm = b.matrix();
  Matrix c = bm * gamma_t.asDiagonal() * bm.transpose();
  c.diagonal() += sigma_t;
  return 0.5 * (c + c.transpose());
}

}  // namespace mfsv
