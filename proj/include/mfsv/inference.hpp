#pragma once

// Asymptotic covariance of the two-step estimator.
//
// Parameter vector theta, in order:
//   free loadings (column-major, below the unit diagonal), Sigma (N), Gamma (k),
//   then (phi, sigma_eta) for each of the N+k series.
// The stacked auxiliary score has the same length: the static factor score
// followed by the N+k GARCH scores. All scores are time means.
//
// W(H) = (1 + 1/H) [D' I^{-1} D]^{-1} with I the covariance of time-mean
// scores over simulated samples of length T, so W is already the covariance
// of theta_hat for that T. `scaled_W` reports T * W (the sqrt(T) scale).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "mfsv/dgp.hpp"
#include "mfsv/garch.hpp"
#include "mfsv/parallel.hpp"
#include "mfsv/static_ml.hpp"

namespace mfsv {

struct ThetaLayout {
  long n = 0;
  long k = 0;

  long loadings() const { return free_loading_count(n, k); }
  long static_size() const { return loadings() + n + k; }
  long size() const { return static_size() + 2 * (n + k); }
  long sigma2(long i) const { return loadings() + i; }
  long gamma2(long j) const { return loadings() + n + j; }
  long psi(long m) const { return loadings() + m; }
  long phi(long m) const { return static_size() + 2 * m; }
  long sigma_eta(long m) const { return static_size() + 2 * m + 1; }
};

inline Vector pack_theta(const Theta1& t1, const Theta2& t2) {
  const ThetaLayout lay{t1.n_series(), t1.n_factors()};
  if (static_cast<long>(t2.size()) != lay.n + lay.k)
    throw Error(ErrorCode::invalid_dimensions, "theta2 must hold N+k entries");
  Vector v(lay.size());
  v << t1.loadings.free_params(), t1.sigma2, t1.gamma2, Vector::Zero(2 * (lay.n + lay.k));
  for (long m = 0; m < lay.n + lay.k; ++m) {
    v(lay.phi(m)) = t2.arsv[static_cast<std::size_t>(m)].phi;
    v(lay.sigma_eta(m)) = t2.arsv[static_cast<std::size_t>(m)].sigma_eta;
  }
  return v;
}

/// Inverse of pack_theta; every mu follows from the variances.
inline std::pair<Theta1, Theta2> unpack_theta(const Vector& v, long n, long k) {
  const ThetaLayout lay{n, k};
  if (v.size() != lay.size()) throw Error(ErrorCode::invalid_dimensions, "theta length mismatch");
  Theta1 t1{LoadingMatrix::from_free(n, k, v.head(lay.loadings())), v.segment(lay.loadings(), n),
            v.segment(lay.loadings() + n, k)};
  Theta2 t2;
  const Vector psi = v.segment(lay.loadings(), n + k);
  for (long m = 0; m < n + k; ++m) {
    const double phi = v(lay.phi(m)), s = v(lay.sigma_eta(m));
    t2.arsv.push_back({mu_from_psi(psi(m), phi, s), phi, s});
  }
  return {std::move(t1), std::move(t2)};
}

/// dC / d b_ij = e_i a_j' + a_j e_i' with a_j = Gamma_jj B_j.
inline Matrix loading_derivative(const Theta1& t1, long i, long j) {
  const Matrix& b = t1.loadings.matrix();
  const long n = b.rows();
  const Vector a = t1.gamma2(j) * b.col(j);
  Matrix d = Matrix::Zero(n, n);
  d.row(i) += a.transpose();
  d.col(i) += a;
  return d;
}

/// Mean Gaussian log-likelihood per observation given the second-moment matrix s.
inline double static_loglik(const Matrix& s, const Theta1& t1) {
  const auto f = detail::factorize(t1.implied_covariance());
  return -0.5 * (static_cast<double>(s.rows()) * std::log(2.0 * std::numbers::pi) + f.log_det +
                 f.llt.solve(s).trace());
}

/// Gradient of static_loglik in the identified parametrization.
inline Vector static_factor_score(const Matrix& s, const Theta1& t1) {
  const Matrix& b = t1.loadings.matrix();
  const long n = b.rows(), k = b.cols();
  if (s.rows() != n || s.cols() != n) throw Error(ErrorCode::invalid_dimensions, "S must be N x N");
  const auto f = detail::factorize(t1.implied_covariance());
  const Matrix cinv = f.llt.solve(Matrix::Identity(n, n));
  const Matrix g = cinv - cinv * s * cinv;  // d(-2 loglik) / dC
  Vector out(free_loading_count(n, k) + n + k);
  long p = 0;
  for (long j = 0; j < k; ++j) {
    const Vector ga = g * (t1.gamma2(j) * b.col(j));
    for (long i = j + 1; i < n; ++i) out(p++) = -ga(i);
  }
  for (long i = 0; i < n; ++i) out(p++) = -0.5 * g(i, i);
  for (long j = 0; j < k; ++j) out(p++) = -0.5 * b.col(j).dot(g * b.col(j));
  return out;
}

inline Vector static_factor_score(const ReturnPanel& panel, const Theta1& t1) {
  return static_factor_score(sample_covariance(panel), t1);
}

/// The auxiliary parameter point beta = (step-one estimate, GARCH fits).
struct AuxPoint {
  Theta1 static_part;
  Matrix pi;                              // k x N projection, fixed
  std::vector<GarchAuxParams> garch;      // one per series

  static AuxPoint from(const StaticFactorEstimate& est, std::vector<GarchAuxParams> g) {
    if (static_cast<long>(g.size()) != est.n_series() + est.n_factors())
      throw Error(ErrorCode::invalid_dimensions, "need N+k GARCH fits");
    return AuxPoint{est.theta1(), est.Pi_star, std::move(g)};
  }
};

/// Stacked score of zero-mean latent paths (each T x (N+k)) mapped through
/// loadings b_sim. Static block uses the pooled second moment; GARCH block pools
/// per-path recursions.
inline Vector stacked_score_latent(const std::vector<Matrix>& latent, const Matrix& b_sim,
                                   const AuxPoint& beta) {
  const long n = b_sim.rows(), k = b_sim.cols();
  const ThetaLayout lay{n, k};
  const Matrix& bh = beta.static_part.loadings.matrix();
  Matrix ext(n, n + k);  // extracted row = y row * ext
  ext.leftCols(n) = (Matrix::Identity(n, n) - bh * beta.pi).transpose();
  ext.rightCols(k) = beta.pi.transpose();

  Matrix s = Matrix::Zero(n, n);
  Matrix gsum = Matrix::Zero(2, n + k);
  long total = 0;
  Matrix y, x;
  for (const auto& lat : latent) {
    y = lat.leftCols(n) + lat.rightCols(k) * b_sim.transpose();
    s.selfadjointView<Eigen::Lower>().rankUpdate(y.transpose());
    x = y * ext;
    for (long m = 0; m < n + k; ++m) {
      const auto col = x.col(m);
      const auto acc = garch_score_sums(
          std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
          beta.garch[static_cast<std::size_t>(m)]);
      gsum.col(m) += acc.score;
    }
    total += lat.rows();
  }
  s = s.selfadjointView<Eigen::Lower>();
  s /= static_cast<double>(total);
  Vector out(lay.size());
  out.head(lay.static_size()) = static_factor_score(s, beta.static_part);
  out.tail(2 * (n + k)) = Eigen::Map<const Vector>(gsum.data(), 2 * (n + k)) / static_cast<double>(total);
  return out;
}

/// Stacked score on observed data: static block from the centered panel, GARCH
/// block from its extracted series.
inline Vector stacked_score(const ReturnPanel& panel, const Matrix& x_hat, const AuxPoint& beta) {
  const long n = panel.n_series(), k = beta.static_part.n_factors();
  const ThetaLayout lay{n, k};
  Vector out(lay.size());
  out.head(lay.static_size()) = static_factor_score(panel, beta.static_part);
  for (long m = 0; m < n + k; ++m) {
    const Vector col = x_hat.col(m);
    out.segment(lay.static_size() + 2 * m, 2) =
        garch_score(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                    beta.garch[static_cast<std::size_t>(m)]);
  }
  return out;
}

struct FisherResult {
  Matrix info;          // covariance of time-mean stacked scores
  Vector mean_score;
  Vector eigenvalues;   // of the block-scaled info, ascending
  double condition = 0.0;
  bool rank_deficient = false;
  long draws = 0;
};

struct FisherOptions {
  long S = 1000;
  double rank_tol = 1e-6;
  unsigned threads = 1;
};

/// Sample covariance of stacked scores over S simulated samples of length T at theta.
inline FisherResult simulated_fisher(const Theta1& theta1, const Theta2& theta2, const AuxPoint& beta,
                                     long n_obs, std::uint64_t seed, const FisherOptions& opt = {}) {
  if (opt.S < 2) throw Error(ErrorCode::invalid_argument, "S must be >= 2");
  check_simulation_inputs(theta1, theta2, n_obs);
  const long n = theta1.n_series(), k = theta1.n_factors();
  const ThetaLayout lay{n, k};
  Matrix scores(lay.size(), opt.S);
  parallel_for(static_cast<std::size_t>(opt.S), opt.threads, [&](std::size_t s) {
    const auto draws = draw_panel(rng::derive(seed, s), n + k, n_obs);
    std::vector<Matrix> lat{latent_from_draws(theta2, draws)};
    scores.col(static_cast<long>(s)) = stacked_score_latent(lat, theta1.loadings.matrix(), beta);
  });
  FisherResult out;
  out.draws = opt.S;
  out.mean_score = scores.rowwise().mean();
  const Matrix centered = scores.colwise() - out.mean_score;
  out.info = centered * centered.transpose() / static_cast<double>(opt.S - 1);

  // Rank is judged after scaling each block by its largest variance.
  Vector scale(lay.size());
  const double static_max = out.info.diagonal().head(lay.static_size()).maxCoeff();
  const double garch_max = out.info.diagonal().tail(2 * (n + k)).maxCoeff();
  scale.head(lay.static_size()).setConstant(1.0 / std::sqrt(std::max(static_max, 1e-300)));
  scale.tail(2 * (n + k)).setConstant(1.0 / std::sqrt(std::max(garch_max, 1e-300)));
  const Matrix scaled = scale.asDiagonal() * out.info * scale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(scaled, Eigen::EigenvaluesOnly);
  out.eigenvalues = eig.eigenvalues();
  const double top = out.eigenvalues.maxCoeff();
  const double bottom = std::max(out.eigenvalues.minCoeff(), 0.0);
  out.condition = top > 0.0 ? bottom / top : 0.0;
  out.rank_deficient = !(out.condition > opt.rank_tol);
  return out;
}

struct JacobianOptions {
  long min_obs = 100000;  // simulated observations behind each column
  double rel_step = 1e-4;
  unsigned threads = 1;
};

/// d E[stacked score] / d theta' by central differences on a common set of
/// draws: H' paths of length T with H' * T >= min_obs.
inline Matrix score_jacobian(const Theta1& theta1, const Theta2& theta2, const AuxPoint& beta,
                             long n_obs, long n_paths, std::uint64_t seed,
                             const JacobianOptions& opt = {}) {
  check_simulation_inputs(theta1, theta2, n_obs);
  const long n = theta1.n_series(), k = theta1.n_factors();
  const ThetaLayout lay{n, k};
  const long paths = std::max(n_paths, (opt.min_obs + n_obs - 1) / n_obs);
  std::vector<std::vector<ArsvDraws>> draws(static_cast<std::size_t>(paths));
  std::vector<Matrix> base(static_cast<std::size_t>(paths));
  const Theta2 t2 = theta2.with_mu_from_psi(theta1.psi());
  parallel_for(draws.size(), opt.threads, [&](std::size_t j) {
    draws[j] = draw_panel(rng::derive(seed, j), n + k, n_obs);
    base[j] = latent_from_draws(t2, draws[j]);
  });
  const Vector theta = pack_theta(theta1, t2);
  Matrix jac(lay.size(), lay.size());

  // Column c moves at most one latent series; only that column is re-simulated.
  auto evaluate = [&](const Vector& v, long c) {
    auto [t1c, t2c] = unpack_theta(v, n, k);
    std::vector<Matrix> lat = base;
    long m = -1;
    if (c >= lay.loadings() && c < lay.static_size()) m = c - lay.loadings();
    if (c >= lay.static_size()) m = (c - lay.static_size()) / 2;
    if (m >= 0) {
      std::vector<double> buf(static_cast<std::size_t>(n_obs));
      for (std::size_t j = 0; j < lat.size(); ++j) {
        arsv_path(t2c.arsv[static_cast<std::size_t>(m)], draws[j][static_cast<std::size_t>(m)],
                  buf.data());
        lat[j].col(m) = Eigen::Map<const Vector>(buf.data(), n_obs);
      }
    }
    return stacked_score_latent(lat, t1c.loadings.matrix(), beta);
  };
  parallel_for(static_cast<std::size_t>(lay.size()), opt.threads, [&](std::size_t ci) {
    const auto c = static_cast<long>(ci);
    const double h = opt.rel_step * std::max(std::abs(theta(c)), 0.1);
    Vector up = theta, dn = theta;
    up(c) += h;
    dn(c) -= h;
    jac.col(c) = (evaluate(up, c) - evaluate(dn, c)) / (2.0 * h);
  });
  return jac;
}

struct VcovResult {
  Matrix W;              // covariance of theta_hat at sample size T
  Matrix scaled_W;       // T * W
  Vector se;
  Vector mu;             // derived constants, one per series
  Vector se_mu;
  long n_obs = 0;
  long H = 1;
  bool pseudo_inverse = false;
  std::vector<std::string> flags;
  static constexpr const char* convention =
      "W = (1+1/H)[D' I^-1 D]^-1 with I the covariance of time-mean scores; se = sqrt(diag W); "
      "scaled_W = T W";
};

/// Bracket inversion with pseudo-inverse fallback.
inline Matrix emm_bracket_inverse(const Matrix& d, const Matrix& info, bool& pseudo) {
  pseudo = false;
  Eigen::LDLT<Matrix> info_ldlt(info);
  Matrix bracket;
  if (info_ldlt.info() == Eigen::Success && info_ldlt.isPositive() &&
      info_ldlt.vectorD().minCoeff() > 1e-14 * info_ldlt.vectorD().maxCoeff()) {
    bracket = d.transpose() * info_ldlt.solve(d);
  } else {
    pseudo = true;
    bracket = d.transpose() * info.completeOrthogonalDecomposition().pseudoInverse() * d;
  }
  bracket = 0.5 * (bracket + bracket.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(bracket);
  const Vector ev = eig.eigenvalues();
  const double top = ev.cwiseAbs().maxCoeff();
  if (!pseudo && ev.minCoeff() > 1e-12 * top) return eig.eigenvectors() * ev.cwiseInverse().asDiagonal() *
                                                     eig.eigenvectors().transpose();
  pseudo = true;
  Vector inv = Vector::Zero(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev(i) > 1e-12 * top) inv(i) = 1.0 / ev(i);
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

struct DeltaResult {
  double mu = 0.0;
  double se = 0.0;
  bool inflated = false;
};

/// mu = ln psi - sigma^2 / (2 (1 - phi^2)); vcov over (psi, phi, sigma_eta).
inline DeltaResult delta_method_mu(double psi, double phi, double sigma, const Eigen::Matrix3d& vcov,
                                   double phi_boundary = 0.999) {
  if (!(psi > 0.0)) throw Error(ErrorCode::invalid_variance, "psi must be > 0");
  if (!(std::abs(phi) < 1.0)) throw Error(ErrorCode::nonstationary, "|phi| must be < 1");
  const double one = 1.0 - phi * phi;
  const Eigen::Vector3d g(1.0 / psi, -phi * sigma * sigma / (one * one), -sigma / one);
  DeltaResult out;
  out.mu = mu_from_psi(psi, phi, sigma);
  out.se = std::sqrt(std::max(0.0, g.dot(vcov * g)));
  out.inflated = std::abs(phi) >= phi_boundary;
  return out;
}

/// Covariance from the Jacobian and Fisher matrix, plus delta-method SEs for mu.
inline VcovResult emm_vcov(const Vector& theta_hat, long n, long k, long n_obs, long H,
                           const Matrix& fisher, const Matrix& jacobian) {
  const ThetaLayout lay{n, k};
  if (theta_hat.size() != lay.size() || fisher.rows() != lay.size() || jacobian.rows() != lay.size())
    throw Error(ErrorCode::invalid_dimensions, "vcov inputs have inconsistent sizes");
  if (H < 1) throw Error(ErrorCode::invalid_argument, "H must be >= 1");
  VcovResult out;
  out.n_obs = n_obs;
  out.H = H;
  out.W = (1.0 + 1.0 / static_cast<double>(H)) *
          emm_bracket_inverse(jacobian, fisher, out.pseudo_inverse);
  out.W = 0.5 * (out.W + out.W.transpose()).eval();
  out.scaled_W = static_cast<double>(n_obs) * out.W;
  out.se = out.W.diagonal().cwiseMax(0.0).cwiseSqrt();
  if (out.pseudo_inverse) out.flags.emplace_back("pseudo-inverse");
  out.mu.resize(n + k);
  out.se_mu.resize(n + k);
  bool inflated = false;
  for (long m = 0; m < n + k; ++m) {
    const long idx[3] = {lay.psi(m), lay.phi(m), lay.sigma_eta(m)};
    Eigen::Matrix3d v;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) v(a, b) = out.W(idx[a], idx[b]);
    const auto d = delta_method_mu(theta_hat(idx[0]), theta_hat(idx[1]), theta_hat(idx[2]), v);
    out.mu(m) = d.mu;
    out.se_mu(m) = d.se;
    inflated = inflated || d.inflated;
  }
  if (inflated) out.flags.emplace_back("phi-at-boundary");
  if (!out.se.allFinite()) out.flags.emplace_back("non-finite-se");
  return out;
}

}  // namespace mfsv
