#pragma once

// Simulation of the MFSV data-generating process.
//
// Every ARSV series of every path owns an independent normal stream:
//   path j  -> seed_j = derive(seed, j)
//   series m of that path -> derive(seed_j, m)
// The stream yields z0 (stationary start) and then (eta_t, u_t) pairs. Keeping
// draws separate from parameters gives common random numbers for free: the
// same draws can be replayed at any parameter value.

#include <cmath>
#include <cstdint>
#include <vector>

#include "mfsv/model.hpp"
#include "mfsv/parallel.hpp"
#include "mfsv/rng.hpp"

namespace mfsv {

/// Standard normal innovations of one ARSV series.
struct ArsvDraws {
  double z0 = 0.0;
  std::vector<double> eta;
  std::vector<double> u;

  long size() const { return static_cast<long>(u.size()); }
};

inline ArsvDraws draw_arsv(std::uint64_t seed, long n_obs) {
  rng::NormalStream normal(seed);
  ArsvDraws d;
  d.eta.resize(static_cast<std::size_t>(n_obs));
  d.u.resize(static_cast<std::size_t>(n_obs));
  d.z0 = normal();
  for (long t = 0; t < n_obs; ++t) {
    d.eta[static_cast<std::size_t>(t)] = normal();
    d.u[static_cast<std::size_t>(t)] = normal();
  }
  return d;
}

/// Replays draws at parameters p. h_0 is stationary; h_1..h_T follow the AR(1).
/// `h_out` may be null.
inline void arsv_path(const ArsvParams& p, const ArsvDraws& d, double* x_out,
                      double* h_out = nullptr) {
  double dev = std::sqrt(p.h_variance()) * d.z0;  // h_0 - mu
  const long n = d.size();
  for (long t = 0; t < n; ++t) {
    const auto i = static_cast<std::size_t>(t);
    dev = p.phi * dev + p.sigma_eta * d.eta[i];
    const double h = p.mu + dev;
    x_out[t] = std::exp(0.5 * h) * d.u[i];
    if (h_out) h_out[t] = h;
  }
}

/// Draws for all N+k series of one path.
inline std::vector<ArsvDraws> draw_panel(std::uint64_t path_seed, long n_total, long n_obs) {
  std::vector<ArsvDraws> out;
  out.reserve(static_cast<std::size_t>(n_total));
  for (long m = 0; m < n_total; ++m)
    out.push_back(draw_arsv(rng::derive(path_seed, static_cast<std::uint64_t>(m)), n_obs));
  return out;
}

/// T x (N+k) latent matrix x (errors then factors) from stored draws.
inline Matrix latent_from_draws(const Theta2& theta2, const std::vector<ArsvDraws>& draws,
                                Matrix* h_out = nullptr) {
  const long n_total = static_cast<long>(theta2.size());
  const long n_obs = draws.empty() ? 0 : draws.front().size();
  Matrix x(n_obs, n_total);
  if (h_out) h_out->resize(n_obs, n_total);
  std::vector<double> xbuf(static_cast<std::size_t>(n_obs)), hbuf(static_cast<std::size_t>(n_obs));
  for (long m = 0; m < n_total; ++m) {
    arsv_path(theta2.arsv[static_cast<std::size_t>(m)], draws[static_cast<std::size_t>(m)],
              xbuf.data(), h_out ? hbuf.data() : nullptr);
    x.col(m) = Eigen::Map<const Vector>(xbuf.data(), n_obs);
    if (h_out) h_out->col(m) = Eigen::Map<const Vector>(hbuf.data(), n_obs);
  }
  return x;
}

/// y_t = B f_t + eps_t applied row-wise to a T x (N+k) latent matrix.
inline Matrix returns_from_latent(const LoadingMatrix& b, const Matrix& x) {
  const long n = b.n_series();
  const long k = b.n_factors();
  return x.leftCols(n) + x.rightCols(k) * b.matrix().transpose();
}

struct SimOutput {
  Matrix returns;   // T x N
  Matrix latent_x;  // T x (N+k): eps then f
  Matrix latent_h;  // T x (N+k): log variances
};

inline void check_simulation_inputs(const Theta1& theta1, const Theta2& theta2, long n_obs) {
  theta1.validate();
  theta2.validate();
  if (static_cast<long>(theta2.size()) != theta1.n_series() + theta1.n_factors())
    throw Error(ErrorCode::invalid_dimensions, "theta2 must hold N+k ARSV triples");
  if (n_obs < 1) throw Error(ErrorCode::invalid_argument, "T must be >= 1");
}

/// One path of length T. The mu values of theta2 are used as given.
inline SimOutput simulate(const Theta1& theta1, const Theta2& theta2, long n_obs,
                          std::uint64_t seed) {
  check_simulation_inputs(theta1, theta2, n_obs);
  const auto draws = draw_panel(seed, static_cast<long>(theta2.size()), n_obs);
  SimOutput out;
  out.latent_x = latent_from_draws(theta2, draws, &out.latent_h);
  out.returns = returns_from_latent(theta1.loadings, out.latent_x);
  return out;
}

/// H independent paths; path j is simulate(..., derive(seed, j)).
inline std::vector<SimOutput> simulate_paths(const Theta1& theta1, const Theta2& theta2,
                                             long n_obs, long n_paths, std::uint64_t seed,
                                             unsigned threads = 1) {
  if (n_paths < 1) throw Error(ErrorCode::invalid_argument, "H must be >= 1");
  check_simulation_inputs(theta1, theta2, n_obs);
  std::vector<SimOutput> out(static_cast<std::size_t>(n_paths));
  parallel_for(out.size(), threads, [&](std::size_t j) {
    out[j] = simulate(theta1, theta2, n_obs, rng::derive(seed, j));
  });
  return out;
}

}  // namespace mfsv
