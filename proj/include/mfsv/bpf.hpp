#pragma once

// Bootstrap particle filter for the log-variance of one ARSV series: particles
// move with the AR(1) transition, are weighted by the measurement density and
// resampled systematically at every step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mfsv/model.hpp"
#include "mfsv/rng.hpp"

namespace mfsv {

struct FilterOutput {
  std::vector<double> filtered_mean;  // E[h_t | x_1..x_t]
  std::vector<double> filtered_var;
  std::vector<double> ess;
  double loglik = 0.0;
};

/// x_t | h_t ~ N(0, exp(h_t)).
struct SvMeasurement {
  double operator()(double x, double h) const {
    return -0.5 * (std::log(2.0 * std::numbers::pi) + h + x * x * std::exp(-h));
  }
};

/// y_t | h_t ~ N(h_t + offset, var); the linear-Gaussian test model.
struct GaussianMeasurement {
  double offset = 0.0;
  double var = 1.0;
  double operator()(double y, double h) const {
    const double v = y - h - offset;
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + v * v / var);
  }
};

/// Indices drawn with one uniform offset u in [0, 1): particle i is copied
/// floor(P w_i + frac) or that plus one times.
inline void systematic_resample(std::span<const double> weights, double u, std::vector<std::size_t>& out) {
  const std::size_t n = weights.size();
  out.resize(n);
  const double step = 1.0 / static_cast<double>(n);
  double cum = weights.empty() ? 0.0 : weights[0];
  std::size_t i = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double target = (static_cast<double>(j) + u) * step;
    while (target > cum && i + 1 < n) cum += weights[++i];
    out[j] = i;
  }
}

template <class Measurement = SvMeasurement>
FilterOutput bootstrap_filter(std::span<const double> x, const ArsvParams& p, long particles,
                              std::uint64_t seed, Measurement measure = {}) {
  if (particles < 100) throw Error(ErrorCode::invalid_argument, "need at least 100 particles");
  p.validate();
  const auto n = static_cast<std::size_t>(particles);
  rng::NormalStream normal(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<double> h(n), h_next(n), logw(n), w(n);
  std::vector<std::size_t> idx;
  const double sd0 = std::sqrt(p.h_variance());
  for (auto& v : h) v = p.mu + sd0 * normal();

  FilterOutput out;
  out.filtered_mean.resize(x.size());
  out.filtered_var.resize(x.size());
  out.ess.resize(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    for (auto& v : h) v = p.mu + p.phi * (v - p.mu) + p.sigma_eta * normal();
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      logw[i] = measure(x[t], h[i]);
      if (logw[i] > top) top = logw[i];
    }
    if (!std::isfinite(top))
      throw Error(ErrorCode::numerical_degeneracy, "all particle weights vanished at t=" + std::to_string(t));
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += (w[i] = std::exp(logw[i] - top));
    out.loglik += top + std::log(sum / static_cast<double>(n));
    double mean = 0.0, sq = 0.0, w2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] /= sum;
      mean += w[i] * h[i];
      sq += w[i] * h[i] * h[i];
      w2 += w[i] * w[i];
    }
    out.filtered_mean[t] = mean;
    out.filtered_var[t] = std::max(0.0, sq - mean * mean);
    out.ess[t] = 1.0 / w2;
    systematic_resample(w, unif(normal.engine()), idx);
    for (std::size_t i = 0; i < n; ++i) h_next[i] = h[idx[i]];
    h.swap(h_next);
  }
  return out;
}

}  // namespace mfsv
