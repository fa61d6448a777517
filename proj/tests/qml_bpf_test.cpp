#include <gtest/gtest.h>

#include "mfsv/bpf.hpp"
#include "mfsv/qml.hpp"
#include "support.hpp"

using namespace mfsv;

namespace {

// Joint Gaussian density of y = mu + c + h + v written as one dense covariance.
double dense_gaussian_loglik(const std::vector<double>& y, double mu, double phi, double sigma, double c,
                             double r) {
  const long n = static_cast<long>(y.size());
  Matrix cov(n, n);
  const double hv = sigma * sigma / (1.0 - phi * phi);
  for (long s = 0; s < n; ++s)
    for (long t = 0; t < n; ++t) cov(s, t) = hv * std::pow(phi, std::abs(s - t)) + (s == t ? r : 0.0);
  Vector d(n);
  for (long t = 0; t < n; ++t) d(t) = y[static_cast<std::size_t>(t)] - mu - c;
  Eigen::LLT<Matrix> llt(cov);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(n) * std::log(2.0 * M_PI) + logdet + d.dot(llt.solve(d)));
}

std::vector<double> arsv_series(const ArsvParams& p, long n, std::uint64_t seed) {
  std::vector<double> x(static_cast<std::size_t>(n));
  arsv_path(p, draw_arsv(seed, n), x.data());
  return x;
}

// Linear-Gaussian model y = h + v with h an AR(1); returns y.
std::vector<double> linear_gaussian(const ArsvParams& p, double r, long n, std::uint64_t seed) {
  rng::NormalStream normal(seed);
  std::vector<double> y(static_cast<std::size_t>(n));
  double dev = std::sqrt(p.h_variance()) * normal();
  for (auto& v : y) {
    dev = p.phi * dev + p.sigma_eta * normal();
    v = p.mu + dev + std::sqrt(r) * normal();
  }
  return y;
}

}  // namespace

TEST(Kalman, MatchesDenseGaussianLikelihood) {
  rng::NormalStream normal(3);
  std::vector<double> y(50);
  for (auto& v : y) v = normal() - 1.0;
  for (const auto [phi, sigma] : {std::pair{0.9, 0.3}, std::pair{-0.4, 1.1}, std::pair{0.0, 0.5}}) {
    const double k = kalman_loglik(y, -0.7, phi, sigma, log_chi2_mean, log_chi2_var);
    const double d = dense_gaussian_loglik(y, -0.7, phi, sigma, log_chi2_mean, log_chi2_var);
    EXPECT_NEAR(k, d, 1e-9 * std::abs(d));
  }
  EXPECT_EQ(kalman_loglik(y, 0.0, 1.0, 0.3, 0.0, 1.0), -std::numeric_limits<double>::infinity());
}

TEST(LogSquare, OffsetKeepsZerosFinite) {
  const std::vector<double> x{0.0, 1.0, -2.0, 0.0};
  const auto y = log_square_transform(x);
  for (double v : y) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(y[1], 0.0, 1e-7);
  EXPECT_THROW(log_square_transform(x, 0.0), Error);
}

TEST(Qml, RecoversPersistentArsv) {
  const ArsvParams truth{-1.0, 0.95, 0.25};
  const auto x = arsv_series(truth, 20000, 31);
  const auto q = qml_fit(x);
  EXPECT_FALSE(q.fallback);
  EXPECT_NEAR(q.phi0, 0.95, 0.03);
  EXPECT_NEAR(q.sigma_eta0, 0.25, 0.08);
  EXPECT_NEAR(q.mu0, -1.0, 0.25);
  EXPECT_NEAR(q.qml_loglik,
              kalman_loglik(log_square_transform(x), q.mu0, q.phi0, q.sigma_eta0, log_chi2_mean, log_chi2_var),
              1e-6 * std::abs(q.qml_loglik));
}

TEST(Qml, RejectsShortSeries) {
  const auto x = arsv_series({-1.0, 0.9, 0.3}, 60, 2);
  EXPECT_THROW(qml_fit(x), Error);
}

TEST(SystematicResample, CopiesMatchExpectedCounts) {
  const std::vector<double> w{0.05, 0.4, 0.15, 0.3, 0.1};
  std::vector<std::size_t> idx;
  for (double u : {0.0, 0.13, 0.5, 0.77, 0.999}) {
    systematic_resample(w, u, idx);
    std::vector<int> counts(5, 0);
    for (auto i : idx) ++counts[i];
    for (std::size_t i = 0; i < 5; ++i) {
      const double expected = 5.0 * w[i];
      EXPECT_GE(counts[i], static_cast<int>(std::floor(expected)));
      EXPECT_LE(counts[i], static_cast<int>(std::ceil(expected)));
    }
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  }
}

TEST(SystematicResample, AverageCountsAreUnbiased) {
  const std::vector<double> w{0.01, 0.33, 0.21, 0.45};
  std::vector<std::size_t> idx;
  std::vector<double> total(4, 0.0);
  const int draws = 2000;
  for (int r = 0; r < draws; ++r) {
    systematic_resample(w, (r + 0.5) / draws, idx);
    for (auto i : idx) total[i] += 1.0;
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(total[i] / draws, 4.0 * w[i], 1e-3);
}

TEST(BootstrapFilter, ZeroVolOfVolIsExact) {
  const ArsvParams p{-0.4, 0.9, 0.0};
  const auto x = arsv_series(p, 300, 7);
  const auto f = bootstrap_filter(x, p, 200, 1);
  double exact = 0.0;
  for (double v : x) exact += -0.5 * (std::log(2.0 * M_PI) + p.mu + v * v * std::exp(-p.mu));
  EXPECT_NEAR(f.loglik, exact, 1e-9 * std::abs(exact));
  for (std::size_t t = 0; t < x.size(); ++t) {
    EXPECT_NEAR(f.filtered_mean[t], p.mu, 1e-12);
    EXPECT_NEAR(f.ess[t], 200.0, 1e-9);
  }
}

TEST(BootstrapFilter, LinearGaussianAgreesWithKalman) {
  const ArsvParams p{0.3, 0.8, 0.5};
  const double r = 0.6;
  const auto y = linear_gaussian(p, r, 100, 5);
  const double exact = kalman_loglik(y, p.mu, p.phi, p.sigma_eta, 0.0, r);
  std::vector<double> ll;
  for (std::uint64_t s = 0; s < 30; ++s)
    ll.push_back(bootstrap_filter(y, p, 2000, s, GaussianMeasurement{0.0, r}).loglik);
  double mean = 0.0, var = 0.0;
  for (double v : ll) mean += v / 30.0;
  for (double v : ll) var += (v - mean) * (v - mean) / 29.0;
  EXPECT_LT(std::abs(mean - exact), 3.0 * std::sqrt(var / 30.0) + 0.02);
}

TEST(BootstrapFilter, SameSeedSameOutput) {
  const ArsvParams p{-1.0, 0.95, 0.2};
  const auto x = arsv_series(p, 200, 9);
  const auto a = bootstrap_filter(x, p, 500, 3);
  const auto b = bootstrap_filter(x, p, 500, 3);
  EXPECT_EQ(a.loglik, b.loglik);
  EXPECT_EQ(a.filtered_mean, b.filtered_mean);
}

TEST(BootstrapFilter, VanishingWeightsNameTheStep) {
  const ArsvParams p{0.0, 0.5, 0.3};
  const std::vector<double> x{0.1, 0.2, 0.3};
  auto dead_at_two = [](double y, double) {
    return y > 0.25 ? -std::numeric_limits<double>::infinity() : 0.0;
  };
  try {
    bootstrap_filter(x, p, 100, 1, dead_at_two);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::numerical_degeneracy);
    EXPECT_NE(std::string(e.what()).find("t=2"), std::string::npos);
  }
  EXPECT_THROW(bootstrap_filter(x, p, 50, 1), Error);
}
