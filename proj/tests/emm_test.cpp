#include <gtest/gtest.h>

#include "mfsv/emm.hpp"
#include "support.hpp"

using namespace mfsv;

namespace {

struct Fixture {
  Theta1 t1;
  Theta2 t2;
  StaticFactorEstimate est;
  Matrix x_hat;
};

Fixture make_fixture(long n, long k, long T, std::uint64_t seed) {
  auto [t1, t2] = build_design_params(n, k);
  Fixture f{t1, t2, support::estimate_at(t1), {}};
  f.x_hat = extract_series(f.est, ReturnPanel(simulate(t1, t2, T, seed).returns));
  return f;
}

}  // namespace

TEST(ResolveH, AdaptiveAndFixed) {
  EmmConfig cfg;
  EXPECT_EQ(resolve_H(cfg, 1000), 100);
  EXPECT_EQ(resolve_H(cfg, 4000), 25);
  EXPECT_EQ(resolve_H(cfg, 10000), 10);
  EXPECT_EQ(resolve_H(cfg, 300000), 1);
  cfg.adaptive_H = false;
  cfg.H = 7;
  EXPECT_EQ(resolve_H(cfg, 1000), 7);
  cfg.H = 0;
  EXPECT_THROW(resolve_H(cfg, 1000), Error);
}

TEST(EmmSimulation, MomentEqualsScoreOfExtractedSimulatedReturns) {
  const auto f = make_fixture(6, 1, 400, 1);
  const long T = 400, H = 3;
  const std::uint64_t seed = 77;
  const EmmSimulation sim(f.est, f.t2, T, H, seed);
  const long m = 2;
  const double phi = 0.7, sigma = 0.45;
  const GarchAuxParams aux{0.1, 0.8, f.est.psi()(m)};

  // Oracle: replace series m, simulate returns, extract without demeaning, score.
  Theta2 moved = f.t2.with_mu_from_psi(f.est.psi());
  moved.arsv[m] = {mu_from_psi(f.est.psi()(m), phi, sigma), phi, sigma};
  const Matrix l = extraction_map(f.est.B_star.matrix(), f.est.Pi_star);
  GarchScore total = GarchScore::Zero();
  for (long j = 0; j < H; ++j) {
    const auto draws = draw_panel(rng::derive(seed, static_cast<std::uint64_t>(j)), 7, T);
    const Matrix x = latent_from_draws(moved, draws);
    const Matrix y = returns_from_latent(f.est.B_star, x);
    Matrix g = y * f.est.Pi_star.transpose();
    Matrix e = y - g * f.est.B_star.matrix().transpose();
    Matrix xt(T, 7);
    xt << e, g;
    EXPECT_LT((xt - x * l.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    total += garch_score_sums(support::column(xt, m), aux).score;
  }
  const GarchScore oracle = total / static_cast<double>(T * H);
  const GarchScore got = sim.moment(m, phi, sigma, aux);
  EXPECT_LT((got - oracle).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, oracle.cwiseAbs().maxCoeff()));
}

TEST(EmmSimulation, CommonRandomNumbersAreBitwiseRepeatable) {
  const auto f = make_fixture(5, 1, 300, 2);
  const EmmSimulation a(f.est, f.t2, 300, 4, 9, 1);
  const EmmSimulation b(f.est, f.t2, 300, 4, 9, 3);
  const GarchAuxParams aux{0.05, 0.9, f.est.psi()(1)};
  const auto ma = a.moment(1, 0.8, 0.3, aux);
  EXPECT_EQ(ma, a.moment(1, 0.8, 0.3, aux));
  EXPECT_EQ(ma, b.moment(1, 0.8, 0.3, aux));
  const EmmSimulation c(f.est, f.t2, 300, 4, 10, 1);
  EXPECT_NE(ma, c.moment(1, 0.8, 0.3, aux));
}

TEST(EmmFit, RecoversPersistenceOfEachSeries) {
  const auto f = make_fixture(5, 1, 5000, 3);
  EmmConfig cfg;
  cfg.seed = 123;
  Theta2 starts = f.t2;
  for (auto& p : starts.arsv) {
    p.phi = 0.8;
    p.sigma_eta = 0.3;
  }
  const auto res = emm_fit_all(f.x_hat, f.est, starts, cfg);
  ASSERT_EQ(res.size(), 6u);
  int found = 0;
  for (const auto& r : res) {
    found += r.root_found;
    EXPECT_LT(r.gap_inf, 1e-6);
    const auto& truth = f.t2.arsv[static_cast<std::size_t>(r.series)];
    EXPECT_NEAR(r.params.phi, truth.phi, 0.08) << "series " << r.series;
    EXPECT_NEAR(r.params.mu, mu_from_psi(f.est.psi()(r.series), r.params.phi, r.params.sigma_eta), 1e-12);
  }
  EXPECT_EQ(found, 6);
}

TEST(EmmFit, ResultsDoNotDependOnThreadCount) {
  const auto f = make_fixture(5, 1, 1000, 4);
  EmmConfig cfg;
  cfg.adaptive_H = false;
  cfg.H = 5;
  cfg.threads = 1;
  const auto serial = emm_fit_all(f.x_hat, f.est, f.t2, cfg);
  cfg.threads = 4;
  const auto threaded = emm_fit_all(f.x_hat, f.est, f.t2, cfg);
  for (std::size_t m = 0; m < serial.size(); ++m) {
    EXPECT_EQ(serial[m].params.phi, threaded[m].params.phi);
    EXPECT_EQ(serial[m].params.sigma_eta, threaded[m].params.sigma_eta);
  }
}

TEST(EmmFit, StaysInsideTheBox) {
  const auto f = make_fixture(5, 1, 800, 5);
  EmmConfig cfg;
  cfg.adaptive_H = false;
  cfg.H = 5;
  const auto res = emm_fit_all(f.x_hat, f.est, f.t2, cfg);
  for (const auto& r : res) {
    EXPECT_LE(std::abs(r.params.phi), 1.0 - cfg.phi_margin + 1e-15);
    EXPECT_GE(r.params.sigma_eta, cfg.sigma_min);
    EXPECT_LE(r.params.sigma_eta, cfg.sigma_max);
    if (!r.root_found) EXPECT_FALSE(r.flags.empty());
  }
}

TEST(EmmFit, RejectsMismatchedInputs) {
  const auto f = make_fixture(5, 1, 300, 6);
  Theta2 short_starts = f.t2;
  short_starts.arsv.pop_back();
  EXPECT_THROW(emm_fit_all(f.x_hat, f.est, short_starts, {}), Error);
  EXPECT_THROW(emm_fit_all(f.x_hat.leftCols(4), f.est, f.t2, {}), Error);
}
