// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails. Pass criterion numbers as arguments to
// run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mfsv/bpf.hpp"
#include "mfsv/montecarlo.hpp"
#include "mfsv/pipeline.hpp"
#include "mfsv/qml.hpp"
#include "support.hpp"

using namespace mfsv;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string summary;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream out;
  out.precision(precision);
  out << v;
  return out.str();
}

void detail(const std::string& line) { std::cout << "    " << line << std::endl; }

double block_value(const McResult& res, const std::string& block, bool ratio) {
  for (const auto& s : res.summary)
    if (s.block == block) return ratio ? s.std_ratio : s.mse;
  return std::numeric_limits<double>::quiet_NaN();
}

unsigned workers() { return default_threads(); }

// 1. Step-one block MSEs fall with T.
Outcome consistency_of_step_one() {
  const auto t0 = Clock::now();
  std::map<std::string, std::vector<double>> mses;
  for (long T : {1000L, 4000L, 10000L}) {
    McDesign d;
    d.N = 10;
    d.k = 1;
    d.T = T;
    d.R = 200;
    d.step1_only = true;
    d.base_seed = 1001;
    const auto res = run_study(d, workers());
    std::string line = "T=" + std::to_string(T) + " kept=" + std::to_string(res.kept);
    for (const char* b : {"B", "Sigma", "Gamma"}) {
      mses[b].push_back(block_value(res, b, false));
      line += std::string(" mse_") + b + "=" + fmt(mses[b].back());
    }
    detail(line);
  }
  bool decreasing = true;
  for (const auto& [b, v] : mses) decreasing = decreasing && v[0] > v[1] && v[1] > v[2];
  const double secs = seconds_since(t0);
  const bool in_budget = secs < 1800.0;
  return {decreasing && in_budget, "block MSEs of B, Sigma, Gamma strictly decrease over T = 1000, 4000, 10000 (R=200): " +
                                       std::string(decreasing ? "yes" : "no") + "; runtime " + fmt(secs) +
                                       " s (budget 1800 s)"};
}

// 2. Ratio of Monte Carlo std to mean asymptotic SE per block.
Outcome std_ratio_calibration() {
  McDesign d;
  d.N = 10;
  d.k = 1;
  d.T = 10000;
  d.R = 200;
  d.adaptive_H = true;
  d.start_mode = StartMode::qml;
  d.inference = true;
  d.fisher_S = 1000;
  d.base_seed = 2002;
  const auto t0 = Clock::now();
  const auto res = run_study(d, workers());
  bool ok = true;
  std::string worst;
  double worst_gap = -1.0;
  for (const char* b : {"B", "Sigma", "Gamma", "mu_eps", "mu_f", "phi_eps", "phi_f", "sigma_eps", "sigma_f"}) {
    const double r = block_value(res, b, true);
    detail(std::string(b) + ": ratio=" + fmt(r) + " mse=" + fmt(block_value(res, b, false)));
    const bool in = r >= 0.8 && r <= 1.2;
    ok = ok && in;
    const double gap = std::isfinite(r) ? std::abs(r - 1.0) : 1e9;
    if (gap > worst_gap) {
      worst_gap = gap;
      worst = std::string(b) + "=" + fmt(r);
    }
  }
  detail("kept " + std::to_string(res.kept) + " of 200, " + fmt(seconds_since(t0)) + " s");
  return {ok, "std ratio in [0.8, 1.2] for every block (T=10000, H=10, R=200); worst " + worst};
}

// 3. Share of discarded replications.
Outcome outlier_rate() {
  McDesign d;
  d.N = 10;
  d.k = 2;
  d.T = 1000;
  d.R = 200;
  d.adaptive_H = true;
  d.start_mode = StartMode::qml;
  d.base_seed = 3003;
  const auto t0 = Clock::now();
  const auto res = run_study(d, workers());
  std::map<std::string, int> kinds;
  int failed = 0;
  for (const auto& r : res.reps) {
    if (!r.ok) ++failed;
    for (const auto& o : r.outliers) ++kinds[o.substr(0, o.find(':'))];
  }
  std::string line = "failed=" + std::to_string(failed);
  for (const auto& [k, c] : kinds) line += " " + k + "=" + std::to_string(c);
  detail(line + ", " + fmt(seconds_since(t0)) + " s");
  return {res.outlier_pct <= 5.0, "discarded replications " + fmt(res.outlier_pct) + "% (limit 5%, N=10, k=2, T=1000)"};
}

// 4. Standard errors shrink with H by the simulation factor.
Outcome h_efficiency() {
  const long n = 10, k = 1, T = 1000, seeds = 20;
  const auto [t1, t2] = build_design_params(n, k);
  const long p = param_count(n, k) + n + k;
  Vector se10 = Vector::Zero(p), se100 = Vector::Zero(p);
  long used = 0;
  for (long s = 0; s < seeds; ++s) {
    const auto sim = simulate(t1, t2, T, rng::derive(4004, static_cast<std::uint64_t>(s)));
    const ReturnPanel panel(sim.returns);
    EstimateConfig cfg;
    cfg.threads = workers();
    cfg.seed = rng::derive(4005, static_cast<std::uint64_t>(s));
    cfg.emm.adaptive_H = false;
    try {
      cfg.emm.H = 10;
      const auto a = estimate(panel, k, cfg);
      cfg.emm.H = 100;
      const auto b = estimate(panel, k, cfg);
      Vector sa(p), sb(p);
      sa << a.vcov->se, a.vcov->se_mu;
      sb << b.vcov->se, b.vcov->se_mu;
      if (!sa.allFinite() || !sb.allFinite()) continue;
      se10 += sa;
      se100 += sb;
      ++used;
    } catch (const std::exception& e) {
      detail("seed " + std::to_string(s) + " failed: " + e.what());
    }
  }
  const double target = std::sqrt(1.01 / 1.1);
  const double ratio = (se100.array() / se10.array()).mean();
  const double overall = se100.sum() / se10.sum();
  detail("paired datasets " + std::to_string(used) + ", mean per-parameter SE ratio " + fmt(ratio) +
         ", ratio of summed SEs " + fmt(overall));
  const bool ok = used >= seeds / 2 && se100.sum() < se10.sum() && std::abs(ratio / target - 1.0) <= 0.10;
  return {ok, "mean SE(H=100)/SE(H=10) = " + fmt(ratio) + " vs sqrt(1.01/1.1) = " + fmt(target) + " (within 10%)"};
}

// 5. Wall time grows sub-quadratically in T.
Outcome runtime_shape() {
  const std::vector<long> ts{1000, 4000, 10000};
  std::vector<double> times;
  const auto [t1, t2] = build_design_params(10, 2);
  for (long T : ts) {
    std::vector<double> reps;
    for (std::uint64_t r = 0; r < 3; ++r) {
      const auto sim = simulate(t1, t2, T, rng::derive(5005, r));
      EstimateConfig cfg;
      cfg.threads = 1;
      cfg.inference = false;
      cfg.emm.adaptive_H = false;
      cfg.emm.H = 10;
      const auto t0 = Clock::now();
      estimate(ReturnPanel(sim.returns), 2, cfg);
      reps.push_back(seconds_since(t0));
    }
    std::sort(reps.begin(), reps.end());
    times.push_back(reps[1]);
    detail("T=" + std::to_string(T) + " median seconds " + fmt(reps[1]));
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    mx += std::log(static_cast<double>(ts[i])) / 3.0;
    my += std::log(times[i]) / 3.0;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double dx = std::log(static_cast<double>(ts[i])) - mx;
    sxy += dx * (std::log(times[i]) - my);
    sxx += dx * dx;
  }
  const double slope = sxy / sxx;
  const bool ok = slope <= 1.3 && times[0] < 300.0;
  return {ok, "log-log slope " + fmt(slope) + " (limit 1.3); T=1000 replication " + fmt(times[0]) +
                  " s on one core (limit 300 s)"};
}

// 6. Analytic scores against finite differences and the identification identities.
Outcome score_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(6006);
  const long n = 8, k = 2;
  const ThetaLayout lay{n, k};
  const auto [d1, d2] = build_design_params(n, k);
  const Matrix s = sample_covariance(ReturnPanel(simulate(d1, d2, 1000, 6).returns));
  std::uniform_real_distribution<double> load(-1.0, 1.0), var(0.3, 3.0);
  auto theta1_of = [&](const Vector& v) {
    return Theta1{LoadingMatrix::from_free(n, k, v.head(lay.loadings())), v.segment(lay.loadings(), n),
                  v.segment(lay.loadings() + n, k)};
  };
  double worst_static = 0.0;
  for (int draw = 0; draw < 20; ++draw) {
    Vector v(lay.static_size());
    for (long c = 0; c < lay.loadings(); ++c) v(c) = load(gen);
    for (long c = lay.loadings(); c < v.size(); ++c) v(c) = var(gen);
    const Vector score = static_factor_score(s, theta1_of(v));
    for (long c = 0; c < v.size(); ++c) {
      const double fd = support::central_diff4([&](const Vector& w) { return static_loglik(s, theta1_of(w)); }, v,
                                               c, 1e-3 * std::max(std::abs(v(c)), 0.1));
      worst_static = std::max(worst_static, std::abs(score(c) - fd) / std::max({std::abs(fd), std::abs(score(c)), 1e-4}));
    }
  }

  std::vector<double> x(3000);
  {
    rng::NormalStream normal(6007);
    double px = 1.0, pd = 1.0;
    for (auto& v : x) {
      const double d = 0.05 * 1.0 + 0.1 * px + 0.85 * pd;
      v = std::sqrt(d) * normal();
      px = v * v;
      pd = d;
    }
  }
  std::uniform_real_distribution<double> a(0.02, 0.9);
  double worst_garch = 0.0;
  for (int draw = 0; draw < 20;) {
    const double a1 = a(gen), a2 = a(gen);
    if (a1 + a2 > 0.97) continue;
    const auto sc = garch_score(x, {a1, a2, 1.0});
    auto ll = [&](const Vector& w) { return garch_loglik(x, {w(0), w(1), 1.0}); };
    const Vector at = Eigen::Vector2d(a1, a2);
    const double h = 1e-4 * std::min({a1, a2, 0.99 - a1 - a2});
    const double f1 = support::central_diff4(ll, at, 0, h);
    const double f2 = support::central_diff4(ll, at, 1, h);
    worst_garch = std::max({worst_garch, std::abs(sc(0) - f1) / std::max({std::abs(f1), std::abs(sc(0)), 1e-4}),
                            std::abs(sc(1) - f2) / std::max({std::abs(f2), std::abs(sc(1)), 1e-4})});
    ++draw;
  }

  double worst_rotation = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto est = em_fit(ReturnPanel(simulate(d1, d2, 2000, rng::derive(6008, seed)).returns), k);
    const Matrix lhs = est.B_underline * est.B_underline.transpose();
    const Matrix rhs = est.B_star.matrix() * est.Gamma_star.asDiagonal() * est.B_star.matrix().transpose();
    worst_rotation = std::max(worst_rotation, (lhs - rhs).cwiseAbs().maxCoeff() / lhs.cwiseAbs().maxCoeff());
  }

  double worst_roundtrip = 0.0;
  std::uniform_real_distribution<double> mu(-3.0, 2.0), phi(-0.98, 0.98), sig(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const ArsvParams p{mu(gen), phi(gen), sig(gen)};
    worst_roundtrip = std::max(worst_roundtrip, std::abs(mu_from_psi(psi_from_arsv(p), p.phi, p.sigma_eta) - p.mu) /
                                                    std::max(1.0, std::abs(p.mu)));
  }
  const double secs = seconds_since(t0);
  detail("static score max rel err " + fmt(worst_static) + ", GARCH score max rel err " + fmt(worst_garch));
  detail("rotation identity max rel err " + fmt(worst_rotation) + ", psi/mu round trip max err " + fmt(worst_roundtrip));
  const bool ok = worst_static < 1e-6 && worst_garch < 1e-6 && worst_rotation < 1e-10 && worst_roundtrip < 1e-12 &&
                  secs < 60.0;
  return {ok, "scores match finite differences to 1e-6, rotation identity to 1e-10, round trip to 1e-12 in " +
                  fmt(secs) + " s"};
}

// 7. Estimating k=3 on two-factor data exposes the spurious factor.
Outcome overspecified_k() {
  const auto [t1, t2] = build_design_params(10, 2);
  const long seeds = 50;
  long both = 0, small_gamma = 0, flagged = 0;
  const auto t0 = Clock::now();
  for (long s = 0; s < seeds; ++s) {
    const auto sim = simulate(t1, t2, 4000, rng::derive(7007, static_cast<std::uint64_t>(s)));
    EstimateConfig cfg;
    cfg.threads = workers();
    cfg.inference = false;
    cfg.seed = rng::derive(7008, static_cast<std::uint64_t>(s));
    try {
      const auto r = estimate(ReturnPanel(sim.returns), 3, cfg);
      const bool g = r.step1.Gamma_star(2) < 0.05 * r.step1.Gamma_star(1);
      std::vector<GarchAuxParams> aux;
      for (const auto& e : r.emm) aux.push_back(e.aux.params);
      FisherOptions fo;
      fo.threads = workers();
      const auto f = simulated_fisher(r.step1.theta1(), r.theta2(), AuxPoint::from(r.step1, aux), 4000,
                                      rng::derive(cfg.seed, 2), fo);
      small_gamma += g;
      flagged += f.rank_deficient;
      both += g && f.rank_deficient;
    } catch (const std::exception& e) {
      detail("seed " + std::to_string(s) + " failed: " + e.what());
    }
  }
  detail("near-zero third Gamma " + std::to_string(small_gamma) + "/50, rank flag " + std::to_string(flagged) +
         "/50, " + fmt(seconds_since(t0)) + " s");
  return {both >= 40, "near-zero third factor variance and rank-deficiency flag in " + std::to_string(both) +
                          "/50 seeds (need >= 40)"};
}

// 8. Particle filter against exact likelihoods.
Outcome filter_sanity() {
  const ArsvParams p{0.3, 0.8, 0.5};
  const double r = 0.6;
  rng::NormalStream normal(8008);
  std::vector<double> y(100);
  double dev = std::sqrt(p.h_variance()) * normal();
  for (auto& v : y) {
    dev = p.phi * dev + p.sigma_eta * normal();
    v = p.mu + dev + std::sqrt(r) * normal();
  }
  const double exact = kalman_loglik(y, p.mu, p.phi, p.sigma_eta, 0.0, r);
  std::vector<double> ll;
  for (std::uint64_t s = 0; s < 100; ++s)
    ll.push_back(bootstrap_filter(y, p, 10000, rng::derive(8009, s), GaussianMeasurement{0.0, r}).loglik);
  double mean = 0.0, var = 0.0;
  for (double v : ll) mean += v / 100.0;
  for (double v : ll) var += (v - mean) * (v - mean) / 99.0;
  const double se = std::sqrt(var / 100.0);
  const double z = (mean - exact) / se;

  const ArsvParams flat{-0.4, 0.9, 0.0};
  std::vector<double> x(500);
  arsv_path(flat, draw_arsv(8010, 500), x.data());
  double exact_flat = 0.0;
  for (double v : x) exact_flat += -0.5 * (std::log(2.0 * std::numbers::pi) + flat.mu + v * v * std::exp(-flat.mu));
  const double pf_flat = bootstrap_filter(x, flat, 1000, 1).loglik;
  const double flat_err = std::abs(pf_flat - exact_flat) / std::abs(exact_flat);
  detail("Kalman " + fmt(exact, 10) + ", PF mean " + fmt(mean, 10) + ", MC se " + fmt(se) + ", z " + fmt(z));
  detail("sigma_eta=0: exact " + fmt(exact_flat, 12) + ", PF " + fmt(pf_flat, 12));
  return {std::abs(z) <= 3.0 && flat_err < 1e-12,
          "PF loglik within " + fmt(std::abs(z), 3) + " MC se of Kalman (limit 3); degenerate case rel err " +
              fmt(flat_err, 3)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"consistency of step one", consistency_of_step_one},
      {"std-ratio calibration", std_ratio_calibration},
      {"outlier rate", outlier_rate},
      {"H-efficiency ordering", h_efficiency},
      {"runtime shape", runtime_shape},
      {"score correctness", score_suite},
      {"overspecified-k diagnostic", overspecified_k},
      {"particle filter sanity", filter_sanity},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  std::cout << "acceptance run with " << workers() << " worker thread(s)" << std::endl;
  std::vector<std::string> lines;
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    std::cout << "criterion " << id << " (" << criteria[i].first << ")" << std::endl;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const std::string line = std::string(o.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + " [" +
                             criteria[i].first + "]: " + o.summary + " (" + fmt(seconds_since(t0)) + " s)";
    std::cout << line << std::endl;
    lines.push_back(line);
    failures += !o.pass;
  }
  std::cout << "\nsummary" << std::endl;
  for (const auto& l : lines) std::cout << l << std::endl;
  return failures == 0 ? 0 : 1;
}
