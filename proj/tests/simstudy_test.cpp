// Data generator and Monte Carlo harness: covariate law, truncation and
// horizon mechanics, censoring calibration, and the metrics reduction.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "curesimex/errors.hpp"
#include "curesimex/estimating.hpp"
#include "curesimex/rng.hpp"
#include "curesimex/simstudy.hpp"

using namespace curesimex;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

// Small-dispersion design on which the solver converges quickly; shared with
// the other suites.
GeneratorConfig benign(double sigma2, int n) {
  GeneratorConfig cfg = GeneratorConfig::study_default(Family::ph);
  cfg.cov_sigma << 0.25, 0.05, 0.05, 0.3;
  cfg.sigma_eta = sigma2;
  cfg.censoring_c = 3.0;
  cfg.trunc_mean = 0.2;
  cfg.n = n;
  return cfg;
}

double variance(const Vec& v) {
  const double m = v.mean();
  return (v.array() - m).square().sum() / (v.size() - 1);
}

double covariance(const Vec& u, const Vec& v) {
  return ((u.array() - u.mean()) * (v.array() - v.mean())).sum() / (u.size() - 1);
}

bool same_double(double a, double b) {
  return a == b || (std::isnan(a) && std::isnan(b));
}

}  // namespace

TEST_CASE("censoring scope names round-trip") {
  CHECK(parse_censoring_scope("uncured") == CensoringScope::uncured);
  CHECK(parse_censoring_scope("overall") == CensoringScope::overall);
  CHECK(censoring_scope_name(CensoringScope::uncured) == "uncured");
  CHECK(censoring_scope_name(CensoringScope::overall) == "overall");
  CHECK_THROWS_AS(parse_censoring_scope("Uncured"), ValidationError);
  CHECK_THROWS_AS(parse_censoring_scope(""), ValidationError);
}

TEST_CASE("study default pins the reference design") {
  GeneratorConfig cfg = GeneratorConfig::study_default(Family::po);
  CHECK(cfg.family == Family::po);
  REQUIRE(cfg.theta0.beta.size() == 1);
  REQUIRE(cfg.theta0.gamma.size() == 1);
  CHECK(cfg.theta0.beta[0] == 1.0);
  CHECK(cfg.theta0.gamma[0] == 1.0);
  REQUIRE(cfg.cov_sigma.rows() == 2);
  CHECK(cfg.cov_sigma(0, 0) == 4.0);
  CHECK(cfg.cov_sigma(0, 1) == 0.7);
  CHECK(cfg.cov_sigma(1, 0) == 0.7);
  CHECK(cfg.cov_sigma(1, 1) == 3.0);
  CHECK(cfg.n == 200);
  CHECK(cfg.censoring_rate == 0.25);
  CHECK(cfg.censoring_scope == CensoringScope::uncured);
}

TEST_CASE("covariate law survives the sampler at near-zero truncation") {
  // With entry times ~ Exp(1e-4) essentially no draw is rejected, so the
  // accepted sample carries the raw joint law: X ~ N(0,4), Z ~ N(0,3),
  // cov 0.7, and W adds the measurement error variance on top of X.
  GeneratorConfig cfg = GeneratorConfig::study_default(Family::ph);
  cfg.trunc_mean = 1e-4;
  cfg.censoring_c = 1.0;
  cfg.sigma_eta = 0.5;
  cfg.n = 100000;
  RngStream rng(11);
  GeneratedSample gs = generate_sample(cfg, rng);

  CHECK(std::abs(variance(gs.latent.x.col(0)) - 4.0) <= 0.2);
  CHECK(std::abs(variance(gs.sample.z.col(0)) - 3.0) <= 0.15);
  CHECK(std::abs(covariance(gs.latent.x.col(0), gs.sample.z.col(0)) - 0.7) <= 0.1);
  CHECK(std::abs(variance(gs.sample.w.col(0)) - 4.5) <= 0.25);

  // Same knob read as a standard deviation: 0.5^2 added instead of 0.5.
  cfg.sigma_is_sd = true;
  cfg.n = 50000;
  RngStream rng_sd(14);
  GeneratedSample gsd = generate_sample(cfg, rng_sd);
  CHECK(std::abs(variance(gsd.sample.w.col(0)) - 4.25) <= 0.12);
}

TEST_CASE("cured subjects never produce events") {
  GeneratorConfig cfg = benign(0.5, 2000);
  RngStream rng(21);
  GeneratedSample gs = generate_sample(cfg, rng);

  int cured = 0;
  for (int i = 0; i < cfg.n; ++i) {
    CHECK(gs.sample.y[i] >= gs.sample.a[i]);
    CHECK(gs.sample.a[i] >= 0.0);
    if (gs.latent.susceptible[i] == 0) {
      ++cured;
      CHECK(gs.sample.delta[i] == 0);
      CHECK(gs.latent.tstar[i] == kInf);
    }
    if (gs.sample.delta[i] == 1) {
      CHECK(gs.latent.susceptible[i] == 1);
      // An observed event is the latent failure itself, not a censored copy.
      CHECK(gs.sample.y[i] == gs.latent.tstar[i]);
    }
  }
  // Both arms of the mixture must actually occur at this design.
  CHECK(cured > 200);
  CHECK(cured < cfg.n - 200);
}

TEST_CASE("administrative horizon clips follow-up") {
  GeneratorConfig cfg = benign(0.0, 2000);
  cfg.tau = 1.5;
  RngStream rng(22);
  GeneratedSample gs = generate_sample(cfg, rng);

  int clipped = 0;
  for (int i = 0; i < cfg.n; ++i) {
    CHECK(gs.sample.y[i] <= cfg.tau);
    CHECK(gs.sample.a[i] < cfg.tau);  // entries at or past the horizon are rejected
    if (gs.sample.y[i] == cfg.tau) {
      ++clipped;
      CHECK(gs.sample.delta[i] == 0);
    }
  }
  CHECK(clipped > 100);
}

TEST_CASE("generator rejects unusable configurations") {
  GeneratorConfig cfg = benign(0.5, 10);
  RngStream rng(23);

  GeneratorConfig no_window = cfg;
  no_window.censoring_c = -1.0;  // unresolved: calibration never ran
  CHECK_THROWS_AS(generate_sample(no_window, rng), ValidationError);

  GeneratorConfig empty = cfg;
  empty.n = 0;
  CHECK_THROWS_AS(generate_sample(empty, rng), ValidationError);

  GeneratorConfig bad_shape = cfg;
  bad_shape.cov_sigma = Mat::Identity(3, 3);
  CHECK_THROWS_AS(generate_sample(bad_shape, rng), ValidationError);

  GeneratorConfig not_pd = cfg;
  not_pd.cov_sigma << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(generate_sample(not_pd, rng), ValidationError);

  GeneratorConfig neg_noise = cfg;
  neg_noise.sigma_eta = -0.1;
  CHECK_THROWS_AS(generate_sample(neg_noise, rng), ValidationError);
}

TEST_CASE("calibration hits the target censoring rate") {
  GeneratorConfig cfg = benign(0.25, 30000);
  cfg.censoring_c = -1.0;
  cfg.censoring_rate = 0.30;
  const double c = calibrate_censoring(cfg, 77);
  CHECK(c > 0.5);
  CHECK(c < 50.0);

  // Fresh draws, not the calibration pool: the realized rate should land
  // within the calibration tolerance plus sampling noise at this n.
  cfg.censoring_c = c;
  RngStream rng(78);
  GeneratedSample gs = generate_sample(cfg, rng);
  int susc = 0;
  int censored = 0;
  for (int i = 0; i < cfg.n; ++i) {
    if (gs.latent.susceptible[i]) {
      ++susc;
      if (gs.sample.delta[i] == 0) ++censored;
    }
  }
  REQUIRE(susc > 1000);
  CHECK(std::abs(static_cast<double>(censored) / susc - 0.30) <= 0.015);
}

TEST_CASE("calibration rejects unreachable targets") {
  // Under the overall scope the cured fraction censors itself: no window
  // width can push the overall rate below roughly half at this design.
  GeneratorConfig cfg = benign(0.25, 100);
  cfg.censoring_c = -1.0;
  cfg.censoring_scope = CensoringScope::overall;
  cfg.censoring_rate = 0.05;
  try {
    calibrate_censoring(cfg, 79, 2000);
    FAIL("target below the floor was accepted");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("floor") != std::string::npos);
    CHECK(msg.find("overall") != std::string::npos);
  }

  GeneratorConfig bad_rate = benign(0.25, 100);
  bad_rate.censoring_rate = 0.0;
  CHECK_THROWS_AS(calibrate_censoring(bad_rate, 79, 2000), ValidationError);
  bad_rate.censoring_rate = 1.0;
  CHECK_THROWS_AS(calibrate_censoring(bad_rate, 79, 2000), ValidationError);

  GeneratorConfig ok = benign(0.25, 100);
  ok.censoring_rate = 0.3;
  CHECK_THROWS_AS(calibrate_censoring(ok, 79, 50), ValidationError);
}

TEST_CASE("naive attenuation grows with the error variance") {
  // Classical measurement error pulls the latency coefficient toward zero;
  // more noise, more shrinkage. Mean bias over 20 converged fits per level.
  auto mean_bias = [](double sigma2) {
    GeneratorConfig cfg = benign(sigma2, 250);
    RngStream rng(501);
    double sum = 0.0;
    int done = 0;
    for (int tried = 0; done < 20 && tried < 60; ++tried) {
      GeneratedSample gs = generate_sample(cfg, rng);
      try {
        FitResult fit = naive_fit(gs.sample, Family::ph);
        if (fit.converged) {
          sum += fit.theta.beta[0] - 1.0;
          ++done;
        }
      } catch (const Error&) {
      }
    }
    REQUIRE(done == 20);
    return sum / done;
  };

  const double mild = mean_bias(0.04);
  const double heavy = mean_bias(1.0);
  CHECK(mild > -0.35);
  CHECK(heavy < -0.45);
  CHECK(heavy < mild - 0.3);
}

TEST_CASE("metrics rows are exact moments of the converged replicates") {
  GeneratorConfig cfg = benign(0.25, 50);
  SimexGrid grid;
  grid.zetas = {0.0, 0.5, 1.0, 2.0};
  grid.B = 2;
  grid.sigma_eta = Mat::Constant(1, 1, 0.25);
  McOptions opts;
  opts.reps = 16;
  opts.threads = 2;
  opts.seed = 91;

  std::vector<std::string> warnings;
  std::vector<MetricsRow> rows = run_mc_cell(cfg, grid, opts, 0, &warnings);

  REQUIRE(rows.size() == 6);
  const char* methods[3] = {"simex", "naive", "oracle"};
  for (int m = 0; m < 3; ++m) {
    for (int j = 0; j < 2; ++j) {
      const MetricsRow& r = rows[2 * m + j];
      CHECK(r.method == methods[m]);
      CHECK(r.coordinate == (j == 0 ? "beta1" : "gamma1"));
      CHECK(r.model == "ph");
      CHECK(r.cr == cfg.censoring_rate);
      CHECK(r.sigma_eta == cfg.sigma_eta);
      CHECK(r.flagged == (r.n_fail > 0.1 * opts.reps));
      CHECK(r.n_fail >= 0);
      CHECK(r.n_fail < opts.reps);  // at least one replicate must survive here

      const int n_ok = opts.reps - r.n_fail;
      if (n_ok >= 2) {
        // Plain moment decomposition: mse about the truth splits exactly into
        // squared bias plus the (n-1)-denominator variance rescaled to 1/n.
        const double recon = r.bias * r.bias + r.var * (n_ok - 1) / n_ok;
        CHECK(std::abs(r.mse - recon) <= 1e-10 * std::max(1.0, r.mse));
      }
      if (!std::isnan(r.cp)) {
        CHECK(r.cp >= 0.0);
        CHECK(r.cp <= 1.0);
        CHECK(r.mve > 0.0);
      }
    }
  }
}

TEST_CASE("replicate streams make the cell schedule-invariant") {
  GeneratorConfig cfg = benign(0.25, 50);
  SimexGrid grid;
  grid.zetas = {0.0, 0.5, 1.0, 2.0};
  grid.B = 2;
  grid.sigma_eta = Mat::Constant(1, 1, 0.25);
  McOptions opts;
  opts.reps = 10;
  opts.seed = 92;

  opts.threads = 1;
  std::vector<MetricsRow> serial = run_mc_cell(cfg, grid, opts, 3);
  opts.threads = 3;
  std::vector<MetricsRow> threaded = run_mc_cell(cfg, grid, opts, 3);

  REQUIRE(serial.size() == threaded.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].method == threaded[i].method);
    CHECK(serial[i].coordinate == threaded[i].coordinate);
    CHECK(same_double(serial[i].bias, threaded[i].bias));
    CHECK(same_double(serial[i].var, threaded[i].var));
    CHECK(same_double(serial[i].mse, threaded[i].mse));
    CHECK(same_double(serial[i].cp, threaded[i].cp));
    CHECK(same_double(serial[i].mve, threaded[i].mve));
    CHECK(serial[i].n_fail == threaded[i].n_fail);
  }
}

TEST_CASE("the factorial plan fixes cell order and stream indices") {
  StudyConfig cfg;
  cfg.n = 37;
  cfg.B = 7;
  cfg.zeta_max = 1.0;
  cfg.zeta_step = 0.5;
  cfg.tau = 2.5;

  std::vector<CellPlan> plans = plan_cells(cfg);
  REQUIRE(plans.size() == 8);

  // family-major, censoring rate next, error variance fastest
  const Family fam[8] = {Family::ph, Family::ph, Family::ph, Family::ph,
                         Family::po, Family::po, Family::po, Family::po};
  const double cr[8] = {0.25, 0.25, 0.50, 0.50, 0.25, 0.25, 0.50, 0.50};
  const double s2[8] = {0.50, 0.75, 0.50, 0.75, 0.50, 0.75, 0.50, 0.75};
  for (int i = 0; i < 8; ++i) {
    const CellPlan& p = plans[i];
    CHECK(p.index == i);
    CHECK(p.gen.family == fam[i]);
    CHECK(p.gen.censoring_rate == cr[i]);
    CHECK(p.gen.sigma_eta == s2[i]);
    CHECK(p.gen.n == 37);
    CHECK(p.gen.tau == 2.5);
    CHECK(p.gen.theta0.beta[0] == 1.0);
    CHECK(p.gen.theta0.gamma[0] == 1.0);
    REQUIRE(p.grid.zetas.size() == 3);  // 0, 0.5, 1.0
    CHECK(p.grid.zetas.front() == 0.0);
    CHECK(p.grid.zetas.back() == 1.0);
    CHECK(p.grid.B == 7);
    REQUIRE(p.grid.sigma_eta.rows() == 1);
    CHECK(p.grid.sigma_eta(0, 0) == s2[i]);
  }

  // A custom truth overrides the study default in every cell.
  cfg.theta0.beta = Vec::Constant(1, 0.4);
  cfg.theta0.gamma = Vec::Constant(1, -0.2);
  for (const CellPlan& p : plan_cells(cfg)) {
    CHECK(p.gen.theta0.beta[0] == 0.4);
    CHECK(p.gen.theta0.gamma[0] == -0.2);
  }
}
