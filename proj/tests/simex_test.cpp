// Perturbation-extrapolation engine: noise law, extrapolant algebra, the
// degenerate-noise identity, and determinism of the full chain.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "curesimex/data.hpp"
#include "curesimex/rng.hpp"
#include "curesimex/simex.hpp"
#include "curesimex/simstudy.hpp"
#include "curesimex/step_function.hpp"

using namespace curesimex;

namespace {

// Informative little dataset the solver handles quickly and reliably.
GeneratedSample quick_sample(int n, std::uint64_t seed) {
  GeneratorConfig cfg = GeneratorConfig::study_default(Family::ph);
  cfg.cov_sigma << 0.25, 0.05, 0.05, 0.3;
  cfg.sigma_eta = 0.0;
  cfg.censoring_c = 3.0;
  cfg.trunc_mean = 0.2;
  cfg.n = n;
  RngStream rng(seed);
  return generate_sample(cfg, rng);
}

SimexGrid small_grid(double sigma2, int B) {
  SimexGrid grid;
  grid.zetas = {0.0, 0.5, 1.0, 2.0};
  grid.B = B;
  grid.sigma_eta = Mat::Constant(1, 1, sigma2);
  return grid;
}

}  // namespace

TEST_CASE("default zeta ladder") {
  std::vector<double> z = SimexGrid::default_zetas();
  REQUIRE(z.size() == 9);
  CHECK(z.front() == 0.0);
  CHECK(z.back() == doctest::Approx(2.0).epsilon(1e-12));
  for (std::size_t m = 1; m < z.size(); ++m)
    CHECK(z[m] - z[m - 1] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK_THROWS_AS(SimexGrid::default_zetas(-1.0, 0.25), ValidationError);
}

TEST_CASE("psd square root") {
  Mat sigma(2, 2);
  sigma << 1.3, 0.4, 0.4, 0.7;
  Mat s = psd_sqrt(sigma);
  CHECK((s * s - sigma).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((s - s.transpose()).cwiseAbs().maxCoeff() <= 1e-12);

  CHECK(psd_sqrt(Mat::Zero(2, 2)).cwiseAbs().maxCoeff() == 0.0);

  Mat indef(2, 2);
  indef << 1.0, 0.0, 0.0, -0.5;
  CHECK_THROWS_AS(psd_sqrt(indef), ValidationError);
  Mat asym(2, 2);
  asym << 1.0, 0.2, 0.0, 1.0;
  CHECK_THROWS_AS(psd_sqrt(asym), ValidationError);
}

TEST_CASE("perturbation law") {
  RngStream rng(555);
  Mat w = Mat::Constant(200, 1, 2.0);
  Mat sq = psd_sqrt(Mat::Constant(1, 1, 0.5));

  SUBCASE("zeta 0 adds nothing") {
    Mat out = perturb_covariates(w, 0.0, sq, rng);
    CHECK((out - w).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("zero error covariance adds nothing at any zeta") {
    Mat out = perturb_covariates(w, 1.5, psd_sqrt(Mat::Zero(1, 1)), rng);
    CHECK((out - w).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("negative zeta is rejected") {
    CHECK_THROWS_AS(perturb_covariates(w, -0.25, sq, rng), ValidationError);
  }

  SUBCASE("added noise has variance zeta * sigma_eta") {
    // B=2000 independent draws at each level; the sample variance of the
    // added column must sit within 5% of the target.
    const int B = 2000;
    for (double zeta : {0.5, 1.0, 2.0}) {
      double sum = 0.0, sum2 = 0.0;
      int count = 0;
      for (int b = 0; b < B; ++b) {
        Mat out = perturb_covariates(w, zeta, sq, rng);
        double d = out(b % w.rows(), 0) - 2.0;
        sum += d;
        sum2 += d * d;
        ++count;
      }
      double var = (sum2 - sum * sum / count) / (count - 1);
      CHECK(var == doctest::Approx(zeta * 0.5).epsilon(0.05));
    }
  }
}

TEST_CASE("quadratic extrapolant recovers exact polynomials") {
  // (zeta-1)^2 through three points: coefficients then the -1 prediction.
  std::vector<double> zetas{0.0, 1.0, 2.0};
  Mat values(1, 3);
  values << 1.0, 0.0, 1.0;
  ExtrapolationModel m = fit_extrapolant(zetas, values, ExtrapolantKind::quadratic);
  REQUIRE(m.coef.rows() == 3);
  CHECK(m.coef(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.coef(1, 0) == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(m.coef(2, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(extrapolate_at(m, -1.0)[0] == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(extrapolate_at(m, 0.0)[0] == doctest::Approx(1.0).epsilon(1e-12));

  // Constant data: only the intercept survives.
  Mat cv = Mat::Constant(2, 3, 0.0);
  cv.row(0).setConstant(3.25);
  cv.row(1).setConstant(-0.5);
  ExtrapolationModel mc = fit_extrapolant(zetas, cv, ExtrapolantKind::quadratic);
  CHECK(extrapolate_at(mc, -1.0)[0] == doctest::Approx(3.25).epsilon(1e-12));
  CHECK(extrapolate_at(mc, -1.0)[1] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(std::abs(mc.coef(1, 0)) <= 1e-12);
  CHECK(std::abs(mc.coef(2, 0)) <= 1e-12);

  // Nine-level default ladder, noiseless quadratic: recovery to 1e-10.
  std::vector<double> nine = SimexGrid::default_zetas();
  Mat vq(1, 9);
  for (int m2 = 0; m2 < 9; ++m2)
    vq(0, m2) = 0.7 - 1.3 * nine[m2] + 0.45 * nine[m2] * nine[m2];
  ExtrapolationModel mq = fit_extrapolant(nine, vq, ExtrapolantKind::quadratic);
  CHECK(mq.coef(0, 0) == doctest::Approx(0.7).epsilon(1e-10));
  CHECK(mq.coef(1, 0) == doctest::Approx(-1.3).epsilon(1e-10));
  CHECK(mq.coef(2, 0) == doctest::Approx(0.45).epsilon(1e-10));
  CHECK(mq.residuals[0] <= 1e-18);
  double expect = 0.7 + 1.3 + 0.45;
  CHECK(extrapolate_at(mq, -1.0)[0] == doctest::Approx(expect).epsilon(1e-10));

  CHECK_THROWS_AS(fit_extrapolant({0.0, 1.0}, Mat::Zero(1, 2), ExtrapolantKind::quadratic),
                  ValidationError);
}

TEST_CASE("linear extrapolant") {
  std::vector<double> zetas{0.0, 0.5, 1.0, 1.5};
  Mat values(1, 4);
  for (int m = 0; m < 4; ++m) values(0, m) = 2.0 - 0.8 * zetas[m];
  ExtrapolationModel lin = fit_extrapolant(zetas, values, ExtrapolantKind::linear);
  REQUIRE(lin.degree == 1);
  CHECK(extrapolate_at(lin, -1.0)[0] == doctest::Approx(2.8).epsilon(1e-10));
}

TEST_CASE("extrapolation row reproduces the fitted prediction") {
  std::vector<double> zetas = SimexGrid::default_zetas();
  RngStream rng(77);
  Mat values(3, 9);
  for (int i = 0; i < values.size(); ++i) values(i / 9, i % 9) = rng.normal();

  for (ExtrapolantKind kind : {ExtrapolantKind::quadratic, ExtrapolantKind::linear}) {
    Vec r = extrapolation_row(zetas, kind, -1.0);
    REQUIRE(r.size() == 9);
    ExtrapolationModel m = fit_extrapolant(zetas, values, kind);
    Vec direct = extrapolate_at(m, -1.0);
    Vec contracted = values * r;
    CHECK((direct - contracted).cwiseAbs().maxCoeff() <= 1e-10);
  }

  // Three-point quadratic: the row is exact polynomial interpolation, so it
  // must reproduce the (1,-1,1) contraction of the monomial coefficients.
  std::vector<double> three{0.0, 1.0, 2.0};
  Vec r3 = extrapolation_row(three, ExtrapolantKind::quadratic, -1.0);
  Mat probe(1, 3);
  probe << 1.0, 0.0, 1.0;  // (zeta-1)^2 again; prediction at -1 is 4
  CHECK((probe * r3)(0, 0) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("average_over_b drops failures up to the budget") {
  FitResult good;
  good.theta = ParameterVector{Vec::Constant(1, 1.0), Vec::Constant(1, 3.0)};
  good.converged = true;
  FitResult bad;
  bad.theta = ParameterVector{Vec::Constant(1, 99.0), Vec::Constant(1, 99.0)};
  bad.converged = false;

  std::vector<std::string> warnings;
  Vec avg = average_over_b({good, bad, good}, 0.5, 0.4, &warnings);
  CHECK(avg[0] == doctest::Approx(1.0));
  CHECK(avg[1] == doctest::Approx(3.0));
  CHECK(warnings.size() == 1);

  // 2/3 dropped blows the failure budget.
  CHECK_THROWS_AS(average_over_b({good, bad, bad}, 0.5, 0.4, nullptr), NumericError);
  CHECK_THROWS_AS(average_over_b({}, 0.5, 0.4, nullptr), ValidationError);
}

TEST_CASE("degenerate noise collapses the chain onto the naive fit") {
  GeneratedSample gs = quick_sample(60, 31);
  SimexGrid grid = small_grid(0.0, 3);

  SimexResult res = run_simex(gs.sample, Family::ph, grid, 99, SimexOptions{});
  REQUIRE(res.naive.converged);
  CHECK((res.theta_simex.stacked() - res.naive.theta.stacked()).cwiseAbs().maxCoeff() <= 1e-8);

  // Every (b, zeta) fit sees the same covariates and the naive warm start.
  for (int b = 0; b < grid.B; ++b)
    for (std::size_t m = 0; m < grid.zetas.size(); ++m)
      CHECK((res.fits[b][m].theta.stacked() - res.naive.theta.stacked())
                .cwiseAbs()
                .maxCoeff() <= 1e-8);
  for (int c : res.n_converged) CHECK(c == grid.B);

  // The transform extrapolates to the naive profile as well.
  StepFunction H = simex_H(gs.sample, Family::ph, res, res.naive.H.jump_times, SimexOptions{});
  REQUIRE(H.values.size() == res.naive.H.values.size());
  for (std::size_t k = 0; k < H.values.size(); ++k)
    CHECK(H.values[k] == doctest::Approx(res.naive.H.values[k]).epsilon(1e-8));
}

TEST_CASE("zeta 0 reuses the naive fit and noise is reconstructible") {
  GeneratedSample gs = quick_sample(50, 32);
  SimexGrid grid = small_grid(0.3, 2);

  SimexResult res = run_simex(gs.sample, Family::ph, grid, 7, SimexOptions{});
  for (int b = 0; b < grid.B; ++b) {
    CHECK(res.fits[b][0].theta.stacked() == res.naive.theta.stacked());
    CHECK(res.fits[b][0].converged == res.naive.converged);
    // Stored unit-scale noise reconstructs the perturbed covariates.
    Mat wp = res.w_perturbed(gs.sample, b, 2);
    Mat expect = gs.sample.w + std::sqrt(grid.zetas[2]) * res.eta[b];
    CHECK((wp - expect).cwiseAbs().maxCoeff() == 0.0);
    CHECK((res.eta[0] - res.eta[1]).cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("the chain is deterministic in the seed") {
  GeneratedSample gs = quick_sample(50, 33);
  SimexGrid grid = small_grid(0.3, 2);

  SimexResult a = run_simex(gs.sample, Family::ph, grid, 1234, SimexOptions{});
  SimexResult b = run_simex(gs.sample, Family::ph, grid, 1234, SimexOptions{});
  CHECK(a.theta_simex.stacked() == b.theta_simex.stacked());
  CHECK(a.theta_by_zeta == b.theta_by_zeta);
  for (int bb = 0; bb < grid.B; ++bb) CHECK(a.eta[bb] == b.eta[bb]);

  SimexResult c = run_simex(gs.sample, Family::ph, grid, 4321, SimexOptions{});
  CHECK((c.eta[0] - a.eta[0]).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("extrapolated transform is monotone and right-constant") {
  GeneratedSample gs = quick_sample(60, 34);
  SimexGrid grid = small_grid(0.3, 3);
  SimexResult res = run_simex(gs.sample, Family::ph, grid, 11, SimexOptions{});

  EventTimes ev = event_times(gs.sample);
  std::vector<double> t_grid = ev.times;
  t_grid.push_back(ev.times.back() + 5.0);  // beyond the last event
  StepFunction H = simex_H(gs.sample, Family::ph, res, t_grid, SimexOptions{});

  REQUIRE(H.values.size() == t_grid.size());
  for (std::size_t k = 1; k < H.values.size(); ++k) CHECK(H.values[k] >= H.values[k - 1]);
  CHECK(H.values[H.values.size() - 1] == H.values[H.values.size() - 2]);

  CHECK_THROWS_AS(simex_H(gs.sample, Family::ph, res, {}, SimexOptions{}), ValidationError);
  CHECK_THROWS_AS(simex_H(gs.sample, Family::ph, res, {2.0, 1.0}, SimexOptions{}),
                  ValidationError);
}
