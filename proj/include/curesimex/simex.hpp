#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "curesimex/data.hpp"
#include "curesimex/estimating.hpp"
#include "curesimex/rng.hpp"
#include "curesimex/types.hpp"

namespace curesimex {

// Noise-injection design: added measurement-error multiples (zetas must start at 0),
// number of perturbation replicates B, and the known error covariance.
struct SimexGrid {
  std::vector<double> zetas;
  int B = 50;
  Mat sigma_eta;  // p x p, symmetric PSD

  static std::vector<double> default_zetas(double zeta_max = 2.0, double zeta_step = 0.25);
};

enum class ExtrapolantKind { quadratic, linear };

inline ExtrapolantKind parse_extrapolant(const std::string& s) {
  if (s == "quadratic") return ExtrapolantKind::quadratic;
  if (s == "linear") return ExtrapolantKind::linear;
  throw ValidationError("extrapolant must be \"quadratic\" or \"linear\"");
}

// Polynomial extrapolation model fitted per coordinate by least squares on the
// zeta grid; coef is (degree+1) x n_coords, residuals holds per-coordinate
// sums of squared residuals.
struct ExtrapolationModel {
  int degree = 2;
  std::vector<double> zetas;
  Mat coef;
  Vec residuals;
};

ExtrapolationModel fit_extrapolant(const std::vector<double>& zetas, const Mat& values,
                                   ExtrapolantKind kind);
Vec extrapolate_at(const ExtrapolationModel& m, double zeta);

// Row vector r with extrapolate_at(-1) == sum_m r[m] * values[:,m]; the same
// contraction reappears in the variance chain.
Vec extrapolation_row(const std::vector<double>& zetas, ExtrapolantKind kind, double at = -1.0);

// Symmetric PSD square root; negative eigenvalues below -tol*scale are rejected,
// small negatives are clipped to zero (so a zero matrix is fine).
Mat psd_sqrt(const Mat& sigma);

// W + sqrt(zeta) * E with rows of E i.i.d. N(0, sigma), sigma = sqrt_sigma^2.
Mat perturb_covariates(const Mat& w, double zeta, const Mat& sqrt_sigma, RngStream& rng);

// Mean of converged fits at one zeta level. Drops non-converged entries; more
// than max_drop_frac dropped is a hard failure.
Vec average_over_b(const std::vector<FitResult>& fits, double zeta, double max_drop_frac,
                   std::vector<std::string>* warnings);

struct SimexOptions {
  GammaWeight gamma_weight = GammaWeight::z;
  ExtrapolantKind extrapolant = ExtrapolantKind::quadratic;
  SolveOptions solve;
  double max_drop_frac = 0.20;
  int threads = 1;
};

struct SimexResult {
  SimexGrid grid;
  ExtrapolantKind extrapolant = ExtrapolantKind::quadratic;
  FitResult naive;
  // fits[b][m]: fit at perturbation replicate b, zeta index m. eta[b] is the
  // unit-scale noise draw, so the perturbed covariates are reconstructible as
  // w + sqrt(zeta_m) * eta[b] without storing them.
  std::vector<std::vector<FitResult>> fits;
  std::vector<Mat> eta;
  Mat theta_by_zeta;           // (p+q) x n_zetas, averaged over converged b
  std::vector<int> n_converged;
  ExtrapolationModel model;
  ParameterVector theta_simex;
  std::vector<std::string> warnings;

  Mat w_perturbed(const Sample& s, int b, int m) const;
};

// Full estimation chain: perturb, refit per (b, zeta), average over b, and
// extrapolate the averaged trajectory back to zeta = -1. Deterministic given
// (sample, grid, seed) for any thread count. zeta = 0 reuses the naive fit
// (the perturbation is identically zero there).
SimexResult run_simex(const Sample& s, Family family, const SimexGrid& grid,
                      std::uint64_t seed, const SimexOptions& opts = {});

// Transform estimate at theta_simex: per-(b, zeta) profiles at the extrapolated
// coefficients, averaged over b, extrapolated pointwise on t_grid, then made
// monotone by a running max. Returned as a step function on t_grid.
StepFunction simex_H(const Sample& s, Family family, const SimexResult& res,
                     const std::vector<double>& t_grid, const SimexOptions& opts = {});

}  // namespace curesimex
