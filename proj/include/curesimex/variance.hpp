#pragma once

#include <string>
#include <vector>

#include "curesimex/data.hpp"
#include "curesimex/estimating.hpp"
#include "curesimex/simex.hpp"
#include "curesimex/types.hpp"

namespace curesimex {

// Everything the sandwich needs at one fitted state (covariates, theta, profiled
// transform). Per-event arrays are aligned with grid.risk[k]; positions into the
// cumulative propagator mass are "number of events so far" (0 = before the first).
struct InfluenceKernels {
  std::vector<double> times;
  std::vector<double> sbar;   // (1/n) sum_{i at risk} psi_i at the current level
  std::vector<double> mass;   // propagator mass per event (mass[0] = 0 by convention)
  std::vector<double> cum;    // size K+1, cum[k+1] = cum[k] + mass[k]
  Mat projection;             // (p+q) x K risk-set projection at each event time
  std::vector<std::vector<double>> dm;     // martingale increments
  std::vector<std::vector<double>> psi;    // risk intensity at the event level
  std::vector<std::vector<double>> g_a;    // incidence link at the event level
  std::vector<std::vector<double>> slope;  // d/dh of log risk intensity
  Vec a_y;    // per subject: link argument at its own y
  Vec psi_y;  // per subject: risk intensity at its own y

  // exp of the accumulated mass between two event positions; propagator(p, p) = 1.
  double propagator(int pos_from, int pos_to) const {
    return std::exp(cum[pos_from] - cum[pos_to]);
  }
};

InfluenceKernels compute_kernels(const Sample& s, const Mat& wmat, const ParameterVector& theta,
                                 Family family, const StepFunction& H, const EventGrid& grid);

// Central finite-difference Jacobian of the stacked score at theta (profile
// re-solved at every perturbed point). Not symmetrized.
Mat bread_matrix(const Sample& s, const Mat& wmat, const ParameterVector& theta, Family family,
                 const EventGrid& grid, GammaWeight gw = GammaWeight::z, double fd_step = 1e-5,
                 const ProfileOptions& popts = {});

// Per-subject influence columns ((p+q) x n). The latency block integrates the
// projected covariate against the subject's martingale increments; the incidence
// block is the subject's own incidence-score term minus the same projection
// integral. Columns sum to n * U(theta), which is ~0 at a converged fit.
Mat meat_vectors(const InfluenceKernels& kern, const Sample& s, const Mat& wmat,
                 const ParameterVector& theta, const EventGrid& grid,
                 GammaWeight gw = GammaWeight::z);

struct SandwichPieces {
  Mat bread;  // FD Jacobian of U
  Mat meat;   // (p+q) x n influence columns
};

SandwichPieces sandwich_pieces(const Sample& s, const Mat& wmat, const ParameterVector& theta,
                               Family family, const StepFunction& H, const EventGrid& grid,
                               GammaWeight gw = GammaWeight::z, double fd_step = 1e-5,
                               const ProfileOptions& popts = {});

struct CovarianceOptions {
  double fd_step = 1e-5;
  int threads = 1;
  GammaWeight gamma_weight = GammaWeight::z;
  ProfileOptions profile;
};

struct CovarianceResult {
  Mat cov;
  bool psd_projected = false;
  std::vector<std::string> warnings;
};

// Plain one-fit sandwich: A^-1 cov(influence) A^-T / n, at the given latency
// covariates (the observed ones for a naive fit, the latent ones for an oracle).
CovarianceResult plain_covariance(const Sample& s, const Mat& wmat, Family family,
                                  const FitResult& fit, const CovarianceOptions& opts = {});

CovarianceResult naive_covariance(const Sample& s, Family family, const FitResult& fit,
                                  const CovarianceOptions& opts = {});

// Per-subject solved-score influences for the extrapolated estimator: for each
// zeta, the b-average over converged fits of -bread^-1 * influence column.
// rows(i) stacked as n x (p+q) per zeta level.
struct ThetaInfluence {
  std::vector<Mat> by_zeta;  // per zeta: n x (p+q)
  Vec rho;                   // extrapolation-at--1 contraction over zeta levels
  Mat combined;              // n x (p+q): sum_m rho[m] * by_zeta[m]
};

ThetaInfluence compute_theta_influence(const Sample& s, Family family, const SimexResult& res,
                                       const CovarianceOptions& opts,
                                       std::vector<std::string>* warnings);

// Covariance of the extrapolated estimator: the zeta-stacked influence covariance
// pushed through the least-squares extrapolant design and contracted at -1,
// divided by n; symmetrized and eigenvalue-clipped to PSD (with a warning)
// before returning.
CovarianceResult theta_covariance(const Sample& s, Family family, const SimexResult& res,
                                  const CovarianceOptions& opts = {});

struct WaldInterval {
  Vec lower;
  Vec upper;
  Vec se;
};

// theta +- 1.959964 * sqrt(diag cov); negative diagonal entries are an error.
WaldInterval wald_interval(const Vec& theta, const Mat& cov);

struct HCovariance {
  std::vector<double> times;
  Vec variance;    // pointwise, already divided by n
  Mat covariance;  // grid x grid
};

// Pointwise variance of the extrapolated transform on t_grid: per-(b, zeta)
// curve influences (theta feedback via an FD profile derivative plus the
// propagated martingale integral), b-averaged, extrapolated to -1, squared and
// averaged over subjects.
HCovariance H_covariance(const Sample& s, Family family, const SimexResult& res,
                         const std::vector<double>& t_grid,
                         const CovarianceOptions& opts = {});

}  // namespace curesimex
