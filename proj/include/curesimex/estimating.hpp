#pragma once

#include <functional>

#include "curesimex/data.hpp"
#include "curesimex/profile.hpp"
#include "curesimex/step_function.hpp"
#include "curesimex/types.hpp"

namespace curesimex {

// Which covariate block weights the incidence estimating equation. The default
// weights by the error-free covariates; "w" is only admissible when p == q.
enum class GammaWeight { z, w };

inline GammaWeight parse_gamma_weight(const std::string& s) {
  if (s == "z") return GammaWeight::z;
  if (s == "w") return GammaWeight::w;
  throw ValidationError("gamma_weight must be \"z\" or \"w\"");
}

struct SolveOptions {
  double tol = 1e-8;        // sup-norm convergence threshold on the stacked score
  int max_iter = 100;
  int max_halvings = 20;    // line-search damping
  double fd_step = 1e-5;    // forward-difference step for the iteration Jacobian
  int stall_limit = 10;     // consecutive non-improving iterations before giving up
  ProfileOptions profile;
};

struct FitResult {
  ParameterVector theta;
  StepFunction H;        // profiled transform at theta
  bool converged = false;
  double score_norm = 0.0;  // final sup-norm of the stacked score
  int iterations = 0;
};

// Posterior susceptibility weight given the observed outcome: 1 for failures,
// Gbar(cum_hazard_eps(H(y)+w'beta) - z'gamma) for censored subjects.
double cure_score_weight(int delta, double a_val);

// Latency score: covariate-weighted aggregated martingale increments with the
// transform profiled in at theta. Length p.
Vec score_U1(const Sample& s, const Mat& wmat, const ParameterVector& theta, Family family);

// Incidence score: weighted difference between posterior susceptibility and the
// incidence link. Length q.
Vec score_U2(const Sample& s, const Mat& wmat, const ParameterVector& theta, Family family,
             GammaWeight gw = GammaWeight::z);

// Stacked (U1, U2) with a reusable event grid; H_out (if non-null) receives the
// profiled transform.
Vec score_U(const Sample& s, const Mat& wmat, const ParameterVector& theta, Family family,
            const EventGrid& grid, GammaWeight gw, const ProfileOptions& popts,
            StepFunction* H_out = nullptr);

// Forward-difference Jacobian of a generic vector field; used for the solver
// iteration matrix and exercised directly by the calibration tests.
Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double step);

// Damped Newton iteration on the stacked score with a forward-difference
// Jacobian (fresh profile per perturbed theta), step halving enforcing a
// monotone decrease of ||U||, and a rescaled gradient fallback when the
// iteration matrix is singular. converged=false after stall_limit iterations
// without improvement.
FitResult solve_theta(const Sample& s, const Mat& wmat, const ParameterVector& init,
                      Family family, GammaWeight gw = GammaWeight::z,
                      const SolveOptions& opts = {});

// Fit on the observed covariates from the zero start.
FitResult naive_fit(const Sample& s, Family family, GammaWeight gw = GammaWeight::z,
                    const SolveOptions& opts = {});

}  // namespace curesimex
