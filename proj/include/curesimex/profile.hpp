#pragma once

#include "curesimex/data.hpp"
#include "curesimex/step_function.hpp"
#include "curesimex/types.hpp"

namespace curesimex {

struct ProfileOptions {
  double tol = 1e-10;           // absolute tolerance on each jump value
  double bracket_width = 1.0;   // initial bracket width above the previous value
  int max_doublings = 60;
  // Continue with +inf jumps instead of throwing when the risk set cannot absorb
  // the failure mass. Every score term has a finite limit there, so the solver
  // uses this to evaluate (and escape) infeasible iterates; final fits are
  // always re-checked against the strict profile.
  bool allow_infinite_tail = false;
};

// Profiles the baseline transform at fixed theta: the step function placing one
// jump per distinct failure time such that the aggregated martingale increment
// vanishes there. Each step is a monotone scalar root found by bracketed
// bisection; the pre-first-jump value is -inf, so the first step brackets from
// below the smallest attainable linear predictor instead of from the previous
// value. Throws TailDivergenceError when the remaining risk set cannot absorb
// the tied-failure mass at some time (no finite root).
StepFunction solve_profile_H(const Sample& s, const Mat& wmat, const ParameterVector& theta,
                             Family family, const EventGrid& grid,
                             const ProfileOptions& opts = {});

// Convenience overload building the event grid internally.
StepFunction solve_profile_H(const Sample& s, const ParameterVector& theta, Family family,
                             const ProfileOptions& opts = {});

// Max over event times of the absolute aggregated increment residual at H;
// <= 1e-8 certifies a solved profile.
double residual_balance(const Sample& s, const Mat& wmat, const ParameterVector& theta,
                        Family family, const EventGrid& grid, const StepFunction& H);

}  // namespace curesimex
