#pragma once

#include <cmath>

#include "curesimex/errors.hpp"
#include "curesimex/step_function.hpp"
#include "curesimex/types.hpp"

namespace curesimex {

// Standard logistic CDF, overflow-safe on both tails. +-inf map to 1/0.
inline double link_G(double x) {
  if (std::isnan(x)) throw ValidationError("link_G: NaN input");
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double link_Gbar(double x) {
  if (std::isnan(x)) throw ValidationError("link_Gbar: NaN input");
  return link_G(-x);
}

// log G(x); stable for large |x| (never computes log of a rounded-to-1 value).
inline double log_link_G(double x) {
  if (std::isnan(x)) throw ValidationError("log_link_G: NaN input");
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

// Cumulative hazard of the residual distribution: exp(x) under ph,
// log(1+exp(x)) under po. Monotone from 0 (x -> -inf) to +inf.
inline double cum_hazard_eps(Family f, double x) {
  if (std::isnan(x)) throw ValidationError("cum_hazard_eps: NaN input");
  if (f == Family::ph) return std::exp(x);
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// d/dx of cum_hazard_eps.
inline double hazard_eps(Family f, double x) {
  if (std::isnan(x)) throw ValidationError("hazard_eps: NaN input");
  return f == Family::ph ? std::exp(x) : link_G(x);
}

// d/dx log hazard_eps: 1 under ph, complement-logistic under po.
inline double dlog_hazard_eps(Family f, double x) {
  if (std::isnan(x)) throw ValidationError("dlog_hazard_eps: NaN input");
  return f == Family::ph ? 1.0 : link_Gbar(x);
}

// Marginal survival P(T > t | z, w) under the cure mixture: the non-susceptible
// fraction never fails, the susceptible fraction follows the transformation model.
// Equal (algebraically, for any cumulative hazard) to
//   link_Gbar(z'gamma) / link_G(cum_hazard_eps(H(t)+w'beta) - z'gamma);
// the mixture form below is the one that stays finite when both tails underflow.
inline double population_survival(double t, const Vec& z, const Vec& w,
                                  const ParameterVector& theta, const StepFunction& H,
                                  Family f) {
  double inc = z.dot(theta.gamma);
  double h = evaluate_H(H, t) + w.dot(theta.beta);
  double lam = cum_hazard_eps(f, h);
  return link_Gbar(inc) + link_G(inc) * std::exp(-lam);
}

}  // namespace curesimex
