#pragma once

#include <Eigen/Dense>
#include <string>

#include "curesimex/errors.hpp"

namespace curesimex {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error distribution of the transformation model residual.
enum class Family { ph, po };

inline Family parse_family(const std::string& s) {
  if (s == "ph") return Family::ph;
  if (s == "po") return Family::po;
  throw ValidationError("unknown model family '" + s + "' (expected \"ph\" or \"po\")");
}

inline std::string family_name(Family f) { return f == Family::ph ? "ph" : "po"; }

// Regression coefficients: beta multiplies the error-prone covariates (latency part),
// gamma multiplies the error-free covariates (incidence part).
struct ParameterVector {
  Vec beta;
  Vec gamma;

  int dim() const { return static_cast<int>(beta.size() + gamma.size()); }

  Vec stacked() const {
    Vec v(dim());
    v.head(beta.size()) = beta;
    v.tail(gamma.size()) = gamma;
    return v;
  }

  static ParameterVector from_stacked(const Vec& v, int p, int q) {
    if (v.size() != p + q) throw ValidationError("parameter vector length mismatch");
    ParameterVector theta;
    theta.beta = v.head(p);
    theta.gamma = v.tail(q);
    return theta;
  }

  static ParameterVector zeros(int p, int q) {
    return ParameterVector{Vec::Zero(p), Vec::Zero(q)};
  }
};

}  // namespace curesimex
