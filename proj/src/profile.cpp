#include "curesimex/profile.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "curesimex/links.hpp"

namespace curesimex {

namespace {

// Scratch for one event time: linear predictors of the at-risk subjects and the
// log-link value carried over from the previous jump.
struct RiskScratch {
  std::vector<double> wb;      // w_i'beta
  std::vector<double> zg;     // z_i'gamma
  std::vector<double> prev;   // log G(cum_hazard(H_prev + wb) - zg)
};

inline double log_g_at(Family f, double h, double wb, double zg) {
  return log_link_G(cum_hazard_eps(f, h + wb) - zg);
}

}  // namespace

StepFunction solve_profile_H(const Sample& s, const Mat& wmat, const ParameterVector& theta,
                             Family family, const EventGrid& grid, const ProfileOptions& opts) {
  if (wmat.rows() != s.n() || wmat.cols() != theta.beta.size())
    throw ValidationError("solve_profile_H: covariate matrix shape mismatch");
  if (s.z.cols() != theta.gamma.size())
    throw ValidationError("solve_profile_H: gamma dimension mismatch");

  const int n = s.n();
  const int K = static_cast<int>(grid.times.size());
  Vec wb_all = wmat * theta.beta;
  Vec zg_all = s.z * theta.gamma;

  StepFunction H;
  H.jump_times = grid.times;
  H.values.resize(K);

  const double neg_inf = -std::numeric_limits<double>::infinity();
  double prev = neg_inf;
  RiskScratch sc;

  for (int k = 0; k < K; ++k) {
    const auto& risk = grid.risk[k];
    const double dN = grid.mult[k];
    const int m = static_cast<int>(risk.size());
    sc.wb.resize(m);
    sc.zg.resize(m);
    sc.prev.resize(m);
    double sup = 0.0;  // value of the increment sum as the jump -> +inf
    for (int j = 0; j < m; ++j) {
      int i = risk[j];
      sc.wb[j] = wb_all[i];
      sc.zg[j] = zg_all[i];
      sc.prev[j] = log_g_at(family, prev, sc.wb[j], sc.zg[j]);
      sup -= sc.prev[j];
    }
    if (!(sup > dN)) {
      if (opts.allow_infinite_tail) {
        // Saturated: the remaining mass is only reachable in the limit. All later
        // jumps are +inf too, since no capacity is left above this time.
        for (int k2 = k; k2 < K; ++k2) {
          H.values[k2] = std::numeric_limits<double>::infinity();
        }
        return H;
      }
      throw TailDivergenceError(
          grid.times[k], "profile transform diverges at t=" + std::to_string(grid.times[k]) +
                             ": at-risk increment capacity " + std::to_string(sup) +
                             " cannot reach the failure mass " + std::to_string(dN));
    }

    auto f = [&](double h) {
      double acc = -dN;
      for (int j = 0; j < m; ++j)
        acc += log_g_at(family, h, sc.wb[j], sc.zg[j]) - sc.prev[j];
      return acc;
    };

    // f is increasing in h, negative at the previous value. The first step has no
    // finite previous value; start below the smallest linear predictor where the
    // cumulative hazard is effectively zero.
    double lo = prev;
    if (k == 0) {
      lo = -sc.wb[0];
      for (int j = 1; j < m; ++j) lo = std::min(lo, -sc.wb[j]);
      lo -= 40.0;
    }
    double width = opts.bracket_width;
    double hi = lo + width;
    int doublings = 0;
    while (f(hi) < 0.0) {
      if (++doublings > opts.max_doublings)
        throw NumericError("profile transform: bracket expansion exhausted at t=" +
                           std::to_string(grid.times[k]));
      width *= 2.0;
      hi = lo + width;
    }
    // Far from the origin the tolerance can sit below one ulp of the bracket
    // endpoints; the midpoint test below detects that the interval can no
    // longer shrink and accepts machine resolution.
    int halvings = 0;
    while (hi - lo > opts.tol) {
      if (++halvings > 400)
        throw NumericError("profile transform: bisection failed to converge at t=" +
                           std::to_string(grid.times[k]));
      double mid = 0.5 * (lo + hi);
      if (mid <= lo || mid >= hi) break;
      if (f(mid) < 0.0)
        lo = mid;
      else
        hi = mid;
    }
    prev = 0.5 * (lo + hi);
    H.values[k] = prev;
  }
  return H;
}

StepFunction solve_profile_H(const Sample& s, const ParameterVector& theta, Family family,
                             const ProfileOptions& opts) {
  return solve_profile_H(s, s.w, theta, family, build_event_grid(s), opts);
}

double residual_balance(const Sample& s, const Mat& wmat, const ParameterVector& theta,
                        Family family, const EventGrid& grid, const StepFunction& H) {
  Vec wb_all = wmat * theta.beta;
  Vec zg_all = s.z * theta.gamma;
  const double neg_inf = -std::numeric_limits<double>::infinity();
  double worst = 0.0;
  double prev = neg_inf;
  for (std::size_t k = 0; k < grid.times.size(); ++k) {
    double acc = grid.mult[k];
    for (int i : grid.risk[k])
      acc -= log_g_at(family, H.values[k], wb_all[i], zg_all[i]) -
             log_g_at(family, prev, wb_all[i], zg_all[i]);
    worst = std::max(worst, std::abs(acc));
    prev = H.values[k];
  }
  return worst;
}

}  // namespace curesimex
