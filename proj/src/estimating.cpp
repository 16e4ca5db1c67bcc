#include "curesimex/estimating.hpp"

#include <cmath>
#include <limits>

#include "curesimex/links.hpp"

namespace curesimex {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_shapes(const Sample& s, const Mat& wmat, const ParameterVector& theta,
                  GammaWeight gw) {
  if (wmat.rows() != s.n() || wmat.cols() != theta.beta.size())
    throw ValidationError("score: covariate matrix shape mismatch");
  if (s.z.cols() != theta.gamma.size())
    throw ValidationError("score: gamma dimension mismatch");
  if (gw == GammaWeight::w && theta.beta.size() != theta.gamma.size())
    throw ValidationError("gamma_weight \"w\" requires p == q");
}

// Stacked score at a solved profile. The latency block sums
// w_i (dN_i - R_i * increment of log G) over event times; the incidence block is
// weight_i (cure_score_weight_i - G(z_i'gamma)).
Vec score_at(const Sample& s, const Mat& wmat, const ParameterVector& theta, Family family,
             const EventGrid& grid, GammaWeight gw, const StepFunction& H) {
  const int n = s.n();
  const int p = static_cast<int>(theta.beta.size());
  const int q = static_cast<int>(theta.gamma.size());
  Vec wb = wmat * theta.beta;
  Vec zg = s.z * theta.gamma;

  Vec u = Vec::Zero(p + q);
  double prev = -kInf;
  for (std::size_t k = 0; k < grid.times.size(); ++k) {
    double hk = H.values[k];
    for (int i : grid.risk[k]) {
      double inc = log_link_G(cum_hazard_eps(family, hk + wb[i]) - zg[i]) -
                   log_link_G(cum_hazard_eps(family, prev + wb[i]) - zg[i]);
      u.head(p) -= inc * wmat.row(i).transpose();
    }
    for (int i : grid.events[k]) u.head(p) += wmat.row(i).transpose();
    prev = hk;
  }
  for (int i = 0; i < n; ++i) {
    double hy = grid.y_index[i] > 0 ? H.values[grid.y_index[i] - 1] : -kInf;
    double a_val = cum_hazard_eps(family, hy + wb[i]) - zg[i];
    double resid = cure_score_weight(s.delta[i], a_val) - link_G(zg[i]);
    if (gw == GammaWeight::z)
      u.tail(q) += resid * s.z.row(i).transpose();
    else
      u.tail(q) += resid * wmat.row(i).transpose();
  }
  return u / n;
}

}  // namespace

double cure_score_weight(int delta, double a_val) {
  if (delta == 1) return 1.0;
  return link_Gbar(a_val);
}

Vec score_U(const Sample& s, const Mat& wmat, const ParameterVector& theta, Family family,
            const EventGrid& grid, GammaWeight gw, const ProfileOptions& popts,
            StepFunction* H_out) {
  check_shapes(s, wmat, theta, gw);
  StepFunction H = solve_profile_H(s, wmat, theta, family, grid, popts);
  Vec u = score_at(s, wmat, theta, family, grid, gw, H);
  if (H_out) *H_out = std::move(H);
  return u;
}

Vec score_U1(const Sample& s, const Mat& wmat, const ParameterVector& theta, Family family) {
  EventGrid grid = build_event_grid(s);
  Vec u = score_U(s, wmat, theta, family, grid, GammaWeight::z, ProfileOptions{});
  return u.head(theta.beta.size());
}

Vec score_U2(const Sample& s, const Mat& wmat, const ParameterVector& theta, Family family,
             GammaWeight gw) {
  EventGrid grid = build_event_grid(s);
  Vec u = score_U(s, wmat, theta, family, grid, gw, ProfileOptions{});
  return u.tail(theta.gamma.size());
}

Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double step) {
  Vec f0 = f(x);
  Mat J(f0.size(), x.size());
  for (int j = 0; j < x.size(); ++j) {
    Vec xp = x;
    xp[j] += step;
    J.col(j) = (f(xp) - f0) / step;
  }
  return J;
}

FitResult solve_theta(const Sample& s, const Mat& wmat, const ParameterVector& init,
                      Family family, GammaWeight gw, const SolveOptions& opts) {
  check_shapes(s, wmat, init, gw);
  const int p = static_cast<int>(init.beta.size());
  const int q = static_cast<int>(init.gamma.size());
  EventGrid grid = build_event_grid(s);

  // Iterates are evaluated under the boundary-extended profile so that starting
  // points (and detours) without a finite transform still yield a score with the
  // right push-back direction instead of a hard failure.
  ProfileOptions popts = opts.profile;
  popts.allow_infinite_tail = true;
  auto eval = [&](const Vec& x, StepFunction* H_out) {
    return score_U(s, wmat, ParameterVector::from_stacked(x, p, q), family, grid, gw, popts,
                   H_out);
  };

  FitResult out;
  Vec x = init.stacked();
  StepFunction H;
  Vec u = eval(x, &H);  // failures at the starting point propagate
  double norm2 = u.norm();
  int stall = 0;

  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    if (u.lpNorm<Eigen::Infinity>() <= opts.tol) break;

    Mat J(p + q, p + q);
    bool fd_ok = true;
    for (int j = 0; j < p + q && fd_ok; ++j) {
      Vec xp = x;
      xp[j] += opts.fd_step;
      try {
        J.col(j) = (eval(xp, nullptr) - u) / opts.fd_step;
      } catch (const NumericError&) {
        fd_ok = false;  // perturbed profile failed; fall back below
      }
    }

    Vec dir;
    bool have_dir = false;
    if (fd_ok) {
      Eigen::FullPivLU<Mat> lu(J);
      lu.setThreshold(1e-12);
      if (lu.isInvertible()) {
        dir = lu.solve(-u);
        have_dir = true;
      } else {
        // Rescaled gradient step on ||U||^2/2 (Cauchy point of the local model).
        Vec g = J.transpose() * u;
        double gJg = (J * g).squaredNorm();
        if (g.norm() > 0.0 && gJg > 0.0) {
          dir = -(g.squaredNorm() / gJg) * g;
          have_dir = true;
        }
      }
    }
    if (!have_dir) dir = -u;

    double lambda = 1.0;
    bool moved = false;
    for (int h = 0; h <= opts.max_halvings; ++h) {
      Vec xt = x + lambda * dir;
      double trial_norm2;
      Vec ut;
      StepFunction Ht;
      try {
        ut = eval(xt, &Ht);
        trial_norm2 = ut.norm();
      } catch (const NumericError&) {
        trial_norm2 = kInf;  // trial point not solvable; damp further
      }
      if (trial_norm2 < norm2) {
        x = xt;
        u = ut;
        H = std::move(Ht);
        double gain = norm2 - trial_norm2;
        norm2 = trial_norm2;
        // Progress means a material reduction; crawling along a flat score
        // surface feeds the stall counter instead of burning the iteration
        // budget on 1e-6-sized wins.
        moved = gain > 1e-3 * norm2 + 1e-14;
        break;
      }
      lambda *= 0.5;
    }
    if (!moved) {
      if (++stall >= opts.stall_limit) break;
    } else {
      stall = 0;
    }
  }

  out.theta = ParameterVector::from_stacked(x, p, q);
  out.H = std::move(H);
  out.score_norm = u.lpNorm<Eigen::Infinity>();
  // A solution whose transform still sits on the +inf boundary is not a fit,
  // however small the score; downstream consumers only use finite profiles.
  const bool boundary = !out.H.values.empty() && std::isinf(out.H.values.back());
  out.converged = out.score_norm <= opts.tol && !boundary;
  out.iterations = iter;
  return out;
}

FitResult naive_fit(const Sample& s, Family family, GammaWeight gw, const SolveOptions& opts) {
  return solve_theta(s, s.w, ParameterVector::zeros(s.p(), s.q()), family, gw, opts);
}

}  // namespace curesimex
