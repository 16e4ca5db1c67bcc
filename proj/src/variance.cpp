#include "curesimex/variance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "curesimex/errors.hpp"
#include "curesimex/links.hpp"
#include "curesimex/parallel.hpp"
#include "curesimex/profile.hpp"

namespace curesimex {

namespace {

std::string fmt_time(double t) {
  std::ostringstream os;
  os << t;
  return os.str();
}

}  // namespace

InfluenceKernels compute_kernels(const Sample& s, const Mat& wmat, const ParameterVector& theta,
                                 Family family, const StepFunction& H, const EventGrid& grid) {
  const int n = s.n();
  const int p = s.p();
  const int q = s.q();
  const int K = static_cast<int>(grid.times.size());
  const Vec wb = wmat * theta.beta;
  const Vec zg = s.z * theta.gamma;

  InfluenceKernels kern;
  kern.times = grid.times;
  kern.sbar.assign(K, 0.0);
  kern.mass.assign(K, 0.0);
  kern.cum.assign(K + 1, 0.0);
  kern.projection = Mat::Zero(p + q, K);
  kern.dm.resize(K);
  kern.psi.resize(K);
  kern.g_a.resize(K);
  kern.slope.resize(K);
  kern.a_y = Vec::Zero(n);
  kern.psi_y = Vec::Zero(n);

  for (int i = 0; i < n; ++i) {
    const int pos = grid.y_index[i];
    // Before the first event time the profiled transform sits at its -inf
    // base: zero intensity, but the cure argument is still finite (-z'gamma).
    const double h =
        pos == 0 ? -std::numeric_limits<double>::infinity() : H.values[pos - 1];
    const double lam = cum_hazard_eps(family, h + wb[i]);
    kern.a_y[i] = lam - zg[i];
    kern.psi_y[i] = hazard_eps(family, h + wb[i]) * link_Gbar(kern.a_y[i]);
  }

  double h_prev = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < K; ++k) {
    const auto& risk = grid.risk[k];
    const int m = static_cast<int>(risk.size());
    const double h_k = H.values[k];
    kern.dm[k].resize(m);
    kern.psi[k].resize(m);
    kern.g_a[k].resize(m);
    kern.slope[k].resize(m);

    double sum_psi = 0.0;
    double sum_psi_prev = 0.0;
    for (int j = 0; j < m; ++j) {
      const int i = risk[j];
      const double u = h_k + wb[i];
      const double lam = cum_hazard_eps(family, u);
      const double a = lam - zg[i];
      const double psi = hazard_eps(family, u) * link_Gbar(a);
      kern.g_a[k][j] = link_G(a);
      kern.psi[k][j] = psi;
      kern.slope[k][j] = dlog_hazard_eps(family, u) - hazard_eps(family, u) * kern.g_a[k][j];
      sum_psi += psi;

      double log_prev;
      if (std::isinf(h_prev)) {
        log_prev = log_link_G(-zg[i]);
      } else {
        const double lam_prev = cum_hazard_eps(family, h_prev + wb[i]);
        log_prev = log_link_G(lam_prev - zg[i]);
        sum_psi_prev += hazard_eps(family, h_prev + wb[i]) * link_Gbar(lam_prev - zg[i]);
      }
      const double dn = (s.delta[i] == 1 && grid.y_index[i] == k + 1) ? 1.0 : 0.0;
      kern.dm[k][j] = dn - (log_link_G(a) - log_prev);
    }

    if (!(sum_psi > 0.0)) {
      throw NumericError("degenerate risk set at event time " + fmt_time(grid.times[k]) +
                         ": total intensity is zero");
    }
    kern.sbar[k] = sum_psi / n;
    if (k == 0) {
      // No propagation across the first jump: nothing accumulates before it.
      kern.mass[k] = 0.0;
    } else {
      if (!(sum_psi_prev > 0.0)) {
        throw NumericError("degenerate risk set entering event time " + fmt_time(grid.times[k]));
      }
      kern.mass[k] = std::log(sum_psi) - std::log(sum_psi_prev);
    }
    kern.cum[k + 1] = kern.cum[k] + kern.mass[k];
    h_prev = h_k;
  }

  // Risk-set projection of the score covariate, transported to each event time.
  // v_j folds the subject's own terminal weight and its position discount so the
  // k-loop only rescales a running restriction to the current risk set.
  Mat v = Mat::Zero(p + q, n);
  for (int i = 0; i < n; ++i) {
    if (kern.psi_y[i] == 0.0) continue;
    const double scale = kern.psi_y[i] * std::exp(-kern.cum[grid.y_index[i]]);
    v.col(i).head(p) = wmat.row(i).transpose() * scale;
    v.col(i).tail(q) =
        s.z.row(i).transpose() * ((1.0 - s.delta[i]) * link_G(kern.a_y[i]) * scale);
  }
  for (int k = 0; k < K; ++k) {
    Vec num = Vec::Zero(p + q);
    for (int i : grid.risk[k]) num += v.col(i);
    kern.projection.col(k) = num * (std::exp(kern.cum[k + 1]) / (n * kern.sbar[k]));
  }
  return kern;
}

Mat bread_matrix(const Sample& s, const Mat& wmat, const ParameterVector& theta, Family family,
                 const EventGrid& grid, GammaWeight gw, double fd_step,
                 const ProfileOptions& popts) {
  const int p = s.p();
  const int q = s.q();
  const int dim = p + q;
  const Vec x0 = theta.stacked();
  Mat jac(dim, dim);
  for (int j = 0; j < dim; ++j) {
    Vec xp = x0;
    Vec xm = x0;
    xp[j] += fd_step;
    xm[j] -= fd_step;
    const Vec up =
        score_U(s, wmat, ParameterVector::from_stacked(xp, p, q), family, grid, gw, popts);
    const Vec um =
        score_U(s, wmat, ParameterVector::from_stacked(xm, p, q), family, grid, gw, popts);
    jac.col(j) = (up - um) / (2.0 * fd_step);
  }
  return jac;
}

Mat meat_vectors(const InfluenceKernels& kern, const Sample& s, const Mat& wmat,
                 const ParameterVector& theta, const EventGrid& grid, GammaWeight gw) {
  const int n = s.n();
  const int p = s.p();
  const int q = s.q();
  const int K = static_cast<int>(kern.times.size());
  const Vec zg = s.z * theta.gamma;

  Mat cols = Mat::Zero(p + q, n);
  for (int k = 0; k < K; ++k) {
    const auto& risk = grid.risk[k];
    const Vec proj_b = kern.projection.col(k).head(p);
    const Vec proj_g = kern.projection.col(k).tail(q);
    for (std::size_t j = 0; j < risk.size(); ++j) {
      const int i = risk[j];
      const double dm = kern.dm[k][j];
      cols.col(i).head(p) += (wmat.row(i).transpose() - proj_b) * dm;
      cols.col(i).tail(q) -= proj_g * dm;
    }
  }
  for (int i = 0; i < n; ++i) {
    const double resid = cure_score_weight(s.delta[i], kern.a_y[i]) - link_G(zg[i]);
    if (gw == GammaWeight::z) {
      cols.col(i).tail(q) += s.z.row(i).transpose() * resid;
    } else {
      cols.col(i).tail(q) += wmat.row(i).transpose() * resid;
    }
  }
  return cols;
}

SandwichPieces sandwich_pieces(const Sample& s, const Mat& wmat, const ParameterVector& theta,
                               Family family, const StepFunction& H, const EventGrid& grid,
                               GammaWeight gw, double fd_step, const ProfileOptions& popts) {
  SandwichPieces out;
  out.bread = bread_matrix(s, wmat, theta, family, grid, gw, fd_step, popts);
  const InfluenceKernels kern = compute_kernels(s, wmat, theta, family, H, grid);
  out.meat = meat_vectors(kern, s, wmat, theta, grid, gw);
  return out;
}

namespace {

Mat centered_covariance(const Mat& rows) {
  // rows: n x d, sample covariance with 1/(n-1).
  const int n = static_cast<int>(rows.rows());
  if (n < 2) throw ValidationError("covariance needs at least two subjects");
  const Mat centered = rows.rowwise() - rows.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(n - 1);
}

// Solve bread * x = col for every influence column; the sign flips because the
// estimator expansion runs through the negative Jacobian.
Mat solved_influence(const Mat& bread, const Mat& meat, const std::string& where) {
  Eigen::FullPivLU<Mat> lu(bread);
  if (!lu.isInvertible()) {
    throw NumericError("singular score Jacobian in variance step (" + where + ")");
  }
  return (-(lu.solve(meat))).transpose();  // n x dim
}

Mat project_psd(const Mat& m, bool* clipped) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  Vec ev = es.eigenvalues();
  bool any = false;
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] < 0.0) {
      ev[i] = 0.0;
      any = true;
    }
  }
  if (clipped) *clipped = any;
  if (!any) return m;
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

CovarianceResult plain_covariance(const Sample& s, const Mat& wmat, Family family,
                                  const FitResult& fit, const CovarianceOptions& opts) {
  const EventGrid grid = build_event_grid(s);
  const SandwichPieces pieces =
      sandwich_pieces(s, wmat, fit.theta, family, fit.H, grid, opts.gamma_weight, opts.fd_step,
                      opts.profile);
  const Mat inf = solved_influence(pieces.bread, pieces.meat, "single fit");
  CovarianceResult out;
  Mat cov = centered_covariance(inf) / static_cast<double>(s.n());
  cov = 0.5 * (cov + cov.transpose());
  out.cov = project_psd(cov, &out.psd_projected);
  if (out.psd_projected) {
    out.warnings.push_back("covariance eigenvalues clipped to zero");
  }
  return out;
}

CovarianceResult naive_covariance(const Sample& s, Family family, const FitResult& fit,
                                  const CovarianceOptions& opts) {
  return plain_covariance(s, s.w, family, fit, opts);
}

ThetaInfluence compute_theta_influence(const Sample& s, Family family, const SimexResult& res,
                                       const CovarianceOptions& opts,
                                       std::vector<std::string>* warnings) {
  const int n = s.n();
  const int dim = s.p() + s.q();
  const int B = static_cast<int>(res.fits.size());
  const int M = static_cast<int>(res.grid.zetas.size());
  const EventGrid grid = build_event_grid(s);

  // The zeta = 0 level never touches the perturbation draw, so its sandwich is
  // identical for every b; compute it once outside the loop.
  const bool has_zero = !res.grid.zetas.empty() && res.grid.zetas[0] == 0.0;
  Mat inf_zero;
  if (has_zero) {
    const SandwichPieces pieces =
        sandwich_pieces(s, s.w, res.naive.theta, family, res.naive.H, grid, opts.gamma_weight,
                        opts.fd_step, opts.profile);
    inf_zero = solved_influence(pieces.bread, pieces.meat, "zeta=0");
  }

  // Per (b, zeta): solved influence rows, or empty when the fit was dropped.
  std::vector<std::vector<Mat>> per_b(B, std::vector<Mat>(M));
  std::vector<std::string> errs(B);
  parallel_for(B, opts.threads, [&](int b) {
    try {
      for (int m = has_zero ? 1 : 0; m < M; ++m) {
        const FitResult& fit = res.fits[b][m];
        if (!fit.converged) continue;
        const Mat wp = res.w_perturbed(s, b, m);
        const SandwichPieces pieces =
            sandwich_pieces(s, wp, fit.theta, family, fit.H, grid, opts.gamma_weight,
                            opts.fd_step, opts.profile);
        per_b[b][m] = solved_influence(
            pieces.bread, pieces.meat,
            "b=" + std::to_string(b) + ", zeta=" + fmt_time(res.grid.zetas[m]));
      }
    } catch (const Error& e) {
      errs[b] = e.what();
    }
  });
  for (const auto& e : errs) {
    if (!e.empty()) throw NumericError(e);
  }

  ThetaInfluence out;
  out.by_zeta.assign(M, Mat::Zero(n, dim));
  if (has_zero) out.by_zeta[0] = inf_zero;
  for (int m = has_zero ? 1 : 0; m < M; ++m) {
    int kept = 0;
    for (int b = 0; b < B; ++b) {
      if (per_b[b][m].size() == 0) continue;
      out.by_zeta[m] += per_b[b][m];
      ++kept;
    }
    if (kept == 0) {
      throw NumericError("no converged fits for variance at zeta=" +
                         fmt_time(res.grid.zetas[m]));
    }
    if (kept < B && warnings) {
      warnings->push_back("variance at zeta=" + fmt_time(res.grid.zetas[m]) + " uses " +
                          std::to_string(kept) + "/" + std::to_string(B) + " draws");
    }
    out.by_zeta[m] /= static_cast<double>(kept);
  }

  out.rho = extrapolation_row(res.grid.zetas, res.extrapolant, -1.0);
  out.combined = Mat::Zero(n, dim);
  for (int m = 0; m < M; ++m) out.combined += out.rho[m] * out.by_zeta[m];
  return out;
}

CovarianceResult theta_covariance(const Sample& s, Family family, const SimexResult& res,
                                  const CovarianceOptions& opts) {
  CovarianceResult out;
  const ThetaInfluence inf = compute_theta_influence(s, family, res, opts, &out.warnings);
  Mat cov = centered_covariance(inf.combined) / static_cast<double>(s.n());
  cov = 0.5 * (cov + cov.transpose());
  out.cov = project_psd(cov, &out.psd_projected);
  if (out.psd_projected) {
    out.warnings.push_back("covariance eigenvalues clipped to zero");
  }
  return out;
}

WaldInterval wald_interval(const Vec& theta, const Mat& cov) {
  if (cov.rows() != theta.size() || cov.cols() != theta.size()) {
    throw ValidationError("covariance dimension does not match the parameter vector");
  }
  constexpr double z = 1.959964;
  WaldInterval out;
  out.se = Vec::Zero(theta.size());
  out.lower = Vec::Zero(theta.size());
  out.upper = Vec::Zero(theta.size());
  for (int j = 0; j < theta.size(); ++j) {
    const double v = cov(j, j);
    if (v < 0.0) {
      throw NumericError("negative variance for coordinate " + std::to_string(j));
    }
    out.se[j] = std::sqrt(v);
    out.lower[j] = theta[j] - z * out.se[j];
    out.upper[j] = theta[j] + z * out.se[j];
  }
  return out;
}

HCovariance H_covariance(const Sample& s, Family family, const SimexResult& res,
                         const std::vector<double>& t_grid, const CovarianceOptions& opts) {
  if (!std::is_sorted(t_grid.begin(), t_grid.end())) {
    throw ValidationError("time grid for the transform covariance must be sorted");
  }
  const int n = s.n();
  const int p = s.p();
  const int q = s.q();
  const int dim = p + q;
  const int T = static_cast<int>(t_grid.size());
  const int B = static_cast<int>(res.fits.size());
  const int M = static_cast<int>(res.grid.zetas.size());
  const EventGrid grid = build_event_grid(s);

  std::vector<std::string> warnings;
  const ThetaInfluence theta_inf = compute_theta_influence(s, family, res, opts, &warnings);
  const ParameterVector theta_hat = res.theta_simex;

  // Curve influence rows (n x T) for one perturbed covariate matrix: theta
  // feedback through an FD profile sensitivity plus the propagated martingale
  // integral, both pinned to zero before the first event.
  const auto curve_rows = [&](const Mat& wp) {
    const StepFunction H = solve_profile_H(s, wp, theta_hat, family, grid, opts.profile);
    const InfluenceKernels kern = compute_kernels(s, wp, theta_hat, family, H, grid);

    Mat At = Mat::Zero(T, dim);
    const Vec x0 = theta_hat.stacked();
    for (int j = 0; j < dim; ++j) {
      Vec xp = x0;
      Vec xm = x0;
      xp[j] += opts.fd_step;
      xm[j] -= opts.fd_step;
      const StepFunction Hp = solve_profile_H(s, wp, ParameterVector::from_stacked(xp, p, q),
                                              family, grid, opts.profile);
      const StepFunction Hm = solve_profile_H(s, wp, ParameterVector::from_stacked(xm, p, q),
                                              family, grid, opts.profile);
      for (int t = 0; t < T; ++t) {
        const int pos = step_index(H, t_grid[t]);
        if (pos == 0) continue;
        At(t, j) = (Hp.values[pos - 1] - Hm.values[pos - 1]) / (2.0 * opts.fd_step);
      }
    }

    // Per-subject prefix over event positions: integral up to t of
    // propagator(s -> t) d m_i(s) / sbar(s).
    Mat prefix = Mat::Zero(n, static_cast<int>(grid.times.size()) + 1);
    for (int k = 0; k < static_cast<int>(grid.times.size()); ++k) {
      prefix.col(k + 1) = prefix.col(k);
      const double w_k = std::exp(kern.cum[k + 1]) / kern.sbar[k];
      const auto& risk = grid.risk[k];
      for (std::size_t j = 0; j < risk.size(); ++j) {
        prefix(risk[j], k + 1) += w_k * kern.dm[k][j];
      }
    }

    Mat rows = Mat::Zero(n, T);
    for (int t = 0; t < T; ++t) {
      const int pos = step_index(H, t_grid[t]);
      if (pos == 0) continue;
      const double discount = std::exp(-kern.cum[pos]);
      rows.col(t) = theta_inf.combined * At.row(t).transpose() + discount * prefix.col(pos);
    }
    return rows;
  };

  // influence[m]: n x T curve influences, summed over kept draws then averaged.
  // The zeta = 0 rows do not depend on the draw, so they are computed once.
  std::vector<Mat> influence(M, Mat::Zero(n, T));
  const bool has_zero = !res.grid.zetas.empty() && res.grid.zetas[0] == 0.0;
  if (has_zero) influence[0] = curve_rows(s.w);

  std::vector<std::vector<Mat>> per_b(B, std::vector<Mat>(M));
  std::vector<std::vector<char>> ok(B, std::vector<char>(M, 0));
  std::vector<std::string> errs(B);
  parallel_for(B, opts.threads, [&](int b) {
    try {
      for (int m = has_zero ? 1 : 0; m < M; ++m) {
        if (!res.fits[b][m].converged) continue;
        per_b[b][m] = curve_rows(res.w_perturbed(s, b, m));
        ok[b][m] = 1;
      }
    } catch (const Error& e) {
      errs[b] = e.what();
    }
  });
  for (const auto& e : errs) {
    if (!e.empty()) throw NumericError(e);
  }

  for (int m = has_zero ? 1 : 0; m < M; ++m) {
    int kept = 0;
    for (int b = 0; b < B; ++b) {
      if (!ok[b][m]) continue;
      influence[m] += per_b[b][m];
      ++kept;
    }
    if (kept == 0) {
      throw NumericError("no usable draws for the transform variance at zeta=" +
                         fmt_time(res.grid.zetas[m]));
    }
    influence[m] /= static_cast<double>(kept);
  }

  Mat combined = Mat::Zero(n, T);
  for (int m = 0; m < M; ++m) combined += theta_inf.rho[m] * influence[m];

  HCovariance out;
  out.times = t_grid;
  out.variance = Vec::Zero(T);
  out.covariance = Mat::Zero(T, T);
  out.covariance = combined.transpose() * combined / static_cast<double>(n) /
                   static_cast<double>(n);
  out.variance = out.covariance.diagonal();
  return out;
}

}  // namespace curesimex
