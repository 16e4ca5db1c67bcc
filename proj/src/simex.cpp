#include "curesimex/simex.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "curesimex/parallel.hpp"
#include "curesimex/profile.hpp"

namespace curesimex {

std::vector<double> SimexGrid::default_zetas(double zeta_max, double zeta_step) {
  if (!(zeta_max > 0.0) || !(zeta_step > 0.0))
    throw ValidationError("zeta_max and zeta_step must be positive");
  std::vector<double> z;
  for (int k = 0;; ++k) {
    double v = k * zeta_step;
    if (v > zeta_max + 1e-12) break;
    z.push_back(v);
  }
  return z;
}

namespace {

void check_grid(const SimexGrid& grid, int p, ExtrapolantKind kind) {
  if (grid.B < 1) throw ValidationError("simex: B must be >= 1");
  if (grid.zetas.empty() || grid.zetas.front() != 0.0)
    throw ValidationError("simex: zeta grid must start at 0");
  for (std::size_t m = 0; m < grid.zetas.size(); ++m) {
    if (grid.zetas[m] < 0.0) throw ValidationError("simex: zetas must be nonnegative");
    if (m > 0 && grid.zetas[m] <= grid.zetas[m - 1])
      throw ValidationError("simex: zetas must be strictly increasing");
  }
  int need = kind == ExtrapolantKind::quadratic ? 3 : 2;
  if (static_cast<int>(grid.zetas.size()) < need)
    throw ValidationError("simex: extrapolant needs at least " + std::to_string(need) +
                          " zeta levels");
  if (grid.sigma_eta.rows() != p || grid.sigma_eta.cols() != p)
    throw ValidationError("simex: sigma_eta must be p x p");
}

Mat vandermonde(const std::vector<double>& zetas, int degree) {
  Mat V(zetas.size(), degree + 1);
  for (std::size_t m = 0; m < zetas.size(); ++m) {
    double pw = 1.0;
    for (int j = 0; j <= degree; ++j) {
      V(m, j) = pw;
      pw *= zetas[m];
    }
  }
  return V;
}

}  // namespace

ExtrapolationModel fit_extrapolant(const std::vector<double>& zetas, const Mat& values,
                                   ExtrapolantKind kind) {
  int degree = kind == ExtrapolantKind::quadratic ? 2 : 1;
  int M = static_cast<int>(zetas.size());
  if (values.cols() != M) throw ValidationError("fit_extrapolant: value columns != zeta count");
  if (M < degree + 1)
    throw ValidationError("fit_extrapolant: need at least degree+1 zeta levels");
  Mat V = vandermonde(zetas, degree);
  ExtrapolationModel out;
  out.degree = degree;
  out.zetas = zetas;
  out.coef.resize(degree + 1, values.rows());
  out.residuals.resize(values.rows());
  auto qr = V.householderQr();
  for (int c = 0; c < values.rows(); ++c) {
    Vec y = values.row(c).transpose();
    Vec beta = qr.solve(y);
    out.coef.col(c) = beta;
    out.residuals[c] = (y - V * beta).squaredNorm();
  }
  return out;
}

Vec extrapolate_at(const ExtrapolationModel& m, double zeta) {
  Vec basis(m.degree + 1);
  double pw = 1.0;
  for (int j = 0; j <= m.degree; ++j) {
    basis[j] = pw;
    pw *= zeta;
  }
  return m.coef.transpose() * basis;
}

Vec extrapolation_row(const std::vector<double>& zetas, ExtrapolantKind kind, double at) {
  int degree = kind == ExtrapolantKind::quadratic ? 2 : 1;
  Mat V = vandermonde(zetas, degree);
  Mat D = V.transpose() * V;
  Vec basis(degree + 1);
  double pw = 1.0;
  for (int j = 0; j <= degree; ++j) {
    basis[j] = pw;
    pw *= at;
  }
  // r = basis' D^-1 V': applying the least-squares coefficients at `at`.
  return V * D.ldlt().solve(basis);
}

Mat psd_sqrt(const Mat& sigma) {
  if (sigma.rows() != sigma.cols()) throw ValidationError("sigma_eta must be square");
  double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw ValidationError("sigma_eta must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> es(sigma);
  Vec ev = es.eigenvalues();
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-10 * scale)
      throw ValidationError("sigma_eta must be positive semidefinite");
    ev[i] = ev[i] > 0.0 ? std::sqrt(ev[i]) : 0.0;
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Mat perturb_covariates(const Mat& w, double zeta, const Mat& sqrt_sigma, RngStream& rng) {
  if (zeta < 0.0) throw ValidationError("perturb_covariates: zeta must be nonnegative");
  if (sqrt_sigma.rows() != w.cols())
    throw ValidationError("perturb_covariates: sigma dimension mismatch");
  Mat noise(w.rows(), w.cols());
  for (int i = 0; i < noise.rows(); ++i)
    for (int j = 0; j < noise.cols(); ++j) noise(i, j) = rng.normal();
  return w + std::sqrt(zeta) * noise * sqrt_sigma.transpose();
}

Vec average_over_b(const std::vector<FitResult>& fits, double zeta, double max_drop_frac,
                   std::vector<std::string>* warnings) {
  if (fits.empty()) throw ValidationError("average_over_b: no fits");
  Vec acc = Vec::Zero(fits[0].theta.dim());
  int kept = 0;
  for (std::size_t b = 0; b < fits.size(); ++b) {
    if (!fits[b].converged) {
      if (warnings)
        warnings->push_back("dropped non-converged fit at b=" + std::to_string(b + 1) +
                            ", zeta=" + std::to_string(zeta));
      continue;
    }
    acc += fits[b].theta.stacked();
    ++kept;
  }
  double dropped = 1.0 - static_cast<double>(kept) / fits.size();
  if (kept == 0 || dropped > max_drop_frac)
    throw NumericError("simex: " + std::to_string(static_cast<int>(fits.size()) - kept) + "/" +
                       std::to_string(fits.size()) + " fits failed at zeta=" +
                       std::to_string(zeta) + " (above the drop budget)");
  return acc / kept;
}

Mat SimexResult::w_perturbed(const Sample& s, int b, int m) const {
  return s.w + std::sqrt(grid.zetas[m]) * eta[b];
}

SimexResult run_simex(const Sample& s, Family family, const SimexGrid& grid,
                      std::uint64_t seed, const SimexOptions& opts) {
  check_grid(grid, s.p(), opts.extrapolant);
  const int B = grid.B;
  const int M = static_cast<int>(grid.zetas.size());
  const int dim = s.p() + s.q();
  Mat sq = psd_sqrt(grid.sigma_eta);

  SimexResult res;
  res.grid = grid;
  res.extrapolant = opts.extrapolant;
  res.naive = naive_fit(s, family, opts.gamma_weight, opts.solve);
  if (!res.naive.converged)
    throw NumericError("simex: fit at zeta=0 did not converge (score sup-norm " +
                       std::to_string(res.naive.score_norm) + ")");
  res.fits.assign(B, std::vector<FitResult>(M));
  res.eta.assign(B, Mat());

  // Noise is drawn once per replicate b and shared across the zeta ladder, so
  // each trajectory theta(b, .) is smooth in zeta. Streams are keyed by b alone:
  // thread count cannot affect any draw.
  std::vector<std::vector<std::string>> warn_by_b(B);
  parallel_for(B, opts.threads, [&](int b) {
    RngStream rng = RngStream::from_tags(seed, stream_tag::perturb, static_cast<std::uint64_t>(b));
    res.eta[b] = perturb_covariates(Mat::Zero(s.n(), s.p()), 1.0, sq, rng);
    ParameterVector start = res.naive.theta;
    for (int m = 0; m < M; ++m) {
      if (grid.zetas[m] == 0.0) {
        res.fits[b][m] = res.naive;
        continue;
      }
      Mat wp = s.w + std::sqrt(grid.zetas[m]) * res.eta[b];
      try {
        res.fits[b][m] = solve_theta(s, wp, start, family, opts.gamma_weight, opts.solve);
      } catch (const NumericError& e) {
        res.fits[b][m].converged = false;
        warn_by_b[b].push_back("fit error at b=" + std::to_string(b + 1) + ", zeta=" +
                               std::to_string(grid.zetas[m]) + ": " + e.what());
        continue;
      }
      if (res.fits[b][m].converged) start = res.fits[b][m].theta;
    }
  });
  for (auto& wb : warn_by_b)
    res.warnings.insert(res.warnings.end(), wb.begin(), wb.end());

  res.theta_by_zeta.resize(dim, M);
  res.n_converged.resize(M);
  for (int m = 0; m < M; ++m) {
    std::vector<FitResult> col;
    col.reserve(B);
    int kept = 0;
    for (int b = 0; b < B; ++b) {
      col.push_back(res.fits[b][m]);
      if (res.fits[b][m].converged) ++kept;
    }
    res.theta_by_zeta.col(m) =
        average_over_b(col, grid.zetas[m], opts.max_drop_frac, &res.warnings);
    res.n_converged[m] = kept;
  }

  res.model = fit_extrapolant(grid.zetas, res.theta_by_zeta, opts.extrapolant);
  res.theta_simex = ParameterVector::from_stacked(extrapolate_at(res.model, -1.0), s.p(), s.q());
  return res;
}

StepFunction simex_H(const Sample& s, Family family, const SimexResult& res,
                     const std::vector<double>& t_grid, const SimexOptions& opts) {
  if (t_grid.empty()) throw ValidationError("simex_H: empty evaluation grid");
  if (!std::is_sorted(t_grid.begin(), t_grid.end()))
    throw ValidationError("simex_H: evaluation grid must be sorted");
  const int B = res.grid.B;
  const int M = static_cast<int>(res.grid.zetas.size());
  const int T = static_cast<int>(t_grid.size());
  EventGrid grid = build_event_grid(s);

  // values[b]: M x T matrix of transform levels at theta_simex; NaN marks a
  // failed profile at that (b, zeta).
  std::vector<Mat> values(B);
  parallel_for(B, opts.threads, [&](int b) {
    values[b] = Mat::Constant(M, T, std::numeric_limits<double>::quiet_NaN());
    for (int m = 0; m < M; ++m) {
      Mat wp = res.w_perturbed(s, b, m);
      try {
        StepFunction H =
            solve_profile_H(s, wp, res.theta_simex, family, grid, opts.solve.profile);
        for (int t = 0; t < T; ++t) values[b](m, t) = evaluate_H(H, t_grid[t]);
      } catch (const NumericError&) {
        // dropped below with the same budget rule as the fits
      }
    }
  });

  Mat by_zeta(M, T);
  for (int m = 0; m < M; ++m) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(T);
    int kept = 0;
    for (int b = 0; b < B; ++b) {
      if (std::isnan(values[b](m, 0))) continue;
      acc += values[b].row(m);
      ++kept;
    }
    double dropped = 1.0 - static_cast<double>(kept) / B;
    if (kept == 0 || dropped > opts.max_drop_frac)
      throw NumericError("simex_H: too many failed profiles at zeta=" +
                         std::to_string(res.grid.zetas[m]));
    by_zeta.row(m) = acc / kept;
  }

  Vec row = extrapolation_row(res.grid.zetas, res.extrapolant);
  StepFunction out;
  out.jump_times = t_grid;
  out.values.resize(T);
  double run = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < T; ++t) {
    // Grid points before the first failure are -inf at every zeta; extrapolating
    // them would mix infinities of both signs.
    double v = std::isinf(by_zeta(0, t)) ? by_zeta(0, t) : row.dot(by_zeta.col(t));
    run = std::max(run, v);  // running max restores monotonicity
    out.values[t] = run;
  }
  return out;
}

}  // namespace curesimex
