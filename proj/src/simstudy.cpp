#include "curesimex/simstudy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Dense>

#include "curesimex/errors.hpp"
#include "curesimex/links.hpp"
#include "curesimex/parallel.hpp"

namespace curesimex {

CensoringScope parse_censoring_scope(const std::string& s) {
  if (s == "uncured") return CensoringScope::uncured;
  if (s == "overall") return CensoringScope::overall;
  throw ValidationError("censoring_scope must be \"uncured\" or \"overall\"");
}

std::string censoring_scope_name(CensoringScope scope) {
  return scope == CensoringScope::uncured ? "uncured" : "overall";
}

GeneratorConfig GeneratorConfig::study_default(Family family) {
  GeneratorConfig cfg;
  cfg.family = family;
  cfg.theta0.beta = Vec::Constant(1, 1.0);
  cfg.theta0.gamma = Vec::Constant(1, 1.0);
  cfg.cov_sigma = Mat(2, 2);
  cfg.cov_sigma << 4.0, 0.7, 0.7, 3.0;
  return cfg;
}

namespace {

constexpr long kProposalBudget = 1000000;

double eta_sd(const GeneratorConfig& cfg) {
  if (cfg.sigma_eta < 0.0) throw ValidationError("sigma_eta must be nonnegative");
  return cfg.sigma_is_sd ? cfg.sigma_eta : std::sqrt(cfg.sigma_eta);
}

Mat cov_chol(const GeneratorConfig& cfg) {
  const int d = static_cast<int>(cfg.theta0.dim());
  Mat sigma = cfg.cov_sigma;
  if (sigma.size() == 0 && d == 2) {
    sigma = GeneratorConfig::study_default(cfg.family).cov_sigma;
  }
  if (sigma.rows() != d || sigma.cols() != d) {
    throw ValidationError("cov_sigma must be square with one row per covariate");
  }
  Eigen::LLT<Mat> llt(sigma);
  if (llt.info() != Eigen::Success) {
    throw ValidationError("cov_sigma must be positive definite");
  }
  return llt.matrixL();
}

// One accepted subject before censoring: latent covariates, susceptibility,
// failure time (infinite for the cured), entry time, and the uniform that will
// scale into the follow-up window.
struct LatentDraw {
  Vec x;
  Vec z;
  int susceptible = 0;
  double tstar = 0.0;
  double a = 0.0;
  double u_follow = 0.0;
};

LatentDraw draw_accepted(const GeneratorConfig& cfg, const Mat& chol_l, RngStream& rng) {
  const int p = static_cast<int>(cfg.theta0.beta.size());
  const int q = static_cast<int>(cfg.theta0.gamma.size());
  const double inf = std::numeric_limits<double>::infinity();

  for (long attempt = 0; attempt < kProposalBudget; ++attempt) {
    Vec g(p + q);
    for (int j = 0; j < p + q; ++j) g[j] = rng.normal();
    const Vec latent = chol_l * g;
    LatentDraw d;
    d.x = latent.head(p);
    d.z = latent.tail(q);
    d.susceptible = rng.bernoulli(link_G(d.z.dot(cfg.theta0.gamma))) ? 1 : 0;
    d.tstar = inf;
    if (d.susceptible) {
      const double u = rng.uniform();
      // Error scale: unit extreme-value for the exponential cumulative hazard,
      // standard logistic for the odds form.
      const double eps =
          cfg.family == Family::ph ? std::log(-std::log(u)) : std::log((1.0 - u) / u);
      d.tstar = std::exp(eps - d.x.dot(cfg.theta0.beta));
    }
    d.a = rng.exponential(cfg.trunc_mean);
    if (d.a >= cfg.tau) continue;   // entered after the horizon: unobservable
    if (d.tstar < d.a) continue;    // failed before entry: truncated away
    d.u_follow = rng.uniform();
    return d;
  }
  throw NumericError("proposal budget exhausted while sampling a truncated subject");
}

bool is_event(const LatentDraw& d, double c, double tau) {
  return d.susceptible && d.tstar <= d.a + d.u_follow * c && d.tstar <= tau;
}

}  // namespace

GeneratedSample generate_sample(const GeneratorConfig& cfg, RngStream& rng) {
  if (cfg.n < 1) throw ValidationError("sample size must be positive");
  if (!(cfg.censoring_c > 0.0)) {
    throw ValidationError("generate_sample needs a resolved follow-up window width");
  }
  const int p = static_cast<int>(cfg.theta0.beta.size());
  const int q = static_cast<int>(cfg.theta0.gamma.size());
  const Mat chol_l = cov_chol(cfg);
  const double sd = eta_sd(cfg);

  GeneratedSample out;
  out.sample.y = Vec::Zero(cfg.n);
  out.sample.a = Vec::Zero(cfg.n);
  out.sample.delta.assign(cfg.n, 0);
  out.sample.w = Mat::Zero(cfg.n, p);
  out.sample.z = Mat::Zero(cfg.n, q);
  out.latent.x = Mat::Zero(cfg.n, p);
  out.latent.susceptible.assign(cfg.n, 0);
  out.latent.tstar = Vec::Zero(cfg.n);

  for (int i = 0; i < cfg.n; ++i) {
    const LatentDraw d = draw_accepted(cfg, chol_l, rng);
    const double follow = d.a + d.u_follow * cfg.censoring_c;
    double y = std::min(d.tstar, follow);
    int delta = d.tstar <= follow ? 1 : 0;
    if (y > cfg.tau) {
      y = cfg.tau;
      delta = 0;
    }
    out.sample.y[i] = y;
    out.sample.a[i] = d.a;
    out.sample.delta[i] = delta;
    for (int j = 0; j < p; ++j) out.sample.w(i, j) = d.x[j] + sd * rng.normal();
    out.sample.z.row(i) = d.z.transpose();
    out.latent.x.row(i) = d.x.transpose();
    out.latent.susceptible[i] = d.susceptible;
    out.latent.tstar[i] = d.tstar;
  }
  return out;
}

double calibrate_censoring(const GeneratorConfig& cfg, std::uint64_t seed, int n_pool,
                           double tol) {
  if (n_pool < 100) throw ValidationError("calibration pool is too small");
  if (!(cfg.censoring_rate > 0.0 && cfg.censoring_rate < 1.0)) {
    throw ValidationError("target censoring rate must be inside (0, 1)");
  }
  const Mat chol_l = cov_chol(cfg);
  RngStream rng = RngStream::from_tags(seed, stream_tag::calibrate);
  std::vector<LatentDraw> pool;
  pool.reserve(n_pool);
  for (int i = 0; i < n_pool; ++i) pool.push_back(draw_accepted(cfg, chol_l, rng));

  int n_susc = 0;
  for (const auto& d : pool) n_susc += d.susceptible;
  if (cfg.censoring_scope == CensoringScope::uncured && n_susc == 0) {
    throw ValidationError("no susceptible subjects in the calibration pool");
  }

  // Shared draws make this exactly nonincreasing in c, so bisection is safe.
  const auto rate = [&](double c) {
    int events = 0;
    for (const auto& d : pool) events += is_event(d, c, cfg.tau) ? 1 : 0;
    const int denom = cfg.censoring_scope == CensoringScope::uncured ? n_susc : n_pool;
    const int censored = denom - events;
    return static_cast<double>(censored) / denom;
  };

  double lo = 1e-3;
  double hi = 1e3;
  const double target = cfg.censoring_rate;
  const double r_lo = rate(lo);
  const double r_hi = rate(hi);
  std::ostringstream msg;
  if (target > r_lo + tol) {
    msg << "target censoring rate " << target << " is above the achievable ceiling " << r_lo;
    throw ValidationError(msg.str());
  }
  if (target < r_hi - tol) {
    msg << "target censoring rate " << target << " is below the achievable floor " << r_hi
        << " under scope \"" << censoring_scope_name(cfg.censoring_scope) << "\"";
    throw ValidationError(msg.str());
  }

  double c = hi;
  for (int it = 0; it < 200; ++it) {
    c = 0.5 * (lo + hi);
    const double r = rate(c);
    if (std::abs(r - target) <= 0.5 * tol) return c;
    if (r > target) {
      lo = c;  // too much censoring: widen the window
    } else {
      hi = c;
    }
  }
  if (std::abs(rate(c) - target) <= tol) return c;
  msg << "censoring calibration did not reach " << target << " within tolerance " << tol;
  throw NumericError(msg.str());
}

namespace {

constexpr int kMethods = 3;
const char* kMethodNames[kMethods] = {"simex", "naive", "oracle"};

struct RepOutcome {
  bool ok[kMethods] = {false, false, false};
  Vec est[kMethods];
  bool var_ok[kMethods] = {false, false, false};
  Vec vdiag[kMethods];
  std::vector<std::string> warnings;
};

std::string coord_name(int j, int p) {
  if (j < p) return "beta" + std::to_string(j + 1);
  return "gamma" + std::to_string(j - p + 1);
}

}  // namespace

std::vector<MetricsRow> run_mc_cell(const GeneratorConfig& cfg, const SimexGrid& grid,
                                    const McOptions& opts, int cell_index,
                                    std::vector<std::string>* warnings) {
  GeneratorConfig gen = cfg;
  if (!(gen.censoring_c > 0.0)) {
    gen.censoring_c = calibrate_censoring(gen, opts.seed, opts.calib_pool);
  }
  const int p = static_cast<int>(gen.theta0.beta.size());
  const int q = static_cast<int>(gen.theta0.gamma.size());
  const int dim = p + q;
  const Vec truth = gen.theta0.stacked();

  // Replicates are embarrassingly parallel; every stream is keyed by
  // (seed, cell, replicate), so the schedule cannot change the draws.
  SimexOptions sim_opts = opts.simex;
  sim_opts.threads = 1;
  CovarianceOptions cov_opts = opts.covariance;
  cov_opts.threads = 1;
  cov_opts.gamma_weight = sim_opts.gamma_weight;

  std::vector<RepOutcome> outcomes(opts.reps);
  parallel_for(opts.reps, opts.threads, [&](int r) {
    RepOutcome& out = outcomes[r];
    RngStream rng = RngStream::from_tags(opts.seed, stream_tag::mc_cell,
                                         static_cast<std::uint64_t>(cell_index),
                                         static_cast<std::uint64_t>(r));
    const GeneratedSample gs = generate_sample(gen, rng);

    // simex
    try {
      const std::uint64_t sim_seed =
          mix64(mix64(mix64(opts.seed ^ stream_tag::perturb) ^
                      static_cast<std::uint64_t>(cell_index)) ^
                static_cast<std::uint64_t>(r));
      const SimexResult res = run_simex(gs.sample, gen.family, grid, sim_seed, sim_opts);
      out.est[0] = res.theta_simex.stacked();
      out.ok[0] = true;
      try {
        const CovarianceResult cov = theta_covariance(gs.sample, gen.family, res, cov_opts);
        out.vdiag[0] = cov.cov.diagonal();
        out.var_ok[0] = true;
      } catch (const Error& e) {
        out.warnings.push_back("rep " + std::to_string(r) + " simex variance: " + e.what());
      }
    } catch (const Error& e) {
      out.warnings.push_back("rep " + std::to_string(r) + " simex: " + e.what());
    }

    // naive
    try {
      const FitResult fit = naive_fit(gs.sample, gen.family, sim_opts.gamma_weight,
                                      sim_opts.solve);
      if (fit.converged) {
        out.est[1] = fit.theta.stacked();
        out.ok[1] = true;
        try {
          const CovarianceResult cov = naive_covariance(gs.sample, gen.family, fit, cov_opts);
          out.vdiag[1] = cov.cov.diagonal();
          out.var_ok[1] = true;
        } catch (const Error& e) {
          out.warnings.push_back("rep " + std::to_string(r) + " naive variance: " + e.what());
        }
      }
    } catch (const Error& e) {
      out.warnings.push_back("rep " + std::to_string(r) + " naive: " + e.what());
    }

    // oracle: latent covariates stand in for the observed ones
    try {
      const FitResult fit =
          solve_theta(gs.sample, gs.latent.x, ParameterVector::zeros(p, q), gen.family,
                      sim_opts.gamma_weight, sim_opts.solve);
      if (fit.converged) {
        out.est[2] = fit.theta.stacked();
        out.ok[2] = true;
        try {
          const CovarianceResult cov =
              plain_covariance(gs.sample, gs.latent.x, gen.family, fit, cov_opts);
          out.vdiag[2] = cov.cov.diagonal();
          out.var_ok[2] = true;
        } catch (const Error& e) {
          out.warnings.push_back("rep " + std::to_string(r) + " oracle variance: " + e.what());
        }
      }
    } catch (const Error& e) {
      out.warnings.push_back("rep " + std::to_string(r) + " oracle: " + e.what());
    }
  });

  if (warnings) {
    std::size_t kept = 0;
    for (const auto& out : outcomes) {
      for (const auto& w : out.warnings) {
        if (kept == 100) {
          warnings->push_back("(further replicate warnings suppressed)");
          break;
        }
        warnings->push_back(w);
        ++kept;
      }
      if (kept == 100) break;
    }
  }

  constexpr double z = 1.959964;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<MetricsRow> rows;
  for (int m = 0; m < kMethods; ++m) {
    Mat ests(opts.reps, dim);
    Mat vars(opts.reps, dim);
    int n_ok = 0;
    int n_var = 0;
    for (const auto& out : outcomes) {
      if (out.ok[m]) ests.row(n_ok++) = out.est[m].transpose();
      if (out.ok[m] && out.var_ok[m]) vars.row(n_var) = out.vdiag[m].transpose(), ++n_var;
    }
    // Coverage pairs the estimate with its own variance, so both must exist.
    Mat cov_est(n_var, dim);
    int idx = 0;
    for (const auto& out : outcomes) {
      if (out.ok[m] && out.var_ok[m]) cov_est.row(idx++) = out.est[m].transpose();
    }

    for (int j = 0; j < dim; ++j) {
      MetricsRow row;
      row.model = family_name(gen.family);
      row.cr = gen.censoring_rate;
      row.sigma_eta = gen.sigma_eta;
      row.method = kMethodNames[m];
      row.coordinate = coord_name(j, p);
      row.n_fail = opts.reps - n_ok;
      row.flagged = row.n_fail > 0.1 * opts.reps;
      if (n_ok >= 1) {
        const double mean = ests.col(j).head(n_ok).mean();
        row.bias = mean - truth[j];
        row.mse = (ests.col(j).head(n_ok).array() - truth[j]).square().sum() / n_ok;
        row.var = n_ok >= 2
                      ? (ests.col(j).head(n_ok).array() - mean).square().sum() / (n_ok - 1)
                      : nan;
      } else {
        row.bias = nan;
        row.var = nan;
        row.mse = nan;
      }
      if (n_var >= 1) {
        int covered = 0;
        for (int r2 = 0; r2 < n_var; ++r2) {
          const double se = std::sqrt(std::max(0.0, vars(r2, j)));
          if (std::abs(cov_est(r2, j) - truth[j]) <= z * se) ++covered;
        }
        row.cp = static_cast<double>(covered) / n_var;
        row.mve = vars.col(j).head(n_var).mean();
      } else {
        row.cp = nan;
        row.mve = nan;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<CellPlan> plan_cells(const StudyConfig& cfg) {
  std::vector<CellPlan> plans;
  int cell_index = 0;
  for (Family family : cfg.families) {
    for (double cr : cfg.censoring_rates) {
      for (double s2 : cfg.sigma2_eta) {
        CellPlan plan;
        plan.gen = GeneratorConfig::study_default(family);
        if (cfg.theta0.dim() > 0) plan.gen.theta0 = cfg.theta0;
        plan.gen.n = cfg.n;
        plan.gen.censoring_rate = cr;
        plan.gen.censoring_scope = cfg.censoring_scope;
        plan.gen.tau = cfg.tau;
        plan.gen.sigma_eta = s2;

        plan.grid.zetas = SimexGrid::default_zetas(cfg.zeta_max, cfg.zeta_step);
        plan.grid.B = cfg.B;
        plan.grid.sigma_eta =
            s2 * Mat::Identity(plan.gen.theta0.beta.size(), plan.gen.theta0.beta.size());
        plan.index = cell_index++;
        plans.push_back(plan);
      }
    }
  }
  return plans;
}

std::vector<MetricsRow> run_mc(const StudyConfig& cfg, std::vector<std::string>* warnings) {
  std::vector<MetricsRow> rows;
  McOptions mo = cfg.mc;
  mo.reps = cfg.reps;
  for (const CellPlan& plan : plan_cells(cfg)) {
    std::vector<MetricsRow> cell = run_mc_cell(plan.gen, plan.grid, mo, plan.index, warnings);
    rows.insert(rows.end(), cell.begin(), cell.end());
  }
  return rows;
}

}  // namespace curesimex
