#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "curesimex/data.hpp"
#include "curesimex/rng.hpp"
#include "curesimex/simex.hpp"
#include "curesimex/types.hpp"
#include "curesimex/variance.hpp"

namespace curesimex {

// Whether the target censoring fraction counts all subjects or only the
// susceptible ones. Overall rates below the cured fraction are unreachable,
// since a subject that never fails can only end censored.
enum class CensoringScope { uncured, overall };

CensoringScope parse_censoring_scope(const std::string& s);
std::string censoring_scope_name(CensoringScope scope);

struct GeneratorConfig {
  Family family = Family::ph;
  ParameterVector theta0;  // truth; also fixes p and q
  Mat cov_sigma;           // (p+q) x (p+q) joint covariance of the latent covariates
  double sigma_eta = 0.5;  // measurement error size, variance unless sigma_is_sd
  bool sigma_is_sd = false;
  double censoring_rate = 0.25;
  CensoringScope censoring_scope = CensoringScope::uncured;
  double censoring_c = -1.0;  // upper end of the follow-up window; <= 0 means calibrate
  int n = 200;
  double trunc_mean = 1.0;  // exponential mean of the entry time
  double tau = std::numeric_limits<double>::infinity();  // administrative horizon

  static GeneratorConfig study_default(Family family);
};

struct GeneratedSample {
  Sample sample;
  LatentRecord latent;
};

// Rejection sampler over the entry-time condition: a draw is kept when the
// (possibly cured) subject is still at risk at its entry time and the entry
// time is inside the horizon. Proposal budget is 1e6 per subject.
GeneratedSample generate_sample(const GeneratorConfig& cfg, RngStream& rng);

// Root-find the follow-up window width that hits the target censoring fraction
// to +-tol, using one shared pool of latent draws so the rate is exactly
// monotone in the width.
double calibrate_censoring(const GeneratorConfig& cfg, std::uint64_t seed, int n_pool = 100000,
                           double tol = 0.005);

struct MetricsRow {
  std::string model;
  double cr = 0.0;
  double sigma_eta = 0.0;
  std::string method;
  std::string coordinate;
  double bias = 0.0;
  double var = 0.0;
  double mse = 0.0;
  double cp = 0.0;   // Wald coverage of the truth
  double mve = 0.0;  // mean of the estimated variances
  int n_fail = 0;
  bool flagged = false;  // more than 10% of replicates failed
};

struct McOptions {
  int reps = 200;
  int threads = 1;
  std::uint64_t seed = 1;
  SimexOptions simex;
  CovarianceOptions covariance;
  int calib_pool = 100000;
};

// One design cell: simex, naive, and latent-covariate oracle estimators over
// `reps` generated datasets; one metrics row per method and coordinate.
std::vector<MetricsRow> run_mc_cell(const GeneratorConfig& cfg, const SimexGrid& grid,
                                    const McOptions& opts, int cell_index,
                                    std::vector<std::string>* warnings = nullptr);

struct StudyConfig {
  std::vector<Family> families{Family::ph, Family::po};
  std::vector<double> censoring_rates{0.25, 0.50};
  std::vector<double> sigma2_eta{0.50, 0.75};
  CensoringScope censoring_scope = CensoringScope::uncured;
  int n = 200;
  int reps = 200;
  int B = 50;
  double zeta_max = 2.0;
  double zeta_step = 0.25;
  double tau = std::numeric_limits<double>::infinity();  // administrative follow-up cutoff
  ParameterVector theta0;  // empty means the study default (beta 1, gamma 1)
  McOptions mc;
};

// One planned cell of the factorial sweep; index feeds the per-cell stream tags.
struct CellPlan {
  GeneratorConfig gen;
  SimexGrid grid;
  int index = 0;
};

// Family-major, then censoring rate, then measurement error size. The order is
// part of the reproducibility contract: it fixes each cell's stream index.
std::vector<CellPlan> plan_cells(const StudyConfig& cfg);

std::vector<MetricsRow> run_mc(const StudyConfig& cfg,
                               std::vector<std::string>* warnings = nullptr);

}  // namespace curesimex
