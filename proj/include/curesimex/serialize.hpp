#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "curesimex/estimating.hpp"
#include "curesimex/simex.hpp"
#include "curesimex/simstudy.hpp"
#include "curesimex/variance.hpp"

namespace curesimex {

// Whole-file text IO; both raise IoError with the path on failure.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Estimation settings as read from a JSON config. sigma_eta may be given as a
// scalar (isotropic error variance) or a full matrix; grid() resolves it once
// the covariate dimension is known.
struct FitConfig {
  Family family = Family::ph;
  double zeta_max = 2.0;
  double zeta_step = 0.25;
  int B = 50;
  double sigma_eta_scalar = -1.0;
  Mat sigma_eta;
  ExtrapolantKind extrapolant = ExtrapolantKind::quadratic;
  std::uint64_t seed = 1;
  GammaWeight gamma_weight = GammaWeight::z;
  double tau = std::numeric_limits<double>::infinity();
  SolveOptions solve;

  SimexGrid grid(int p) const;
};

FitConfig parse_fit_config(const std::string& json_text);

struct SimulateConfig {
  GeneratorConfig gen;
  std::uint64_t seed = 1;
};

SimulateConfig parse_simulate_config(const std::string& json_text);

StudyConfig parse_study_config(const std::string& json_text);

// Everything the fit subcommand reports. The simex block is optional (naive-only
// runs) and borrowed, not owned.
struct FitOutput {
  Family family = Family::ph;
  std::uint64_t seed = 0;
  int n = 0;
  FitResult naive;
  const SimexResult* simex = nullptr;
  bool has_covariance = false;
  Mat covariance;
  bool psd_projected = false;
  WaldInterval wald;
  Vec point;  // stacked coefficients the intervals are centered on
  std::vector<double> h_times;
  std::vector<double> h_values;
  bool has_h_variance = false;
  std::vector<double> h_variance;
  std::vector<std::string> warnings;
};

std::string fit_output_json(const FitOutput& out);

// Metrics table round-trip. Numbers are %.17g so a reread compares bitwise.
std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

// Reproducibility sidecar written next to every artifact.
struct RunManifest {
  std::string command;
  std::string version = "0.1.0";
  std::uint64_t seed = 0;
  int threads = 1;
  std::string config_text;  // raw config snapshot; empty when none was given
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double wall_seconds = 0.0;
  std::vector<std::string> warnings;
};

std::string manifest_json(const RunManifest& m);

}  // namespace curesimex
