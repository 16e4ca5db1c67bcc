// Command-line front end: simulate | fit | mc | report. Every artifact gets a
// manifest sidecar recording the command, seed, thread count, config snapshot,
// and wall time, so any output can be regenerated exactly.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "curesimex/data.hpp"
#include "curesimex/errors.hpp"
#include "curesimex/estimating.hpp"
#include "curesimex/rng.hpp"
#include "curesimex/serialize.hpp"
#include "curesimex/simex.hpp"
#include "curesimex/simstudy.hpp"
#include "curesimex/variance.hpp"

namespace cs = curesimex;

namespace {

struct GlobalArgs {
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 1;
  bool verbose = false;
};

std::string join_args(int argc, char** argv) {
  std::ostringstream os;
  for (int i = 0; i < argc; ++i) {
    if (i) os << ' ';
    os << argv[i];
  }
  return os.str();
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void note(const GlobalArgs& g, const std::string& msg) {
  if (g.verbose) std::cerr << msg << '\n';
}

// ---------------------------------------------------------------- simulate --

int cmd_simulate(const GlobalArgs& g, const std::string& config_path,
                 const std::string& out_path, bool with_latent, const std::string& command) {
  const auto start = std::chrono::steady_clock::now();
  const std::string config_text = cs::read_text_file(config_path);
  cs::SimulateConfig cfg = cs::parse_simulate_config(config_text);
  if (g.seed_given) cfg.seed = g.seed;

  cs::RunManifest manifest;
  manifest.command = command;
  manifest.seed = cfg.seed;
  manifest.threads = g.threads;
  manifest.config_text = config_text;
  manifest.inputs = {config_path};

  if (!(cfg.gen.censoring_c > 0.0)) {
    cfg.gen.censoring_c = cs::calibrate_censoring(cfg.gen, cfg.seed);
    std::ostringstream os;
    os << "calibrated follow-up window width to " << cfg.gen.censoring_c;
    manifest.warnings.push_back(os.str());
    note(g, os.str());
  }

  cs::RngStream rng = cs::RngStream::from_tags(cfg.seed, cs::stream_tag::generator);
  const cs::GeneratedSample gs = cs::generate_sample(cfg.gen, rng);
  cs::save_sample(gs.sample, out_path, with_latent ? &gs.latent : nullptr);

  manifest.outputs = {out_path};
  manifest.wall_seconds = elapsed_seconds(start);
  cs::write_text_file(out_path + ".manifest.json", cs::manifest_json(manifest));
  note(g, "wrote " + out_path);
  return 0;
}

// --------------------------------------------------------------------- fit --

int cmd_fit(const GlobalArgs& g, const std::string& data_path, const std::string& config_path,
            const std::string& out_path, bool naive_only, bool no_variance, bool h_variance,
            const std::string& command) {
  const auto start = std::chrono::steady_clock::now();
  std::string config_text;
  cs::FitConfig cfg;
  if (!config_path.empty()) {
    config_text = cs::read_text_file(config_path);
    cfg = cs::parse_fit_config(config_text);
  }
  if (g.seed_given) cfg.seed = g.seed;

  cs::Sample sample = cs::load_sample(data_path);
  if (std::isfinite(cfg.tau)) sample = cs::truncate_sample(sample, cfg.tau);
  cs::validate_sample(sample);

  cs::FitOutput out;
  out.family = cfg.family;
  out.seed = cfg.seed;
  out.n = sample.n();

  cs::SimexOptions sim_opts;
  sim_opts.gamma_weight = cfg.gamma_weight;
  sim_opts.extrapolant = cfg.extrapolant;
  sim_opts.solve = cfg.solve;
  sim_opts.threads = g.threads;

  cs::CovarianceOptions cov_opts;
  cov_opts.threads = g.threads;
  cov_opts.gamma_weight = cfg.gamma_weight;
  cov_opts.profile = cfg.solve.profile;

  cs::SimexResult res;
  if (naive_only) {
    note(g, "naive fit only");
    out.naive = cs::naive_fit(sample, cfg.family, cfg.gamma_weight, cfg.solve);
    if (!out.naive.converged) out.warnings.push_back("naive fit did not converge");
    out.point = out.naive.theta.stacked();
    out.h_times = out.naive.H.jump_times;
    out.h_values = out.naive.H.values;
    if (!no_variance && out.naive.converged) {
      const cs::CovarianceResult cov =
          cs::naive_covariance(sample, cfg.family, out.naive, cov_opts);
      out.has_covariance = true;
      out.covariance = cov.cov;
      out.psd_projected = cov.psd_projected;
      out.wald = cs::wald_interval(out.point, cov.cov);
      out.warnings.insert(out.warnings.end(), cov.warnings.begin(), cov.warnings.end());
    }
  } else {
    const cs::SimexGrid grid = cfg.grid(sample.p());
    note(g, "running the perturbation ladder");
    res = cs::run_simex(sample, cfg.family, grid, cfg.seed, sim_opts);
    out.naive = res.naive;
    out.simex = &res;
    out.point = res.theta_simex.stacked();
    out.warnings.insert(out.warnings.end(), res.warnings.begin(), res.warnings.end());

    const cs::EventTimes ev = cs::event_times(sample);
    note(g, "extrapolating the transform");
    const cs::StepFunction H = cs::simex_H(sample, cfg.family, res, ev.times, sim_opts);
    out.h_times = H.jump_times;
    out.h_values = H.values;

    if (!no_variance) {
      note(g, "sandwich variance");
      const cs::CovarianceResult cov = cs::theta_covariance(sample, cfg.family, res, cov_opts);
      out.has_covariance = true;
      out.covariance = cov.cov;
      out.psd_projected = cov.psd_projected;
      out.wald = cs::wald_interval(out.point, cov.cov);
      out.warnings.insert(out.warnings.end(), cov.warnings.begin(), cov.warnings.end());
      if (h_variance) {
        note(g, "transform variance");
        const cs::HCovariance hc =
            cs::H_covariance(sample, cfg.family, res, ev.times, cov_opts);
        out.has_h_variance = true;
        out.h_variance.assign(hc.variance.data(), hc.variance.data() + hc.variance.size());
      }
    }
  }

  cs::write_text_file(out_path, cs::fit_output_json(out));

  cs::RunManifest manifest;
  manifest.command = command;
  manifest.seed = cfg.seed;
  manifest.threads = g.threads;
  manifest.config_text = config_text;
  manifest.inputs = {data_path};
  if (!config_path.empty()) manifest.inputs.push_back(config_path);
  manifest.outputs = {out_path};
  manifest.warnings = out.warnings;
  manifest.wall_seconds = elapsed_seconds(start);
  cs::write_text_file(out_path + ".manifest.json", cs::manifest_json(manifest));
  note(g, "wrote " + out_path);
  return 0;
}

// ---------------------------------------------------------------------- mc --

std::string cell_file(const std::string& dir, int index) {
  std::ostringstream os;
  os << dir << "/cell_" << std::setfill('0') << std::setw(2) << index << ".csv";
  return os.str();
}

int cmd_mc(const GlobalArgs& g, const std::string& config_path, const std::string& out_dir,
           bool full_scale, const std::string& command) {
  const auto start = std::chrono::steady_clock::now();
  std::string config_text;
  cs::StudyConfig cfg;
  if (!config_path.empty()) {
    config_text = cs::read_text_file(config_path);
    cfg = cs::parse_study_config(config_text);
  }
  if (full_scale) {
    cfg.reps = 1000;
    cfg.B = 500;
  }
  if (g.seed_given) cfg.mc.seed = g.seed;
  cfg.mc.threads = g.threads;

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw cs::IoError("cannot create " + out_dir + ": " + ec.message());

  cs::RunManifest manifest;
  manifest.command = command;
  manifest.seed = cfg.mc.seed;
  manifest.threads = g.threads;
  manifest.config_text = config_text;
  if (!config_path.empty()) manifest.inputs = {config_path};

  cs::McOptions mo = cfg.mc;
  mo.reps = cfg.reps;
  std::vector<cs::MetricsRow> all;
  for (const cs::CellPlan& plan : cs::plan_cells(cfg)) {
    const std::string path = cell_file(out_dir, plan.index);
    std::vector<cs::MetricsRow> rows;
    if (std::filesystem::exists(path)) {
      // Finished cells are picked up as-is so an interrupted sweep resumes
      // where it stopped; delete the cell file to force a recompute.
      rows = cs::parse_metrics_csv(cs::read_text_file(path));
      manifest.warnings.push_back("restored " + path);
      note(g, "restored " + path);
    } else {
      note(g, "running cell " + std::to_string(plan.index) + " (" +
                  cs::family_name(plan.gen.family) + ", cr=" +
                  std::to_string(plan.gen.censoring_rate) + ", sigma_eta=" +
                  std::to_string(plan.gen.sigma_eta) + ")");
      rows = cs::run_mc_cell(plan.gen, plan.grid, mo, plan.index, &manifest.warnings);
      cs::write_text_file(path, cs::metrics_csv(rows));
    }
    manifest.outputs.push_back(path);
    all.insert(all.end(), rows.begin(), rows.end());
  }

  const std::string merged = out_dir + "/metrics.csv";
  cs::write_text_file(merged, cs::metrics_csv(all));
  manifest.outputs.push_back(merged);
  manifest.wall_seconds = elapsed_seconds(start);
  cs::write_text_file(out_dir + "/manifest.json", cs::manifest_json(manifest));
  note(g, "wrote " + merged);
  return 0;
}

// ------------------------------------------------------------------ report --

void print_metrics_table(const std::vector<cs::MetricsRow>& rows) {
  std::cout << std::left << std::setw(6) << "model" << std::setw(6) << "cr" << std::setw(10)
            << "sigma_eta" << std::setw(8) << "method" << std::setw(8) << "coord" << std::right
            << std::setw(9) << "bias" << std::setw(9) << "var" << std::setw(9) << "mse"
            << std::setw(7) << "cp" << std::setw(9) << "mve" << std::setw(7) << "fail"
            << std::setw(6) << "flag" << '\n';
  for (const auto& r : rows) {
    std::cout << std::left << std::setw(6) << r.model << std::setw(6)
              << std::setprecision(3) << r.cr << std::setw(10) << r.sigma_eta << std::setw(8)
              << r.method << std::setw(8) << r.coordinate << std::right << std::fixed
              << std::setprecision(3) << std::setw(9) << r.bias << std::setw(9) << r.var
              << std::setw(9) << r.mse << std::setw(7) << r.cp << std::setw(9) << r.mve
              << std::setw(7) << r.n_fail << std::setw(6) << (r.flagged ? "*" : "") << '\n';
    std::cout.unsetf(std::ios::fixed);
  }
}

// Extrapolation traces, one panel per coefficient: averaged estimates on the
// noise grid, the fitted polynomial, and its value carried back to -1.
std::string extrapolation_svg(const nlohmann::json& doc) {
  if (!doc.contains("simex")) {
    throw cs::ValidationError("fit output has no simex block to plot");
  }
  const auto& sx = doc.at("simex");
  const std::vector<double> zetas = sx.at("zeta_grid").get<std::vector<double>>();
  const std::vector<std::vector<double>> traj =
      sx.at("theta_by_zeta").get<std::vector<std::vector<double>>>();
  const std::vector<std::vector<double>> coef =
      sx.at("extrapolant_coef").get<std::vector<std::vector<double>>>();
  const int dim = static_cast<int>(traj.size());
  const int p = static_cast<int>(doc.at("naive").at("beta").size());

  const int width = 640;
  const int panel_h = 220;
  const int margin = 52;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << panel_h * dim << "\" viewBox=\"0 0 " << width << ' ' << panel_h * dim << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  for (int c = 0; c < dim; ++c) {
    const double zmin = -1.0;
    const double zmax = zetas.back();
    // Polynomial values over the drawing range, including the extrapolated end.
    const auto poly = [&](double z) {
      double v = 0.0;
      double zk = 1.0;
      for (std::size_t d = 0; d < coef.size(); ++d) {
        v += coef[d][c] * zk;
        zk *= z;
      }
      return v;
    };
    double lo = poly(zmin);
    double hi = lo;
    for (int i = 0; i <= 100; ++i) {
      const double v = poly(zmin + (zmax - zmin) * i / 100.0);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    for (double v : traj[c]) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double pad = 0.1 * (hi - lo == 0.0 ? 1.0 : hi - lo);
    lo -= pad;
    hi += pad;

    const double y0 = c * panel_h;
    const auto sx_px = [&](double z) {
      return margin + (z - zmin) / (zmax - zmin) * (width - 2 * margin);
    };
    const auto sy_px = [&](double v) {
      return y0 + panel_h - margin - (v - lo) / (hi - lo) * (panel_h - 2 * margin);
    };

    svg << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
    // axes
    svg << "<line x1=\"" << sx_px(zmin) << "\" y1=\"" << sy_px(lo) << "\" x2=\"" << sx_px(zmax)
        << "\" y2=\"" << sy_px(lo) << "\" stroke=\"#444\"/>\n";
    svg << "<line x1=\"" << sx_px(zmin) << "\" y1=\"" << sy_px(lo) << "\" x2=\"" << sx_px(zmin)
        << "\" y2=\"" << sy_px(hi) << "\" stroke=\"#444\"/>\n";
    svg << "<line x1=\"" << sx_px(0.0) << "\" y1=\"" << sy_px(lo) << "\" x2=\"" << sx_px(0.0)
        << "\" y2=\"" << sy_px(hi) << "\" stroke=\"#ccc\" stroke-dasharray=\"3,3\"/>\n";
    const std::string name =
        c < p ? "beta" + std::to_string(c + 1) : "gamma" + std::to_string(c - p + 1);
    svg << "<text x=\"" << margin << "\" y=\"" << y0 + 16 << "\">" << name << "</text>\n";
    svg << "<text x=\"" << sx_px(zmin) - 8 << "\" y=\"" << sy_px(lo) + 14 << "\">-1</text>\n";
    svg << "<text x=\"" << sx_px(zmax) - 8 << "\" y=\"" << sy_px(lo) + 14 << "\">"
        << zetas.back() << "</text>\n";

    // fitted polynomial
    svg << "<path fill=\"none\" stroke=\"#4682b4\" stroke-width=\"1.5\" d=\"";
    for (int i = 0; i <= 100; ++i) {
      const double z = zmin + (zmax - zmin) * i / 100.0;
      svg << (i == 0 ? 'M' : 'L') << sx_px(z) << ' ' << sy_px(poly(z)) << ' ';
    }
    svg << "\"/>\n";
    // averaged estimates
    for (std::size_t m = 0; m < zetas.size(); ++m) {
      svg << "<circle cx=\"" << sx_px(zetas[m]) << "\" cy=\"" << sy_px(traj[c][m])
          << "\" r=\"3\" fill=\"#222\"/>\n";
    }
    // extrapolated value
    svg << "<circle cx=\"" << sx_px(-1.0) << "\" cy=\"" << sy_px(poly(-1.0))
        << "\" r=\"4\" fill=\"#d62728\"/>\n";
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

int cmd_report(const std::string& metrics_path, const std::string& fit_path,
               const std::string& svg_path) {
  if (!metrics_path.empty()) {
    print_metrics_table(cs::parse_metrics_csv(cs::read_text_file(metrics_path)));
    return 0;
  }
  if (fit_path.empty()) {
    throw cs::ValidationError("report needs --metrics or --fit");
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(cs::read_text_file(fit_path));
  } catch (const nlohmann::json::exception& e) {
    throw cs::ValidationError(std::string("fit output is not valid JSON: ") + e.what());
  }
  const std::string svg = extrapolation_svg(doc);
  if (svg_path.empty()) {
    std::cout << svg;
  } else {
    cs::write_text_file(svg_path, svg);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cure-rate transformation models with mismeasured covariates"};
  app.set_version_flag("--version", "0.1.0");
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--seed", g.seed, "master seed (overrides any config seed)");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--verbose", g.verbose, "progress notes on stderr");

  auto* sim = app.add_subcommand("simulate", "generate a dataset");
  sim->fallthrough();
  std::string sim_config, sim_out;
  bool sim_latent = false;
  sim->add_option("--config", sim_config, "generator config (JSON)")->required();
  sim->add_option("--out", sim_out, "output CSV path")->required();
  sim->add_flag("--latent", sim_latent, "include the latent covariate columns");

  auto* fit = app.add_subcommand("fit", "fit one dataset");
  fit->fallthrough();
  std::string fit_data, fit_config, fit_out;
  bool fit_naive_only = false, fit_no_var = false, fit_h_var = false;
  fit->add_option("--data", fit_data, "input CSV")->required();
  fit->add_option("--config", fit_config, "fit config (JSON)");
  fit->add_option("--out", fit_out, "output JSON path")->required();
  fit->add_flag("--naive-only", fit_naive_only, "skip the bias correction");
  fit->add_flag("--no-variance", fit_no_var, "skip the sandwich variance");
  fit->add_flag("--h-variance", fit_h_var, "also estimate the transform variance");

  auto* mc = app.add_subcommand("mc", "run the simulation study");
  mc->fallthrough();
  std::string mc_config, mc_dir;
  bool mc_full = false;
  mc->add_option("--config", mc_config, "study config (JSON)");
  mc->add_option("--out-dir", mc_dir, "output directory")->required();
  mc->add_flag("--full-scale", mc_full, "1000 replicates with B=500");

  auto* rep = app.add_subcommand("report", "summarize results");
  rep->fallthrough();
  std::string rep_metrics, rep_fit, rep_svg;
  rep->add_option("--metrics", rep_metrics, "metrics CSV to tabulate");
  rep->add_option("--fit", rep_fit, "fit output JSON to plot");
  rep->add_option("--svg", rep_svg, "SVG output path (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  g.seed_given = app.count("--seed") > 0;
  const std::string command = join_args(argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(g, sim_config, sim_out, sim_latent, command);
    if (fit->parsed()) {
      return cmd_fit(g, fit_data, fit_config, fit_out, fit_naive_only, fit_no_var, fit_h_var,
                     command);
    }
    if (mc->parsed()) return cmd_mc(g, mc_config, mc_dir, mc_full, command);
    if (rep->parsed()) return cmd_report(rep_metrics, rep_fit, rep_svg);
  } catch (const cs::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
