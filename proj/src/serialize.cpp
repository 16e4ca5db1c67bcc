#include "curesimex/serialize.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "curesimex/errors.hpp"

namespace curesimex {

using nlohmann::json;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path);
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("write failed for " + path);
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
}

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ValidationError(where + " must be a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ValidationError("unknown key \"" + it.key() + "\" in " + where);
    }
  }
}

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError("key \"" + key + "\" has the wrong type");
  }
}

Vec get_vec(const json& obj, const std::string& key, const Vec& fallback) {
  if (!obj.contains(key)) return fallback;
  const auto v = get_or<std::vector<double>>(obj, key, {});
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<int>(i)] = v[i];
  return out;
}

Mat get_mat(const json& obj, const std::string& key) {
  const auto rows = get_or<std::vector<std::vector<double>>>(obj, key, {});
  if (rows.empty()) return Mat();
  Mat out(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) {
      throw ValidationError("key \"" + key + "\" must be a rectangular matrix");
    }
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      out(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
    }
  }
  return out;
}

void parse_solver_block(const json& obj, SolveOptions* solve) {
  if (!obj.contains("solver")) return;
  const json& s = obj.at("solver");
  check_keys(s, {"tolerance", "max_iterations", "max_halvings"}, "solver");
  solve->tol = get_or<double>(s, "tolerance", solve->tol);
  solve->max_iter = get_or<int>(s, "max_iterations", solve->max_iter);
  solve->max_halvings = get_or<int>(s, "max_halvings", solve->max_halvings);
}

json json_vec(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json json_mat(const Mat& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

SimexGrid FitConfig::grid(int p) const {
  SimexGrid g;
  g.zetas = SimexGrid::default_zetas(zeta_max, zeta_step);
  g.B = B;
  if (sigma_eta.size() > 0) {
    if (sigma_eta.rows() != p || sigma_eta.cols() != p) {
      throw ValidationError("sigma_eta matrix must be p x p");
    }
    g.sigma_eta = sigma_eta;
  } else if (sigma_eta_scalar >= 0.0) {
    g.sigma_eta = sigma_eta_scalar * Mat::Identity(p, p);
  } else {
    throw ValidationError("fit config needs sigma_eta (scalar variance or matrix)");
  }
  return g;
}

FitConfig parse_fit_config(const std::string& json_text) {
  const json obj = parse_json_text(json_text);
  check_keys(obj,
             {"model", "zeta_max", "zeta_step", "B", "sigma_eta", "extrapolant", "seed",
              "gamma_weight", "tau", "solver"},
             "fit config");
  FitConfig cfg;
  cfg.family = parse_family(get_or<std::string>(obj, "model", "ph"));
  cfg.zeta_max = get_or<double>(obj, "zeta_max", cfg.zeta_max);
  cfg.zeta_step = get_or<double>(obj, "zeta_step", cfg.zeta_step);
  cfg.B = get_or<int>(obj, "B", cfg.B);
  if (obj.contains("sigma_eta")) {
    if (obj.at("sigma_eta").is_number()) {
      cfg.sigma_eta_scalar = obj.at("sigma_eta").get<double>();
      if (cfg.sigma_eta_scalar < 0.0) throw ValidationError("sigma_eta must be nonnegative");
    } else {
      cfg.sigma_eta = get_mat(obj, "sigma_eta");
    }
  }
  if (obj.contains("extrapolant")) {
    cfg.extrapolant = parse_extrapolant(obj.at("extrapolant").get<std::string>());
  }
  cfg.seed = get_or<std::uint64_t>(obj, "seed", cfg.seed);
  if (obj.contains("gamma_weight")) {
    cfg.gamma_weight = parse_gamma_weight(obj.at("gamma_weight").get<std::string>());
  }
  cfg.tau = get_or<double>(obj, "tau", cfg.tau);
  parse_solver_block(obj, &cfg.solve);
  return cfg;
}

SimulateConfig parse_simulate_config(const std::string& json_text) {
  const json obj = parse_json_text(json_text);
  check_keys(obj,
             {"model", "beta0", "gamma0", "cov_sigma", "sigma_eta", "sigma_is_sd",
              "censoring_rate", "censoring_scope", "censoring_c", "n", "trunc_mean", "tau",
              "seed"},
             "simulate config");
  SimulateConfig out;
  GeneratorConfig& g = out.gen;
  g = GeneratorConfig::study_default(parse_family(get_or<std::string>(obj, "model", "ph")));
  g.theta0.beta = get_vec(obj, "beta0", g.theta0.beta);
  g.theta0.gamma = get_vec(obj, "gamma0", g.theta0.gamma);
  if (obj.contains("cov_sigma")) g.cov_sigma = get_mat(obj, "cov_sigma");
  g.sigma_eta = get_or<double>(obj, "sigma_eta", g.sigma_eta);
  g.sigma_is_sd = get_or<bool>(obj, "sigma_is_sd", g.sigma_is_sd);
  g.censoring_rate = get_or<double>(obj, "censoring_rate", g.censoring_rate);
  if (obj.contains("censoring_scope")) {
    g.censoring_scope = parse_censoring_scope(obj.at("censoring_scope").get<std::string>());
  }
  g.censoring_c = get_or<double>(obj, "censoring_c", g.censoring_c);
  g.n = get_or<int>(obj, "n", g.n);
  g.trunc_mean = get_or<double>(obj, "trunc_mean", g.trunc_mean);
  g.tau = get_or<double>(obj, "tau", g.tau);
  out.seed = get_or<std::uint64_t>(obj, "seed", out.seed);
  return out;
}

StudyConfig parse_study_config(const std::string& json_text) {
  const json obj = parse_json_text(json_text);
  check_keys(obj,
             {"models", "censoring_rates", "sigma2_eta", "censoring_scope", "n", "reps", "B",
              "zeta_max", "zeta_step", "tau", "beta0", "gamma0", "seed"},
             "study config");
  StudyConfig cfg;
  if (obj.contains("models")) {
    cfg.families.clear();
    for (const auto& m : get_or<std::vector<std::string>>(obj, "models", {})) {
      cfg.families.push_back(parse_family(m));
    }
    if (cfg.families.empty()) throw ValidationError("models must not be empty");
  }
  cfg.censoring_rates =
      get_or<std::vector<double>>(obj, "censoring_rates", cfg.censoring_rates);
  cfg.sigma2_eta = get_or<std::vector<double>>(obj, "sigma2_eta", cfg.sigma2_eta);
  if (obj.contains("censoring_scope")) {
    cfg.censoring_scope = parse_censoring_scope(obj.at("censoring_scope").get<std::string>());
  }
  cfg.n = get_or<int>(obj, "n", cfg.n);
  cfg.reps = get_or<int>(obj, "reps", cfg.reps);
  cfg.B = get_or<int>(obj, "B", cfg.B);
  cfg.zeta_max = get_or<double>(obj, "zeta_max", cfg.zeta_max);
  cfg.zeta_step = get_or<double>(obj, "zeta_step", cfg.zeta_step);
  cfg.tau = get_or<double>(obj, "tau", cfg.tau);
  if (!(cfg.tau > 0.0)) throw ValidationError("tau must be positive");
  const Vec beta0 = get_vec(obj, "beta0", Vec());
  const Vec gamma0 = get_vec(obj, "gamma0", Vec());
  if (beta0.size() > 0 || gamma0.size() > 0) {
    if (beta0.size() == 0 || gamma0.size() == 0) {
      throw ValidationError("beta0 and gamma0 must be given together");
    }
    cfg.theta0.beta = beta0;
    cfg.theta0.gamma = gamma0;
  }
  cfg.mc.seed = get_or<std::uint64_t>(obj, "seed", cfg.mc.seed);
  return cfg;
}

std::string fit_output_json(const FitOutput& out) {
  json doc;
  doc["model"] = family_name(out.family);
  doc["seed"] = out.seed;
  doc["n"] = out.n;
  doc["naive"] = {{"beta", json_vec(out.naive.theta.beta)},
                  {"gamma", json_vec(out.naive.theta.gamma)},
                  {"converged", out.naive.converged},
                  {"score_norm", out.naive.score_norm},
                  {"iterations", out.naive.iterations}};
  if (out.simex != nullptr) {
    const SimexResult& r = *out.simex;
    json sx;
    sx["zeta_grid"] = r.grid.zetas;
    sx["B"] = r.grid.B;
    sx["theta_by_zeta"] = json_mat(r.theta_by_zeta);
    sx["n_converged"] = r.n_converged;
    sx["extrapolant"] = r.extrapolant == ExtrapolantKind::quadratic ? "quadratic" : "linear";
    sx["extrapolant_coef"] = json_mat(r.model.coef);
    sx["extrapolant_residuals"] = json_vec(r.model.residuals);
    sx["beta"] = json_vec(r.theta_simex.beta);
    sx["gamma"] = json_vec(r.theta_simex.gamma);
    doc["simex"] = sx;
  }
  doc["estimate"] = json_vec(out.point);
  if (out.has_covariance) {
    doc["covariance"] = json_mat(out.covariance);
    doc["psd_projected"] = out.psd_projected;
    doc["se"] = json_vec(out.wald.se);
    doc["wald_95"] = {{"lower", json_vec(out.wald.lower)}, {"upper", json_vec(out.wald.upper)}};
  }
  if (!out.h_times.empty()) {
    json h;
    h["times"] = out.h_times;
    h["values"] = out.h_values;
    if (out.has_h_variance) h["variance"] = out.h_variance;
    doc["H"] = h;
  }
  doc["warnings"] = out.warnings;
  return doc.dump(2) + "\n";
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::ostringstream os;
  os << "model,cr,sigma_eta,method,coordinate,bias,var,mse,cp,mve,n_fail,flagged\n";
  for (const auto& r : rows) {
    os << r.model << ',' << fmt17(r.cr) << ',' << fmt17(r.sigma_eta) << ',' << r.method << ','
       << r.coordinate << ',' << fmt17(r.bias) << ',' << fmt17(r.var) << ',' << fmt17(r.mse)
       << ',' << fmt17(r.cp) << ',' << fmt17(r.mve) << ',' << r.n_fail << ','
       << (r.flagged ? 1 : 0) << '\n';
  }
  return os.str();
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("metrics file is empty");
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  const std::string header = "model,cr,sigma_eta,method,coordinate,bias,var,mse,cp,mve,n_fail,flagged";
  if (line != header) throw ValidationError("metrics file has an unexpected header");

  const auto to_double = [](const std::string& field, int lineno) {
    const char* c = field.c_str();
    char* end = nullptr;
    const double v = std::strtod(c, &end);
    if (end == c || *end != '\0') {
      throw ValidationError("bad numeric field \"" + field + "\" on line " +
                            std::to_string(lineno));
    }
    return v;
  };

  std::vector<MetricsRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        f.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    f.push_back(cur);
    if (f.size() != 12) {
      throw ValidationError("line " + std::to_string(lineno) + " has " +
                            std::to_string(f.size()) + " fields, expected 12");
    }
    MetricsRow r;
    r.model = f[0];
    r.cr = to_double(f[1], lineno);
    r.sigma_eta = to_double(f[2], lineno);
    r.method = f[3];
    r.coordinate = f[4];
    r.bias = to_double(f[5], lineno);
    r.var = to_double(f[6], lineno);
    r.mse = to_double(f[7], lineno);
    r.cp = to_double(f[8], lineno);
    r.mve = to_double(f[9], lineno);
    r.n_fail = static_cast<int>(to_double(f[10], lineno));
    r.flagged = to_double(f[11], lineno) != 0.0;
    rows.push_back(r);
  }
  return rows;
}

std::string manifest_json(const RunManifest& m) {
  json doc;
  doc["command"] = m.command;
  doc["version"] = m.version;
  doc["seed"] = m.seed;
  doc["threads"] = m.threads;
  if (!m.config_text.empty()) {
    try {
      doc["config"] = json::parse(m.config_text);
    } catch (const json::exception&) {
      doc["config"] = m.config_text;  // keep the raw snapshot if it was not JSON
    }
  }
  doc["inputs"] = m.inputs;
  doc["outputs"] = m.outputs;
  doc["wall_seconds"] = m.wall_seconds;
  doc["warnings"] = m.warnings;
  return doc.dump(2) + "\n";
}

}  // namespace curesimex
