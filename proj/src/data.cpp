#include "curesimex/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace curesimex {

Sample make_sample(const std::vector<Subject>& rows) {
  if (rows.empty()) throw ValidationError("make_sample: empty subject list");
  int n = static_cast<int>(rows.size());
  int p = static_cast<int>(rows[0].w.size());
  int q = static_cast<int>(rows[0].z.size());
  Sample s;
  s.y.resize(n);
  s.a.resize(n);
  s.delta.resize(n);
  s.w.resize(n, p);
  s.z.resize(n, q);
  for (int i = 0; i < n; ++i) {
    if (rows[i].w.size() != p || rows[i].z.size() != q)
      throw ValidationError("make_sample: covariate width differs at row " + std::to_string(i + 1));
    s.y[i] = rows[i].y;
    s.a[i] = rows[i].a;
    s.delta[i] = rows[i].delta;
    s.w.row(i) = rows[i].w.transpose();
    s.z.row(i) = rows[i].z.transpose();
  }
  validate_sample(s);
  return s;
}

void validate_sample(const Sample& s) {
  std::vector<std::string> bad;
  int n_events = 0;
  for (int i = 0; i < s.n(); ++i) {
    std::string why;
    if (!std::isfinite(s.y[i]) || !std::isfinite(s.a[i]))
      why = "non-finite y or a";
    else if (s.a[i] < 0.0)
      why = "a < 0";
    else if (s.a[i] > s.y[i])
      why = "a > y";
    else if (s.delta[i] != 0 && s.delta[i] != 1)
      why = "delta not in {0,1}";
    else if (!s.w.row(i).allFinite() || !s.z.row(i).allFinite())
      why = "non-finite covariate";
    if (!why.empty()) bad.push_back("row " + std::to_string(i + 1) + ": " + why);
    if (s.delta[i] == 1) ++n_events;
  }
  if (!bad.empty()) {
    std::string msg = "invalid sample:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ValidationError(msg);
  }
  if (n_events == 0)
    throw ValidationError("sample has no observed failures; baseline transform is not estimable");
}

EventTimes event_times(const Sample& s) {
  std::vector<double> t;
  for (int i = 0; i < s.n(); ++i)
    if (s.delta[i] == 1) t.push_back(s.y[i]);
  if (t.empty())
    throw ValidationError("event_times: sample has no observed failures");
  std::sort(t.begin(), t.end());
  EventTimes out;
  for (double v : t) {
    if (!out.times.empty() && v == out.times.back())
      ++out.mult.back();
    else {
      out.times.push_back(v);
      out.mult.push_back(1);
    }
  }
  return out;
}

EventGrid build_event_grid(const Sample& s) {
  EventTimes et = event_times(s);
  EventGrid g;
  g.times = et.times;
  g.mult = et.mult;
  int K = static_cast<int>(g.times.size());
  g.risk.resize(K);
  g.events.resize(K);
  for (int k = 0; k < K; ++k) {
    double t = g.times[k];
    for (int i = 0; i < s.n(); ++i) {
      if (at_risk(s, i, t)) g.risk[k].push_back(i);
      if (s.delta[i] == 1 && s.y[i] == t) g.events[k].push_back(i);
    }
  }
  g.y_index.resize(s.n());
  for (int i = 0; i < s.n(); ++i) {
    auto it = std::upper_bound(g.times.begin(), g.times.end(), s.y[i]);
    g.y_index[i] = static_cast<int>(it - g.times.begin());
  }
  return g;
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

bool parse_double(const std::string& s, double* out) {
  const char* c = s.c_str();
  char* end = nullptr;
  *out = std::strtod(c, &end);
  return end != c && *end == '\0';
}

}  // namespace

Sample load_sample(const std::string& path, LatentRecord* latent_out) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path + ": empty file");
  auto header = split_csv_line(line);

  // Header layout: y,a,delta,w1..wp,z1..zq[,x1..xp,susceptible,tstar]
  if (header.size() < 5 || header[0] != "y" || header[1] != "a" || header[2] != "delta")
    throw ValidationError(path + ": header must start with y,a,delta");
  std::size_t pos = 3;
  int p = 0, q = 0, px = 0;
  while (pos < header.size() && header[pos] == "w" + std::to_string(p + 1)) ++p, ++pos;
  while (pos < header.size() && header[pos] == "z" + std::to_string(q + 1)) ++q, ++pos;
  while (pos < header.size() && header[pos] == "x" + std::to_string(px + 1)) ++px, ++pos;
  bool has_latent = px > 0;
  if (has_latent) {
    if (px != p || pos + 2 != header.size() || header[pos] != "susceptible" ||
        header[pos + 1] != "tstar")
      throw ValidationError(path + ": malformed latent columns (expected x1..xp,susceptible,tstar)");
    pos += 2;
  }
  if (p < 1 || q < 1 || pos != header.size())
    throw ValidationError(path + ": header must be y,a,delta,w1..wp,z1..zq");

  std::vector<Subject> rows;
  std::vector<std::string> bad;
  LatentRecord latent;
  std::vector<Vec> xrows;
  std::vector<double> tstars;
  std::size_t width = header.size();
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != width) {
      bad.push_back("row " + std::to_string(lineno) + ": expected " + std::to_string(width) +
                    " fields, got " + std::to_string(cells.size()));
      continue;
    }
    std::vector<double> v(cells.size());
    bool ok = true;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (!parse_double(cells[j], &v[j])) {
        bad.push_back("row " + std::to_string(lineno) + ": field '" + cells[j] + "' is not numeric");
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    Subject sub;
    sub.y = v[0];
    sub.a = v[1];
    sub.delta = static_cast<int>(v[2]);
    if (v[2] != 0.0 && v[2] != 1.0)
      bad.push_back("row " + std::to_string(lineno) + ": delta must be 0 or 1");
    sub.w = Eigen::Map<const Vec>(v.data() + 3, p);
    sub.z = Eigen::Map<const Vec>(v.data() + 3 + p, q);
    rows.push_back(std::move(sub));
    if (has_latent) {
      xrows.push_back(Eigen::Map<const Vec>(v.data() + 3 + p + q, p));
      latent.susceptible.push_back(static_cast<int>(v[3 + 2 * p + q]));
      tstars.push_back(v[3 + 2 * p + q + 1]);
    }
  }
  if (!bad.empty()) {
    std::string msg = path + ": malformed rows:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw ValidationError(msg);
  }
  Sample s = make_sample(rows);
  if (has_latent && latent_out) {
    latent.x.resize(s.n(), p);
    latent.tstar.resize(s.n());
    for (int i = 0; i < s.n(); ++i) {
      latent.x.row(i) = xrows[i].transpose();
      latent.tstar[i] = tstars[i];
    }
    *latent_out = std::move(latent);
  }
  return s;
}

void save_sample(const Sample& s, const std::string& path, const LatentRecord* latent) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "y,a,delta";
  for (int j = 0; j < s.p(); ++j) out << ",w" << j + 1;
  for (int j = 0; j < s.q(); ++j) out << ",z" << j + 1;
  if (latent) {
    for (int j = 0; j < s.p(); ++j) out << ",x" << j + 1;
    out << ",susceptible,tstar";
  }
  out << "\n";
  for (int i = 0; i < s.n(); ++i) {
    out << fmt17(s.y[i]) << ',' << fmt17(s.a[i]) << ',' << s.delta[i];
    for (int j = 0; j < s.p(); ++j) out << ',' << fmt17(s.w(i, j));
    for (int j = 0; j < s.q(); ++j) out << ',' << fmt17(s.z(i, j));
    if (latent) {
      for (int j = 0; j < s.p(); ++j) out << ',' << fmt17(latent->x(i, j));
      out << ',' << latent->susceptible[i] << ',' << fmt17(latent->tstar[i]);
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

Sample truncate_sample(const Sample& s, double tau) {
  if (!(tau > 0.0)) throw ValidationError("tau must be positive");
  Sample out = s;
  for (int i = 0; i < s.n(); ++i) {
    if (s.a[i] >= tau)
      throw ValidationError("subject " + std::to_string(i + 1) +
                            " enters at or after the administrative horizon tau");
    if (s.y[i] > tau) {
      out.y[i] = tau;
      out.delta[i] = 0;
    }
  }
  validate_sample(out);
  return out;
}

}  // namespace curesimex
