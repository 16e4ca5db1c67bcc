// Sample container, validation, risk-set primitives, CSV round-trip, and
// administrative truncation.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "curesimex/data.hpp"
#include "curesimex/rng.hpp"

using namespace curesimex;

namespace {

Subject row(double y, double a, int delta, double w, double z) {
  Subject s;
  s.y = y;
  s.a = a;
  s.delta = delta;
  s.w = Vec::Constant(1, w);
  s.z = Vec::Constant(1, z);
  return s;
}

// Unique path under the system temp dir; removed by the caller.
std::string tmp_path(const std::string& stem) {
  return (std::filesystem::temp_directory_path() / ("curesimex_" + stem)).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("at_risk covers a closed interval") {
  Sample s = make_sample({row(1.0, 0.2, 1, 0.0, 0.0)});
  CHECK(at_risk(s, 0, 0.5));
  CHECK_FALSE(at_risk(s, 0, 0.1));   // before entry: left truncation
  CHECK(at_risk(s, 0, 0.2));         // entry boundary inclusive
  CHECK(at_risk(s, 0, 1.0));         // exit boundary inclusive
  CHECK_FALSE(at_risk(s, 0, 1.0 + 1e-12));
}

TEST_CASE("event_times sorts, filters, and collapses ties") {
  Sample s = make_sample({row(2.0, 0, 1, 0, 0), row(3.0, 0, 0, 0, 0), row(1.0, 0, 1, 0, 0)});
  EventTimes ev = event_times(s);
  REQUIRE(ev.times.size() == 2);
  CHECK(ev.times[0] == 1.0);
  CHECK(ev.times[1] == 2.0);
  CHECK(ev.mult[0] == 1);
  CHECK(ev.mult[1] == 1);

  Sample tied = make_sample({row(2.0, 0, 1, 0, 0), row(2.0, 0, 1, 0, 0)});
  EventTimes tv = event_times(tied);
  REQUIRE(tv.times.size() == 1);
  CHECK(tv.times[0] == 2.0);
  CHECK(tv.mult[0] == 2);

  // Multiplicities always account for every failure.
  int total = 0;
  for (int m : tv.mult) total += m;
  CHECK(total == 2);
}

TEST_CASE("validation names the offending rows") {
  CHECK_THROWS_AS(make_sample({}), ValidationError);

  // a > y in the second row.
  try {
    make_sample({row(1.0, 0.0, 1, 0, 0), row(1.0, 2.0, 0, 0, 0)});
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }

  CHECK_THROWS_AS(make_sample({row(1.0, 0.0, 2, 0, 0)}), ValidationError);
  CHECK_THROWS_AS(make_sample({row(1.0, 0.0, 1, std::nan(""), 0)}), ValidationError);

  // All-censored data has no transform to estimate.
  CHECK_THROWS_AS(make_sample({row(1.0, 0.0, 0, 0, 0), row(2.0, 0.0, 0, 0, 0)}),
                  ValidationError);
  Sample censored;
  censored.y = Vec::Constant(1, 1.0);
  censored.a = Vec::Zero(1);
  censored.delta = {0};
  censored.w = Mat::Zero(1, 1);
  censored.z = Mat::Zero(1, 1);
  CHECK_THROWS_AS(event_times(censored), ValidationError);
}

TEST_CASE("event grid indexes risk sets and own-y positions") {
  // Events at 1.0 (subject 2) and 2.0 (subject 0); subject 1 censored at 1.5
  // enters late at 1.2 so it misses the first risk set.
  Sample s = make_sample({row(2.0, 0.0, 1, 0, 0), row(1.5, 1.2, 0, 0, 0), row(1.0, 0.5, 1, 0, 0)});
  EventGrid g = build_event_grid(s);
  REQUIRE(g.times.size() == 2);
  CHECK(g.times[0] == 1.0);
  CHECK(g.times[1] == 2.0);
  CHECK(g.risk[0] == std::vector<int>{0, 2});
  CHECK(g.risk[1] == std::vector<int>{0});
  CHECK(g.events[0] == std::vector<int>{2});
  CHECK(g.events[1] == std::vector<int>{0});
  // y_index: index+1 of the last event time <= y, 0 when none.
  CHECK(g.y_index[0] == 2);
  CHECK(g.y_index[1] == 1);  // censored at 1.5, after the 1.0 jump
  CHECK(g.y_index[2] == 1);
}

TEST_CASE("CSV round-trip is exact") {
  RngStream rng(7);
  std::vector<Subject> rows;
  for (int i = 0; i < 40; ++i) {
    Subject sub;
    sub.a = rng.uniform(0.0, 0.5);
    sub.y = sub.a + rng.exponential(1.0) + 1e-9;
    sub.delta = rng.bernoulli(0.6) ? 1 : 0;
    sub.w = Vec::Constant(2, 0.0);
    sub.w << rng.normal() / 3.0, rng.normal() * 1e-7;
    sub.z = Vec::Constant(1, rng.normal());
    rows.push_back(sub);
  }
  Sample s = make_sample(rows);

  const std::string path = tmp_path("roundtrip.csv");
  save_sample(s, path);
  Sample back = load_sample(path);

  REQUIRE(back.n() == s.n());
  REQUIRE(back.p() == 2);
  REQUIRE(back.q() == 1);
  // %.17g serialization reproduces every double bit-for-bit.
  for (int i = 0; i < s.n(); ++i) {
    CHECK(back.y[i] == s.y[i]);
    CHECK(back.a[i] == s.a[i]);
    CHECK(back.delta[i] == s.delta[i]);
    CHECK(back.w.row(i) == s.w.row(i));
    CHECK(back.z.row(i) == s.z.row(i));
  }

  // Second write of the reread sample is byte-identical.
  const std::string path2 = tmp_path("roundtrip2.csv");
  save_sample(back, path2);
  CHECK(slurp(path) == slurp(path2));
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("CSV round-trip carries the latent record") {
  Sample s = make_sample({row(1.0, 0.0, 1, 0.25, -0.5), row(2.0, 0.1, 0, -1.0, 0.3)});
  LatentRecord latent;
  latent.x = Mat(2, 1);
  latent.x << 0.125, -1.75;
  latent.susceptible = {1, 0};
  latent.tstar = Vec(2);
  latent.tstar << 0.875, std::numeric_limits<double>::infinity();

  const std::string path = tmp_path("latent.csv");
  save_sample(s, path, &latent);
  LatentRecord back;
  Sample s2 = load_sample(path, &back);
  std::remove(path.c_str());

  REQUIRE(s2.n() == 2);
  CHECK(back.x == latent.x);
  CHECK(back.susceptible == latent.susceptible);
  CHECK(back.tstar[0] == latent.tstar[0]);
  CHECK(std::isinf(back.tstar[1]));
}

TEST_CASE("malformed CSV input is reported with row numbers") {
  const std::string path = tmp_path("bad.csv");

  {
    std::ofstream out(path);
    out << "y,a,delta,w1,z1\n1.0,0.0,1,0.5,0.5\n2.0,zero,0,0.1,0.1\n";
  }
  try {
    load_sample(path);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    CHECK(msg.find("row 3") != std::string::npos);
    CHECK(msg.find("zero") != std::string::npos);
  }

  {
    std::ofstream out(path);
    out << "y,a,delta,w1,z1\n1.0,0.0,1,0.5\n";  // ragged: one field short
  }
  CHECK_THROWS_AS(load_sample(path), ValidationError);

  {
    std::ofstream out(path);
    out << "time,a,delta,w1,z1\n1.0,0.0,1,0.5,0.5\n";
  }
  CHECK_THROWS_AS(load_sample(path), ValidationError);

  std::remove(path.c_str());
  CHECK_THROWS_AS(load_sample(path), IoError);
}

TEST_CASE("administrative truncation censors at tau") {
  Sample s = make_sample({row(2.0, 0.0, 1, 0, 0), row(0.8, 0.1, 1, 0, 0), row(1.0, 0.4, 0, 0, 0)});
  Sample t = truncate_sample(s, 1.0);
  CHECK(t.y[0] == 1.0);
  CHECK(t.delta[0] == 0);  // failure beyond the horizon is only known censored
  CHECK(t.y[1] == 0.8);
  CHECK(t.delta[1] == 1);
  CHECK(t.y[2] == 1.0);
  CHECK(t.delta[2] == 0);

  // Entry at or past the horizon cannot be represented by censoring.
  CHECK_THROWS_AS(truncate_sample(s, 0.4), ValidationError);
  CHECK_THROWS_AS(truncate_sample(s, 0.0), ValidationError);
  CHECK_THROWS_AS(truncate_sample(s, -1.0), ValidationError);
}
