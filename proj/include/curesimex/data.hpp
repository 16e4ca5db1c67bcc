#pragma once

#include <optional>
#include <string>
#include <vector>

#include "curesimex/types.hpp"

namespace curesimex {

// One observation: follow-up ends at y, observation started at a (delayed entry),
// delta says whether y is a failure. w are the error-prone covariates, z the
// error-free ones.
struct Subject {
  double y = 0.0;
  double a = 0.0;
  int delta = 0;
  Vec w;
  Vec z;
};

// Struct-of-arrays sample; row i of w/z belongs to subject i.
struct Sample {
  Vec y;
  Vec a;
  std::vector<int> delta;
  Mat w;  // n x p
  Mat z;  // n x q

  int n() const { return static_cast<int>(y.size()); }
  int p() const { return static_cast<int>(w.cols()); }
  int q() const { return static_cast<int>(z.cols()); }

  Subject subject(int i) const {
    return Subject{y[i], a[i], delta[i], w.row(i).transpose(), z.row(i).transpose()};
  }
};

// Optional ground truth carried next to a generated sample.
struct LatentRecord {
  Mat x;                    // n x p error-free values behind w
  std::vector<int> susceptible;  // 1 if the subject can fail
  Vec tstar;                // latent failure time, +inf for non-susceptible
};

Sample make_sample(const std::vector<Subject>& rows);

// Throws ValidationError listing every violated row: finite fields, 0 <= a <= y,
// delta in {0,1}, consistent covariate widths, and at least one delta=1 overall
// (otherwise the transform has no jumps to estimate).
void validate_sample(const Sample& s);

inline bool at_risk(const Sample& s, int i, double t) { return s.a[i] <= t && t <= s.y[i]; }

struct EventTimes {
  std::vector<double> times;  // distinct failure times, ascending
  std::vector<int> mult;      // tied-failure count at each
};

EventTimes event_times(const Sample& s);

// Per-sample cache shared by every solver pass: distinct event times, tie counts,
// risk-set index lists, event-subject lists, and for each subject the step index
// of its own y on the event grid.
struct EventGrid {
  std::vector<double> times;
  std::vector<int> mult;
  std::vector<std::vector<int>> risk;    // risk[k]: subjects with a <= t_k <= y
  std::vector<std::vector<int>> events;  // events[k]: subjects with y == t_k, delta 1
  std::vector<int> y_index;              // per subject: index+1 of last t_k <= y_i (0 if none)
};

EventGrid build_event_grid(const Sample& s);

// CSV with header y,a,delta,w1..wp,z1..zq; optional latent columns x1..xp,susceptible,tstar.
Sample load_sample(const std::string& path, LatentRecord* latent_out = nullptr);
void save_sample(const Sample& s, const std::string& path,
                 const LatentRecord* latent = nullptr);

// Administrative censoring: y > tau becomes (tau, delta=0); subjects entering at or
// after tau are rejected with a ValidationError.
Sample truncate_sample(const Sample& s, double tau);

}  // namespace curesimex
