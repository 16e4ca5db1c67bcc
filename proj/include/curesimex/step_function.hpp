#pragma once

#include <algorithm>
#include <limits>
#include <vector>

namespace curesimex {

// Right-continuous nondecreasing step function. Value is -inf strictly before the
// first jump time, values[k] on [jump_times[k], jump_times[k+1]), and the last
// value from the final jump onward.
struct StepFunction {
  std::vector<double> jump_times;  // strictly increasing
  std::vector<double> values;      // nondecreasing, same length
};

inline double evaluate_H(const StepFunction& f, double t) {
  auto it = std::upper_bound(f.jump_times.begin(), f.jump_times.end(), t);
  if (it == f.jump_times.begin()) return -std::numeric_limits<double>::infinity();
  return f.values[static_cast<std::size_t>(it - f.jump_times.begin()) - 1];
}

// Index+1 of the last jump time <= t, 0 if none. values[k-1] is then the value at t.
inline int step_index(const StepFunction& f, double t) {
  auto it = std::upper_bound(f.jump_times.begin(), f.jump_times.end(), t);
  return static_cast<int>(it - f.jump_times.begin());
}

}  // namespace curesimex
