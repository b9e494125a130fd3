#pragma once

#include <algorithm>
#include <cmath>
#include <span>

namespace testing {

// |a - b| relative to max(|a|, |b|, floor).
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(std::span<const double> a, std::span<const double> b,
                          double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i], floor));
  return worst;
}

}  // namespace testing
