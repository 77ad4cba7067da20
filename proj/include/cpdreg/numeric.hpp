#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace cpdreg::numeric {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(exp(a) + exp(b)) without overflow; either argument may be -inf.
inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  const double lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

// log(sum_i exp(args[i])), shifted by the maximum. Empty input gives -inf.
inline double log_sum_exp(std::span<const double> args) {
  if (args.empty()) return kNegInf;
  const double top = *std::max_element(args.begin(), args.end());
  if (top == kNegInf) return kNegInf;
  double sum = 0.0;
  for (double a : args) sum += std::exp(a - top);
  return top + std::log(sum);
}

// Squared Euclidean distance accumulated in coordinate order. Every module
// uses this one routine so distance values are reproducible bit for bit.
inline double squared_distance(const double* a, const double* b, int dim) {
  double s = 0.0;
  for (int d = 0; d < dim; ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

}  // namespace cpdreg::numeric
