#pragma once

// Double-double accumulation: value = hi + lo with |lo| <= ulp(hi) / 2.
// Used where single evaluations must agree to a few ulps despite cancellation.

#include <cmath>

namespace mfdl::detail {

struct DD {
  double hi = 0.0;
  double lo = 0.0;

  double value() const { return hi + lo; }
};

inline DD two_sum(double a, double b) {
  const double s = a + b;
  const double bb = s - a;
  return {s, (a - (s - bb)) + (b - bb)};
}

inline DD quick_two_sum(double a, double b) {
  const double s = a + b;
  return {s, b - (s - a)};
}

inline DD operator+(DD a, DD b) {
  DD s = two_sum(a.hi, b.hi);
  const DD t = two_sum(a.lo, b.lo);
  s.lo += t.hi;
  s = quick_two_sum(s.hi, s.lo);
  s.lo += t.lo;
  return quick_two_sum(s.hi, s.lo);
}

inline DD operator*(DD a, double b) {
  const double p = a.hi * b;
  const double e = std::fma(a.hi, b, -p);
  return quick_two_sum(p, std::fma(a.lo, b, e));
}

inline DD operator*(double a, DD b) { return b * a; }

}  // namespace mfdl::detail
