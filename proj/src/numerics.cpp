#include "classkit/numerics.hpp"

#include <cmath>

#include "classkit/errors.hpp"

namespace classkit {

void ExactSum::add(double x) {
  // Invariant: partials_ holds non-overlapping values of increasing magnitude
  // whose exact sum equals the exact sum of all addends so far.
  int i = 0;
  for (int j = 0; j < count_; ++j) {
    double y = partials_[j];
    if (std::fabs(x) < std::fabs(y)) {
      double t = x;
      x = y;
      y = t;
    }
    double hi = x + y;
    double lo = y - (hi - x);
    if (lo != 0.0) partials_[i++] = lo;
    x = hi;
  }
  if (i >= kCap) throw ContractError("ExactSum: partials overflow");
  count_ = i;
  partials_[count_++] = x;
}

double ExactSum::result() const {
  // Round the exact value represented by the partials to nearest-even. The
  // half-ulp correction mirrors the classic msum termination step.
  int n = count_;
  double hi = 0.0;
  if (n > 0) {
    hi = partials_[--n];
    double lo = 0.0;
    while (n > 0) {
      double x = hi;
      double y = partials_[--n];
      hi = x + y;
      double yr = hi - x;
      lo = y - yr;
      if (lo != 0.0) break;
    }
    if (n > 0 && ((lo < 0.0 && partials_[n - 1] < 0.0) ||
                  (lo > 0.0 && partials_[n - 1] > 0.0))) {
      double y = lo * 2.0;
      double x = hi + y;
      double yr = x - hi;
      if (y == yr) hi = x;
    }
  }
  return hi;
}

double exact_sum(const double* x, std::size_t n) {
  ExactSum s;
  for (std::size_t i = 0; i < n; ++i) s.add(x[i]);
  return s.result();
}

double exact_dot(const double* a, const double* b, std::size_t n) {
  ExactSum s;
  for (std::size_t i = 0; i < n; ++i) s.add(a[i] * b[i]);
  return s.result();
}

}  // namespace classkit
