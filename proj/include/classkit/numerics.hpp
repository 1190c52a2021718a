#pragma once

#include <cstddef>
#include <cstdint>

namespace classkit {

// Exact accumulation of doubles (Shewchuk partials, msum-style rounding).
// The returned double is the correctly rounded value of the exact sum, so the
// result depends only on the multiset of addends, not on their order. The
// attention and loss reductions rely on that to make permutation invariances
// hold bit-for-bit.
class ExactSum {
 public:
  ExactSum() = default;

  void add(double x);

  void add_product(double a, double b) { add(a * b); }

  // correctly rounded sum of everything added so far
  double result() const;

 private:
  static constexpr int kCap = 64;  // ~40 is the theoretical max for doubles
  double partials_[kCap];
  int count_ = 0;
};

double exact_sum(const double* x, std::size_t n);
double exact_dot(const double* a, const double* b, std::size_t n);

}  // namespace classkit
