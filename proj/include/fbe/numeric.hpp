#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

namespace fbe {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Neumaier compensated summation.
class KahanSum {
 public:
  void add(double x) {
    double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

// Streaming log-sum-exp with compensated accumulation; rescales whenever a larger exponent arrives.
class LogSumExp {
 public:
  void add(double a) {
    if (a == kNegInf) return;
    if (a <= max_) {
      acc(std::exp(a - max_));
    } else {
      const double f = std::exp(max_ - a);
      sum_ *= f;
      comp_ *= f;
      max_ = a;
      acc(1.0);
    }
  }
  double value() const { return max_ == kNegInf ? kNegInf : max_ + std::log(sum_ + comp_); }

 private:
  void acc(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double max_ = kNegInf;
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double log_sum_exp(const std::vector<double>& a) {
  double m = kNegInf;
  for (double v : a) m = v > m ? v : m;
  if (m == kNegInf) return kNegInf;
  KahanSum s;
  for (double v : a) s.add(std::exp(v - m));
  return m + std::log(s.value());
}

// log(e^a + e^b)
inline double log_add_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b == kNegInf) return a;
  return a + std::log1p(std::exp(b - a));
}

// log(e^a - e^b) for a >= b; -inf when equal.
inline double log_sub_exp(double a, double b) {
  if (b == kNegInf) return a;
  double d = b - a;
  if (d >= 0.0) return kNegInf;
  // log(1 - e^d), switching branch at -ln 2 for accuracy
  return a + (d > -0.6931471805599453 ? std::log(-std::expm1(d)) : std::log1p(-std::exp(d)));
}

inline double log_binomial(double n, double k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

}  // namespace fbe
