#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fbe/numeric.hpp"

using namespace fbe;

TEST(Numeric, LogSumExpMatchesDirectSum) {
  std::vector<double> a{-1.0, 0.5, 2.0, -3.0};
  double direct = 0;
  for (double v : a) direct += std::exp(v);
  EXPECT_NEAR(log_sum_exp(a), std::log(direct), 1e-15);
  LogSumExp s;
  for (double v : a) s.add(v);
  EXPECT_NEAR(s.value(), std::log(direct), 1e-15);
}

TEST(Numeric, LogSumExpSurvivesHugeExponents) {
  LogSumExp s;
  s.add(1000.0);
  s.add(1000.0);
  EXPECT_NEAR(s.value(), 1000.0 + std::log(2.0), 1e-12);
  EXPECT_EQ(log_sum_exp({kNegInf, kNegInf}), kNegInf);
}

TEST(Numeric, LogSubExpInvertsLogAddExp) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-50, 50), gap(-50, 20);
  for (int i = 0; i < 1000; ++i) {
    // b - a <= 20 keeps a recoverable from the rounded sum
    const double a = u(rng), b = a + gap(rng);
    const double s = log_add_exp(a, b);
    // rounding of s (relative 2^-53) is amplified by e^{b - a}
    EXPECT_NEAR(log_sub_exp(s, b), a,
                1e-12 * std::max(1.0, std::abs(a)) + 4e-16 * std::max(1.0, std::abs(s)) * std::exp(std::max(0.0, b - a)));
  }
  EXPECT_EQ(log_sub_exp(2.0, 2.0), kNegInf);
}

TEST(Numeric, LogBinomialMatchesPascal) {
  // exact integer table for n <= 60
  std::vector<std::vector<double>> c(61, std::vector<double>(61, 0));
  for (int n = 0; n <= 60; ++n) {
    c[n][0] = c[n][n] = 1;
    for (int k = 1; k < n; ++k) c[n][k] = c[n - 1][k - 1] + c[n - 1][k];
  }
  for (int n = 0; n <= 60; ++n)
    for (int k = 0; k <= n; ++k) EXPECT_NEAR(log_binomial(n, k), std::log(c[n][k]), 1e-12 * (1 + std::log(c[n][k])));
}

TEST(Numeric, KahanSumRecoversCancelledTerms) {
  KahanSum s;
  s.add(1.0);
  for (int i = 0; i < 10000; ++i) s.add(1e-16);
  s.add(-1.0);
  EXPECT_NEAR(s.value(), 1e-12, 1e-24);
}
