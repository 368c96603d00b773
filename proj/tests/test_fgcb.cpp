#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fbe/checks.hpp"
#include "fbe/fgcb.hpp"
#include "fbe/models.hpp"

using namespace fbe;

namespace {

std::vector<Label> two_baths() { return {{1, Tag::A}, {2, Tag::A}}; }

}  // namespace

TEST(Gcb, CarnotFactorArithmetic) {
  HeatVector q;
  q.dQ_A2 = 10;
  EXPECT_DOUBLE_EQ(gcb_bound(q, two_baths(), Eigen::Vector2d(1.0, 0.5)), 5.0);
  EXPECT_DOUBLE_EQ(gcb_bound(HeatVector{}, two_baths(), Eigen::Vector2d(1.0, 0.5)), 0.0);
  EXPECT_DOUBLE_EQ(gcb_bound(q, two_baths(), Eigen::Vector2d(0.7, 0.7)), 0.0);
}

TEST(Gcb, ColdTemperatureSignChecked) {
  HeatVector q;
  q.dQ_A2 = 1;
  try {
    gcb_bound(q, two_baths(), Eigen::Vector2d(0.0, 0.5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ZeroColdTemperature);
  }
  try {
    gcb_bound(q, two_baths(), Eigen::Vector2d(-1.0, 0.5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NegativeColdTemperature);
  }
}

TEST(Fgcb, IsingCompositionExample) {
  ModelSpec s;
  s.kind = ModelKind::IsingChain;
  const Eigen::Vector2d t(1.0, 0.5);
  auto d = estimate_densities(s, t, 0, DensityMode::Analytic);
  auto c = fgcb_coefficients(d, t);
  const double C = 0.25 * std::pow(std::cosh(1.0), 2) / 2 + std::pow(std::cosh(0.5), 2) / 2;
  EXPECT_NEAR(c.C_AA, C, 1e-12 * C);
  HeatVector q;
  q.dQ_A2 = 10;
  EXPECT_NEAR(fgcb_bound(q, d.labels, t, 1000, c), 5 - C * 100 / 1000, 1e-12);
  EXPECT_NEAR(fgcb_bound(q, d.labels, t, 1e12, c), 5, 1e-9);
  EXPECT_DOUBLE_EQ(fgcb_bound(HeatVector{}, d.labels, t, 1000, c), 0.0);
}

TEST(Fgcb, IidReductionMatchesSingleQuantityFormula) {
  const double wc = 1.0, wh = 1.618033988749895, bc = 1.0, bh = 0.5;
  const double qc = 1 / (1 + std::exp(bc * wc)), qh = 1 / (1 + std::exp(bh * wh));
  const double sL = wc * wc * qc * (1 - qc), sH = wh * wh * qh * (1 - qh);
  const double oracle = bh * bh / (2 * sL * bc * bc * bc) + 1 / (2 * sH * bc);
  Eigen::Matrix2d g = Eigen::Vector2d(sL, sH).asDiagonal();
  auto d = densities_from_g(two_baths(), g, "analytic");
  EXPECT_NEAR(fgcb_coefficients(d, Eigen::Vector2d(bc, bh)).C_AA, oracle, 1e-12 * oracle);
}

TEST(Fgcb, GeneralFormMatchesLiteralCoefficients) {
  ModelSpec s;
  s.kind = ModelKind::FermiGasWell;
  Eigen::Vector4d t(2.0, 1.0, -4.0, -1.5);
  s.cutoff = fermi_default_cutoff(t);
  auto d = estimate_densities(s, t, 0, DensityMode::Analytic);
  auto c = fgcb_coefficients(d, t);
  auto M = deficit_form(d, t);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int i = 0; i < 50; ++i) {
    HeatVector q;
    q.dQ_A2 = n(rng);
    q.dQ_B1 = n(rng);
    q.dQ_B2 = n(rng);
    Eigen::VectorXd v = heat_slots(q, d.labels);
    const double a = coefficient_form(c, q), b = v.dot(M * v);
    EXPECT_NEAR(a, b, 1e-10 * std::max(1.0, std::abs(a)));
  }
}

TEST(Fgcb, SingularGRejected) {
  Eigen::Matrix2d g;
  g << 1, 1, 1, 1;
  try {
    densities_from_g(two_baths(), g, "analytic");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SingularG);
  }
}

TEST(Fgcb, SpinHalfResonanceLimit) {
  ModelSpec s;
  s.kind = ModelKind::SpinHalfBath;
  s.angle = 0.01;
  const Eigen::Vector2d t(1.0, -1.0);
  auto c = fgcb_coefficients(estimate_densities(s, t, 0, DensityMode::Analytic), t);
  const double r = std::sqrt(2 - 2 * std::cos(0.01));
  const double oracle = r * r * r / (2 * std::pow(std::sin(0.01), 2) * std::tanh(r));
  EXPECT_NEAR(c.C_BB[0][0], oracle, 1e-7 * oracle);
  EXPECT_NEAR(c.C_BB[0][0], 0.5, 1e-3);
}

TEST(Fgcb, NeverAboveGcbForBuiltInModels) {
  std::uint64_t seed = 100;
  for (const auto& f : default_fixtures()) {
    auto d = estimate_densities(f.spec, f.theta0, 0, DensityMode::Analytic);
    auto r = fgcb_below_gcb(d, f.theta0, f.lambda, 1000, seed++);
    EXPECT_TRUE(r.passed()) << model_name(f.spec.kind) << " worst " << r.worst;
  }
}

TEST(Fgcb, CentralHessianOfQuadratic) {
  Eigen::Matrix2d A;
  A << 2, 0.5, 0.5, 1;
  auto f = [&](const Eigen::VectorXd& x) { return 0.5 * x.dot(A * x); };
  auto H = central_hessian(f, Eigen::Vector2d(0.3, -0.2), 1e-3);
  EXPECT_LE((H - A).cwiseAbs().maxCoeff(), 1e-8);
}
