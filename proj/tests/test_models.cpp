#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fbe/fgcb.hpp"
#include "fbe/models.hpp"
#include "fbe/thermal.hpp"

using namespace fbe;

namespace {

ModelSpec ising() {
  ModelSpec s;
  s.kind = ModelKind::IsingChain;
  return s;
}

ModelSpec fermi(const Eigen::Vector4d& t) {
  ModelSpec s;
  s.kind = ModelKind::FermiGasWell;
  s.cutoff = fermi_default_cutoff(t);
  return s;
}

// (2 sinh x)^n + (2 cosh x)^n
double transfer_log_z(int n, double x) {
  return std::log(std::pow(2 * std::sinh(x), n) + std::pow(2 * std::cosh(x), n));
}

}  // namespace

TEST(Ising, PairPartitionFunction) {
  auto m = instantiate(ising(), 2);
  const double phi = thermo_stats(m.obs, Eigen::Vector2d(1.0, 1.0)).phi;
  EXPECT_NEAR(phi, 2 * std::log(4 * std::cosh(2.0)), 1e-13);
}

TEST(Ising, EnumerationMatchesTransferMatrix) {
  const Eigen::Vector2d t(0.9, 0.4);
  for (int n : {2, 3, 5, 8, 13}) {
    auto m = instantiate(ising(), n);
    const double oracle = transfer_log_z(n, 0.9) + transfer_log_z(n, 0.4);
    EXPECT_NEAR(thermo_stats(m.obs, t).phi, oracle, 1e-12 * oracle) << n;
    EXPECT_NEAR(ising_transfer_phi(ising(), n, t), oracle, 1e-12 * oracle) << n;
  }
}

TEST(Ising, DomainWallClassesMatchTransferMatrix) {
  const Eigen::Vector2d t(0.7, 0.3);
  auto m = instantiate(ising(), 30);
  ASSERT_TRUE(m.obs.factors[0].compressed());
  EXPECT_NEAR(m.obs.log_dimension(), 60 * std::log(2.0), 1e-10);
  const double oracle = transfer_log_z(30, 0.7) + transfer_log_z(30, 0.3);
  EXPECT_NEAR(thermo_stats(m.obs, t).phi, oracle, 1e-12 * oracle);
}

TEST(Ising, FiniteFisherApproachesSigmaSquared) {
  const Eigen::Vector2d t(1.0, 1.0);
  auto m = instantiate(ising(), 12);
  const double sigma2 = 1 / std::pow(std::cosh(1.0), 2);
  const double g = thermo_stats(m.obs, t).J(0, 0) / 12;
  EXPECT_NEAR(g, sigma2, 0.02 * sigma2);
}

TEST(Ising, NumericMatchesAnalyticAtSixtyFour) {
  const Eigen::Vector2d t(1.0, 0.5);
  auto a = estimate_densities(ising(), t, 0, DensityMode::Analytic);
  auto n = estimate_densities(ising(), t, 64, DensityMode::Numeric);
  EXPECT_LE(((a.g - n.g).cwiseAbs().array() / a.g.cwiseAbs().maxCoeff()).maxCoeff(), 1e-6);
}

TEST(Ising, DensityDeviationDecaysLikeTanhPower) {
  const Eigen::Vector2d t(1.0, 0.5);
  auto m8 = instantiate(ising(), 8), m16 = instantiate(ising(), 16);
  const double dens = m8.phi_density(t);
  const double d8 = thermo_stats(m8.obs, t).phi / 8 - dens, d16 = thermo_stats(m16.obs, t).phi / 16 - dens;
  const double oracle8 = (std::log1p(std::pow(std::tanh(1.0), 8)) + std::log1p(std::pow(std::tanh(0.5), 8))) / 8;
  EXPECT_NEAR(d8, oracle8, 1e-13);
  EXPECT_LT(std::abs(d16), std::abs(d8));
}

TEST(Ising, ClosedFormCoefficientAndCouplingEquation) {
  const Eigen::Vector2d t(1.0, 0.5);
  auto r = analytic_reference(ising(), t);
  const double oracle = 0.25 * std::pow(std::cosh(1.0), 2) / 2 + std::pow(std::cosh(0.5), 2) / 2;
  EXPECT_NEAR(*r.C, oracle, 1e-15);
  EXPECT_NEAR(*r.C, 0.93341, 1e-5);
  EXPECT_NEAR(r.ising_coupling_residual->at(0), 2 * std::sinh(2.0) - std::cosh(2.0) - 1, 1e-14);
  auto c = fgcb_coefficients(estimate_densities(ising(), t, 0, DensityMode::Analytic), t);
  EXPECT_NEAR(c.C_AA, oracle, 1e-10 * oracle);
}

TEST(Iid, NumericEqualsAnalyticExactly) {
  ModelSpec s;
  s.omega_c = 0.8;
  s.omega_h = 1.7;
  const Eigen::Vector2d t(1.2, 0.4);
  auto a = estimate_densities(s, t, 0, DensityMode::Analytic);
  for (double n : {1.0, 7.0, 1000.0}) {
    auto d = estimate_densities(s, t, n, DensityMode::Numeric);
    EXPECT_LE((a.g - d.g).cwiseAbs().maxCoeff(), 1e-14);
    auto m = instantiate(s, n);
    EXPECT_NEAR(thermo_stats(m.obs, t).phi / n, m.phi_density(t), 1e-14);
  }
}

TEST(SpinHalf, SingleSiteFreeEntropy) {
  ModelSpec s;
  s.kind = ModelKind::SpinHalfBath;
  s.angle = std::numbers::pi / 2;
  auto m = instantiate(s, 1);
  const Eigen::Vector2d t(1.0, 1.0);
  EXPECT_NEAR(thermo_stats(m.obs, t).phi, std::log(2 * std::cosh(std::sqrt(2.0))), 1e-14);
  EXPECT_NEAR(m.phi_density(t), std::log(2 * std::cosh(std::sqrt(2.0))), 1e-14);
}

TEST(SpinHalf, EightSiteFisherIsAdditive) {
  ModelSpec s;
  s.kind = ModelKind::SpinHalfBath;
  s.angle = 0.9;
  const Eigen::Vector2d t(0.8, -0.3);
  auto m = instantiate(s, 8);
  auto one = instantiate(s, 1);
  const Eigen::MatrixXd g8 = thermo_stats(m.obs, t).J / 8, g1 = thermo_stats(one.obs, t).J;
  EXPECT_LE((g8 - g1).cwiseAbs().maxCoeff(), 1e-10);
  auto a = estimate_densities(s, t, 0, DensityMode::Analytic);
  EXPECT_LE((a.g - g1).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SpinHalf, ClosedFormCoefficient) {
  ModelSpec s;
  s.kind = ModelKind::SpinHalfBath;
  for (double th : {0.01, 0.3, 1.0, std::numbers::pi / 2}) {
    s.angle = th;
    const Eigen::Vector2d t(1.3, -0.7);
    auto c = fgcb_coefficients(estimate_densities(s, t, 0, DensityMode::Analytic), t);
    const double r2 = 1.69 + 0.49 - 2 * 0.7 * 1.3 * std::cos(th), r = std::sqrt(r2);
    const double oracle = r2 * r / (2 * std::pow(1.3, 3) * std::pow(std::sin(th), 2) * std::tanh(r));
    EXPECT_NEAR(c.C_BB[0][0], oracle, 1e-8 * oracle) << th;
  }
  s.angle = 0.01;
  auto r = analytic_reference(s, Eigen::Vector2d(1.0, -1.0));
  EXPECT_NEAR(*r.C, 0.50002, 1e-5);
  EXPECT_DOUBLE_EQ(*r.resonance_limit, 0.5);
}

TEST(Fermi, LevelSumMatchesExplicitFactors) {
  const Eigen::Vector4d t(2.0, 1.0, -4.0, -1.5);
  auto s = fermi(t);
  const double lam = 7;
  auto m = instantiate(s, lam);
  double oracle = 0;
  for (int b = 0; b < 2; ++b) {
    const double beta = t(b), mu = -t(2 + b) / beta;
    const auto L = std::int64_t(std::floor(std::sqrt(s.cutoff) * lam));
    for (std::int64_t i = 1; i <= L; ++i) oracle += std::log1p(std::exp(beta * mu - beta * double(i * i) / (lam * lam)));
  }
  EXPECT_NEAR(thermo_stats(m.obs, t).phi, oracle, 1e-12 * oracle);
}

TEST(Fermi, SommerfeldVariancesAtLowTemperature) {
  const Eigen::Vector4d t(50.0, 50.0, -50.0, -50.0);
  auto s = fermi(t);
  auto m = instantiate(s, 200);
  const Eigen::MatrixXd g = thermo_stats(m.obs, t).J / 200;
  // (shb)-(vhn) at beta = 50, mu = 1, E_0 = 1
  const double pre = 0.5, pi2 = std::numbers::pi * std::numbers::pi, b = 50;
  const double sH = pre * (8 * b * b + pi2) / (8 * b * b * b), sN = sH, V = pre * (24 * b * b - pi2) / (24 * b * b * b);
  EXPECT_NEAR(g(0, 0), sH, 0.01 * sH);
  EXPECT_NEAR(g(2, 2), sN, 0.01 * sN);
  EXPECT_NEAR(g(0, 2), V, 0.01 * V);
  auto r = analytic_reference(s, t);
  EXPECT_TRUE(r.sommerfeld->at(0).valid);
  EXPECT_NEAR(r.sommerfeld->at(0).sigma2_H, sH, 1e-15);
}

TEST(Fermi, SommerfeldRatioIsInverseMuSquared) {
  const Eigen::Vector4d t(30.0, 25.0, -60.0, -75.0);
  auto r = analytic_reference(fermi(t), t);
  for (int b = 0; b < 2; ++b) {
    const double mu = -t(2 + b) / t(b);
    EXPECT_NEAR(r.sommerfeld->at(size_t(b)).sigma2_N / r.sommerfeld->at(size_t(b)).sigma2_H, 1 / (mu * mu), 1e-14);
  }
}

TEST(Fermi, DensityDeviationShrinksLikeInverseLambda) {
  const Eigen::Vector4d t(2.0, 1.0, -4.0, -1.5);
  auto s = fermi(t);
  auto m = instantiate(s, 10);
  const double dens = m.phi_density(t);
  double prev = 0;
  for (double lam : {10.0, 40.0, 160.0}) {
    auto mm = instantiate(s, lam);
    const double dev = std::abs(thermo_stats(mm.obs, t).phi / lam - dens);
    if (prev > 0) EXPECT_NEAR(prev / dev, 4.0, 0.6);
    prev = dev;
  }
}

TEST(Fermi, AnalyticQuadratureMatchesLargeLambdaLevelSum) {
  const Eigen::Vector4d t(2.0, 1.0, -4.0, -1.5);
  auto s = fermi(t);
  auto a = estimate_densities(s, t, 0, DensityMode::Analytic);
  auto n = estimate_densities(s, t, 400, DensityMode::Numeric, true);
  EXPECT_LE((a.g - n.g).cwiseAbs().maxCoeff() / a.g.cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Models, InvalidParametersRejected) {
  ModelSpec s;
  s.omega_c = -1;
  EXPECT_THROW(instantiate(s, 4), Error);
  ModelSpec sp;
  sp.kind = ModelKind::SpinHalfBath;
  sp.angle = 2.0;
  EXPECT_THROW(instantiate(sp, 2), Error);
  sp.angle = 0.5;
  EXPECT_THROW(instantiate(sp, 13), Error);
  ModelSpec f;
  f.kind = ModelKind::FermiGasWell;
  EXPECT_THROW(instantiate(f, 4), Error);
}
