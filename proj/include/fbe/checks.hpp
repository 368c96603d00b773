#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "error.hpp"
#include "fgcb.hpp"
#include "models.hpp"
#include "operators.hpp"
#include "protocol.hpp"
#include "thermal.hpp"

namespace fbe {

// ---------------------------------------------------------------------------
// random ensembles

inline Eigen::MatrixXcd random_hermitian(Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXcd A(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) A(i, j) = cplx(n(rng), n(rng));
  return (A + A.adjoint()) / (2 * std::sqrt(double(d)));
}

// Full-rank density matrix W W^dagger / tr, as spectrum and eigenbasis.
inline DenseState random_density(Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXcd W(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) W(i, j) = cplx(n(rng), n(rng));
  Eigen::MatrixXcd rho = W * W.adjoint();
  rho /= rho.trace().real();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho);
  return {es.eigenvalues(), es.eigenvectors()};
}

// K random observables on dimension d; commuting sets share a random eigenbasis.
inline ObservableSet random_observable_set(Eigen::Index d, int K, bool commuting, std::mt19937_64& rng) {
  std::vector<Label> labels;
  for (int j = 0; j < K; ++j) labels.push_back({1 + j / 2, j % 2 == 0 ? Tag::A : Tag::B});
  std::vector<Eigen::MatrixXcd> mats;
  Eigen::MatrixXcd U;
  if (commuting) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(random_hermitian(d, rng));
    U = es.eigenvectors();
  }
  std::normal_distribution<double> n(0.0, 1.0);
  for (int j = 0; j < K; ++j) {
    if (commuting) {
      Eigen::VectorXd v(d);
      for (Eigen::Index i = 0; i < d; ++i) v(i) = n(rng);
      mats.push_back(U * v.cast<cplx>().asDiagonal() * U.adjoint());
    } else {
      mats.push_back(random_hermitian(d, rng));
    }
  }
  return ObservableSet::make_dense(labels, mats);
}

// ---------------------------------------------------------------------------
// invariant suites

struct SuiteResult {
  int cases = 0;
  int failures = 0;
  double worst = 0;  // largest normalized residual
  bool passed() const { return failures == 0 && cases > 0; }
};

// |D(rho||tau) - D(rho||tau*) - D(tau*||tau)| <= tol (1 + D(rho||tau)) over random full-rank states.
inline SuiteResult pythagorean_suite(int cases, std::uint64_t seed, double tol = 1e-9) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(4, 16), kq(1, 3);
  std::normal_distribution<double> n(0.0, 0.7);
  SuiteResult r;
  for (int c = 0; c < cases; ++c) {
    const Eigen::Index d = dim(rng);
    const int K = kq(rng);
    auto obs = random_observable_set(d, K, c % 4 == 0, rng);
    Eigen::VectorXd theta(K);
    for (int j = 0; j < K; ++j) theta(j) = n(rng);
    auto rho = random_density(d, rng);
    auto sigma = build_thermal_state(obs, theta);
    auto p = pythagorean_check(rho, sigma, obs);
    const double res = std::abs(p.residual) / (1 + p.D_rho_sigma);
    r.cases++;
    r.worst = std::max(r.worst, res);
    if (!(res <= tol) || !p.solver_converged) r.failures++;
  }
  return r;
}

// Hessian of phi_lambda by Richardson-extrapolated central differences.
inline Eigen::MatrixXd phi_hessian(const ObservableSet& obs, const InverseTemperature& theta, double h) {
  auto phi = [&](const Eigen::VectorXd& t) { return thermo_stats(obs, t).phi; };
  return (4 * central_hessian(phi, theta, h / 2) - central_hessian(phi, theta, h)) / 3;
}

// Largest |J - Hess phi| / max|J| over a 5-point-per-axis grid around theta0
// (each axis scaled by 1 + 0.2 {-1, -1/2, 0, 1/2, 1}).
inline SuiteResult fisher_hessian_grid(const ObservableSet& obs, const InverseTemperature& theta0, double tol = 1e-4) {
  const int K = obs.K();
  const double f[5] = {0.8, 0.9, 1.0, 1.1, 1.2};
  std::vector<int> idx(static_cast<size_t>(K), 0);
  SuiteResult r;
  while (true) {
    Eigen::VectorXd t(K);
    for (int j = 0; j < K; ++j) t(j) = theta0(j) == 0 ? 0.2 * (f[idx[size_t(j)]] - 1) : theta0(j) * f[idx[size_t(j)]];
    const Eigen::MatrixXd J = thermo_stats(obs, t).J;
    const double h = 1e-3 * std::max(1.0, t.cwiseAbs().maxCoeff());
    const Eigen::MatrixXd H = phi_hessian(obs, t, h);
    const double err = (J - H).cwiseAbs().maxCoeff() / J.cwiseAbs().maxCoeff();
    r.cases++;
    r.worst = std::max(r.worst, err);
    if (!(err <= tol)) r.failures++;
    int j = 0;
    while (j < K && ++idx[size_t(j)] == 5) idx[size_t(j++)] = 0;
    if (j == K) break;
  }
  return r;
}

// fgcb_bound <= gcb_bound + tol for random heat vectors (components N(0, 1) times a random scale).
inline SuiteResult fgcb_below_gcb(const AsymptoticDensities& dens, const InverseTemperature& theta0, double lambda,
                                  int cases, std::uint64_t seed, double tol = 1e-12) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> lg(-3.0, 3.0);
  const auto s = SlotMap::of(dens.labels);
  const auto c = fgcb_coefficients(dens, theta0);
  SuiteResult r;
  for (int i = 0; i < cases; ++i) {
    HeatVector q = with_default_weights({}, dens.labels, theta0);
    const double scale = std::pow(10.0, lg(rng));
    if (s.A2 >= 0) q.dQ_A2 = scale * n(rng);
    if (s.B1 >= 0) q.dQ_B1 = scale * n(rng);
    if (s.B2 >= 0) q.dQ_B2 = scale * n(rng);
    const double gap = fgcb_bound(q, dens.labels, theta0, lambda, c) - gcb_bound(q, dens.labels, theta0);
    r.cases++;
    r.worst = std::max(r.worst, gap);
    if (!(gap <= tol)) r.failures++;
  }
  return r;
}

// Default thermal point and small-scale instance used by the per-model suites.
struct ModelFixture {
  ModelSpec spec;
  InverseTemperature theta0;
  double lambda = 1;
};

inline std::vector<ModelFixture> default_fixtures() {
  std::vector<ModelFixture> v;
  ModelFixture iid;
  iid.spec.kind = ModelKind::IidTwoLevel;
  iid.spec.omega_h = (1 + std::sqrt(5.0)) / 2;
  iid.theta0 = Eigen::Vector2d(1.0, 0.5);
  iid.lambda = 16;
  v.push_back(iid);
  ModelFixture ising;
  ising.spec.kind = ModelKind::IsingChain;
  ising.theta0 = Eigen::Vector2d(1.0, 0.5);
  ising.lambda = 8;
  v.push_back(ising);
  ModelFixture spin;
  spin.spec.kind = ModelKind::SpinHalfBath;
  spin.spec.angle = 0.7;
  spin.theta0 = Eigen::Vector2d(1.0, -0.6);
  spin.lambda = 3;
  v.push_back(spin);
  ModelFixture fermi;
  fermi.spec.kind = ModelKind::FermiGasWell;
  fermi.theta0 = Eigen::Vector4d(2.0, 1.0, -4.0, -1.5);
  fermi.spec.cutoff = fermi_default_cutoff(fermi.theta0);
  fermi.lambda = 6;
  v.push_back(fermi);
  return v;
}

}  // namespace fbe
