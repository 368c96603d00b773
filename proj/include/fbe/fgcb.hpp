#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "error.hpp"
#include "operators.hpp"
#include "thermal.hpp"

namespace fbe {

// Positions of the paper's four slots inside a K-quantity label list.
struct SlotMap {
  int A1 = -1, A2 = -1, B1 = -1, B2 = -1;

  static SlotMap of(const std::vector<Label>& labels) {
    SlotMap s;
    for (int j = 0; j < int(labels.size()); ++j) {
      const auto& l = labels[size_t(j)];
      if (l.tag == Tag::A && l.bath == 1) s.A1 = j;
      if (l.tag == Tag::A && l.bath == 2) s.A2 = j;
      if (l.tag == Tag::B && l.bath == 1) s.B1 = j;
      if (l.tag == Tag::B && l.bath == 2) s.B2 = j;
    }
    return s;
  }
  int B(int i) const { return i == 1 ? B1 : B2; }
};

struct HeatVector {
  double dQ_A2 = 0, dQ_B1 = 0, dQ_B2 = 0;
  double beta0 = 1, gamma0 = 1;

  double norm2() const {
    return beta0 * beta0 * dQ_A2 * dQ_A2 + gamma0 * gamma0 * (dQ_B1 * dQ_B1 + dQ_B2 * dQ_B2);
  }
  double norm() const { return std::sqrt(norm2()); }
  bool is_zero() const { return dQ_A2 == 0 && dQ_B1 == 0 && dQ_B2 == 0; }
};

namespace detail {

inline double cold_beta(const SlotMap& s, const InverseTemperature& theta0) {
  if (s.A1 < 0) throw Error(ErrorCode::DimensionMismatch, "no (bath 1, A) slot");
  const double b1 = theta0(s.A1);
  if (b1 == 0) throw Error(ErrorCode::ZeroColdTemperature, "beta_1 = 0");
  if (b1 < 0)
    throw Error(ErrorCode::NegativeColdTemperature,
                "beta_1 < 0: the bound holds with the opposite inequality and is not supported");
  return b1;
}

inline double slot_value(const InverseTemperature& t, int slot) { return slot < 0 ? 0.0 : t(slot); }

}  // namespace detail

// Default norm weights: beta0 = |beta_1|, gamma0 = max |gamma_i| (beta0 when all gamma vanish).
inline HeatVector with_default_weights(HeatVector q, const std::vector<Label>& labels,
                                       const InverseTemperature& theta0) {
  const auto s = SlotMap::of(labels);
  q.beta0 = std::abs(detail::slot_value(theta0, s.A1));
  const double g = std::max(std::abs(detail::slot_value(theta0, s.B1)), std::abs(detail::slot_value(theta0, s.B2)));
  q.gamma0 = g > 0 ? g : q.beta0;
  return q;
}

// K-vector of heats indexed by slot (zero at A1).
inline Eigen::VectorXd heat_slots(const HeatVector& q, const std::vector<Label>& labels) {
  const auto s = SlotMap::of(labels);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(Eigen::Index(labels.size()));
  auto put = [&](int slot, double val, const char* name) {
    if (slot >= 0)
      v(slot) = val;
    else if (val != 0)
      throw Error(ErrorCode::DimensionMismatch, std::string("heat ") + name + " has no matching observable");
  };
  put(s.A2, q.dQ_A2, "dQ_A2");
  put(s.B1, q.dQ_B1, "dQ_B1");
  put(s.B2, q.dQ_B2, "dQ_B2");
  return v;
}

inline HeatVector heat_from_slots(const Eigen::VectorXd& v, const std::vector<Label>& labels, HeatVector w = {}) {
  const auto s = SlotMap::of(labels);
  w.dQ_A2 = detail::slot_value(v, s.A2);
  w.dQ_B1 = detail::slot_value(v, s.B1);
  w.dQ_B2 = detail::slot_value(v, s.B2);
  return w;
}

// ---------------------------------------------------------------------------
// asymptotic densities

struct AsymptoticDensities {
  std::vector<Label> labels;
  std::function<double(const Eigen::VectorXd&)> phi_density;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> eta_density;
  Eigen::MatrixXd g;
  Eigen::MatrixXd g_inv;
  std::string source = "analytic";
  double lambda_ref = 0;
};

inline AsymptoticDensities densities_from_g(std::vector<Label> labels, const Eigen::MatrixXd& g,
                                            std::string source, double lambda_ref = 0) {
  AsymptoticDensities d;
  d.labels = std::move(labels);
  d.g = 0.5 * (g + g.transpose());
  d.source = std::move(source);
  d.lambda_ref = lambda_ref;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(d.g, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues()(0) > 1e-10 * d.g.trace())) throw Error(ErrorCode::SingularG, "g not positive definite");
  d.g_inv = d.g.inverse();
  d.g_inv = 0.5 * (d.g_inv + d.g_inv.transpose());
  const double err = (d.g * d.g_inv - Eigen::MatrixXd::Identity(d.g.rows(), d.g.cols())).cwiseAbs().maxCoeff();
  if (err > 1e-8) throw Error(ErrorCode::SingularG, "g g^-1 deviates from identity by " + std::to_string(err));
  return d;
}

// Hessian of a scalar density by central differences with step h.
inline Eigen::MatrixXd central_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                                       const Eigen::VectorXd& x, double h) {
  const Eigen::Index K = x.size();
  Eigen::MatrixXd H(K, K);
  const double f0 = f(x);
  for (Eigen::Index i = 0; i < K; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(K);
    e(i) = h;
    H(i, i) = (f(x + e) - 2 * f0 + f(x - e)) / (h * h);
    for (Eigen::Index j = i + 1; j < K; ++j) {
      Eigen::VectorXd u = Eigen::VectorXd::Zero(K);
      u(j) = h;
      H(i, j) = H(j, i) = (f(x + e + u) - f(x + e - u) - f(x - e + u) + f(x - e - u)) / (4 * h * h);
    }
  }
  return H;
}

inline Eigen::VectorXd central_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(x.size());
    e(i) = h;
    g(i) = (f(x + e) - f(x - e)) / (2 * h);
  }
  return g;
}

// Analytic mode without exact derivatives: differentiate the density (h = 1e-5).
inline AsymptoticDensities densities_from_phi(std::vector<Label> labels,
                                              std::function<double(const Eigen::VectorXd&)> phi,
                                              const InverseTemperature& theta0, double h = 1e-5) {
  auto d = densities_from_g(std::move(labels), central_hessian(phi, theta0, h), "analytic");
  d.phi_density = phi;
  d.eta_density = [phi, h](const Eigen::VectorXd& t) -> Eigen::VectorXd { return -central_gradient(phi, t, h); };
  return d;
}

// ---------------------------------------------------------------------------
// coefficients

struct FgcbCoefficients {
  double C_AA = 0;
  double C_AB[2] = {0, 0};
  double C_BB[2][2] = {{0, 0}, {0, 0}};
};

// Literal evaluation of the three second-order coefficient formulas from
// g^{ij}; slot numbering 1 = A1, 2 = A2, 3 = B1, 4 = B2. Absent slots drop out.
inline FgcbCoefficients fgcb_coefficients(const AsymptoticDensities& dens, const InverseTemperature& theta0) {
  const auto s = SlotMap::of(dens.labels);
  const double b1 = detail::cold_beta(s, theta0);
  const int idx[5] = {-1, s.A1, s.A2, s.B1, s.B2};
  auto gi = [&](int a, int b) {
    return (idx[a] < 0 || idx[b] < 0) ? 0.0 : dens.g_inv(idx[a], idx[b]);
  };
  const double b2 = detail::slot_value(theta0, s.A2);
  const double gam[3] = {0, detail::slot_value(theta0, s.B1), detail::slot_value(theta0, s.B2)};
  const double r = b2 / b1;
  FgcbCoefficients c;
  if (s.A2 >= 0) c.C_AA = (gi(2, 2) + r * r * gi(1, 1) - 2 * r * gi(1, 2)) / (2 * b1);
  for (int i = 1; i <= 2; ++i) {
    if (s.B(i) < 0 || s.A2 < 0) continue;
    c.C_AB[i - 1] = (gi(2, i + 2) + b2 * gam[i] * gi(1, 1) / (b1 * b1) - r * gi(1, i + 2) -
                     gam[i] / b1 * gi(1, 2)) /
                    b1;
  }
  for (int i = 1; i <= 2; ++i)
    for (int j = 1; j <= 2; ++j) {
      if (s.B(i) < 0 || s.B(j) < 0) continue;
      c.C_BB[i - 1][j - 1] = (gi(i + 2, j + 2) + gam[i] * gam[j] * gi(1, 1) / (b1 * b1) -
                              gam[j] / b1 * gi(1, i + 2) - gam[i] / b1 * gi(1, j + 2)) /
                             (2 * b1);
    }
  const double off = 0.5 * (c.C_BB[0][1] + c.C_BB[1][0]);
  c.C_BB[0][1] = c.C_BB[1][0] = off;
  return c;
}

// General-K quadratic form: Q^T M Q with Q the slot vector of heats, built as
// (1/(2 beta_1)) v^T g^{-1} v, v = P Q, where the A1 component of v carries the
// first-order entropy balance sum_{k != A1} theta^k Q_k / beta_1.
inline Eigen::MatrixXd deficit_form(const AsymptoticDensities& dens, const InverseTemperature& theta0) {
  const auto s = SlotMap::of(dens.labels);
  const double b1 = detail::cold_beta(s, theta0);
  const Eigen::Index K = theta0.size();
  Eigen::MatrixXd P = -Eigen::MatrixXd::Identity(K, K);
  P.row(s.A1) = theta0.transpose() / b1;
  P(s.A1, s.A1) = 0;
  Eigen::MatrixXd M = P.transpose() * dens.g_inv * P / (2 * b1);
  return 0.5 * (M + M.transpose());
}

inline double coefficient_form(const FgcbCoefficients& c, const HeatVector& q) {
  double f = c.C_AA * q.dQ_A2 * q.dQ_A2;
  const double qb[2] = {q.dQ_B1, q.dQ_B2};
  for (int i = 0; i < 2; ++i) {
    f += c.C_AB[i] * q.dQ_A2 * qb[i];
    for (int j = 0; j < 2; ++j) f += c.C_BB[i][j] * qb[i] * qb[j];
  }
  return f;
}

inline double gcb_bound(const HeatVector& q, const std::vector<Label>& labels, const InverseTemperature& theta0) {
  const auto s = SlotMap::of(labels);
  const double b1 = detail::cold_beta(s, theta0);
  return (1 - detail::slot_value(theta0, s.A2) / b1) * q.dQ_A2 - detail::slot_value(theta0, s.B1) / b1 * q.dQ_B1 -
         detail::slot_value(theta0, s.B2) / b1 * q.dQ_B2;
}

inline double fgcb_bound(const HeatVector& q, const std::vector<Label>& labels, const InverseTemperature& theta0,
                         double lambda, const FgcbCoefficients& c) {
  if (!(lambda > 0)) throw Error(ErrorCode::DimensionMismatch, "lambda must be positive");
  return gcb_bound(q, labels, theta0) - coefficient_form(c, q) / lambda;
}

}  // namespace fbe
