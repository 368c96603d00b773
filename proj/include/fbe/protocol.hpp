#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "error.hpp"
#include "fgcb.hpp"
#include "numeric.hpp"
#include "operators.hpp"
#include "thermal.hpp"
#include "type_classes.hpp"

namespace fbe {

// ---------------------------------------------------------------------------
// ideal final inverse temperature

struct IdealFinalTemperature {
  InverseTemperature theta_lambda;
  double entropy_gap = 0;        // S(tau_lambda) - S(tau_0)
  Eigen::VectorXd heat_gaps;     // (eta0 - eta_lambda) - Q per slot, 0 at A1
  bool sign_ok = true;
  bool converged = false;
  int iterations = 0;
};

struct SolverOptions {
  double tol = 1e-9;
  int max_iterations = 100;
};

inline IdealFinalTemperature solve_ideal_final_temperature(const ObservableSet& obs, const InverseTemperature& theta0,
                                                           const Eigen::VectorXd& Q, double lambda,
                                                           const SolverOptions& opt = {}) {
  const int K = obs.K();
  const auto slots = SlotMap::of(obs.labels);
  const double b1 = detail::cold_beta(slots, theta0);
  if (Q.size() != K) throw Error(ErrorCode::DimensionMismatch, "heat vector size");
  if (!(lambda > 0)) throw Error(ErrorCode::DimensionMismatch, "lambda must be positive");
  const ThermoStats s0 = thermo_stats(obs, theta0);
  auto [lo, hi] = spectral_bounds(obs);
  for (int k = 0; k < K; ++k) {
    if (k == slots.A1) continue;
    const double t = s0.eta(k) - Q(k);
    if (!(t > lo(k) && t < hi(k)))
      throw Error(ErrorCode::HullViolation, "target expectation of " + obs.labels[size_t(k)].name() +
                                                " leaves the spectrum hull");
  }
  auto residual = [&](const ThermoStats& st, Eigen::VectorXd& F) {
    F.resize(K);
    int r = 0;
    F(r++) = (st.entropy - s0.entropy) / lambda;
    for (int k = 0; k < K; ++k)
      if (k != slots.A1) F(r++) = (s0.eta(k) - st.eta(k) - Q(k)) / lambda;
  };
  auto converged = [&](const ThermoStats& st) {
    if (std::abs(st.entropy - s0.entropy) > opt.tol * std::max(1.0, std::abs(s0.entropy))) return false;
    for (int k = 0; k < K; ++k)
      if (k != slots.A1 && std::abs(s0.eta(k) - st.eta(k) - Q(k)) > opt.tol * std::max(1.0, std::abs(s0.eta(k))))
        return false;
    return true;
  };

  IdealFinalTemperature out;
  InverseTemperature theta = theta0;
  if (Q.cwiseAbs().maxCoeff() > 0) {
    // linearization: d eta_k = -Q_k, d eta_1 from the first-order entropy balance
    Eigen::VectorXd deta = -Q;
    double s = 0;
    for (int k = 0; k < K; ++k)
      if (k != slots.A1) s += theta0(k) * Q(k);
    deta(slots.A1) = s / b1;
    Eigen::VectorXd cand = theta0 - s0.J.ldlt().solve(deta);
    try {
      if (cand.allFinite()) {
        thermo_stats(obs, cand);
        theta = cand;
      }
    } catch (const Error&) {
    }
  }
  ThermoStats st = thermo_stats(obs, theta);
  Eigen::VectorXd F;
  residual(st, F);
  double fn = F.norm();
  int it = 0;
  for (; it < opt.max_iterations && fn > 0; ++it) {
    Eigen::MatrixXd Jac(K, K);
    int r = 0;
    Jac.row(r++) = -(st.J * theta).transpose() / lambda;
    for (int k = 0; k < K; ++k)
      if (k != slots.A1) Jac.row(r++) = st.J.row(k) / lambda;
    Eigen::VectorXd step = -Jac.partialPivLu().solve(F);
    if (!step.allFinite()) break;
    bool improved = false;
    double t = 1.0;
    for (int h = 0; h < 60; ++h, t *= 0.5) {
      InverseTemperature cand = theta + t * step;
      ThermoStats cs;
      try {
        cs = thermo_stats(obs, cand);
      } catch (const Error&) {
        continue;
      }
      Eigen::VectorXd cf;
      residual(cs, cf);
      if (cf.norm() < fn) {
        theta = cand;
        st = std::move(cs);
        F = cf;
        fn = cf.norm();
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  out.iterations = it;
  out.theta_lambda = theta;
  out.entropy_gap = st.entropy - s0.entropy;
  out.heat_gaps = Eigen::VectorXd::Zero(K);
  for (int k = 0; k < K; ++k)
    if (k != slots.A1) out.heat_gaps(k) = s0.eta(k) - st.eta(k) - Q(k);
  out.converged = converged(st);
  out.sign_ok = theta(slots.A1) * b1 >= 0;
  if (!out.converged) throw Error(ErrorCode::NoConvergence, "ideal final temperature did not converge");
  if (!out.sign_ok) throw Error(ErrorCode::SignViolation, "beta_lambda1 * beta_1 < 0");
  return out;
}

inline IdealFinalTemperature solve_ideal_final_temperature(const ObservableSet& obs, const InverseTemperature& theta0,
                                                           const HeatVector& q, double lambda,
                                                           const SolverOptions& opt = {}) {
  return solve_ideal_final_temperature(obs, theta0, heat_slots(q, obs.labels), lambda, opt);
}

// ---------------------------------------------------------------------------
// optimal protocol

struct CouplingPiece {
  std::int64_t src = 0;  // rank index of the initial class
  std::int64_t dst = 0;  // rank index of the final class
  double log_count = 0;
};

struct ProtocolOutcome {
  std::string path;
  std::vector<Label> labels;
  InverseTemperature theta0, theta_lambda;
  Eigen::VectorXd eta_initial;            // tr X tau_0
  Eigen::VectorXd rho_opt_expectations;   // tr X rho_opt
  Eigen::VectorXd eta_ideal;              // tr X tau_lambda
  HeatVector achieved_heats;
  double work = 0;                        // sum over A slots of tr A (tau_0 - rho_opt)
  double entropy_initial = 0, entropy_final = 0;
  double D_to_ideal = 0, D_to_initial = 0;
  InverseTemperature xi_lambda;
  bool xi_converged = false;
  double eta_gap = 0;
  double second_law_lhs = 0;              // sum_j theta0_j (eta_opt_j - eta0_j)
  double degenerate_spread = 0;           // max observable spread inside probability-tied classes
  double total_mass = 0;
  double unassigned_mass = 0;
  bool monotone = true;
  std::uint64_t pieces = 0;
  std::vector<CouplingPiece> coupling;    // kept when small enough
  bool coupling_complete = true;
};

struct ProtocolOptions {
  std::size_t max_stored_pieces = std::size_t(1) << 20;
  double log_mass_cut = 40.0;
  bool solve_xi = true;
};

namespace detail {

class SpreadTracker {
 public:
  void see(double log_p, const Tuple& x) {
    if (has_ && log_p == lp_) {
      spread_ = std::max(spread_, (x - first_).cwiseAbs().maxCoeff());
    } else {
      has_ = true;
      lp_ = log_p;
      first_ = x;
    }
  }
  double spread() const { return spread_; }

 private:
  bool has_ = false;
  double lp_ = 0, spread_ = 0;
  Tuple first_;
};

inline void finish_outcome(ProtocolOutcome& o, const ObservableSet& obs, const ProtocolOptions& opt) {
  const auto slots = SlotMap::of(obs.labels);
  Eigen::VectorXd delta = o.eta_initial - o.rho_opt_expectations;
  o.achieved_heats = heat_from_slots(delta, obs.labels, with_default_weights({}, obs.labels, o.theta0));
  o.work = 0;
  for (int k = 0; k < obs.K(); ++k)
    if (obs.labels[size_t(k)].tag == Tag::A) o.work += delta(k);
  KahanSum sl;
  for (int k = 0; k < obs.K(); ++k) sl.add(o.theta0(k) * (o.rho_opt_expectations(k) - o.eta_initial(k)));
  o.second_law_lhs = sl.value();
  o.eta_ideal = thermo_stats(obs, o.theta_lambda).eta;
  o.xi_lambda = o.theta_lambda;
  if (opt.solve_xi) {
    try {
      auto xi = effective_temperature(obs, o.rho_opt_expectations, o.theta_lambda);
      o.xi_lambda = xi.theta;
      o.xi_converged = xi.converged;
      o.eta_gap = (o.eta_ideal - thermo_stats(obs, xi.theta).eta).norm();
    } catch (const Error&) {
      o.xi_converged = false;
      o.eta_gap = std::numeric_limits<double>::quiet_NaN();
    }
  }
  (void)slots;
}

// Run-length rank coupling of two ranked streams.
inline void couple(RankedStream& A, RankedStream& B, const InverseTemperature& theta0, ProtocolOutcome& o,
                   const ProtocolOptions& opt) {
  const int K = int(theta0.size());
  const double norm0 = A.log_norm();
  if (A.count_offset() != B.count_offset() || A.x_offset() != B.x_offset())
    throw Error(ErrorCode::BasisMismatch, "streams do not share offsets");
  // sums run over relative values; offsets are restored at the end
  const double C = A.count_offset();
  const Tuple X = A.x_offset();
  RankedClass a, b;
  if (!A.next(a) || !B.next(b)) throw Error(ErrorCode::DimensionMismatch, "empty spectrum");
  std::int64_t ia = 0, ib = 0;
  double rem_a = a.log_count, rem_b = b.log_count;
  std::vector<KahanSum> eta0(static_cast<size_t>(K)), eta_opt(static_cast<size_t>(K));
  KahanSum S0, Sf, Dl, Di, mass0, massf;
  SpreadTracker sa, sb;
  sa.see(a.log_p, a.x);
  sb.see(b.log_p, b.x);
  auto open_a = [&]() {
    const double m = std::exp(a.log_count + a.log_p);
    mass0.add(m);
    S0.add(-m * a.log_p);
    for (int k = 0; k < K; ++k) eta0[size_t(k)].add(m * a.x(k));
  };
  open_a();
  std::int64_t last_dst = 0;
  bool a_live = true, b_live = true;
  while (a_live && b_live) {
    const double tol = 4 * std::numeric_limits<double>::epsilon() * std::max({1.0, std::abs(rem_a), std::abs(rem_b)});
    double piece;
    bool adv_a = false, adv_b = false;
    if (std::abs(rem_a - rem_b) <= tol) {
      piece = std::max(rem_a, rem_b);
      adv_a = adv_b = true;
    } else if (rem_a < rem_b) {
      piece = rem_a;
      rem_b = log_sub_exp(rem_b, rem_a);
      adv_a = true;
    } else {
      piece = rem_b;
      rem_a = log_sub_exp(rem_a, rem_b);
      adv_b = true;
    }
    const double m = std::exp(piece + a.log_p);
    massf.add(m);
    Sf.add(-m * a.log_p);
    Dl.add(m * (a.log_p - b.log_p));
    Di.add(m * (a.log_p - (detail::log_weight(theta0, b.x) - norm0)));
    for (int k = 0; k < K; ++k) eta_opt[size_t(k)].add(m * b.x(k));
    if (ib < last_dst) o.monotone = false;
    last_dst = ib;
    ++o.pieces;
    if (o.coupling.size() < opt.max_stored_pieces)
      o.coupling.push_back({ia, ib, piece});
    else
      o.coupling_complete = false;
    if (adv_a) {
      if (A.next(a)) {
        ++ia;
        rem_a = a.log_count;
        sa.see(a.log_p, a.x);
        open_a();
      } else {
        a_live = false;
      }
    }
    if (adv_b) {
      if (B.next(b)) {
        ++ib;
        rem_b = b.log_count;
        sb.see(b.log_p, b.x);
      } else {
        b_live = false;
      }
    }
  }
  // initial mass left without a partner (only possible with truncated windows)
  double left = a_live ? std::exp(rem_a + a.log_p) : 0.0;
  if (a_live)
    while (A.next(a)) {
      open_a();
      left += std::exp(a.log_count + a.log_p);
    }
  o.unassigned_mass = left;
  o.total_mass = massf.value();
  o.entropy_initial = S0.value() + C * mass0.value();
  o.entropy_final = Sf.value() + C * massf.value();
  o.D_to_ideal = Dl.value();
  o.D_to_initial = Di.value();
  o.eta_initial.resize(K);
  o.rho_opt_expectations.resize(K);
  for (int k = 0; k < K; ++k) {
    o.eta_initial(k) = eta0[size_t(k)].value() + X(k) * mass0.value();
    o.rho_opt_expectations(k) = eta_opt[size_t(k)].value() + X(k) * massf.value();
  }
  o.degenerate_spread = std::max(sa.spread(), sb.spread());
}

}  // namespace detail

inline ProtocolOutcome build_optimal_protocol(const ObservableSet& obs, const ThermalState& s0,
                                              const ThermalState& sl, const ProtocolOptions& opt = {}) {
  if (s0.kind != sl.kind || s0.K != sl.K || s0.K != obs.K() || s0.size() != sl.size())
    throw Error(ErrorCode::DimensionMismatch, "states are not over the same observable set");
  ProtocolOutcome o;
  o.labels = obs.labels;
  o.theta0 = s0.theta;
  o.theta_lambda = sl.theta;
  const int K = obs.K();
  if (s0.kind == ThermalState::Kind::Dense) {
    o.path = "dense";
    const Eigen::Index d = s0.dense_log_p.size();
    Eigen::VectorXd p0 = s0.dense_log_p.array().exp();
    o.eta_initial = s0.dense_tuples * p0;
    o.rho_opt_expectations = sl.dense_tuples * p0;
    KahanSum S, Dl;
    for (Eigen::Index i = 0; i < d; ++i) {
      S.add(-p0(i) * s0.dense_log_p(i));
      Dl.add(p0(i) * (s0.dense_log_p(i) - sl.dense_log_p(i)));
      o.coupling.push_back({std::int64_t(i), std::int64_t(i), 0.0});
    }
    o.pieces = std::uint64_t(d);
    o.entropy_initial = o.entropy_final = S.value();
    o.D_to_ideal = Dl.value();
    o.D_to_initial = relative_entropy(DenseState{p0, sl.dense_basis}, s0);
    o.total_mass = p0.sum();
    detail::SpreadTracker sp;
    for (Eigen::Index i = 0; i < d; ++i) sp.see(sl.dense_log_p(i), Tuple(sl.dense_tuples.col(i)));
    o.degenerate_spread = sp.spread();
  } else if (s0.kind == ThermalState::Kind::Classes) {
    o.path = "classes";
    VectorStream A(s0), B(sl);
    detail::couple(A, B, s0.theta, o, opt);
  } else {
    o.path = "type-classes";
    TypeClassStream A(obs, s0.theta, opt.log_mass_cut);
    TypeClassStream B(obs, sl.theta, opt.log_mass_cut, &A);
    detail::couple(A, B, s0.theta, o, opt);
  }
  (void)K;
  detail::finish_outcome(o, obs, opt);
  return o;
}

// ---------------------------------------------------------------------------
// achievability

struct AchievabilityReport {
  HeatVector target, achieved;
  Eigen::Vector3d heat_errors = Eigen::Vector3d::Zero();  // |achieved - target| per (A2, B1, B2)
  double heat_error_norm = 0;                              // weighted norm of achieved - target
  double gcb = 0, fgcb = 0;
  double work_gap = 0;        // Delta W_opt(Q) - Delta W_achieved
  double deficit = 0;         // GCB(Q) - Delta W_achieved
  double scaled_deficit = 0;  // deficit * lambda / ||Q||^2
  double coefficient_form = 0;
  double D_to_ideal = 0;
  double eta_gap = 0;
  double entropy_residual = 0;     // |S_final - S_initial| / S_initial
  double second_law_residual = 0;  // |lhs - D| / max(1, |D|)
  double Q_norm = 0;
  bool in_window = false;
};

inline AchievabilityReport achievability_report(const ProtocolOutcome& o, const HeatVector& Q, double lambda,
                                                const FgcbCoefficients& c) {
  AchievabilityReport r;
  r.target = Q;
  r.achieved = o.achieved_heats;
  r.heat_errors = Eigen::Vector3d(std::abs(o.achieved_heats.dQ_A2 - Q.dQ_A2), std::abs(o.achieved_heats.dQ_B1 - Q.dQ_B1),
                                  std::abs(o.achieved_heats.dQ_B2 - Q.dQ_B2));
  HeatVector diff = Q;
  diff.dQ_A2 = o.achieved_heats.dQ_A2 - Q.dQ_A2;
  diff.dQ_B1 = o.achieved_heats.dQ_B1 - Q.dQ_B1;
  diff.dQ_B2 = o.achieved_heats.dQ_B2 - Q.dQ_B2;
  r.heat_error_norm = diff.norm();
  r.gcb = gcb_bound(Q, o.labels, o.theta0);
  r.coefficient_form = coefficient_form(c, Q);
  r.fgcb = r.gcb - r.coefficient_form / lambda;
  r.work_gap = r.fgcb - o.work;
  r.deficit = r.gcb - o.work;
  r.Q_norm = Q.norm();
  r.scaled_deficit = Q.norm2() > 0 ? r.deficit * lambda / Q.norm2() : 0.0;
  r.D_to_ideal = o.D_to_ideal;
  r.eta_gap = o.eta_gap;
  r.entropy_residual =
      std::abs(o.entropy_final - o.entropy_initial) / std::max(std::abs(o.entropy_initial), 1e-300);
  r.second_law_residual = std::abs(o.second_law_lhs - o.D_to_initial) / std::max(1.0, std::abs(o.D_to_initial));
  r.in_window = r.Q_norm >= 3 * std::pow(lambda, 5.0 / 8.0) && r.Q_norm <= lambda / 3;
  return r;
}

// ---------------------------------------------------------------------------
// Pythagorean check

struct PythagoreanResult {
  InverseTemperature theta_star;
  double D_rho_sigma = 0, D_rho_star = 0, D_star_sigma = 0;
  double residual = 0;
  bool solver_converged = false;
};

inline PythagoreanResult pythagorean_check(const DenseState& rho, const ThermalState& sigma, const ObservableSet& obs) {
  if (obs.rep != Representation::Dense || sigma.kind != ThermalState::Kind::Dense)
    throw Error(ErrorCode::BasisMismatch, "the Pythagorean check runs on dense states");
  const int K = obs.K();
  Eigen::VectorXd eta(K);
  for (int j = 0; j < K; ++j) {
    Eigen::MatrixXcd Y = rho.basis.adjoint() * obs.dense[j] * rho.basis;
    eta(j) = (Y.diagonal().real().array() * rho.p.array()).sum();
  }
  PythagoreanResult r;
  auto et = effective_temperature(obs, eta, sigma.theta);
  r.theta_star = et.theta;
  r.solver_converged = et.converged;
  auto star = build_thermal_state(obs, et.theta);
  r.D_rho_sigma = relative_entropy(rho, sigma);
  r.D_rho_star = relative_entropy(rho, star);
  r.D_star_sigma = relative_entropy(to_dense_state(star), sigma);
  r.residual = r.D_rho_sigma - r.D_rho_star - r.D_star_sigma;
  return r;
}

}  // namespace fbe
