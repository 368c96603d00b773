#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"
#include "operators.hpp"

namespace fbe {

using InverseTemperature = Eigen::VectorXd;

constexpr double kProbabilityFloor = 1e-300;
constexpr double kKuboMoriDiagonal = 1e-12;

// phi = log Z, eta = <X>, J = Kubo-Mori metric, entropy = -tr tau log tau.
struct ThermoStats {
  double phi = 0;
  Eigen::VectorXd eta;
  Eigen::MatrixXd J;
  double entropy = 0;
};

namespace detail {

// Statistics of one commuting factor whose states carry log multiplicities lm.
inline ThermoStats factor_stats(const Eigen::MatrixXd& vals, const Eigen::VectorXd* lm,
                                const Eigen::VectorXd& theta) {
  const Eigen::Index d = vals.cols(), K = vals.rows();
  Eigen::VectorXd l = -(vals.transpose() * theta);
  if (lm) l += *lm;
  const double mx = l.maxCoeff();
  KahanSum z;
  for (Eigen::Index s = 0; s < d; ++s) z.add(std::exp(l(s) - mx));
  ThermoStats st;
  st.phi = mx + std::log(z.value());
  Eigen::VectorXd P = (l.array() - st.phi).exp();
  st.eta = vals * P;
  Eigen::MatrixXd c = vals.colwise() - st.eta;
  st.J = c * P.asDiagonal() * c.transpose();
  KahanSum S;
  for (Eigen::Index s = 0; s < d; ++s)
    if (P(s) > 0) S.add(-P(s) * (l(s) - st.phi - (lm ? (*lm)(s) : 0.0)));
  st.entropy = S.value();
  (void)K;
  return st;
}

inline void accumulate(ThermoStats& acc, const ThermoStats& s, double copies) {
  acc.phi += copies * s.phi;
  acc.eta += copies * s.eta;
  acc.J += copies * s.J;
  acc.entropy += copies * s.entropy;
}

inline double kubo_mori_kernel(double lp, double lq) {
  if (std::abs(lp - lq) < kKuboMoriDiagonal) return std::exp(lp);
  // (p - q)/(ln p - ln q) written as p (1 - e^{-d})/d with d > 0 to avoid cancellation
  if (lp < lq) std::swap(lp, lq);
  const double d = lp - lq;
  return std::exp(lp) * -std::expm1(-d) / d;
}

}  // namespace detail

// Factorized statistics: exact sums over factors / blocks, no joint enumeration.
inline ThermoStats thermo_stats(const ObservableSet& obs, const InverseTemperature& theta) {
  const int K = obs.K();
  if (theta.size() != K) throw Error(ErrorCode::DimensionMismatch, "theta size differs from K");
  if (!theta.allFinite()) throw Error(ErrorCode::Overflow, "non-finite theta");
  ThermoStats acc;
  acc.eta = Eigen::VectorXd::Zero(K);
  acc.J = Eigen::MatrixXd::Zero(K, K);
  if (obs.rep == Representation::Diagonal) {
    for (const auto& f : obs.factors)
      detail::accumulate(acc, detail::factor_stats(f.values, f.compressed() ? &f.log_mult : nullptr, theta), 1.0);
    return acc;
  }
  if (obs.rep == Representation::IIDSum) {
    for (const auto& b : obs.blocks)
      detail::accumulate(acc, detail::factor_stats(b.site, nullptr, theta), double(b.n));
    return acc;
  }
  const Eigen::Index d = obs.dense[0].rows();
  Eigen::MatrixXcd G = Eigen::MatrixXcd::Zero(d, d);
  for (int j = 0; j < K; ++j) G += theta(j) * obs.dense[j];
  auto ed = dense_eig(G);
  Eigen::VectorXd l = -ed.values;
  const double mx = l.maxCoeff();
  KahanSum z;
  for (Eigen::Index i = 0; i < d; ++i) z.add(std::exp(l(i) - mx));
  acc.phi = mx + std::log(z.value());
  Eigen::VectorXd lp = l.array() - acc.phi;
  Eigen::VectorXd p = lp.array().exp();
  for (Eigen::Index i = 0; i < d; ++i)
    if (p(i) < kProbabilityFloor) throw Error(ErrorCode::RankDeficient, "eigenvalue below 1e-300 floor");
  std::vector<Eigen::MatrixXcd> Y(static_cast<size_t>(K));
  for (int j = 0; j < K; ++j) {
    Y[size_t(j)] = ed.vectors.adjoint() * obs.dense[j] * ed.vectors;
    acc.eta(j) = (Y[size_t(j)].diagonal().real().array() * p.array()).sum();
  }
  Eigen::MatrixXd C(d, d);
  for (Eigen::Index k = 0; k < d; ++k)
    for (Eigen::Index l2 = 0; l2 < d; ++l2) C(k, l2) = detail::kubo_mori_kernel(lp(k), lp(l2));
  for (int i = 0; i < K; ++i)
    for (int j = i; j < K; ++j) {
      // sum_{k,l} c(p_k,p_l) Y_i(k,l) Y_j(l,k) = sum_{k,l} c(k,l) Re(Y_i(k,l) conj(Y_j(k,l)))
      double s = (C.array() * (Y[size_t(i)].array() * Y[size_t(j)].array().conjugate()).real()).sum();
      acc.J(i, j) = acc.J(j, i) = s - acc.eta(i) * acc.eta(j);
    }
  KahanSum S;
  for (Eigen::Index i = 0; i < d; ++i) S.add(-p(i) * lp(i));
  acc.entropy = S.value();
  return acc;
}

// Statistics over an explicit (merged or enumerated) joint spectrum.
inline ThermoStats thermo_stats(const JointSpectrum& js, const InverseTemperature& theta) {
  const Eigen::Index n = Eigen::Index(js.entries.size());
  const int K = int(theta.size());
  Eigen::MatrixXd vals(K, n);
  Eigen::VectorXd lm(n);
  for (Eigen::Index s = 0; s < n; ++s) {
    if (js.entries[size_t(s)].x.size() != K) throw Error(ErrorCode::DimensionMismatch, "tuple size differs from K");
    vals.col(s) = js.entries[size_t(s)].x;
    lm(s) = js.entries[size_t(s)].log_mult;
  }
  return detail::factor_stats(vals, &lm, theta);
}

// Lower/upper spectral bounds of each observable.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> spectral_bounds(const ObservableSet& obs) {
  const int K = obs.K();
  Eigen::VectorXd lo = Eigen::VectorXd::Zero(K), hi = Eigen::VectorXd::Zero(K);
  if (obs.rep == Representation::Dense) {
    for (int j = 0; j < K; ++j) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(obs.dense[j], Eigen::EigenvaluesOnly);
      lo(j) = es.eigenvalues()(0);
      hi(j) = es.eigenvalues()(es.eigenvalues().size() - 1);
    }
  } else if (obs.rep == Representation::Diagonal) {
    for (const auto& f : obs.factors) {
      lo += f.values.rowwise().minCoeff();
      hi += f.values.rowwise().maxCoeff();
    }
  } else {
    for (const auto& b : obs.blocks) {
      lo += double(b.n) * b.site.rowwise().minCoeff();
      hi += double(b.n) * b.site.rowwise().maxCoeff();
    }
  }
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// thermal states

enum class SpectrumMode { Compressed, Enumerated };

struct ThermalState {
  enum class Kind { Classes, Dense, TypeClasses };
  Kind kind = Kind::Classes;
  InverseTemperature theta;
  double phi = 0;
  double scale = 1;
  int K = 0;
  // Classes: descending per-state log probability, tie-broken; log_weight holds log p(i).
  std::vector<SpectrumEntry> classes;
  // Dense: descending log p with eigenvectors in matching column order.
  Eigen::VectorXd dense_log_p;
  Eigen::MatrixXcd dense_basis;
  Eigen::MatrixXd dense_tuples;  // K x d, <i|X_j|i>
  int below_floor = 0;

  Eigen::Index size() const {
    return kind == Kind::Dense ? dense_log_p.size() : Eigen::Index(classes.size());
  }
};

namespace detail {

// descending p, then ascending sum of values, then lexicographic tuple; stable
// sort keeps construction order last.
inline bool rank_before(double lpa, const Tuple& xa, double lpb, const Tuple& xb) {
  if (lpa != lpb) return lpa > lpb;
  const double sa = xa.sum(), sb = xb.sum();
  if (sa != sb) return sa < sb;
  for (Eigen::Index j = 0; j < xa.size(); ++j)
    if (xa(j) != xb(j)) return xa(j) < xb(j);
  return false;
}

inline double log_weight(const InverseTemperature& theta, const Tuple& x) {
  double s = 0;
  for (Eigen::Index j = 0; j < x.size(); ++j) s += theta(j) * x(j);
  return -s;
}

inline void sort_classes(std::vector<SpectrumEntry>& v) {
  std::stable_sort(v.begin(), v.end(), [](const SpectrumEntry& a, const SpectrumEntry& b) {
    return rank_before(a.log_weight, a.x, b.log_weight, b.x);
  });
}

}  // namespace detail

inline ThermalState build_thermal_state(const ObservableSet& obs, const InverseTemperature& theta,
                                        SpectrumMode mode = SpectrumMode::Compressed) {
  if (theta.size() != obs.K()) throw Error(ErrorCode::DimensionMismatch, "theta size differs from K");
  if (!theta.allFinite()) throw Error(ErrorCode::Overflow, "non-finite theta");
  ThermalState st;
  st.theta = theta;
  st.scale = obs.scale;
  st.K = obs.K();
  if (obs.rep == Representation::Dense) {
    if (mode == SpectrumMode::Enumerated) throw Error(ErrorCode::NonCommuting, "dense sets have no enumerated path");
    const Eigen::Index d = obs.dense[0].rows();
    Eigen::MatrixXcd G = Eigen::MatrixXcd::Zero(d, d);
    for (int j = 0; j < obs.K(); ++j) G += theta(j) * obs.dense[j];
    auto ed = dense_eig(G);
    Eigen::VectorXd l = -ed.values;
    LogSumExp lse;
    for (Eigen::Index i = 0; i < d; ++i) lse.add(l(i));
    st.phi = lse.value();
    Eigen::MatrixXd tup(obs.K(), d);
    for (int j = 0; j < obs.K(); ++j)
      for (Eigen::Index i = 0; i < d; ++i)
        tup(j, i) = (ed.vectors.col(i).adjoint() * obs.dense[j] * ed.vectors.col(i))(0, 0).real();
    std::vector<Eigen::Index> order(static_cast<size_t>(d));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return detail::rank_before(l(a), Tuple(tup.col(a)), l(b), Tuple(tup.col(b)));
    });
    st.kind = ThermalState::Kind::Dense;
    st.dense_log_p.resize(d);
    st.dense_basis.resize(d, d);
    st.dense_tuples.resize(obs.K(), d);
    for (Eigen::Index i = 0; i < d; ++i) {
      st.dense_log_p(i) = l(order[size_t(i)]) - st.phi;
      st.dense_basis.col(i) = ed.vectors.col(order[size_t(i)]);
      st.dense_tuples.col(i) = tup.col(order[size_t(i)]);
      if (st.dense_log_p(i) < std::log(kProbabilityFloor)) st.below_floor++;
    }
    return st;
  }
  if (obs.rep == Representation::IIDSum && mode == SpectrumMode::Compressed) {
    st.kind = ThermalState::Kind::TypeClasses;
    st.phi = thermo_stats(obs, theta).phi;
    return st;
  }
  JointSpectrum js = mode == SpectrumMode::Enumerated ? enumerate_states(obs) : joint_spectrum(obs);
  LogSumExp lse;
  for (auto& e : js.entries) {
    e.log_weight = detail::log_weight(theta, e.x);
    lse.add(e.log_weight + e.log_mult);
  }
  st.phi = lse.value();
  for (auto& e : js.entries) e.log_weight -= st.phi;
  detail::sort_classes(js.entries);
  st.classes = std::move(js.entries);
  st.kind = ThermalState::Kind::Classes;
  return st;
}

inline double free_entropy(const ObservableSet& obs, const InverseTemperature& theta) {
  return thermo_stats(obs, theta).phi;
}

namespace detail {

inline ThermoStats state_stats(const ThermalState& st, const ObservableSet& obs) {
  if (st.kind == ThermalState::Kind::Classes) {
    const Eigen::Index n = Eigen::Index(st.classes.size());
    Eigen::MatrixXd vals(st.K, n);
    Eigen::VectorXd lm(n);
    for (Eigen::Index s = 0; s < n; ++s) {
      vals.col(s) = st.classes[size_t(s)].x;
      lm(s) = st.classes[size_t(s)].log_mult;
    }
    return factor_stats(vals, &lm, st.theta);
  }
  return thermo_stats(obs, st.theta);
}

}  // namespace detail

inline Eigen::VectorXd dual_coordinates(const ThermalState& st, const ObservableSet& obs) {
  if (st.kind == ThermalState::Kind::Dense) {
    Eigen::VectorXd p = st.dense_log_p.array().exp();
    return st.dense_tuples * p;
  }
  return detail::state_stats(st, obs).eta;
}

inline Eigen::MatrixXd fisher_matrix(const ThermalState& st, const ObservableSet& obs) {
  if (st.kind == ThermalState::Kind::Dense && st.below_floor > 0)
    throw Error(ErrorCode::RankDeficient, std::to_string(st.below_floor) + " eigenvalues below 1e-300");
  return detail::state_stats(st, obs).J;
}

inline double von_neumann_entropy(const ThermalState& st, const ObservableSet& obs) {
  if (st.kind == ThermalState::Kind::Dense) {
    KahanSum s;
    for (Eigen::Index i = 0; i < st.dense_log_p.size(); ++i)
      s.add(-std::exp(st.dense_log_p(i)) * st.dense_log_p(i));
    return s.value();
  }
  return detail::state_stats(st, obs).entropy;
}

// ---------------------------------------------------------------------------
// relative entropy

// A density operator given by its spectrum and eigenbasis (columns).
struct DenseState {
  Eigen::VectorXd p;
  Eigen::MatrixXcd basis;
};

inline DenseState to_dense_state(const ThermalState& st) {
  if (st.kind != ThermalState::Kind::Dense) throw Error(ErrorCode::BasisMismatch, "not a dense state");
  return {st.dense_log_p.array().exp(), st.dense_basis};
}

inline double von_neumann_entropy(const DenseState& rho) {
  KahanSum s;
  for (Eigen::Index i = 0; i < rho.p.size(); ++i)
    if (rho.p(i) > 0) s.add(-rho.p(i) * std::log(rho.p(i)));
  return s.value();
}

// D(rho || sigma) for dense states: tr rho log rho - tr rho log sigma.
inline double relative_entropy(const DenseState& rho, const ThermalState& sigma) {
  if (sigma.kind != ThermalState::Kind::Dense) throw Error(ErrorCode::BasisMismatch, "sigma is not dense");
  if (rho.basis.rows() != sigma.dense_basis.rows()) throw Error(ErrorCode::DimensionMismatch, "dimension");
  for (Eigen::Index i = 0; i < rho.p.size(); ++i)
    if (!(rho.p(i) > 0)) throw Error(ErrorCode::RankDeficient, "rho not full rank");
  Eigen::MatrixXd ov = (rho.basis.adjoint() * sigma.dense_basis).cwiseAbs2();
  KahanSum s;
  for (Eigen::Index i = 0; i < rho.p.size(); ++i) {
    double cross = ov.row(i).dot(sigma.dense_log_p);
    s.add(rho.p(i) * (std::log(rho.p(i)) - cross));
  }
  return s.value();
}

// Aligned-spectrum path: rho given as per-state log probabilities on the same
// joint-eigenvalue labels (tuples) as sigma's classes.
inline double relative_entropy(const std::vector<SpectrumEntry>& rho, const ThermalState& sigma) {
  if (sigma.kind != ThermalState::Kind::Classes) throw Error(ErrorCode::BasisMismatch, "sigma has no class list");
  auto key_less = [](const SpectrumEntry* a, const SpectrumEntry* b) {
    for (Eigen::Index j = 0; j < a->x.size(); ++j)
      if (a->x(j) != b->x(j)) return a->x(j) < b->x(j);
    return false;
  };
  std::vector<const SpectrumEntry*> r, s;
  for (const auto& e : rho) r.push_back(&e);
  for (const auto& e : sigma.classes) s.push_back(&e);
  if (r.size() != s.size()) throw Error(ErrorCode::BasisMismatch, "label sets differ in size");
  std::sort(r.begin(), r.end(), key_less);
  std::sort(s.begin(), s.end(), key_less);
  KahanSum acc;
  for (size_t i = 0; i < r.size(); ++i) {
    if (r[i]->x != s[i]->x || r[i]->log_mult != s[i]->log_mult)
      throw Error(ErrorCode::BasisMismatch, "labels differ");
    acc.add(std::exp(r[i]->log_mult + r[i]->log_weight) * (r[i]->log_weight - s[i]->log_weight));
  }
  return acc.value();
}

// D(tau_a || tau_b) between two thermal states of the same observable set.
inline double relative_entropy(const ThermalState& a, const ThermalState& b, const ObservableSet& obs) {
  if (a.kind == ThermalState::Kind::Dense) return relative_entropy(to_dense_state(a), b);
  if (a.kind == ThermalState::Kind::Classes && b.kind == ThermalState::Kind::Classes)
    return relative_entropy(a.classes, b);
  // factorized: D = -S(a) + theta_b . eta_a + phi_b
  auto sa = thermo_stats(obs, a.theta);
  return -sa.entropy + b.theta.dot(sa.eta) + b.phi;
}

// ---------------------------------------------------------------------------
// effective temperature

struct EffectiveTemperature {
  InverseTemperature theta;
  double residual = 0;  // weighted norm of eta(theta) - target
  int iterations = 0;
  bool converged = false;
};

struct NewtonOptions {
  double tol = 1e-9;
  int max_iterations = 100;
  Eigen::VectorXd weights;  // per-quantity unit weights (beta0/gamma0); empty -> ones
};

inline EffectiveTemperature effective_temperature(const ObservableSet& obs, const Eigen::VectorXd& target,
                                                  const InverseTemperature& initial,
                                                  const NewtonOptions& opt = {}) {
  const int K = obs.K();
  if (target.size() != K || initial.size() != K) throw Error(ErrorCode::DimensionMismatch, "size");
  auto [lo, hi] = spectral_bounds(obs);
  for (int j = 0; j < K; ++j)
    if (!(target(j) > lo(j) && target(j) < hi(j)))
      throw Error(ErrorCode::OutOfRange, "target component " + std::to_string(j) + " outside the spectrum hull");
  Eigen::VectorXd w = opt.weights.size() == K ? opt.weights : Eigen::VectorXd::Ones(K);
  const double tol = opt.tol * (1.0 + target.cwiseProduct(w).norm());
  const double polish = 1e-14 * (1.0 + target.cwiseProduct(w).norm());

  EffectiveTemperature res;
  res.theta = initial;
  ThermoStats st = thermo_stats(obs, res.theta);
  Eigen::VectorXd r = st.eta - target;
  double rn = r.cwiseProduct(w).norm();
  // Newton on the convex dual F = phi + theta . target (gradient target - eta, Hessian J).
  // A step is kept on Armijo decrease of F or on a smaller residual; the latter
  // carries the last digits where F no longer resolves the decrease.
  double F = st.phi + res.theta.dot(target);
  // Steps are capped at 10 nats of change in any log-weight: sum_j |dtheta_j| (hi_j - lo_j).
  const Eigen::VectorXd spread = (hi - lo).cwiseMax(1e-300);
  for (int it = 0; it < opt.max_iterations && rn > polish; ++it) {
    Eigen::VectorXd step = st.J.ldlt().solve(r);
    if (!step.allFinite() || r.dot(step) <= 0) step = r;  // ill-conditioned J: fall back to the dual gradient
    const double reach = step.cwiseAbs().dot(spread);
    if (reach > 10) step *= 10 / reach;
    const double slope = -r.dot(step);
    double t = 1.0;
    bool improved = false;
    for (int h = 0; h < 60; ++h, t *= 0.5) {
      Eigen::VectorXd cand = res.theta + t * step;
      ThermoStats cs;
      try {
        cs = thermo_stats(obs, cand);
      } catch (const Error&) {
        continue;
      }
      Eigen::VectorXd cr = cs.eta - target;
      double cn = cr.cwiseProduct(w).norm();
      const double cF = cs.phi + cand.dot(target);
      if (cn < rn || cF <= F + 1e-4 * t * slope) {
        F = cF;
        res.theta = cand;
        st = std::move(cs);
        r = cr;
        rn = cn;
        improved = true;
        break;
      }
    }
    res.iterations = it + 1;
    if (!improved) break;
  }
  res.residual = rn;
  res.converged = rn <= tol;
  return res;
}

}  // namespace fbe
