#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"

namespace fbe {

constexpr int kMaxQuantities = 8;
constexpr int kDenseCap = 4096;
constexpr std::int64_t kEnumerationCap = std::int64_t(1) << 24;
constexpr double kCommutatorTol = 1e-10;

using Tuple = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxQuantities, 1>;
using cplx = std::complex<double>;

enum class Tag : char { A = 'A', B = 'B' };

struct Label {
  int bath = 1;
  Tag tag = Tag::A;
  std::string name() const { return std::string(1, char(tag)) + std::to_string(bath); }
  bool operator==(const Label& o) const { return bath == o.bath && tag == o.tag; }
};

enum class Representation { Dense, Diagonal, IIDSum };

inline const char* representation_name(Representation r) {
  switch (r) {
    case Representation::Dense: return "dense";
    case Representation::Diagonal: return "diagonal";
    case Representation::IIDSum: return "iid";
  }
  return "?";
}

// One tensor factor of a commuting set: values(j, s) is the contribution of
// factor state s to quantity j. The joint observable is the sum over factors.
// Optional log_mult compresses states sharing a tuple (empty -> all 1).
struct DiagonalFactor {
  Eigen::MatrixXd values;
  Eigen::VectorXd log_mult;
  int states() const { return int(values.cols()); }
  bool compressed() const { return log_mult.size() != 0; }
  double log_states() const {
    if (!compressed()) return std::log(double(states()));
    LogSumExp l;
    for (Eigen::Index s = 0; s < log_mult.size(); ++s) l.add(log_mult(s));
    return l.value();
  }
};

// n identical sites; site(j, s) is the single-site eigenvalue of quantity j.
struct IidBlock {
  Eigen::MatrixXd site;
  std::int64_t n = 1;
  int levels() const { return int(site.cols()); }
};

class ObservableSet {
 public:
  std::vector<Label> labels;
  double scale = 1.0;
  Representation rep = Representation::Diagonal;
  std::vector<Eigen::MatrixXcd> dense;
  std::vector<DiagonalFactor> factors;
  std::vector<IidBlock> blocks;

  int K() const { return int(labels.size()); }

  double log_dimension() const {
    switch (rep) {
      case Representation::Dense: return std::log(double(dense.empty() ? 0 : dense[0].rows()));
      case Representation::Diagonal: {
        double s = 0;
        for (const auto& f : factors) s += f.log_states();
        return s;
      }
      case Representation::IIDSum: {
        double s = 0;
        for (const auto& b : blocks) s += double(b.n) * std::log(double(b.levels()));
        return s;
      }
    }
    return 0;
  }

  // Exact dimension, or -1 when it does not fit comfortably in 62 bits.
  std::int64_t dimension() const {
    if (log_dimension() > 62 * std::log(2.0)) return -1;
    return std::int64_t(std::llround(std::exp(log_dimension())));
  }

  int slot(int bath, Tag tag) const {
    for (int j = 0; j < K(); ++j)
      if (labels[j].bath == bath && labels[j].tag == tag) return j;
    return -1;
  }

  bool commutative() const { return rep != Representation::Dense; }

  static ObservableSet make_dense(std::vector<Label> labels, std::vector<Eigen::MatrixXcd> mats,
                                  double scale = 1.0) {
    if (labels.size() != mats.size() || mats.empty())
      throw Error(ErrorCode::DimensionMismatch, "one matrix per label required");
    if (int(labels.size()) > kMaxQuantities)
      throw Error(ErrorCode::DimensionMismatch, "too many quantities");
    const auto d = mats[0].rows();
    for (const auto& m : mats)
      if (m.rows() != d || m.cols() != d)
        throw Error(ErrorCode::DimensionMismatch, "all dense members must be square of equal size");
    ObservableSet o;
    o.labels = std::move(labels);
    o.dense = std::move(mats);
    o.rep = Representation::Dense;
    o.scale = scale;
    return o;
  }

  static ObservableSet make_diagonal(std::vector<Label> labels, const std::vector<Eigen::VectorXd>& values,
                                     double scale = 1.0) {
    if (labels.size() != values.size() || values.empty())
      throw Error(ErrorCode::DimensionMismatch, "one eigenvalue vector per label required");
    DiagonalFactor f;
    f.values.resize(Eigen::Index(values.size()), values[0].size());
    for (size_t j = 0; j < values.size(); ++j) {
      if (values[j].size() != values[0].size())
        throw Error(ErrorCode::DimensionMismatch, "eigenvalue vectors differ in length");
      f.values.row(Eigen::Index(j)) = values[j].transpose();
    }
    return make_product(std::move(labels), {f}, scale);
  }

  static ObservableSet make_product(std::vector<Label> labels, std::vector<DiagonalFactor> factors,
                                    double scale = 1.0) {
    if (factors.empty()) throw Error(ErrorCode::DimensionMismatch, "no factors");
    if (int(labels.size()) > kMaxQuantities)
      throw Error(ErrorCode::DimensionMismatch, "too many quantities");
    for (const auto& f : factors)
      if (f.values.rows() != Eigen::Index(labels.size()) || f.values.cols() < 1 ||
          (f.compressed() && f.log_mult.size() != f.values.cols()))
        throw Error(ErrorCode::DimensionMismatch, "factor rows must equal the number of labels");
    ObservableSet o;
    o.labels = std::move(labels);
    o.factors = std::move(factors);
    o.rep = Representation::Diagonal;
    o.scale = scale;
    return o;
  }

  static ObservableSet make_iid(std::vector<Label> labels, std::vector<IidBlock> blocks, double scale) {
    if (blocks.empty()) throw Error(ErrorCode::DimensionMismatch, "no blocks");
    if (int(labels.size()) > kMaxQuantities)
      throw Error(ErrorCode::DimensionMismatch, "too many quantities");
    for (const auto& b : blocks)
      if (b.site.rows() != Eigen::Index(labels.size()) || b.site.cols() < 1 || b.n < 1)
        throw Error(ErrorCode::DimensionMismatch, "block rows must equal the number of labels");
    ObservableSet o;
    o.labels = std::move(labels);
    o.blocks = std::move(blocks);
    o.rep = Representation::IIDSum;
    o.scale = scale;
    return o;
  }
};

// ---------------------------------------------------------------------------
// dense_eig

struct EigenDecomposition {
  Eigen::VectorXd values;  // ascending
  Eigen::MatrixXcd vectors;
};

inline EigenDecomposition dense_eig(const Eigen::MatrixXcd& H, int cap = kDenseCap) {
  if (H.rows() != H.cols()) throw Error(ErrorCode::DimensionMismatch, "matrix not square");
  if (H.rows() > cap) throw Error(ErrorCode::DimensionCap, "dimension " + std::to_string(H.rows()));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::NoConvergence, "eigensolver failed");
  EigenDecomposition out{es.eigenvalues(), es.eigenvectors()};
  // fixed phase: largest-magnitude component real positive (first index on ties)
  for (Eigen::Index c = 0; c < out.vectors.cols(); ++c) {
    Eigen::Index best = 0;
    double bmag = -1;
    for (Eigen::Index r = 0; r < out.vectors.rows(); ++r) {
      double m = std::abs(out.vectors(r, c));
      if (m > bmag * (1 + 1e-12)) {
        bmag = m;
        best = r;
      }
    }
    if (bmag > 0) out.vectors.col(c) *= std::conj(out.vectors(best, c)) / bmag;
  }
  return out;
}

// ---------------------------------------------------------------------------
// validate

struct ValidationReport {
  bool passed = true;
  double hermiticity_residual = 0;  // max over members of max|X - X^+| / max|X|
  Eigen::VectorXd gram_eigenvalues;  // ascending
  bool representation_consistent = true;
  std::vector<std::pair<ErrorCode, std::string>> issues;
};

namespace detail {

inline double max_abs(const Eigen::MatrixXcd& m) { return m.cwiseAbs().maxCoeff(); }

// Uniform-measure moments of a commuting set, accumulated factor by factor:
// mean(j) = E[X_j]/1 and cov(i,j) = Cov[X_i, X_j] under the uniform state.
inline void add_uniform_moments(const Eigen::MatrixXd& vals, const Eigen::VectorXd& log_mult, double copies,
                                Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(vals.cols());
  if (log_mult.size()) w = (log_mult.array() - log_mult.maxCoeff()).exp();
  w /= w.sum();
  Eigen::VectorXd mu = vals * w;
  Eigen::MatrixXd c = vals.colwise() - mu;
  mean += copies * mu;
  cov += copies * (c * w.asDiagonal() * c.transpose());
}

}  // namespace detail

inline Eigen::MatrixXd gram_matrix(const ObservableSet& obs) {
  const int K = obs.K();
  Eigen::MatrixXd G(K + 1, K + 1);
  if (obs.rep == Representation::Dense) {
    const double d = double(obs.dense[0].rows());
    std::vector<Eigen::MatrixXcd> all = obs.dense;
    all.push_back(Eigen::MatrixXcd::Identity(obs.dense[0].rows(), obs.dense[0].rows()));
    for (int i = 0; i <= K; ++i)
      for (int j = 0; j <= K; ++j) G(i, j) = (all[i].adjoint() * all[j]).trace().real() / d;
    return G;
  }
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(K);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(K, K);
  if (obs.rep == Representation::Diagonal)
    for (const auto& f : obs.factors) detail::add_uniform_moments(f.values, f.log_mult, 1.0, mean, cov);
  else
    for (const auto& b : obs.blocks) detail::add_uniform_moments(b.site, Eigen::VectorXd(), double(b.n), mean, cov);
  G.topLeftCorner(K, K) = cov + mean * mean.transpose();
  G.block(0, K, K, 1) = mean;
  G.block(K, 0, 1, K) = mean.transpose();
  G(K, K) = 1.0;
  return G;
}

inline ValidationReport validate(const ObservableSet& obs) {
  ValidationReport r;
  auto fail = [&](ErrorCode c, std::string msg) {
    r.passed = false;
    r.issues.emplace_back(c, std::move(msg));
  };
  if (obs.K() < 1) fail(ErrorCode::DimensionMismatch, "no quantities");
  if (obs.rep == Representation::Dense) {
    if (obs.dense.size() != obs.labels.size()) {
      r.representation_consistent = false;
      fail(ErrorCode::DimensionMismatch, "member count differs from label count");
    }
    for (size_t j = 0; j < obs.dense.size(); ++j) {
      const auto& X = obs.dense[j];
      if (X.rows() != obs.dense[0].rows() || X.cols() != X.rows()) {
        r.representation_consistent = false;
        fail(ErrorCode::DimensionMismatch, "member " + std::to_string(j) + " has a different shape");
        continue;
      }
      double scale = detail::max_abs(X);
      double res = scale > 0 ? detail::max_abs(X - X.adjoint()) / scale : 0.0;
      r.hermiticity_residual = std::max(r.hermiticity_residual, res);
      if (res > 1e-12) fail(ErrorCode::NonHermitian, "member " + std::to_string(j) + " residual " + std::to_string(res));
    }
    if (!obs.factors.empty() || !obs.blocks.empty()) r.representation_consistent = false;
  } else if (obs.rep == Representation::Diagonal) {
    for (const auto& f : obs.factors)
      if (f.values.rows() != obs.K()) r.representation_consistent = false;
    if (!obs.dense.empty() || !obs.blocks.empty() || obs.factors.empty()) r.representation_consistent = false;
  } else {
    for (const auto& b : obs.blocks)
      if (b.site.rows() != obs.K() || b.n < 1) r.representation_consistent = false;
    if (!obs.dense.empty() || !obs.factors.empty() || obs.blocks.empty()) r.representation_consistent = false;
  }
  if (!r.representation_consistent) {
    fail(ErrorCode::DimensionMismatch, "inconsistent representation");
    return r;
  }
  if (!r.passed) return r;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram_matrix(obs), Eigen::EigenvaluesOnly);
  r.gram_eigenvalues = es.eigenvalues();
  const double lo = r.gram_eigenvalues(0), hi = r.gram_eigenvalues(r.gram_eigenvalues.size() - 1);
  if (!(lo > 1e-10 * hi)) fail(ErrorCode::DegenerateObservables, "Gram matrix rank < K+1");
  return r;
}

inline void require_valid(const ObservableSet& obs) {
  auto r = validate(obs);
  if (!r.passed) throw Error(r.issues.front().first, r.issues.front().second);
}

// ---------------------------------------------------------------------------
// joint spectra

struct SpectrumEntry {
  Tuple x;
  double log_mult = 0;   // log multiplicity
  double log_weight = 0; // unnormalized log weight (0 when no temperature attached)
};

struct JointSpectrum {
  std::vector<SpectrumEntry> entries;
  double log_dimension = 0;
  std::int64_t total_multiplicity = -1;  // exact when it fits, else -1
};

inline double commutator_norm(const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
  return (a * b - b * a).cwiseAbs().maxCoeff();
}

inline double max_commutator(const ObservableSet& obs) {
  if (obs.rep != Representation::Dense) return 0.0;
  double m = 0;
  for (int i = 0; i < obs.K(); ++i)
    for (int j = i + 1; j < obs.K(); ++j) m = std::max(m, commutator_norm(obs.dense[i], obs.dense[j]));
  return m;
}

namespace detail {

// Sort by tuple and merge neighbours whose components agree within tol.
inline std::vector<SpectrumEntry> merge_tuples(std::vector<SpectrumEntry> v, double tol) {
  std::stable_sort(v.begin(), v.end(), [](const SpectrumEntry& a, const SpectrumEntry& b) {
    for (Eigen::Index j = 0; j < a.x.size(); ++j)
      if (a.x(j) != b.x(j)) return a.x(j) < b.x(j);
    return false;
  });
  std::vector<SpectrumEntry> out;
  for (auto& e : v) {
    if (!out.empty() && (out.back().x - e.x).cwiseAbs().maxCoeff() <= tol) {
      out.back().log_mult = log_add_exp(out.back().log_mult, e.log_mult);
    } else {
      out.push_back(e);
    }
  }
  return out;
}

inline double tuple_tol(const std::vector<SpectrumEntry>& v) {
  double s = 0;
  for (const auto& e : v)
    if (e.x.size()) s = std::max(s, e.x.cwiseAbs().maxCoeff());
  return 1e-13 * std::max(1.0, s);
}

inline std::vector<SpectrumEntry> product(const std::vector<SpectrumEntry>& a,
                                          const std::vector<SpectrumEntry>& b) {
  std::vector<SpectrumEntry> out;
  out.reserve(a.size() * b.size());
  for (const auto& ea : a)
    for (const auto& eb : b) out.push_back({ea.x + eb.x, ea.log_mult + eb.log_mult, 0.0});
  return out;
}

inline std::vector<SpectrumEntry> factor_states(const DiagonalFactor& f) {
  std::vector<SpectrumEntry> v;
  v.reserve(size_t(f.states()));
  for (int s = 0; s < f.states(); ++s)
    v.push_back({Tuple(f.values.col(s)), f.compressed() ? f.log_mult(s) : 0.0, 0.0});
  return v;
}

inline void check_product_size(double log_count) {
  if (log_count > std::log(double(kEnumerationCap)))
    throw Error(ErrorCode::ScaleTooLarge, "joint enumeration exceeds cap of 2^24 entries");
}

// Class tuple for an occupation-count vector; shared by the compressed and
// enumerated paths so both produce bit-identical tuples.
inline Tuple counts_tuple(const IidBlock& b, const std::vector<std::int64_t>& counts) {
  Tuple x = Tuple::Zero(b.site.rows());
  for (int s = 0; s < b.levels(); ++s)
    if (counts[size_t(s)] != 0) x += double(counts[size_t(s)]) * b.site.col(s);
  return x;
}

}  // namespace detail

// Type classes of one i.i.d. block. Two-level blocks support a count window
// [k_lo, k_hi] on the level-1 occupation; log multiplicities are built by a
// compensated ratio recurrence from the window start so that relative values
// are accurate to ~1e-14 even at n ~ 1e6.
struct BlockClass {
  Tuple x;
  double log_mult;
  std::int64_t k;  // level-1 occupation for two-level blocks, enumeration index otherwise
};

inline std::vector<BlockClass> iid_block_classes(const IidBlock& b, std::int64_t k_lo = 0, std::int64_t k_hi = -1) {
  std::vector<BlockClass> out;
  const std::int64_t n = b.n;
  if (b.levels() == 1) {
    out.push_back({detail::counts_tuple(b, {n}), 0.0, 0});
    return out;
  }
  if (b.levels() == 2) {
    if (k_hi < 0 || k_hi > n) k_hi = n;
    k_lo = std::max<std::int64_t>(0, k_lo);
    out.reserve(size_t(k_hi - k_lo + 1));
    const double anchor = log_binomial(double(n), double(k_lo));
    KahanSum acc;
    for (std::int64_t k = k_lo; k <= k_hi; ++k) {
      out.push_back({detail::counts_tuple(b, {n - k, k}), anchor + acc.value(), k});
      acc.add(std::log(double(n - k) / double(k + 1)));
    }
    return out;
  }
  // general d0: enumerate compositions of n into d0 parts, merge equal tuples
  const int d0 = b.levels();
  const double log_count = log_binomial(double(n + d0 - 1), double(d0 - 1));
  detail::check_product_size(log_count);
  std::vector<SpectrumEntry> raw;
  std::vector<std::int64_t> c(size_t(d0), 0);
  const double lfn = std::lgamma(double(n) + 1.0);
  auto rec = [&](auto&& self, int level, std::int64_t left) -> void {
    if (level == d0 - 1) {
      c[size_t(level)] = left;
      double lm = lfn;
      for (auto v : c) lm -= std::lgamma(double(v) + 1.0);
      raw.push_back({detail::counts_tuple(b, c), lm, 0.0});
      return;
    }
    for (std::int64_t v = left; v >= 0; --v) {
      c[size_t(level)] = v;
      self(self, level + 1, left - v);
    }
  };
  rec(rec, 0, n);
  const double tol = detail::tuple_tol(raw);
  auto merged = detail::merge_tuples(std::move(raw), tol);
  std::int64_t idx = 0;
  for (auto& e : merged) out.push_back({e.x, e.log_mult, idx++});
  return out;
}

// Complete list of simultaneous eigenvalue tuples with multiplicities.
inline JointSpectrum joint_spectrum(const ObservableSet& obs) {
  JointSpectrum js;
  js.log_dimension = obs.log_dimension();
  js.total_multiplicity = obs.dimension();
  std::vector<SpectrumEntry> cur;
  if (obs.rep == Representation::Dense) {
    double cn = max_commutator(obs);
    if (cn > kCommutatorTol) throw Error(ErrorCode::NonCommuting, "commutator norm " + std::to_string(cn));
    // diagonalize a generic combination, then read off the tuples
    Eigen::MatrixXcd M = Eigen::MatrixXcd::Zero(obs.dense[0].rows(), obs.dense[0].cols());
    for (int j = 0; j < obs.K(); ++j) M += std::pow(0.7548776662466927, j) * obs.dense[j];
    auto ed = dense_eig(M);
    std::vector<SpectrumEntry> v;
    for (Eigen::Index c = 0; c < ed.vectors.cols(); ++c) {
      Tuple x(obs.K());
      for (int j = 0; j < obs.K(); ++j)
        x(j) = (ed.vectors.col(c).adjoint() * obs.dense[j] * ed.vectors.col(c))(0, 0).real();
      v.push_back({x, 0.0, 0.0});
    }
    double scale = 0;
    for (const auto& X : obs.dense) scale = std::max(scale, X.cwiseAbs().maxCoeff());
    js.entries = detail::merge_tuples(std::move(v), 1e-9 * std::max(1.0, scale));
    return js;
  }
  if (obs.rep == Representation::Diagonal) {
    double log_count = 0;
    for (size_t f = 0; f < obs.factors.size(); ++f) {
      auto fs = detail::factor_states(obs.factors[f]);
      const double ftol = detail::tuple_tol(fs);
      fs = detail::merge_tuples(std::move(fs), ftol);
      if (f == 0) {
        cur = std::move(fs);
      } else {
        log_count = std::log(double(cur.size())) + std::log(double(fs.size()));
        detail::check_product_size(log_count);
        cur = detail::product(cur, fs);
        const double ctol = detail::tuple_tol(cur);
        cur = detail::merge_tuples(std::move(cur), ctol);
      }
    }
  } else {
    for (size_t bi = 0; bi < obs.blocks.size(); ++bi) {
      std::vector<SpectrumEntry> bs;
      for (auto& c : iid_block_classes(obs.blocks[bi])) bs.push_back({c.x, c.log_mult, 0.0});
      if (bi == 0) {
        cur = std::move(bs);
      } else {
        detail::check_product_size(std::log(double(cur.size())) + std::log(double(bs.size())));
        cur = detail::product(cur, bs);
        const double ctol = detail::tuple_tol(cur);
        cur = detail::merge_tuples(std::move(cur), ctol);
      }
    }
  }
  js.entries = std::move(cur);
  return js;
}

// Every basis state as its own entry (multiplicity 1), in construction order.
// Used as the uncompressed reference for the type-class and merged paths.
inline JointSpectrum enumerate_states(const ObservableSet& obs) {
  if (obs.rep == Representation::Dense) throw Error(ErrorCode::NonCommuting, "dense sets are not enumerated");
  for (const auto& f : obs.factors)
    if (f.compressed()) throw Error(ErrorCode::ScaleTooLarge, "factor is stored with multiplicities");
  detail::check_product_size(obs.log_dimension());
  JointSpectrum js;
  js.log_dimension = obs.log_dimension();
  js.total_multiplicity = obs.dimension();
  std::vector<SpectrumEntry> cur;
  if (obs.rep == Representation::Diagonal) {
    for (size_t f = 0; f < obs.factors.size(); ++f) {
      auto fs = detail::factor_states(obs.factors[f]);
      cur = f == 0 ? fs : detail::product(cur, fs);
    }
  } else {
    for (size_t bi = 0; bi < obs.blocks.size(); ++bi) {
      const auto& b = obs.blocks[bi];
      const int d0 = b.levels();
      std::int64_t states = 1;
      for (std::int64_t s = 0; s < b.n; ++s) states *= d0;
      std::vector<SpectrumEntry> bs;
      bs.reserve(size_t(states));
      std::vector<std::int64_t> counts(static_cast<size_t>(d0));
      for (std::int64_t code = 0; code < states; ++code) {
        std::fill(counts.begin(), counts.end(), 0);
        std::int64_t c = code;
        for (std::int64_t s = 0; s < b.n; ++s) {
          counts[size_t(c % d0)]++;
          c /= d0;
        }
        bs.push_back({detail::counts_tuple(b, counts), 0.0, 0.0});
      }
      cur = bi == 0 ? std::move(bs) : detail::product(cur, bs);
    }
  }
  js.entries = std::move(cur);
  return js;
}

}  // namespace fbe
