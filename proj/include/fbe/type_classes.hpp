#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <tuple>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"
#include "operators.hpp"
#include "thermal.hpp"

namespace fbe {

// Classes of equal per-state probability emitted in descending rank order.
// Values are relative to stream-wide offsets so that masses stay well conditioned
// at large scale: the true per-state log probability is log_p - count_offset(),
// the true log state count is log_count + count_offset(), and the true tuple is
// x + x_offset().
struct RankedClass {
  double log_p = 0;
  double log_count = 0;
  Tuple x;
};

class RankedStream {
 public:
  virtual ~RankedStream() = default;
  virtual bool next(RankedClass& out) = 0;
  // log normalization consistent with the relative classes
  virtual double log_norm() const = 0;
  virtual double count_offset() const { return 0; }
  virtual Tuple x_offset() const = 0;
};

// Materialized, already-sorted class list (no offsets).
class VectorStream final : public RankedStream {
 public:
  explicit VectorStream(const ThermalState& st) : st_(st) {}
  bool next(RankedClass& out) override {
    if (i_ >= st_.classes.size()) return false;
    const auto& e = st_.classes[i_++];
    out.log_p = e.log_weight;
    out.log_count = e.log_mult;
    out.x = e.x;
    return true;
  }
  double log_norm() const override { return st_.phi; }
  Tuple x_offset() const override { return Tuple::Zero(st_.K); }

 private:
  const ThermalState& st_;
  size_t i_ = 0;
};

// Lazy ranked stream over the product of i.i.d. blocks. All blocks but the
// last form the rows (materialized, windowed); the last block's classes are the
// columns. Each row is monotone along the column order, so a k-way heap merge
// yields the global order with O(rows) memory.
//
// Each block is expressed relative to a reference class (its mode, or the
// reference of `shared` so two streams over the same set share offsets).
class TypeClassStream final : public RankedStream {
 public:
  // Classes whose block-marginal log mass is more than log_mass_cut below the
  // block maximum are dropped, unless the untruncated product is small enough
  // to keep whole (then the stream is exact).
  TypeClassStream(const ObservableSet& obs, const InverseTemperature& theta, double log_mass_cut = 40.0,
                  const TypeClassStream* shared = nullptr)
      : theta_(theta) {
    if (obs.rep != Representation::IIDSum) throw Error(ErrorCode::DimensionMismatch, "not an IIDSum set");
    if (shared && shared->refs_.size() != obs.blocks.size())
      throw Error(ErrorCode::DimensionMismatch, "shared stream is over a different set");
    double full = 0;
    for (const auto& b : obs.blocks) full += log_binomial(double(b.n + b.levels() - 1), double(b.levels() - 1));
    const bool exact = full <= std::log(double(std::int64_t(1) << 22));
    std::vector<std::vector<BlockClass>> per;
    norm_ = 0;
    count_offset_ = 0;
    x_offset_ = Tuple::Zero(obs.K());
    for (size_t bi = 0; bi < obs.blocks.size(); ++bi) {
      const auto& b = obs.blocks[bi];
      std::vector<BlockClass> cls;
      Ref ref;
      if (b.levels() == 2) {
        const auto [lo, hi, mode] = exact ? std::tuple<std::int64_t, std::int64_t, std::int64_t>{0, b.n, -1}
                                          : window(b, theta, log_mass_cut);
        if (shared) {
          ref = shared->refs_[bi];
        } else {
          const std::int64_t k = mode >= 0 ? mode : two_level_mode(b, theta);
          ref = {k, log_binomial(double(b.n), double(k)), detail::counts_tuple(b, {b.n - k, k})};
        }
        cls = two_level_relative(b, lo, hi, ref.k);
      } else {
        cls = exact ? iid_block_classes(b) : windowed_general(b, theta, log_mass_cut);
        if (shared) {
          ref = shared->refs_[bi];
        } else {
          const auto top = std::max_element(cls.begin(), cls.end(), [&](const BlockClass& a, const BlockClass& c) {
            return a.log_mult + detail::log_weight(theta, a.x) < c.log_mult + detail::log_weight(theta, c.x);
          });
          ref = {top->k, top->log_mult, top->x};
        }
        for (auto& c : cls) {
          c.log_mult -= ref.log_mult;
          c.x -= ref.x;
        }
      }
      refs_.push_back(ref);
      count_offset_ += ref.log_mult;
      x_offset_ += ref.x;
      LogSumExp lse;
      for (const auto& c : cls) lse.add(c.log_mult + detail::log_weight(theta, c.x));
      norm_ += lse.value();
      per.push_back(std::move(cls));
    }
    // columns: last block sorted by its own rank order
    cols_ = std::move(per.back());
    per.pop_back();
    std::stable_sort(cols_.begin(), cols_.end(), [&](const BlockClass& a, const BlockClass& b) {
      return detail::rank_before(detail::log_weight(theta, a.x), a.x, detail::log_weight(theta, b.x), b.x);
    });
    // rows: product of the remaining blocks
    rows_.push_back({Tuple::Zero(obs.K()), 0.0});
    for (const auto& cls : per) {
      std::vector<Row> next;
      next.reserve(rows_.size() * cls.size());
      for (const auto& r : rows_)
        for (const auto& c : cls) next.push_back({r.x + c.x, r.log_count + c.log_mult});
      rows_ = std::move(next);
    }
    for (std::uint32_t r = 0; r < rows_.size(); ++r) push(r, 0);
  }

  bool next(RankedClass& out) override {
    if (heap_.empty()) return false;
    Node n = heap_.top();
    heap_.pop();
    out.log_p = n.log_p - norm_;
    out.log_count = rows_[n.row].log_count + cols_[n.col].log_mult;
    out.x = n.x;
    if (n.col + 1 < cols_.size()) push(n.row, n.col + 1);
    if (has_last_ && detail::rank_before(out.log_p, out.x, last_log_p_, last_x_))
      throw Error(ErrorCode::NoConvergence, "type-class stream order violated (row not monotone)");
    has_last_ = true;
    last_log_p_ = out.log_p;
    last_x_ = out.x;
    ++emitted_;
    return true;
  }
  double log_norm() const override { return norm_; }
  double count_offset() const override { return count_offset_; }
  Tuple x_offset() const override { return x_offset_; }
  std::size_t rows() const { return rows_.size(); }
  std::size_t cols() const { return cols_.size(); }
  std::uint64_t emitted() const { return emitted_; }

 private:
  struct Ref {
    std::int64_t k = 0;
    double log_mult = 0;
    Tuple x;
  };
  struct Row {
    Tuple x;
    double log_count;
  };
  struct Node {
    double log_p;
    Tuple x;
    std::uint32_t row, col;
  };
  struct After {
    bool operator()(const Node& a, const Node& b) const {
      if (detail::rank_before(b.log_p, b.x, a.log_p, a.x)) return true;
      if (detail::rank_before(a.log_p, a.x, b.log_p, b.x)) return false;
      return a.row > b.row;
    }
  };

  void push(std::uint32_t r, std::uint32_t c) {
    Tuple x = rows_[r].x + cols_[c].x;
    heap_.push({detail::log_weight(theta_, x), x, r, c});
  }

  // log mass(k+1) - log mass(k) = log((n-k)/(k+1)) - a
  static double level_gap(const IidBlock& b, const InverseTemperature& theta) {
    return theta.dot(b.site.col(1) - b.site.col(0));
  }

  static std::int64_t two_level_mode(const IidBlock& b, const InverseTemperature& theta) {
    const double a = level_gap(b, theta);
    const double q = a >= 0 ? std::exp(-a) / (1 + std::exp(-a)) : 1 / (1 + std::exp(a));
    return std::clamp<std::int64_t>(std::int64_t(std::floor(double(b.n + 1) * q)), 0, b.n);
  }

  static std::tuple<std::int64_t, std::int64_t, std::int64_t> window(const IidBlock& b, const InverseTemperature& theta,
                                                                     double cut) {
    const std::int64_t n = b.n, mode = two_level_mode(b, theta);
    const double a = level_gap(b, theta);
    double rel = 0;
    std::int64_t hi = mode;
    while (hi < n) {
      rel += std::log(double(n - hi) / double(hi + 1)) - a;
      if (rel < -cut) break;
      ++hi;
    }
    rel = 0;
    std::int64_t lo = mode;
    while (lo > 0) {
      rel -= std::log(double(n - lo + 1) / double(lo)) - a;
      if (rel < -cut) break;
      --lo;
    }
    return {lo, hi, mode};
  }

  // Classes k in [lo, hi] with log C(n, k) - log C(n, ref) built by the ratio
  // recurrence outward from ref, and tuples (k - ref)(site_1 - site_0).
  static std::vector<BlockClass> two_level_relative(const IidBlock& b, std::int64_t lo, std::int64_t hi,
                                                    std::int64_t ref) {
    const std::int64_t n = b.n;
    const Tuple step = b.site.col(1) - b.site.col(0);
    auto ratio = [n](std::int64_t k) { return std::log(double(n - k) / double(k + 1)); };  // C(n,k+1)/C(n,k)
    std::vector<BlockClass> out(size_t(hi - lo + 1));
    KahanSum acc;
    std::int64_t k = ref;
    auto put = [&](std::int64_t kk, double lm) {
      if (kk >= lo && kk <= hi) out[size_t(kk - lo)] = {double(kk - ref) * step, lm, kk};
    };
    // upward from ref
    put(ref, 0.0);
    for (k = ref; k < hi; ++k) {
      acc.add(ratio(k));
      put(k + 1, acc.value());
    }
    KahanSum down;
    for (k = ref; k > lo; --k) {
      down.add(-ratio(k - 1));
      put(k - 1, down.value());
    }
    return out;
  }

  static std::vector<BlockClass> windowed_general(const IidBlock& b, const InverseTemperature& theta, double cut) {
    auto all = iid_block_classes(b);
    double mx = kNegInf;
    for (const auto& c : all) mx = std::max(mx, c.log_mult + detail::log_weight(theta, c.x));
    std::vector<BlockClass> keep;
    for (const auto& c : all)
      if (c.log_mult + detail::log_weight(theta, c.x) >= mx - cut) keep.push_back(c);
    return keep;
  }

  InverseTemperature theta_;
  std::vector<Ref> refs_;
  std::vector<Row> rows_;
  std::vector<BlockClass> cols_;
  std::priority_queue<Node, std::vector<Node>, After> heap_;
  double norm_ = 0, count_offset_ = 0;
  Tuple x_offset_;
  bool has_last_ = false;
  double last_log_p_ = 0;
  Tuple last_x_;
  std::uint64_t emitted_ = 0;
};

}  // namespace fbe
