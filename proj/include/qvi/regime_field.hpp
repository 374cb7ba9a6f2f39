#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "qvi/errors.hpp"

namespace qvi {

using Index = Eigen::Index;

/// A value per (regime, node) pair: the unknown u = (u^1, ..., u^d) of every
/// problem in this library. Stored regime-major, so regime i occupies the
/// contiguous slice [i*N, (i+1)*N) of flat(). Regimes are zero-based.
class RegimeField {
public:
  RegimeField() = default;

  RegimeField(Index regimes, Index nodes, double fill = 0.0)
      : regimes_(regimes), nodes_(nodes) {
    check_dims(regimes, nodes);
    values_ = Eigen::VectorXd::Constant(regimes * nodes, fill);
  }

  RegimeField(Index regimes, Index nodes, Eigen::VectorXd flat)
      : regimes_(regimes), nodes_(nodes), values_(std::move(flat)) {
    check_dims(regimes, nodes);
    if (values_.size() != regimes * nodes) {
      throw InvalidInput("RegimeField: flat vector has size " + std::to_string(values_.size()) +
                         ", expected " + std::to_string(regimes * nodes));
    }
    if (!values_.allFinite()) throw InvalidInput("RegimeField: non-finite entry");
  }

  /// Row i of the initializer is regime i.
  RegimeField(std::initializer_list<std::initializer_list<double>> rows) {
    regimes_ = static_cast<Index>(rows.size());
    nodes_ = regimes_ > 0 ? static_cast<Index>(rows.begin()->size()) : 0;
    check_dims(regimes_, nodes_);
    values_.resize(regimes_ * nodes_);
    Index i = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != nodes_) throw InvalidInput("RegimeField: ragged rows");
      Index l = 0;
      for (double v : row) values_[i * nodes_ + l++] = v;
      ++i;
    }
    if (!values_.allFinite()) throw InvalidInput("RegimeField: non-finite entry");
  }

  /// Same vector copied into every regime.
  static RegimeField replicate(Index regimes, const Eigen::VectorXd& v) {
    RegimeField out(regimes, v.size());
    for (Index i = 0; i < regimes; ++i) out.values_.segment(i * v.size(), v.size()) = v;
    return out;
  }

  Index regimes() const noexcept { return regimes_; }
  Index nodes() const noexcept { return nodes_; }
  Index size() const noexcept { return regimes_ * nodes_; }

  double operator()(Index i, Index l) const { return values_[i * nodes_ + l]; }
  double& operator()(Index i, Index l) { return values_[i * nodes_ + l]; }

  auto regime(Index i) { return values_.segment(i * nodes_, nodes_); }
  auto regime(Index i) const { return values_.segment(i * nodes_, nodes_); }

  const Eigen::VectorXd& flat() const noexcept { return values_; }
  Eigen::VectorXd& flat() noexcept { return values_; }

  bool all_finite() const { return values_.allFinite(); }

  bool same_shape(const RegimeField& other) const noexcept {
    return regimes_ == other.regimes_ && nodes_ == other.nodes_;
  }

  RegimeField& operator+=(const RegimeField& o) { require_same(o); values_ += o.values_; return *this; }
  RegimeField& operator-=(const RegimeField& o) { require_same(o); values_ -= o.values_; return *this; }
  RegimeField& operator+=(double s) { values_.array() += s; return *this; }
  RegimeField& operator-=(double s) { values_.array() -= s; return *this; }
  RegimeField& operator*=(double s) { values_ *= s; return *this; }

  friend RegimeField operator+(RegimeField a, const RegimeField& b) { return a += b; }
  friend RegimeField operator-(RegimeField a, const RegimeField& b) { return a -= b; }
  friend RegimeField operator+(RegimeField a, double s) { return a += s; }
  friend RegimeField operator-(RegimeField a, double s) { return a -= s; }
  friend RegimeField operator*(double s, RegimeField a) { return a *= s; }

private:
  void require_same(const RegimeField& o) const {
    if (!same_shape(o)) throw InvalidInput("RegimeField: shape mismatch in arithmetic");
  }

  static void check_dims(Index regimes, Index nodes) {
    if (regimes < 2) throw InvalidInput("RegimeField: need at least 2 regimes");
    if (nodes < 1) throw InvalidInput("RegimeField: need at least 1 node");
  }

  Index regimes_ = 0;
  Index nodes_ = 0;
  Eigen::VectorXd values_;
};

/// max_{i,l} |x_{i,l}|
inline double sup_norm(const Eigen::Ref<const Eigen::VectorXd>& x) {
  return x.size() == 0 ? 0.0 : x.lpNorm<Eigen::Infinity>();
}

inline double sup_norm(const RegimeField& x) { return sup_norm(x.flat()); }

/// Componentwise a <= b + tol.
inline bool leq(const RegimeField& a, const RegimeField& b, double tol = 0.0) {
  return ((a.flat() - b.flat()).array() <= tol).all();
}

/// Largest regime-to-regime spread max_{i,j} ||u^i - u^j||.
inline double regime_gap(const RegimeField& u) {
  double gap = 0.0;
  for (Index i = 0; i < u.regimes(); ++i)
    for (Index j = i + 1; j < u.regimes(); ++j)
      gap = std::max(gap, sup_norm(Eigen::VectorXd(u.regime(i) - u.regime(j))));
  return gap;
}

}  // namespace qvi
