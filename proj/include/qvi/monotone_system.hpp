#pragma once

#include <algorithm>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "qvi/errors.hpp"
#include "qvi/regime_field.hpp"

namespace qvi {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;

/// A map F: R^{N x d} -> R^{N x d} satisfying the monotonicity condition
///
///   at an index (i,l) maximizing u - v with u^i_l - v^i_l >= 0:
///   F_i(u)_l - F_i(v)_l >= gamma * (u^i_l - v^i_l),
///
/// together with a slanting function (an element of the generalized
/// derivative of F) for Newton-type solvers. Implementations are immutable.
class MonotoneSystem {
public:
  virtual ~MonotoneSystem() = default;

  virtual Index regimes() const = 0;
  virtual Index nodes() const = 0;
  virtual double gamma() const = 0;

  /// F(u), flattened regime-major.
  virtual Eigen::VectorXd evaluate_flat(const Eigen::VectorXd& u) const = 0;

  /// Generalized derivative of F at u, shape (Nd) x (Nd).
  virtual SparseMatrix slant_flat(const Eigen::VectorXd& u) const = 0;

  Index size() const { return regimes() * nodes(); }

  RegimeField evaluate(const RegimeField& u) const {
    check_shape(u);
    return RegimeField(regimes(), nodes(), evaluate_flat(u.flat()));
  }

  SparseMatrix slant_at(const RegimeField& u) const {
    check_shape(u);
    return slant_flat(u.flat());
  }

  /// ||F(0)||, computed once.
  double norm_F0() const {
    std::call_once(f0_once_, [this] {
      norm_f0_ = sup_norm(evaluate_flat(Eigen::VectorXd::Zero(size())));
    });
    return norm_f0_;
  }

  void check_shape(const RegimeField& u) const {
    if (u.regimes() != regimes() || u.nodes() != nodes()) {
      throw InvalidInput("dimension mismatch: field is " + std::to_string(u.regimes()) + "x" +
                         std::to_string(u.nodes()) + ", system is " + std::to_string(regimes()) +
                         "x" + std::to_string(nodes()));
    }
  }

private:
  mutable std::once_flag f0_once_;
  mutable double norm_f0_ = 0.0;
};

using SystemPtr = std::shared_ptr<const MonotoneSystem>;

/// F(u) = A u - b with a constant sparse matrix A.
class AffineSystem final : public MonotoneSystem {
public:
  AffineSystem(Index regimes, Index nodes, SparseMatrix matrix, Eigen::VectorXd rhs, double gamma)
      : regimes_(regimes), nodes_(nodes), matrix_(std::move(matrix)), rhs_(std::move(rhs)),
        gamma_(gamma) {
    if (regimes < 2 || nodes < 1) throw InvalidInput("AffineSystem: bad dimensions");
    const Index n = regimes * nodes;
    if (matrix_.rows() != n || matrix_.cols() != n || rhs_.size() != n) {
      throw InvalidInput("AffineSystem: matrix/rhs size does not match regimes*nodes");
    }
    if (!(gamma > 0.0)) throw InvalidInput("AffineSystem: gamma must be > 0");
    matrix_.makeCompressed();
  }

  Index regimes() const override { return regimes_; }
  Index nodes() const override { return nodes_; }
  double gamma() const override { return gamma_; }

  Eigen::VectorXd evaluate_flat(const Eigen::VectorXd& u) const override {
    return matrix_ * u - rhs_;
  }

  SparseMatrix slant_flat(const Eigen::VectorXd&) const override { return matrix_; }

  const SparseMatrix& matrix() const noexcept { return matrix_; }
  const Eigen::VectorXd& rhs() const noexcept { return rhs_; }

private:
  Index regimes_;
  Index nodes_;
  SparseMatrix matrix_;
  Eigen::VectorXd rhs_;
  double gamma_;
};

/// Concave system F(u)_r = min_k (A_k u - b_k)_r over a finite family of affine
/// maps (a discrete HJB operator). The slant picks, row by row, the lowest-index
/// minimizing policy, as in policy iteration. Monotone with the given gamma when
/// every member is.
class PolicyMinSystem final : public MonotoneSystem {
public:
  PolicyMinSystem(Index regimes, Index nodes, std::vector<SparseMatrix> matrices,
                  std::vector<Eigen::VectorXd> rhs, double gamma)
      : regimes_(regimes), nodes_(nodes), matrices_(std::move(matrices)), rhs_(std::move(rhs)),
        gamma_(gamma) {
    const Index n = regimes * nodes;
    if (matrices_.empty() || matrices_.size() != rhs_.size())
      throw InvalidInput("PolicyMinSystem: need matching, non-empty policy lists");
    for (std::size_t k = 0; k < matrices_.size(); ++k) {
      if (matrices_[k].rows() != n || matrices_[k].cols() != n || rhs_[k].size() != n)
        throw InvalidInput("PolicyMinSystem: policy " + std::to_string(k) + " has wrong size");
      matrices_[k].makeCompressed();
    }
    if (!(gamma > 0.0)) throw InvalidInput("PolicyMinSystem: gamma must be > 0");
  }

  Index regimes() const override { return regimes_; }
  Index nodes() const override { return nodes_; }
  double gamma() const override { return gamma_; }

  Eigen::VectorXd evaluate_flat(const Eigen::VectorXd& u) const override {
    Eigen::VectorXd best = matrices_[0] * u - rhs_[0];
    for (std::size_t k = 1; k < matrices_.size(); ++k)
      best = best.cwiseMin(matrices_[k] * u - rhs_[k]);
    return best;
  }

  SparseMatrix slant_flat(const Eigen::VectorXd& u) const override {
    const Index n = size();
    std::vector<Eigen::VectorXd> values;
    values.reserve(matrices_.size());
    for (std::size_t k = 0; k < matrices_.size(); ++k) values.push_back(matrices_[k] * u - rhs_[k]);
    std::vector<Triplet> trips;
    for (Index r = 0; r < n; ++r) {
      std::size_t arg = 0;
      for (std::size_t k = 1; k < values.size(); ++k)
        if (values[k][r] < values[arg][r]) arg = k;
      for (SparseMatrix::InnerIterator it(matrices_[arg], r); it; ++it)
        trips.emplace_back(r, it.col(), it.value());
    }
    SparseMatrix out(n, n);
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
  }

private:
  Index regimes_;
  Index nodes_;
  std::vector<SparseMatrix> matrices_;
  std::vector<Eigen::VectorXd> rhs_;
  double gamma_;
};

/// G(u) = F(u) - shift, i.e. the same system with a constant subtracted from
/// every component. Monotone with the same gamma.
class ShiftedSystem final : public MonotoneSystem {
public:
  ShiftedSystem(SystemPtr base, double shift) : base_(std::move(base)), shift_(shift) {}

  Index regimes() const override { return base_->regimes(); }
  Index nodes() const override { return base_->nodes(); }
  double gamma() const override { return base_->gamma(); }

  Eigen::VectorXd evaluate_flat(const Eigen::VectorXd& u) const override {
    Eigen::VectorXd f = base_->evaluate_flat(u);
    f.array() -= shift_;
    return f;
  }

  SparseMatrix slant_flat(const Eigen::VectorXd& u) const override { return base_->slant_flat(u); }

private:
  SystemPtr base_;
  double shift_;
};

}  // namespace qvi
