#pragma once

#include <limits>
#include <string>

#include <Eigen/Core>

#include "qvi/errors.hpp"
#include "qvi/regime_field.hpp"

namespace qvi {

/// Switching costs c^{i,j} >= 0 for i != j. The diagonal is unused and stored as 0.
class SwitchingCosts {
public:
  SwitchingCosts() = default;

  explicit SwitchingCosts(Eigen::MatrixXd costs) : costs_(std::move(costs)) {
    if (costs_.rows() != costs_.cols()) throw InvalidInput("SwitchingCosts: matrix must be square");
    if (costs_.rows() < 2) throw InvalidInput("SwitchingCosts: need at least 2 regimes");
    for (Index i = 0; i < costs_.rows(); ++i) {
      for (Index j = 0; j < costs_.cols(); ++j) {
        if (i == j) continue;
        if (!std::isfinite(costs_(i, j)) || costs_(i, j) < 0.0) {
          throw InvalidInput("SwitchingCosts: c(" + std::to_string(i) + "," + std::to_string(j) +
                             ") = " + std::to_string(costs_(i, j)) + " must be finite and >= 0");
        }
      }
      costs_(i, i) = 0.0;
    }
  }

  static SwitchingCosts uniform(Index regimes, double c) {
    if (regimes < 2) throw InvalidInput("SwitchingCosts: need at least 2 regimes");
    Eigen::MatrixXd m = Eigen::MatrixXd::Constant(regimes, regimes, c);
    return SwitchingCosts(std::move(m));
  }

  Index regimes() const noexcept { return costs_.rows(); }
  double operator()(Index i, Index j) const { return costs_(i, j); }
  const Eigen::MatrixXd& matrix() const noexcept { return costs_; }

  double min_off_diagonal() const {
    double m = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < regimes(); ++i)
      for (Index j = 0; j < regimes(); ++j)
        if (i != j) m = std::min(m, costs_(i, j));
    return m;
  }

  double max_off_diagonal() const {
    double m = 0.0;
    for (Index i = 0; i < regimes(); ++i)
      for (Index j = 0; j < regimes(); ++j)
        if (i != j) m = std::max(m, costs_(i, j));
    return m;
  }

  bool all_positive() const { return min_off_diagonal() > 0.0; }

  /// c^{i,j} - shift on every off-diagonal entry.
  SwitchingCosts shifted(double shift) const {
    Eigen::MatrixXd m = costs_.array() - shift;
    return SwitchingCosts(std::move(m));
  }

private:
  Eigen::MatrixXd costs_;
};

}  // namespace qvi
