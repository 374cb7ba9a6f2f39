#pragma once

#include <cmath>

#include "qvi/errors.hpp"

namespace qvi {

/// The penalty family pi(y) = (max(y, 0))^{1/sigma}. Degree sigma = 1 gives the
/// semismooth choice pi(y) = y^+ used by the Newton solver.
class PowerPenalty {
public:
  explicit PowerPenalty(double sigma = 1.0) : sigma_(sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidInput("PowerPenalty: sigma must be > 0");
  }

  double sigma() const noexcept { return sigma_; }

  /// pi(y) >= tau * y^{1/sigma} on the a-priori range; equality for this family.
  double tau() const noexcept { return 1.0; }

  bool is_linear() const noexcept { return sigma_ == 1.0; }

  double operator()(double y) const {
    if (y <= 0.0) return 0.0;
    return is_linear() ? y : std::pow(y, 1.0 / sigma_);
  }

  /// An element of the generalized derivative. At the kink y = 0 we take 0.
  double subderivative(double y) const {
    if (y <= 0.0) return 0.0;
    if (is_linear()) return 1.0;
    return std::pow(y, 1.0 / sigma_ - 1.0) / sigma_;
  }

private:
  double sigma_;
};

}  // namespace qvi
