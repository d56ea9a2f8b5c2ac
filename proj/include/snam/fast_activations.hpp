#pragma once

// Kernel and truncated-power expansions used as cheap stand-ins for the cubic
// regression spline unit.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snam/error.hpp"
#include "snam/spline_basis.hpp"

namespace snam {

/// Silverman kernel 1/2 exp(-|u|/sqrt2) sin(|u|/sqrt2 + pi/4).
inline double silverman_kernel(double u) {
  const double a = std::abs(u) / std::numbers::sqrt2;
  return 0.5 * std::exp(-a) * std::sin(a + std::numbers::pi / 4.0);
}

/// dK/du. Smooth at zero: the one-sided derivatives both vanish there.
inline double silverman_kernel_derivative(double u) {
  const double a = std::abs(u) / std::numbers::sqrt2;
  const double dk_da = 0.5 * std::exp(-a) * (std::cos(a + std::numbers::pi / 4.0) - std::sin(a + std::numbers::pi / 4.0));
  const double sign = u > 0.0 ? 1.0 : (u < 0.0 ? -1.0 : 0.0);
  return sign * dk_da / std::numbers::sqrt2;
}

/// Kernel bumps K((x - d_j) / sigma_j) with trainable centers and bandwidths.
/// Bandwidths are stored as log sigma so unconstrained updates keep them positive.
class SilvermanBasis {
 public:
  SilvermanBasis() = default;

  SilvermanBasis(Eigen::VectorXd centers, const Eigen::VectorXd& bandwidths) : centers_(std::move(centers)) {
    if (centers_.size() != bandwidths.size()) {
      throw Error(ErrorCode::dimension_mismatch, "centers and bandwidths differ in length");
    }
    if ((bandwidths.array() <= 0.0).any() || !bandwidths.allFinite()) {
      throw Error(ErrorCode::invalid_bandwidth, "bandwidths must be finite and strictly positive");
    }
    log_bandwidths_ = bandwidths.array().log().matrix();
  }

  static SilvermanBasis from_log_bandwidths(Eigen::VectorXd centers, Eigen::VectorXd log_bandwidths) {
    if (centers.size() != log_bandwidths.size()) {
      throw Error(ErrorCode::dimension_mismatch, "centers and bandwidths differ in length");
    }
    if (!log_bandwidths.allFinite()) throw Error(ErrorCode::invalid_bandwidth, "log bandwidths must be finite");
    SilvermanBasis basis;
    basis.centers_ = std::move(centers);
    basis.log_bandwidths_ = std::move(log_bandwidths);
    return basis;
  }

  /// Centers at the knots, every bandwidth equal to the mean knot gap.
  static SilvermanBasis from_knots(const KnotVector& knots) {
    const auto k = static_cast<Eigen::Index>(knots.size());
    Eigen::VectorXd centers(k);
    for (Eigen::Index j = 0; j < k; ++j) centers[j] = knots[static_cast<std::size_t>(j)];
    const double mean_gap = knots.range() / static_cast<double>(k - 1);
    return SilvermanBasis(std::move(centers), Eigen::VectorXd::Constant(k, mean_gap));
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(centers_.size()); }
  const Eigen::VectorXd& centers() const noexcept { return centers_; }
  const Eigen::VectorXd& log_bandwidths() const noexcept { return log_bandwidths_; }
  Eigen::VectorXd bandwidths() const { return log_bandwidths_.array().exp().matrix(); }

  Eigen::VectorXd& mutable_centers() noexcept { return centers_; }
  Eigen::VectorXd& mutable_log_bandwidths() noexcept { return log_bandwidths_; }

  void eval(double x, Eigen::Ref<Eigen::VectorXd> out) const {
    for (Eigen::Index j = 0; j < centers_.size(); ++j) {
      out[j] = silverman_kernel((x - centers_[j]) / std::exp(log_bandwidths_[j]));
    }
  }

  Eigen::VectorXd eval(double x) const {
    Eigen::VectorXd out(centers_.size());
    eval(x, out);
    return out;
  }

 private:
  Eigen::VectorXd centers_;
  Eigen::VectorXd log_bandwidths_;
};

inline Eigen::VectorXd eval_silverman_basis(const SilvermanBasis& basis, double x) {
  if ((basis.bandwidths().array() <= 0.0).any()) {
    throw Error(ErrorCode::invalid_bandwidth, "bandwidths must be strictly positive");
  }
  return basis.eval(x);
}

/// Per-entry partial derivatives of a Silverman expansion.
struct SilvermanGradients {
  Eigen::VectorXd d_center;     ///< d entry_j / d d_j
  Eigen::VectorXd d_bandwidth;  ///< d entry_j / d sigma_j
  Eigen::VectorXd d_log_bandwidth;
  Eigen::VectorXd d_input;      ///< d entry_j / d x
};

inline SilvermanGradients silverman_basis_gradients(const SilvermanBasis& basis, double x) {
  const Eigen::VectorXd sigma = basis.bandwidths();
  if ((sigma.array() <= 0.0).any() || !sigma.allFinite()) {
    throw Error(ErrorCode::invalid_bandwidth, "bandwidths must be finite and strictly positive");
  }
  const auto k = static_cast<Eigen::Index>(basis.dim());
  SilvermanGradients g{Eigen::VectorXd(k), Eigen::VectorXd(k), Eigen::VectorXd(k), Eigen::VectorXd(k)};
  for (Eigen::Index j = 0; j < k; ++j) {
    const double u = (x - basis.centers()[j]) / sigma[j];
    const double dk = silverman_kernel_derivative(u);
    g.d_input[j] = dk / sigma[j];
    g.d_center[j] = -dk / sigma[j];
    g.d_bandwidth[j] = -dk * u / sigma[j];
    g.d_log_bandwidth[j] = -dk * u;
  }
  return g;
}

/// Polynomial terms 1, x, ..., x^d followed by hinges (x - kappa_j)_+^d for the
/// interior knots kappa_2 .. kappa_{k-1}.
class TruncatedPowerBasis {
 public:
  TruncatedPowerBasis() = default;

  TruncatedPowerBasis(KnotVector knots, int degree) : knots_(std::move(knots)), degree_(degree) {
    if (degree_ < 0 || degree_ > 3) {
      throw Error(ErrorCode::degenerate_data, "truncated power degree must be in 0..3, got " + std::to_string(degree));
    }
  }

  const KnotVector& knots() const noexcept { return knots_; }
  int degree() const noexcept { return degree_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(degree_ + 1) + knots_.size() - 2; }

  void eval(double x, Eigen::Ref<Eigen::VectorXd> out) const {
    double power = 1.0;
    for (int p = 0; p <= degree_; ++p) {
      out[p] = power;
      power *= x;
    }
    Eigen::Index col = degree_ + 1;
    for (std::size_t j = 1; j + 1 < knots_.size(); ++j, ++col) {
      const double diff = x - knots_[j];
      out[col] = diff >= 0.0 ? std::pow(diff, degree_) : 0.0;
    }
  }

  Eigen::VectorXd eval(double x) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(dim()));
    eval(x, out);
    return out;
  }

 private:
  KnotVector knots_;
  int degree_ = 1;
};

inline Eigen::VectorXd eval_truncated_power_basis(const TruncatedPowerBasis& basis, double x) { return basis.eval(x); }

}  // namespace snam
