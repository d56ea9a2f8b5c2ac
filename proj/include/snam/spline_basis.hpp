#pragma once

// Natural cubic regression spline basis parameterized by the function values
// at the knots. A coefficient vector beta holds f(kappa_j); the basis row at x
// maps beta to the natural cubic interpolant of the points (kappa_j, beta_j).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snam/error.hpp"

namespace snam {

/// Strictly increasing knot positions.
class KnotVector {
 public:
  KnotVector() = default;

  explicit KnotVector(std::vector<double> knots) : knots_(std::move(knots)) {
    if (knots_.size() < 2) {
      throw Error(ErrorCode::degenerate_data, "a knot vector needs at least two knots");
    }
    for (std::size_t j = 0; j < knots_.size(); ++j) {
      if (!std::isfinite(knots_[j])) {
        throw Error(ErrorCode::degenerate_data, "knot " + std::to_string(j) + " is not finite");
      }
      if (j > 0 && !(knots_[j - 1] < knots_[j])) {
        throw Error(ErrorCode::degenerate_data,
                    "knots must be strictly increasing (violated at position " + std::to_string(j) + ")");
      }
    }
  }

  std::size_t size() const noexcept { return knots_.size(); }
  double operator[](std::size_t j) const { return knots_[j]; }
  double front() const { return knots_.front(); }
  double back() const { return knots_.back(); }
  double range() const { return knots_.back() - knots_.front(); }
  const std::vector<double>& values() const noexcept { return knots_; }

  friend bool operator==(const KnotVector&, const KnotVector&) = default;

 private:
  std::vector<double> knots_;
};

enum class KnotPlacement { uniform, quantile };

namespace detail {

/// Linear-interpolation empirical quantile of sorted data (position (n-1)p).
inline double sorted_quantile(std::span<const double> sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline bool strictly_increasing(const std::vector<double>& v) {
  return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
}

}  // namespace detail

/// Places k knots spanning [min(data), max(data)].
///
/// The quantile strategy puts knot j at the (j-1)/(k-1) empirical quantile.
/// When heavy ties make two quantiles coincide, the quantiles of the distinct
/// values are used instead.
inline KnotVector place_knots(KnotPlacement strategy, std::span<const double> data, std::size_t k) {
  if (k < 3) throw Error(ErrorCode::degenerate_data, "at least 3 knots are required");
  if (data.empty()) throw Error(ErrorCode::degenerate_data, "cannot place knots on empty data");

  std::vector<double> sorted(data.begin(), data.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  const double hi = sorted.back();

  std::vector<double> knots(k);
  if (strategy == KnotPlacement::uniform) {
    if (!(hi > lo)) throw Error(ErrorCode::degenerate_data, "data has zero range");
    for (std::size_t j = 0; j < k; ++j) {
      knots[j] = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(k - 1);
    }
    knots.back() = hi;
    return KnotVector(std::move(knots));
  }

  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < k) {
    throw Error(ErrorCode::degenerate_data, "quantile knots need at least " + std::to_string(k) +
                                                " distinct values, got " + std::to_string(distinct.size()));
  }
  for (std::size_t j = 0; j < k; ++j) {
    knots[j] = detail::sorted_quantile(sorted, static_cast<double>(j) / static_cast<double>(k - 1));
  }
  if (!detail::strictly_increasing(knots)) {
    for (std::size_t j = 0; j < k; ++j) {
      knots[j] = detail::sorted_quantile(distinct, static_cast<double>(j) / static_cast<double>(k - 1));
    }
  }
  return KnotVector(std::move(knots));
}

/// Precomputed matrices of one natural cubic regression spline unit.
///
/// Band matrix B ((k-2)x(k-2)), difference matrix D ((k-2)xk), value map
/// G = [0; B^-1 D; 0] (kxk) and wiggliness penalty S = D^T B^-1 D (kxk).
/// Derivatives of B, D and G with respect to every knot are kept so that knot
/// positions can be trained. Immutable after construction.
class CubicBasisSystem {
 public:
  CubicBasisSystem() = default;

  explicit CubicBasisSystem(KnotVector knots) : knots_(std::move(knots)) {
    const std::size_t k = knots_.size();
    if (k < 3) throw Error(ErrorCode::degenerate_data, "a cubic basis needs at least 3 knots");
    gaps_.resize(static_cast<Eigen::Index>(k - 1));
    for (std::size_t j = 0; j + 1 < k; ++j) gaps_[static_cast<Eigen::Index>(j)] = knots_[j + 1] - knots_[j];

    const auto m = static_cast<Eigen::Index>(k - 2);
    const auto kk = static_cast<Eigen::Index>(k);
    band_ = Eigen::MatrixXd::Zero(m, m);
    diff_ = Eigen::MatrixXd::Zero(m, kk);
    for (Eigen::Index r = 0; r < m; ++r) {
      const double h0 = gaps_[r];
      const double h1 = gaps_[r + 1];
      band_(r, r) = (h0 + h1) / 3.0;
      if (r + 1 < m) {
        band_(r, r + 1) = h1 / 6.0;
        band_(r + 1, r) = h1 / 6.0;
      }
      diff_(r, r) = 1.0 / h0;
      diff_(r, r + 1) = -1.0 / h0 - 1.0 / h1;
      diff_(r, r + 2) = 1.0 / h1;
    }

    band_llt_.compute(band_);
    if (band_llt_.info() != Eigen::Success) {
      throw Error(ErrorCode::singular_system, "band matrix is not positive definite");
    }
    const Eigen::MatrixXd mid = band_llt_.solve(diff_);
    if (!mid.allFinite()) throw Error(ErrorCode::singular_system, "band matrix solve produced non-finite values");

    value_map_ = Eigen::MatrixXd::Zero(kk, kk);
    value_map_.middleRows(1, m) = mid;
    penalty_ = diff_.transpose() * mid;
    penalty_ = 0.5 * (penalty_ + penalty_.transpose()).eval();

    // d/dkappa_q of B, D and G. Moving knot q lengthens h_{q-1} and shortens h_q.
    band_d_.assign(k, Eigen::MatrixXd::Zero(m, m));
    diff_d_.assign(k, Eigen::MatrixXd::Zero(m, kk));
    value_map_d_.assign(k, Eigen::MatrixXd::Zero(kk, kk));
    for (std::size_t q = 0; q < k; ++q) {
      if (q >= 1) add_gap_derivative(q - 1, +1.0, band_d_[q], diff_d_[q]);
      if (q + 1 < k) add_gap_derivative(q, -1.0, band_d_[q], diff_d_[q]);
      value_map_d_[q].middleRows(1, m) = band_llt_.solve(diff_d_[q] - band_d_[q] * mid);
    }
  }

  const KnotVector& knots() const noexcept { return knots_; }
  std::size_t dim() const noexcept { return knots_.size(); }
  const Eigen::VectorXd& gaps() const noexcept { return gaps_; }
  const Eigen::MatrixXd& band_matrix() const noexcept { return band_; }
  const Eigen::MatrixXd& difference_matrix() const noexcept { return diff_; }
  const Eigen::MatrixXd& value_map() const noexcept { return value_map_; }
  const Eigen::MatrixXd& penalty() const noexcept { return penalty_; }

  /// Basis row at x; linear continuation outside [kappa_1, kappa_k].
  void eval(double x, Eigen::Ref<Eigen::VectorXd> out) const {
    const Segment s = locate(x);
    if (s.outside) {
      out.setZero();
      out[static_cast<Eigen::Index>(s.boundary)] = 1.0;
      accumulate(s.j, s.dcm, s.dam, s.dcp, s.dap, s.delta, out);
    } else {
      out.setZero();
      accumulate(s.j, s.cm, s.am, s.cp, s.ap, 1.0, out);
    }
  }

  Eigen::VectorXd eval(double x) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(dim()));
    eval(x, out);
    return out;
  }

  /// d/dx of the basis row.
  Eigen::VectorXd eval_derivative(double x) const {
    const Segment s = locate(x);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
    accumulate(s.j, s.dcm, s.dam, s.dcp, s.dap, 1.0, out);
    return out;
  }

  /// Rows are the partial derivatives of the basis row with respect to each knot:
  /// result(q, c) = d B_c(x) / d kappa_q.
  Eigen::MatrixXd eval_knot_jacobian(double x) const {
    const auto kk = static_cast<Eigen::Index>(dim());
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(kk, kk);
    const Segment s = locate(x);
    const auto j = static_cast<Eigen::Index>(s.j);
    // Outside the knot range the row is e_b + delta * B'(kappa_b) with delta = x - kappa_b;
    // B''(kappa_b) = 0 so only the explicit knot dependence of B' survives.
    const bool use_slope = s.outside;
    const double scale = use_slope ? s.delta : 1.0;
    const double cm = use_slope ? s.dcm : s.cm;
    const double cp = use_slope ? s.dcp : s.cp;
    const auto& cm_k = use_slope ? s.dcm_k : s.cm_k;
    const auto& cp_k = use_slope ? s.dcp_k : s.cp_k;
    const auto& am_k = use_slope ? s.dam_k : s.am_k;
    const auto& ap_k = use_slope ? s.dap_k : s.ap_k;

    for (Eigen::Index q = 0; q < kk; ++q) {
      const auto& dg = value_map_d_[static_cast<std::size_t>(q)];
      jac.row(q) = scale * (cm * dg.row(j) + cp * dg.row(j + 1));
    }
    for (int side = 0; side < 2; ++side) {
      const Eigen::Index q = j + side;
      jac.row(q) += scale * (cm_k[side] * value_map_.row(j) + cp_k[side] * value_map_.row(j + 1));
      jac(q, j) += scale * am_k[side];
      jac(q, j + 1) += scale * ap_k[side];
    }
    if (s.outside) {
      Eigen::VectorXd slope = Eigen::VectorXd::Zero(kk);
      accumulate(s.j, s.dcm, s.dam, s.dcp, s.dap, 1.0, slope);
      jac.row(static_cast<Eigen::Index>(s.boundary)) -= slope.transpose();
    }
    return jac;
  }

  /// beta^T S beta, the integrated squared second derivative of the spline with values beta.
  double wiggliness(const Eigen::VectorXd& beta) const {
    check_length(beta);
    return beta.dot(penalty_ * beta);
  }

  /// Gradient of beta^T S beta with respect to every knot position.
  Eigen::VectorXd wiggliness_knot_gradient(const Eigen::VectorXd& beta) const {
    check_length(beta);
    const Eigen::VectorXd gamma = value_map_.middleRows(1, band_.rows()) * beta;
    Eigen::VectorXd grad(static_cast<Eigen::Index>(dim()));
    for (std::size_t q = 0; q < dim(); ++q) {
      grad[static_cast<Eigen::Index>(q)] =
          2.0 * (diff_d_[q] * beta).dot(gamma) - gamma.dot(band_d_[q] * gamma);
    }
    return grad;
  }

 private:
  struct Segment {
    std::size_t j = 0;
    bool outside = false;
    std::size_t boundary = 0;
    double delta = 0.0;
    double cm = 0, cp = 0, am = 0, ap = 0;
    double dcm = 0, dcp = 0, dam = 0, dap = 0;
    // Partials with respect to kappa_j (index 0) and kappa_{j+1} (index 1).
    std::array<double, 2> cm_k{}, cp_k{}, am_k{}, ap_k{};
    std::array<double, 2> dcm_k{}, dcp_k{}, dam_k{}, dap_k{};
  };

  void check_length(const Eigen::VectorXd& beta) const {
    if (static_cast<std::size_t>(beta.size()) != dim()) {
      throw Error(ErrorCode::dimension_mismatch,
                  "coefficient vector has length " + std::to_string(beta.size()) + ", expected " +
                      std::to_string(dim()));
    }
  }

  void accumulate(std::size_t j, double cm, double am, double cp, double ap, double scale,
                  Eigen::Ref<Eigen::VectorXd> out) const {
    const auto jj = static_cast<Eigen::Index>(j);
    out += (scale * cm) * value_map_.row(jj).transpose();
    out += (scale * cp) * value_map_.row(jj + 1).transpose();
    out[jj] += scale * am;
    out[jj + 1] += scale * ap;
  }

  Segment locate(double x) const {
    const auto& kv = knots_.values();
    const std::size_t k = kv.size();
    Segment s;
    double at = x;
    if (x < kv.front()) {
      s.outside = true;
      s.boundary = 0;
      s.j = 0;
      s.delta = x - kv.front();
      at = kv.front();
    } else if (x > kv.back()) {
      s.outside = true;
      s.boundary = k - 1;
      s.j = k - 2;
      s.delta = x - kv.back();
      at = kv.back();
    } else {
      // x equal to an interior knot belongs to the interval on its left.
      const auto it = std::lower_bound(kv.begin(), kv.end(), x);
      const auto pos = static_cast<std::size_t>(it - kv.begin());
      s.j = pos == 0 ? 0 : std::min(pos - 1, k - 2);
    }
    fill_terms(s, at);
    return s;
  }

  void fill_terms(Segment& s, double x) const {
    const double h = gaps_[static_cast<Eigen::Index>(s.j)];
    const double u = knots_[s.j + 1] - x;
    const double v = x - knots_[s.j];
    const double h2 = h * h;

    s.cm = (u * u * u / h - h * u) / 6.0;
    s.cp = (v * v * v / h - h * v) / 6.0;
    s.am = u / h;
    s.ap = v / h;

    s.dcm = (-3.0 * u * u / h + h) / 6.0;
    s.dcp = (3.0 * v * v / h - h) / 6.0;
    s.dam = -1.0 / h;
    s.dap = 1.0 / h;

    s.cm_k = {(u * u * u / h2 + u) / 6.0, (3.0 * u * u / h - h - u * u * u / h2 - u) / 6.0};
    s.cp_k = {(-3.0 * v * v / h + h + v * v * v / h2 + v) / 6.0, (-v * v * v / h2 - v) / 6.0};
    s.am_k = {u / h2, v / h2};
    s.ap_k = {-u / h2, -v / h2};

    s.dcm_k = {-(3.0 * u * u / h2 + 1.0) / 6.0, (-6.0 * u / h + 3.0 * u * u / h2 + 1.0) / 6.0};
    s.dcp_k = {(-6.0 * v / h + 3.0 * v * v / h2 + 1.0) / 6.0, -(3.0 * v * v / h2 + 1.0) / 6.0};
    s.dam_k = {-1.0 / h2, 1.0 / h2};
    s.dap_k = {1.0 / h2, -1.0 / h2};
  }

  // Adds sign * d/dh_i of B and D.
  void add_gap_derivative(std::size_t i, double sign, Eigen::MatrixXd& band_d, Eigen::MatrixXd& diff_d) const {
    const auto m = static_cast<std::size_t>(band_.rows());
    const double h = gaps_[static_cast<Eigen::Index>(i)];
    const double inv_h2 = 1.0 / (h * h);
    const auto ii = static_cast<Eigen::Index>(i);
    if (i < m) {  // h_i is the left gap of row i
      band_d(ii, ii) += sign / 3.0;
      diff_d(ii, ii) += -sign * inv_h2;
      diff_d(ii, ii + 1) += sign * inv_h2;
    }
    if (i >= 1 && i - 1 < m) {  // h_i is the right gap of row i-1
      band_d(ii - 1, ii - 1) += sign / 3.0;
      if (i < m) {
        band_d(ii - 1, ii) += sign / 6.0;
        band_d(ii, ii - 1) += sign / 6.0;
      }
      diff_d(ii - 1, ii) += sign * inv_h2;
      diff_d(ii - 1, ii + 1) += -sign * inv_h2;
    }
  }

  KnotVector knots_;
  Eigen::VectorXd gaps_;
  Eigen::MatrixXd band_;
  Eigen::MatrixXd diff_;
  Eigen::MatrixXd value_map_;
  Eigen::MatrixXd penalty_;
  Eigen::LLT<Eigen::MatrixXd> band_llt_;
  std::vector<Eigen::MatrixXd> band_d_;
  std::vector<Eigen::MatrixXd> diff_d_;
  std::vector<Eigen::MatrixXd> value_map_d_;
};

inline CubicBasisSystem build_system(const KnotVector& knots) { return CubicBasisSystem(knots); }

inline Eigen::VectorXd eval_basis(const CubicBasisSystem& system, double x) { return system.eval(x); }

inline Eigen::MatrixXd eval_basis_matrix(const CubicBasisSystem& system, std::span<const double> xs) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(system.dim()));
  Eigen::VectorXd row(static_cast<Eigen::Index>(system.dim()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    system.eval(xs[i], row);
    out.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return out;
}

inline double wiggliness(const CubicBasisSystem& system, const Eigen::VectorXd& beta) {
  return system.wiggliness(beta);
}

}  // namespace snam
