#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "snam/error.hpp"
#include "snam/fast_activations.hpp"
#include "snam/spline_basis.hpp"

namespace snam {

/// Row-major so that a sample is a contiguous span.
using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class UnitKind { cubic, silverman, truncated, linear, tensor };
enum class Family { gaussian, bernoulli_logit };

constexpr std::string_view to_string(UnitKind kind) {
  switch (kind) {
    case UnitKind::cubic: return "cubic";
    case UnitKind::silverman: return "silverman";
    case UnitKind::truncated: return "truncated";
    case UnitKind::linear: return "linear";
    case UnitKind::tensor: return "tensor";
  }
  return "unknown";
}

constexpr std::string_view to_string(Family family) {
  return family == Family::gaussian ? "gaussian" : "bernoulli-logit";
}

/// Row-major flattened outer product: entry (l, r) sits at l * q + r.
inline Eigen::VectorXd tensor_expand(const Eigen::VectorXd& row_i, const Eigen::VectorXd& row_j) {
  if (row_i.size() == 0 || row_j.size() == 0) {
    throw Error(ErrorCode::dimension_mismatch, "tensor marginals must be nonempty");
  }
  const Eigen::Index p = row_i.size();
  const Eigen::Index q = row_j.size();
  Eigen::VectorXd out(p * q);
  for (Eigen::Index l = 0; l < p; ++l) out.segment(l * q, q) = row_i[l] * row_j;
  return out;
}

/// lambda-free tensor penalty S_i (x) I_q + I_p (x) S_j in row-major flattening.
inline Eigen::MatrixXd tensor_penalty(const Eigen::MatrixXd& s_i, const Eigen::MatrixXd& s_j) {
  const Eigen::Index p = s_i.rows();
  const Eigen::Index q = s_j.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p * q, p * q);
  for (Eigen::Index l = 0; l < p; ++l) {
    for (Eigen::Index lp = 0; lp < p; ++lp) {
      if (s_i(l, lp) != 0.0) {
        for (Eigen::Index r = 0; r < q; ++r) out(l * q + r, lp * q + r) += s_i(l, lp);
      }
    }
    out.block(l * q, l * q, q, q) += s_j;
  }
  return out;
}

/// One additive component f(x_i) or f(x_i, x_j): a basis expansion, centering
/// layer and coefficient vector.
class FeatureUnit {
 public:
  struct Cubic {
    CubicBasisSystem system;
    bool learnable = false;
    std::vector<double> knot_params;  // unsorted between an optimizer step and sort_knots()
  };
  struct Linear {};
  struct Tensor {
    CubicBasisSystem first;
    CubicBasisSystem second;
  };
  using Basis = std::variant<Cubic, SilvermanBasis, TruncatedPowerBasis, Linear, Tensor>;

  static FeatureUnit cubic(std::size_t feature, const KnotVector& knots, double lambda = 0.0,
                           bool learnable_knots = false) {
    Cubic c{CubicBasisSystem(knots), learnable_knots, knots.values()};
    FeatureUnit unit({feature}, std::move(c), lambda);
    return unit;
  }

  static FeatureUnit silverman(std::size_t feature, SilvermanBasis basis) {
    return FeatureUnit({feature}, std::move(basis), 0.0);
  }

  static FeatureUnit truncated(std::size_t feature, TruncatedPowerBasis basis) {
    return FeatureUnit({feature}, std::move(basis), 0.0);
  }

  static FeatureUnit linear(std::size_t feature) { return FeatureUnit({feature}, Linear{}, 0.0); }

  static FeatureUnit tensor(std::size_t feature_i, std::size_t feature_j, const KnotVector& knots_i,
                            const KnotVector& knots_j, double lambda = 0.0) {
    if (feature_i == feature_j) throw Error(ErrorCode::dimension_mismatch, "tensor unit needs two distinct features");
    return FeatureUnit({feature_i, feature_j}, Tensor{CubicBasisSystem(knots_i), CubicBasisSystem(knots_j)}, lambda);
  }

  UnitKind kind() const noexcept { return static_cast<UnitKind>(basis_.index()); }
  const std::vector<std::size_t>& features() const noexcept { return features_; }
  bool univariate() const noexcept { return features_.size() == 1; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(beta_.size()); }
  const Basis& basis() const noexcept { return basis_; }

  const Eigen::VectorXd& beta() const noexcept { return beta_; }
  void set_beta(Eigen::VectorXd beta) {
    if (beta.size() != beta_.size()) {
      throw Error(ErrorCode::dimension_mismatch, "unit expects " + std::to_string(beta_.size()) + " coefficients");
    }
    beta_ = std::move(beta);
  }

  double lambda() const noexcept { return lambda_; }
  void set_lambda(double lambda) {
    if (!(lambda >= 0.0)) throw Error(ErrorCode::invalid_config, "smoothing weight must be nonnegative");
    lambda_ = lambda;
  }

  /// Wiggliness penalty matrix (zero for kinds without one).
  const Eigen::MatrixXd& penalty() const noexcept { return penalty_; }
  double penalty_value() const { return lambda_ * beta_.dot(penalty_ * beta_); }

  const Eigen::VectorXd& means() const noexcept { return means_; }
  bool frozen() const noexcept { return frozen_; }
  void set_means(Eigen::VectorXd means) {
    if (frozen_) throw Error(ErrorCode::invalid_config, "centering means are frozen");
    if (means.size() != beta_.size()) throw Error(ErrorCode::dimension_mismatch, "centering means length mismatch");
    means_ = std::move(means);
  }
  void freeze() noexcept { frozen_ = true; }
  void unfreeze() noexcept { frozen_ = false; }

  /// Restores a serialized centering state, frozen or not.
  void restore_centering(Eigen::VectorXd means, bool frozen) {
    frozen_ = false;
    set_means(std::move(means));
    frozen_ = frozen;
  }

  /// Gathers this unit's feature values out of a full sample.
  std::array<double, 2> local_values(std::span<const double> row) const {
    std::array<double, 2> v{0.0, 0.0};
    for (std::size_t i = 0; i < features_.size(); ++i) v[i] = row[features_[i]];
    return v;
  }

  /// Uncentered expansion of the unit's own feature values.
  void raw_row_local(std::span<const double> values, Eigen::Ref<Eigen::VectorXd> out) const {
    std::visit(
        [&](const auto& b) {
          using T = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<T, Cubic>) {
            b.system.eval(values[0], out);
          } else if constexpr (std::is_same_v<T, Linear>) {
            out[0] = values[0];
          } else if constexpr (std::is_same_v<T, Tensor>) {
            out = tensor_expand(b.first.eval(values[0]), b.second.eval(values[1]));
          } else {
            b.eval(values[0], out);
          }
        },
        basis_);
  }

  void raw_row(std::span<const double> row, Eigen::Ref<Eigen::VectorXd> out) const {
    const auto v = local_values(row);
    raw_row_local(std::span<const double>(v.data(), features_.size()), out);
  }

  /// Centered row and contribution dot(row, beta) at the unit's own feature values.
  double contribution_local(std::span<const double> values) const {
    Eigen::VectorXd row(beta_.size());
    raw_row_local(values, row);
    return (row - means_).dot(beta_);
  }

  // Trainable shape parameters: learnable cubic knots, or Silverman centers
  // followed by log bandwidths.
  std::size_t num_shape_params() const {
    if (const auto* c = std::get_if<Cubic>(&basis_)) return c->learnable ? c->knot_params.size() : 0;
    if (const auto* s = std::get_if<SilvermanBasis>(&basis_)) return 2 * s->dim();
    return 0;
  }

  bool learnable_knots() const {
    const auto* c = std::get_if<Cubic>(&basis_);
    return c != nullptr && c->learnable;
  }

  void shape_params(std::span<double> out) const {
    if (const auto* c = std::get_if<Cubic>(&basis_); c && c->learnable) {
      std::copy(c->knot_params.begin(), c->knot_params.end(), out.begin());
    } else if (const auto* s = std::get_if<SilvermanBasis>(&basis_)) {
      const auto k = static_cast<Eigen::Index>(s->dim());
      for (Eigen::Index j = 0; j < k; ++j) {
        out[static_cast<std::size_t>(j)] = s->centers()[j];
        out[static_cast<std::size_t>(k + j)] = s->log_bandwidths()[j];
      }
    }
  }

  /// Cubic knots are stored as given; call sort_knots() before the next forward pass.
  void set_shape_params(std::span<const double> in) {
    if (auto* c = std::get_if<Cubic>(&basis_); c && c->learnable) {
      std::copy(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(c->knot_params.size()), c->knot_params.begin());
    } else if (auto* s = std::get_if<SilvermanBasis>(&basis_)) {
      const auto k = static_cast<Eigen::Index>(s->dim());
      for (Eigen::Index j = 0; j < k; ++j) {
        s->mutable_centers()[j] = in[static_cast<std::size_t>(j)];
        s->mutable_log_bandwidths()[j] = in[static_cast<std::size_t>(k + j)];
      }
    }
  }

  /// Sorts learnable knots ascending and rebuilds the basis matrices.
  void sort_knots() {
    auto* c = std::get_if<Cubic>(&basis_);
    if (c == nullptr || !c->learnable) return;
    std::vector<double> sorted = c->knot_params;
    std::sort(sorted.begin(), sorted.end());
    const double span = sorted.back() - sorted.front();
    for (std::size_t j = 0; j + 1 < sorted.size(); ++j) {
      if (!(sorted[j + 1] - sorted[j] >= 1e-8 * span) || !(span > 0.0)) {
        throw Error(ErrorCode::knot_collapse, "knots " + std::to_string(j) + " and " + std::to_string(j + 1) +
                                                  " collapsed; increase the knot distance penalty");
      }
    }
    c->knot_params = sorted;
    if (sorted != c->system.knots().values()) {
      c->system = CubicBasisSystem(KnotVector(std::move(sorted)));
      penalty_ = c->system.penalty();
    }
  }

  /// Adds weight * d(raw_row . beta)/d(shape params) into grad.
  void accumulate_shape_gradient(std::span<const double> row, double weight, std::span<double> grad) const {
    const auto v = local_values(row);
    if (const auto* c = std::get_if<Cubic>(&basis_); c && c->learnable) {
      const Eigen::VectorXd g = c->system.eval_knot_jacobian(v[0]) * beta_;
      for (Eigen::Index q = 0; q < g.size(); ++q) grad[static_cast<std::size_t>(q)] += weight * g[q];
    } else if (const auto* s = std::get_if<SilvermanBasis>(&basis_)) {
      const auto k = static_cast<Eigen::Index>(s->dim());
      for (Eigen::Index j = 0; j < k; ++j) {
        const double sigma = std::exp(s->log_bandwidths()[j]);
        const double u = (v[0] - s->centers()[j]) / sigma;
        const double dk = silverman_kernel_derivative(u);
        grad[static_cast<std::size_t>(j)] += weight * beta_[j] * (-dk / sigma);
        grad[static_cast<std::size_t>(k + j)] += weight * beta_[j] * (-dk * u);
      }
    }
  }

  /// Knot distance penalty g(kappa) = sum_j 1/h_j for learnable knots, else 0.
  double knot_distance_penalty() const {
    const auto* c = std::get_if<Cubic>(&basis_);
    if (c == nullptr || !c->learnable) return 0.0;
    return c->system.gaps().cwiseInverse().sum();
  }

  /// Adds the shape-parameter gradient of lambda beta^T S beta + rho g(kappa).
  void accumulate_penalty_shape_gradient(double rho, std::span<double> grad) const {
    const auto* c = std::get_if<Cubic>(&basis_);
    if (c == nullptr || !c->learnable) return;
    const Eigen::VectorXd wig = c->system.wiggliness_knot_gradient(beta_);
    const Eigen::VectorXd& h = c->system.gaps();
    const auto k = static_cast<Eigen::Index>(c->system.dim());
    for (Eigen::Index q = 0; q < k; ++q) {
      double dg = 0.0;
      if (q >= 1) dg -= 1.0 / (h[q - 1] * h[q - 1]);
      if (q + 1 < k) dg += 1.0 / (h[q] * h[q]);
      grad[static_cast<std::size_t>(q)] += lambda_ * wig[q] + rho * dg;
    }
  }

  const CubicBasisSystem* cubic_system() const {
    const auto* c = std::get_if<Cubic>(&basis_);
    return c ? &c->system : nullptr;
  }

  const Tensor* tensor_bases() const { return std::get_if<Tensor>(&basis_); }

 private:
  FeatureUnit(std::vector<std::size_t> features, Basis basis, double lambda)
      : features_(std::move(features)), basis_(std::move(basis)) {
    set_lambda(lambda);
    const std::size_t dim = std::visit(
        [](const auto& b) -> std::size_t {
          using T = std::decay_t<decltype(b)>;
          if constexpr (std::is_same_v<T, Cubic>) return b.system.dim();
          else if constexpr (std::is_same_v<T, Linear>) return 1;
          else if constexpr (std::is_same_v<T, Tensor>) return b.first.dim() * b.second.dim();
          else return b.dim();
        },
        basis_);
    const auto d = static_cast<Eigen::Index>(dim);
    beta_ = Eigen::VectorXd::Zero(d);
    means_ = Eigen::VectorXd::Zero(d);
    if (const auto* c = std::get_if<Cubic>(&basis_)) {
      penalty_ = c->system.penalty();
    } else if (const auto* t = std::get_if<Tensor>(&basis_)) {
      penalty_ = tensor_penalty(t->first.penalty(), t->second.penalty());
    } else {
      penalty_ = Eigen::MatrixXd::Zero(d, d);
    }
  }

  std::vector<std::size_t> features_;
  Basis basis_;
  Eigen::VectorXd beta_;
  Eigen::MatrixXd penalty_;
  double lambda_ = 0.0;
  Eigen::VectorXd means_;
  bool frozen_ = false;
};

/// Contribution of one unit and its centered basis row for a full sample.
struct UnitOutput {
  double contribution = 0.0;
  Eigen::VectorXd basis_row;
};

inline UnitOutput unit_forward(const FeatureUnit& unit, std::span<const double> row) {
  UnitOutput out{0.0, Eigen::VectorXd(static_cast<Eigen::Index>(unit.dim()))};
  unit.raw_row(row, out.basis_row);
  out.basis_row -= unit.means();
  out.contribution = out.basis_row.dot(unit.beta());
  return out;
}

inline double logistic(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

/// Intercept, link family and additive units over named features.
class AdditiveModel {
 public:
  AdditiveModel() = default;
  AdditiveModel(std::vector<std::string> feature_names, Family family)
      : family_(family), feature_names_(std::move(feature_names)) {}

  Family family() const noexcept { return family_; }
  const std::vector<std::string>& feature_names() const noexcept { return feature_names_; }
  std::size_t num_features() const noexcept { return feature_names_.size(); }

  double intercept() const noexcept { return intercept_; }
  void set_intercept(double value) noexcept { intercept_ = value; }

  const std::vector<FeatureUnit>& units() const noexcept { return units_; }
  FeatureUnit& unit(std::size_t u) { return units_.at(u); }
  const FeatureUnit& unit(std::size_t u) const { return units_.at(u); }

  void add_unit(FeatureUnit unit) {
    std::vector<std::size_t> key = unit.features();
    for (std::size_t f : key) {
      if (f >= num_features()) {
        throw Error(ErrorCode::dimension_mismatch, "unit references feature " + std::to_string(f) + " but model has " +
                                                       std::to_string(num_features()) + " features");
      }
    }
    std::sort(key.begin(), key.end());
    for (const auto& existing : units_) {
      std::vector<std::size_t> other = existing.features();
      std::sort(other.begin(), other.end());
      if (other == key) throw Error(ErrorCode::invalid_config, "two units claim the same feature set");
    }
    units_.push_back(std::move(unit));
  }

  double predict_eta(std::span<const double> row) const {
    double eta = intercept_;
    Eigen::VectorXd buf;
    for (const auto& u : units_) {
      buf.resize(static_cast<Eigen::Index>(u.dim()));
      u.raw_row(row, buf);
      eta += (buf - u.means()).dot(u.beta());
    }
    return eta;
  }

  double inverse_link(double eta) const { return family_ == Family::gaussian ? eta : logistic(eta); }
  double predict_mu(std::span<const double> row) const { return inverse_link(predict_eta(row)); }

  /// Intercept plus unit coefficients (the Fisher block).
  std::size_t num_coefficients() const {
    std::size_t n = 1;
    for (const auto& u : units_) n += u.dim();
    return n;
  }

  /// All trainable scalars: intercept, coefficients and shape parameters.
  std::size_t num_parameters() const {
    std::size_t n = 1;
    for (const auto& u : units_) n += u.dim() + u.num_shape_params();
    return n;
  }

  /// Offset of unit u's coefficients in the parameter vector; its shape
  /// parameters follow the coefficients.
  std::size_t parameter_offset(std::size_t u) const {
    std::size_t off = 1;
    for (std::size_t i = 0; i < u; ++i) off += units_[i].dim() + units_[i].num_shape_params();
    return off;
  }

  /// Offset of unit u's coefficients in the coefficient-only vector.
  std::size_t coefficient_offset(std::size_t u) const {
    std::size_t off = 1;
    for (std::size_t i = 0; i < u; ++i) off += units_[i].dim();
    return off;
  }

  Eigen::VectorXd parameters() const {
    Eigen::VectorXd p(static_cast<Eigen::Index>(num_parameters()));
    p[0] = intercept_;
    std::size_t off = 1;
    for (const auto& u : units_) {
      p.segment(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(u.dim())) = u.beta();
      off += u.dim();
      u.shape_params(std::span<double>(p.data() + off, u.num_shape_params()));
      off += u.num_shape_params();
    }
    return p;
  }

  /// Writes every trainable parameter and re-sorts learnable knots.
  void set_parameters(const Eigen::VectorXd& p) {
    if (static_cast<std::size_t>(p.size()) != num_parameters()) {
      throw Error(ErrorCode::dimension_mismatch, "parameter vector length mismatch");
    }
    intercept_ = p[0];
    std::size_t off = 1;
    for (auto& u : units_) {
      u.set_beta(p.segment(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(u.dim())));
      off += u.dim();
      u.set_shape_params(std::span<const double>(p.data() + off, u.num_shape_params()));
      off += u.num_shape_params();
    }
    sort_knots();
  }

  Eigen::VectorXd coefficients() const {
    Eigen::VectorXd c(static_cast<Eigen::Index>(num_coefficients()));
    c[0] = intercept_;
    for (std::size_t u = 0; u < units_.size(); ++u) {
      c.segment(static_cast<Eigen::Index>(coefficient_offset(u)), static_cast<Eigen::Index>(units_[u].dim())) =
          units_[u].beta();
    }
    return c;
  }

  void sort_knots() {
    for (auto& u : units_) u.sort_knots();
  }

  bool has_shape_parameters() const {
    return std::any_of(units_.begin(), units_.end(), [](const auto& u) { return u.num_shape_params() > 0; });
  }

  /// Recomputes exact column means over the given rows and moves the induced
  /// constant shift into the intercept, so predictions are unchanged.
  void update_centering(const FeatureMatrix& x, std::span<const std::size_t> rows, bool freeze = false) {
    if (rows.empty()) return;
    for (auto& u : units_) {
      if (u.frozen()) continue;
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(u.dim()));
      Eigen::VectorXd buf(static_cast<Eigen::Index>(u.dim()));
      for (std::size_t r : rows) {
        u.raw_row(std::span<const double>(x.row(static_cast<Eigen::Index>(r)).data(), num_features()), buf);
        sum += buf;
      }
      Eigen::VectorXd means = sum / static_cast<double>(rows.size());
      intercept_ += (means - u.means()).dot(u.beta());
      u.set_means(std::move(means));
      if (freeze) u.freeze();
    }
  }

  void freeze_centering(const FeatureMatrix& x, std::span<const std::size_t> rows) { update_centering(x, rows, true); }

  void unfreeze_centering() {
    for (auto& u : units_) u.unfreeze();
  }

 private:
  double intercept_ = 0.0;
  Family family_ = Family::gaussian;
  std::vector<std::string> feature_names_;
  std::vector<FeatureUnit> units_;
};

inline std::span<const double> row_span(const FeatureMatrix& x, std::size_t i) {
  return {x.row(static_cast<Eigen::Index>(i)).data(), static_cast<std::size_t>(x.cols())};
}

inline double predict_eta(const AdditiveModel& model, std::span<const double> row) { return model.predict_eta(row); }
inline double predict_mu(const AdditiveModel& model, std::span<const double> row) { return model.predict_mu(row); }
inline std::size_t count_params(const AdditiveModel& model) { return model.num_parameters(); }

/// Fitted effect of a univariate unit along a grid of feature values.
inline std::vector<double> shape_curve(const AdditiveModel& model, std::size_t unit_index, std::span<const double> grid) {
  const FeatureUnit& unit = model.unit(unit_index);
  if (!unit.univariate()) throw Error(ErrorCode::wrong_unit_kind, "shape_curve needs a univariate unit; use shape_surface");
  std::vector<double> out;
  out.reserve(grid.size());
  for (double x : grid) out.push_back(unit.contribution_local(std::span<const double>(&x, 1)));
  return out;
}

/// Fitted effect of a tensor unit on the Cartesian grid (rows follow grid_i).
inline Eigen::MatrixXd shape_surface(const AdditiveModel& model, std::size_t unit_index, std::span<const double> grid_i,
                                     std::span<const double> grid_j) {
  const FeatureUnit& unit = model.unit(unit_index);
  if (unit.kind() != UnitKind::tensor) throw Error(ErrorCode::wrong_unit_kind, "shape_surface needs a tensor unit");
  Eigen::MatrixXd out(static_cast<Eigen::Index>(grid_i.size()), static_cast<Eigen::Index>(grid_j.size()));
  for (std::size_t a = 0; a < grid_i.size(); ++a) {
    for (std::size_t b = 0; b < grid_j.size(); ++b) {
      const std::array<double, 2> v{grid_i[a], grid_j[b]};
      out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = unit.contribution_local(v);
    }
  }
  return out;
}

}  // namespace snam
