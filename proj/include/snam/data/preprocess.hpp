#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snam/additive_model.hpp"
#include "snam/data/csv.hpp"
#include "snam/error.hpp"

namespace snam::data {

/// Maps v to 2 r(v) - 1 where r is the mid-rank empirical CDF of the training
/// column, linearly interpolated between distinct training values. Values
/// outside the training range clamp to -1 and 1. A constant column maps to 0.
class QuantileTransform {
 public:
  QuantileTransform() = default;

  static QuantileTransform fit(std::span<const double> column) {
    if (column.empty()) throw Error(ErrorCode::too_few_rows, "quantile transform needs at least one value");
    std::vector<double> sorted(column.begin(), column.end());
    std::sort(sorted.begin(), sorted.end());
    QuantileTransform t;
    const double n = static_cast<double>(sorted.size());
    std::size_t i = 0;
    while (i < sorted.size()) {
      std::size_t j = i;
      while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
      t.values_.push_back(sorted[i]);
      t.cdf_.push_back((static_cast<double>(i) + 0.5 * static_cast<double>(j - i)) / n);
      i = j;
    }
    return t;
  }

  static QuantileTransform from_state(std::vector<double> values, std::vector<double> cdf) {
    if (values.empty() || values.size() != cdf.size() || !std::is_sorted(values.begin(), values.end())) {
      throw Error(ErrorCode::schema_mismatch, "invalid quantile transform state");
    }
    QuantileTransform t;
    t.values_ = std::move(values);
    t.cdf_ = std::move(cdf);
    return t;
  }

  bool constant() const noexcept { return values_.size() == 1; }
  const std::vector<double>& values() const noexcept { return values_; }
  const std::vector<double>& cdf() const noexcept { return cdf_; }

  /// Inverse on the training range: the value whose transform is u.
  double invert(double u) const {
    if (constant()) return values_.front();
    const double p = (std::clamp(u, -1.0, 1.0) + 1.0) / 2.0;
    if (p <= cdf_.front()) return values_.front();
    if (p >= cdf_.back()) return values_.back();
    const auto hi = static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), p) - cdf_.begin());
    const std::size_t lo = hi - 1;
    const double w = (p - cdf_[lo]) / (cdf_[hi] - cdf_[lo]);
    return values_[lo] + w * (values_[hi] - values_[lo]);
  }

  double apply(double v) const {
    if (constant()) return 0.0;
    if (v < values_.front()) return -1.0;
    if (v > values_.back()) return 1.0;
    const auto it = std::lower_bound(values_.begin(), values_.end(), v);
    const auto hi = static_cast<std::size_t>(it - values_.begin());
    if (*it == v) return 2.0 * cdf_[hi] - 1.0;
    const std::size_t lo = hi - 1;
    const double w = (v - values_[lo]) / (values_[hi] - values_[lo]);
    return 2.0 * (cdf_[lo] + w * (cdf_[hi] - cdf_[lo])) - 1.0;
  }

 private:
  std::vector<double> values_;  // distinct training values, ascending
  std::vector<double> cdf_;     // mid-rank CDF at each distinct value
};

/// z = (y - mean) / sd with the population standard deviation of the training targets.
struct TargetScaler {
  double mean = 0.0;
  double sd = 1.0;

  static TargetScaler fit(std::span<const double> y) {
    if (y.empty()) throw Error(ErrorCode::too_few_rows, "cannot standardize an empty target");
    double m = 0.0;
    for (double v : y) m += v;
    m /= static_cast<double>(y.size());
    double ss = 0.0;
    for (double v : y) ss += (v - m) * (v - m);
    const double sd = std::sqrt(ss / static_cast<double>(y.size()));
    if (!(sd > 0.0)) throw Error(ErrorCode::zero_variance, "target has zero variance on the training split");
    return {m, sd};
  }

  double apply(double y) const { return (y - mean) / sd; }
  double invert(double z) const { return z * sd + mean; }
};

/// One indicator per training category, in sorted order.
class OneHotEncoder {
 public:
  OneHotEncoder() = default;
  explicit OneHotEncoder(std::vector<std::string> categories) : categories_(std::move(categories)) {
    std::sort(categories_.begin(), categories_.end());
    categories_.erase(std::unique(categories_.begin(), categories_.end()), categories_.end());
  }

  static OneHotEncoder fit(std::span<const std::string> column) {
    return OneHotEncoder(std::vector<std::string>(column.begin(), column.end()));
  }

  const std::vector<std::string>& categories() const noexcept { return categories_; }
  std::size_t width() const noexcept { return categories_.size(); }

  /// Writes the indicator row; returns false for a category unseen in training
  /// (the row is then all zeros).
  bool apply(const std::string& value, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    const auto it = std::lower_bound(categories_.begin(), categories_.end(), value);
    if (it == categories_.end() || *it != value) return false;
    out[static_cast<std::size_t>(it - categories_.begin())] = 1.0;
    return true;
  }

  std::vector<double> apply(const std::string& value) const {
    std::vector<double> out(width());
    apply(value, out);
    return out;
  }

 private:
  std::vector<std::string> categories_;
};

enum class FeatureKind { numeric, one_hot };

struct FeatureColumn {
  std::string name;    ///< "age" or "region=northeast"
  FeatureKind kind = FeatureKind::numeric;
  std::string source;  ///< originating CSV column
};

/// Every statistic the pipeline needs, fitted on training rows only.
struct PreprocessState {
  std::vector<ColumnSpec> sources;
  std::vector<QuantileTransform> quantiles;  ///< per source column (unused for categorical)
  std::vector<OneHotEncoder> encoders;       ///< per source column (unused for numeric)
  std::string target_name;
  TargetKind target_kind = TargetKind::continuous;
  TargetScaler target;                       ///< identity for binary targets
  bool log_target = false;                   ///< targets were log-transformed before scaling
  std::optional<std::string> positive_label; ///< label read as 1 for binary targets
  std::vector<FeatureColumn> features;
  std::vector<std::string> warnings;

  std::vector<std::string> feature_names() const {
    std::vector<std::string> out;
    for (const auto& f : features) out.push_back(f.name);
    return out;
  }
};

/// Encoded features and target for a set of rows.
struct Dataset {
  FeatureMatrix x;
  Eigen::VectorXd y;
  std::vector<FeatureColumn> columns;
  TargetKind target_kind = TargetKind::continuous;
  std::vector<std::string> warnings;
};

inline PreprocessState fit_preprocess(const RawTable& table, std::span<const std::size_t> train_rows) {
  if (train_rows.empty()) throw Error(ErrorCode::too_few_rows, "preprocessing needs training rows");
  PreprocessState state;
  state.sources = table.columns;
  state.quantiles.resize(table.columns.size());
  state.encoders.resize(table.columns.size());
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    const ColumnSpec& spec = table.columns[c];
    if (spec.kind == ColumnKind::numeric) {
      std::vector<double> values;
      values.reserve(train_rows.size());
      for (std::size_t r : train_rows) values.push_back(table.numeric[c][r]);
      state.quantiles[c] = QuantileTransform::fit(values);
      if (state.quantiles[c].constant()) {
        state.warnings.push_back("column '" + spec.name + "' is constant on the training split; mapped to 0");
      }
      state.features.push_back({spec.name, FeatureKind::numeric, spec.name});
    } else {
      std::vector<std::string> values;
      for (std::size_t r : train_rows) values.push_back(table.categorical[c][r]);
      state.encoders[c] = OneHotEncoder::fit(values);
      for (const auto& cat : state.encoders[c].categories()) {
        state.features.push_back({spec.name + "=" + cat, FeatureKind::one_hot, spec.name});
      }
    }
  }

  std::vector<double> y;
  for (std::size_t r : train_rows) y.push_back(table.target[r]);
  state.target_kind = table.target_kind;
  state.target_name = table.target_name;
  if (state.target_kind == TargetKind::continuous) state.target = TargetScaler::fit(y);
  return state;
}

inline Dataset apply_preprocess(const PreprocessState& state, const RawTable& table, std::span<const std::size_t> rows) {
  Dataset out;
  out.columns = state.features;
  out.target_kind = state.target_kind;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(state.features.size()));
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  std::size_t unseen = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto ri = static_cast<Eigen::Index>(i);
    Eigen::Index col = 0;
    for (std::size_t c = 0; c < state.sources.size(); ++c) {
      if (state.sources[c].kind == ColumnKind::numeric) {
        out.x(ri, col++) = state.quantiles[c].apply(table.numeric[c][rows[i]]);
      } else {
        const auto width = static_cast<Eigen::Index>(state.encoders[c].width());
        std::vector<double> ind(state.encoders[c].width());
        if (!state.encoders[c].apply(table.categorical[c][rows[i]], ind)) ++unseen;
        for (Eigen::Index w = 0; w < width; ++w) out.x(ri, col + w) = ind[static_cast<std::size_t>(w)];
        col += width;
      }
    }
    const double y = table.target[rows[i]];
    out.y[ri] = state.target_kind == TargetKind::continuous ? state.target.apply(y) : y;
  }
  if (unseen > 0) {
    out.warnings.push_back(std::to_string(unseen) + " categorical value(s) unseen in training were encoded as all zeros");
  }
  return out;
}

}  // namespace snam::data
