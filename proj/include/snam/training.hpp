#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snam/additive_model.hpp"
#include "snam/error.hpp"
#include "snam/random.hpp"

namespace snam {

struct FitConfig {
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 1024;
  std::size_t max_epochs = 1000;
  std::size_t patience = 100;  ///< early stopping, in epochs without validation improvement
  double lr_decay = 0.995;
  std::size_t plateau_patience = 10;
  double plateau_min_delta = 1e-6;
  /// rho; when unset, 1e-6 times the widest learnable knot range at fit start.
  std::optional<double> knot_penalty;
  std::uint64_t seed = 101;

  void validate() const {
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::invalid_config, "learning_rate must be positive");
    if (patience < 1) throw Error(ErrorCode::invalid_config, "patience must be at least 1");
    if (batch_size < 1) throw Error(ErrorCode::invalid_config, "batch_size must be at least 1");
    if (plateau_patience < 1) throw Error(ErrorCode::invalid_config, "plateau_patience must be at least 1");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw Error(ErrorCode::invalid_config, "lr_decay must be in (0, 1]");
    if (knot_penalty && !(*knot_penalty >= 0.0)) throw Error(ErrorCode::invalid_config, "knot_penalty must be >= 0");
  }
};

/// Rows of a feature matrix and target vector taking part in a computation.
struct Batch {
  const FeatureMatrix& x;
  const Eigen::VectorXd& y;
  std::span<const std::size_t> rows;

  std::size_t size() const noexcept { return rows.size(); }
};

inline std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

inline double effective_knot_penalty(const AdditiveModel& model, const FitConfig& config) {
  if (config.knot_penalty) return *config.knot_penalty;
  double range = 0.0;
  for (const auto& u : model.units()) {
    if (u.learnable_knots()) range = std::max(range, u.cubic_system()->knots().range());
  }
  return 1e-6 * range;
}

/// Raw basis matrices of units whose expansion has no trainable parameters,
/// computed once for every row of a feature matrix.
class DesignCache {
 public:
  DesignCache() = default;

  DesignCache(const AdditiveModel& model, const FeatureMatrix& x) {
    const auto& units = model.units();
    raw_.resize(units.size());
    for (std::size_t u = 0; u < units.size(); ++u) {
      if (units[u].num_shape_params() > 0) continue;
      Eigen::MatrixXd m(x.rows(), static_cast<Eigen::Index>(units[u].dim()));
      Eigen::VectorXd buf(m.cols());
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        units[u].raw_row(row_span(x, static_cast<std::size_t>(i)), buf);
        m.row(i) = buf.transpose();
      }
      raw_[u] = std::move(m);
    }
  }

  const Eigen::MatrixXd* raw(std::size_t unit) const {
    if (unit >= raw_.size() || raw_[unit].size() == 0) return nullptr;
    return &raw_[unit];
  }

 private:
  std::vector<Eigen::MatrixXd> raw_;
};

namespace detail {

/// Centered batch design of one unit (rows follow batch.rows).
inline Eigen::MatrixXd centered_design(const AdditiveModel& model, std::size_t u, const Batch& batch,
                                       const DesignCache* cache) {
  const FeatureUnit& unit = model.unit(u);
  const auto n = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd design(n, static_cast<Eigen::Index>(unit.dim()));
  const Eigen::MatrixXd* raw = cache ? cache->raw(u) : nullptr;
  Eigen::VectorXd buf(design.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t r = batch.rows[static_cast<std::size_t>(i)];
    if (raw != nullptr) {
      design.row(i) = raw->row(static_cast<Eigen::Index>(r));
    } else {
      unit.raw_row(row_span(batch.x, r), buf);
      design.row(i) = buf.transpose();
    }
  }
  design.rowwise() -= unit.means().transpose();
  return design;
}

inline void check_binary(const Batch& batch) {
  for (std::size_t r : batch.rows) {
    const double y = batch.y[static_cast<Eigen::Index>(r)];
    if (y != 0.0 && y != 1.0) {
      throw Error(ErrorCode::non_binary_target, "bernoulli target must be 0 or 1, row " + std::to_string(r) + " has " +
                                                     std::to_string(y));
    }
  }
}

inline double softplus(double eta) { return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta)); }

}  // namespace detail

/// Linear predictor for every row of the batch.
inline Eigen::VectorXd batch_eta(const AdditiveModel& model, const Batch& batch, const DesignCache* cache = nullptr) {
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(batch.size()), model.intercept());
  for (std::size_t u = 0; u < model.units().size(); ++u) {
    eta += detail::centered_design(model, u, batch, cache) * model.unit(u).beta();
  }
  return eta;
}

/// Mean negative log-likelihood given precomputed linear predictors.
inline double mean_nll(Family family, const Eigen::VectorXd& eta, const Batch& batch) {
  if (batch.size() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double y = batch.y[static_cast<Eigen::Index>(batch.rows[i])];
    const double e = eta[static_cast<Eigen::Index>(i)];
    sum += family == Family::gaussian ? 0.5 * (y - e) * (y - e) : detail::softplus(e) - y * e;
  }
  return sum / static_cast<double>(batch.size());
}

/// Gaussian: mean of (y - eta)^2 / 2 (unit variance). Bernoulli-logit: mean of
/// log(1 + e^eta) - y eta in overflow-free form.
inline double negative_log_likelihood(const AdditiveModel& model, const Batch& batch,
                                      const DesignCache* cache = nullptr) {
  if (model.family() == Family::bernoulli_logit) detail::check_binary(batch);
  return mean_nll(model.family(), batch_eta(model, batch, cache), batch);
}

inline double penalty_terms(const AdditiveModel& model, double rho) {
  double total = 0.0;
  for (const auto& u : model.units()) total += u.penalty_value() + rho * u.knot_distance_penalty();
  return total;
}

/// NLL + sum_u lambda_u beta_u^T S_u beta_u + rho sum_u g(kappa_u).
inline double total_loss(const AdditiveModel& model, const Batch& batch, const FitConfig& config,
                         const DesignCache* cache = nullptr) {
  return negative_log_likelihood(model, batch, cache) + penalty_terms(model, effective_knot_penalty(model, config));
}

/// Exact gradient of total_loss in the layout of AdditiveModel::parameters().
/// Centering means are treated as constants.
inline Eigen::VectorXd gradients(const AdditiveModel& model, const Batch& batch, const FitConfig& config,
                                 const DesignCache* cache = nullptr) {
  if (model.family() == Family::bernoulli_logit) detail::check_binary(batch);
  const std::size_t n_units = model.units().size();
  std::vector<Eigen::MatrixXd> designs(n_units);
  Eigen::VectorXd eta = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(batch.size()), model.intercept());
  for (std::size_t u = 0; u < n_units; ++u) {
    designs[u] = detail::centered_design(model, u, batch, cache);
    eta += designs[u] * model.unit(u).beta();
  }

  // d(mean NLL)/d eta_i
  Eigen::VectorXd d_eta(eta.size());
  const double inv_n = batch.size() > 0 ? 1.0 / static_cast<double>(batch.size()) : 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double y = batch.y[static_cast<Eigen::Index>(batch.rows[static_cast<std::size_t>(i)])];
    const double mu = model.inverse_link(eta[i]);
    d_eta[i] = (mu - y) * inv_n;
  }

  const double rho = effective_knot_penalty(model, config);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.num_parameters()));
  grad[0] = d_eta.sum();
  for (std::size_t u = 0; u < n_units; ++u) {
    const FeatureUnit& unit = model.unit(u);
    const auto off = static_cast<Eigen::Index>(model.parameter_offset(u));
    const auto dim = static_cast<Eigen::Index>(unit.dim());
    grad.segment(off, dim) = designs[u].transpose() * d_eta + 2.0 * unit.lambda() * (unit.penalty() * unit.beta());
    if (const std::size_t n_shape = unit.num_shape_params(); n_shape > 0) {
      std::span<double> shape(grad.data() + off + dim, n_shape);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        unit.accumulate_shape_gradient(row_span(batch.x, batch.rows[i]), d_eta[static_cast<Eigen::Index>(i)], shape);
      }
      unit.accumulate_penalty_shape_gradient(rho, shape);
    }
  }
  if (!grad.allFinite()) throw Error(ErrorCode::non_finite_gradient, "gradient has NaN or Inf components");
  return grad;
}

/// Sorts every learnable knot vector and rebuilds its basis matrices.
inline void sort_knots(AdditiveModel& model) { model.sort_knots(); }

struct FitResult {
  AdditiveModel model;
  std::vector<double> train_loss;
  std::vector<double> validation_loss;  ///< empty when no validation rows were given
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double final_learning_rate = 0.0;
  std::vector<double> unit_penalties;
};


/// Mini-batch Adam on total_loss.
///
/// Centering means are recomputed on the full training rows at the start of
/// each epoch (only once when no basis parameter is trainable) with the
/// constant shift absorbed by the intercept. With validation rows, the
/// parameters of the best validation epoch are restored and training stops
/// after `patience` epochs without improvement. The learning rate is multiplied
/// by lr_decay whenever the monitored loss fails to improve by more than
/// plateau_min_delta for plateau_patience epochs. Centering is frozen to the
/// exact training means at the end.
inline FitResult fit(AdditiveModel model, const FeatureMatrix& x, const Eigen::VectorXd& y,
                     std::span<const std::size_t> train_rows, std::span<const std::size_t> valid_rows,
                     const FitConfig& config_in) {
  config_in.validate();
  if (train_rows.empty()) throw Error(ErrorCode::too_few_rows, "training set is empty");
  FitConfig config = config_in;
  config.knot_penalty = effective_knot_penalty(model, config_in);

  const Batch train{x, y, train_rows};
  const Batch valid{x, y, valid_rows};
  if (model.family() == Family::bernoulli_logit) {
    detail::check_binary(train);
    detail::check_binary(valid);
  }

  model.unfreeze_centering();
  model.sort_knots();
  model.update_centering(x, train_rows);

  // Fresh model: start the intercept at the link of the mean target.
  const bool fresh = std::all_of(model.units().begin(), model.units().end(),
                                 [](const auto& u) { return (u.beta().array() == 0.0).all(); });
  if (fresh) {
    double mean = 0.0;
    for (std::size_t r : train_rows) mean += y[static_cast<Eigen::Index>(r)];
    mean /= static_cast<double>(train_rows.size());
    if (model.family() == Family::gaussian) {
      model.set_intercept(mean);
    } else {
      const double p = std::clamp(mean, 1e-6, 1.0 - 1e-6);
      model.set_intercept(std::log(p / (1.0 - p)));
    }
  }

  const DesignCache cache(model, x);
  const bool refresh_centering = model.has_shape_parameters();

  FitResult result;
  const auto n_params = static_cast<Eigen::Index>(model.num_parameters());
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(n_params);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(n_params);
  std::uint64_t step = 0;
  double lr = config.learning_rate;

  XorShift64 rng(config.seed);
  std::vector<std::size_t> order(train_rows.begin(), train_rows.end());

  double best_valid = std::numeric_limits<double>::infinity();
  double best_plateau = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::size_t since_plateau = 0;
  std::optional<AdditiveModel> best_model;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    if (refresh_centering && epoch > 0) model.update_centering(x, train_rows);
    rng.shuffle(order);

    for (std::size_t start_row = 0; start_row < order.size(); start_row += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start_row + config.batch_size);
      const Batch batch{x, y, std::span<const std::size_t>(order.data() + start_row, stop - start_row)};
      model.sort_knots();
      Eigen::VectorXd g;
      try {
        g = gradients(model, batch, config, &cache);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::non_finite_gradient) {
          throw Error(ErrorCode::diverged_fit, "non-finite gradient in epoch " + std::to_string(epoch));
        }
        throw;
      }
      ++step;
      m1 = config.adam_beta1 * m1 + (1.0 - config.adam_beta1) * g;
      m2 = config.adam_beta2 * m2 + (1.0 - config.adam_beta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(step));
      Eigen::VectorXd p = model.parameters();
      p.array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + config.adam_epsilon);
      model.set_parameters(p);
    }

    const double train_loss = total_loss(model, train, config, &cache);
    if (!std::isfinite(train_loss)) {
      throw Error(ErrorCode::diverged_fit, "training loss became non-finite in epoch " + std::to_string(epoch));
    }
    result.train_loss.push_back(train_loss);
    double monitor = train_loss;
    if (!valid_rows.empty()) {
      monitor = negative_log_likelihood(model, valid, &cache);
      result.validation_loss.push_back(monitor);
    }
    result.epochs_run = epoch + 1;

    if (monitor < best_plateau - config.plateau_min_delta) {
      best_plateau = monitor;
      since_plateau = 0;
    } else if (++since_plateau >= config.plateau_patience) {
      lr *= config.lr_decay;
      since_plateau = 0;
    }

    if (!valid_rows.empty()) {
      if (monitor < best_valid) {
        best_valid = monitor;
        best_model = model;
        result.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        break;
      }
    } else {
      result.best_epoch = epoch;
    }
  }

  if (best_model) model = std::move(*best_model);
  model.freeze_centering(x, train_rows);
  result.final_learning_rate = lr;
  for (const auto& u : model.units()) result.unit_penalties.push_back(u.penalty_value());
  result.model = std::move(model);
  return result;
}

/// Closed-form minimizer of (1/2n)|y - X beta|^2 + lambda beta^T S beta:
/// (X^T X + 2 n lambda S) beta = X^T y. Retries once with 1e-10 ridge jitter.
inline Eigen::VectorXd penalized_least_squares_oracle(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                                                      double lambda, const Eigen::MatrixXd& penalty) {
  if (design.rows() != y.size() || penalty.rows() != design.cols() || penalty.cols() != design.cols()) {
    throw Error(ErrorCode::dimension_mismatch, "oracle inputs have inconsistent shapes");
  }
  const double n = static_cast<double>(design.rows());
  const Eigen::MatrixXd normal = design.transpose() * design + 2.0 * n * lambda * penalty;
  const Eigen::VectorXd rhs = design.transpose() * y;

  auto attempt = [&](const Eigen::MatrixXd& a) -> std::optional<Eigen::VectorXd> {
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) return std::nullopt;
    Eigen::VectorXd beta = llt.solve(rhs);
    if (!beta.allFinite()) return std::nullopt;
    return beta;
  };
  if (auto beta = attempt(normal)) return *beta;
  const Eigen::MatrixXd jittered = normal + 1e-10 * Eigen::MatrixXd::Identity(normal.rows(), normal.cols());
  if (auto beta = attempt(jittered)) return *beta;
  throw Error(ErrorCode::singular_normal_equations, "normal equations are singular even with ridge jitter");
}

}  // namespace snam
