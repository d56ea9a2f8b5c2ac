#pragma once

// Post-fit uncertainty over the coefficient block: empirical Fisher information,
// Gaussian posterior draws and pointwise credibility bands for shape functions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snam/additive_model.hpp"
#include "snam/error.hpp"

namespace snam {

inline constexpr std::size_t max_fisher_dimension = 4096;

struct FisherEstimate {
  Eigen::MatrixXd matrix;               ///< averaged outer product, p x p
  std::size_t observations = 0;
  std::vector<std::size_t> unit_offsets;  ///< start of each unit's block; the intercept sits at 0
};

namespace detail {

inline void check_dimension(std::size_t p) {
  if (p > max_fisher_dimension) {
    throw Error(ErrorCode::too_many_parameters, "coefficient block has " + std::to_string(p) +
                                                    " entries; the dense Fisher matrix supports at most " +
                                                    std::to_string(max_fisher_dimension));
  }
}

inline std::vector<std::size_t> unit_offsets(const AdditiveModel& model) {
  std::vector<std::size_t> out;
  for (std::size_t u = 0; u < model.units().size(); ++u) out.push_back(model.coefficient_offset(u));
  return out;
}

/// Type-7 quantile of an already sorted range.
inline double sorted_quantile7(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

/// Residual variance (MLE) of a Gaussian fit; 1 for the Bernoulli family.
inline double estimate_dispersion(const AdditiveModel& model, const FeatureMatrix& x, const Eigen::VectorXd& y,
                                  std::span<const std::size_t> rows) {
  if (model.family() != Family::gaussian || rows.empty()) return 1.0;
  double sum = 0.0;
  for (std::size_t r : rows) {
    const double e = y[static_cast<Eigen::Index>(r)] - model.predict_eta(row_span(x, r));
    sum += e * e;
  }
  return sum / static_cast<double>(rows.size());
}

/// Rows of d l_i / d beta at the fitted coefficients for the intercept and all
/// unit coefficients. l_i is the log-likelihood, so rows are (y - mu) / phi
/// times the centered design row. phi defaults to the estimated dispersion.
inline Eigen::MatrixXd per_example_gradients(const AdditiveModel& model, const FeatureMatrix& x,
                                             const Eigen::VectorXd& y, std::span<const std::size_t> rows,
                                             std::optional<double> dispersion = std::nullopt) {
  const std::size_t p = model.num_coefficients();
  detail::check_dimension(p);
  const double phi = dispersion ? *dispersion : estimate_dispersion(model, x, y, rows);
  if (!(phi > 0.0) || !std::isfinite(phi)) throw Error(ErrorCode::zero_variance, "dispersion must be positive");

  Eigen::MatrixXd grads(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(p));
  Eigen::VectorXd buf;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto row = row_span(x, rows[i]);
    const auto gi = static_cast<Eigen::Index>(i);
    grads(gi, 0) = 1.0;
    double eta = model.intercept();
    for (std::size_t u = 0; u < model.units().size(); ++u) {
      const FeatureUnit& unit = model.unit(u);
      buf.resize(static_cast<Eigen::Index>(unit.dim()));
      unit.raw_row(row, buf);
      buf -= unit.means();
      eta += buf.dot(unit.beta());
      grads.row(gi).segment(static_cast<Eigen::Index>(model.coefficient_offset(u)), buf.size()) = buf.transpose();
    }
    const double resid = y[static_cast<Eigen::Index>(rows[i])] - model.inverse_link(eta);
    grads.row(gi) *= resid / phi;
  }
  return grads;
}

inline FisherEstimate empirical_fisher(const Eigen::MatrixXd& grads) {
  if (grads.rows() == 0) throw Error(ErrorCode::too_few_rows, "empirical Fisher needs at least one gradient row");
  detail::check_dimension(static_cast<std::size_t>(grads.cols()));
  FisherEstimate f;
  f.observations = static_cast<std::size_t>(grads.rows());
  f.matrix = Eigen::MatrixXd::Zero(grads.cols(), grads.cols());
  f.matrix.selfadjointView<Eigen::Lower>().rankUpdate(grads.transpose(), 1.0 / static_cast<double>(grads.rows()));
  f.matrix = f.matrix.selfadjointView<Eigen::Lower>();
  return f;
}

inline FisherEstimate empirical_fisher(const AdditiveModel& model, const Eigen::MatrixXd& grads) {
  FisherEstimate f = empirical_fisher(grads);
  f.unit_offsets = detail::unit_offsets(model);
  return f;
}

/// Block-diagonal prior precision 2 n lambda_u S_u / phi on the coefficient
/// layout, zero for the intercept. This is the curvature the penalty adds to
/// the total (not averaged) log-likelihood divided by phi.
inline Eigen::MatrixXd penalty_precision(const AdditiveModel& model, std::size_t n, double dispersion) {
  const auto p = static_cast<Eigen::Index>(model.num_coefficients());
  Eigen::MatrixXd lambda_s = Eigen::MatrixXd::Zero(p, p);
  const double scale = 2.0 * static_cast<double>(n) / dispersion;
  for (std::size_t u = 0; u < model.units().size(); ++u) {
    const FeatureUnit& unit = model.unit(u);
    const auto off = static_cast<Eigen::Index>(model.coefficient_offset(u));
    const auto dim = static_cast<Eigen::Index>(unit.dim());
    lambda_s.block(off, off, dim, dim) = scale * unit.lambda() * unit.penalty();
  }
  return lambda_s;
}

struct PosteriorCovariance {
  Eigen::MatrixXd covariance;
  double jitter = 0.0;  ///< diagonal jitter that made the precision factorizable
};

/// Sigma = (n F + Lambda + jitter I)^-1 with jitter escalated by 10x from
/// `jitter` up to 1e-4 until the Cholesky factorization succeeds.
inline PosteriorCovariance posterior_covariance(const FisherEstimate& fisher, const Eigen::MatrixXd& lambda_s,
                                                double jitter = 1e-8) {
  const Eigen::Index p = fisher.matrix.rows();
  if (lambda_s.rows() != p || lambda_s.cols() != p) {
    throw Error(ErrorCode::dimension_mismatch, "penalty blocks do not match the Fisher matrix");
  }
  const Eigen::MatrixXd precision = static_cast<double>(fisher.observations) * fisher.matrix + lambda_s;
  for (double j = jitter; j <= 1e-4 * (1.0 + 1e-9); j *= 10.0) {
    Eigen::MatrixXd a = precision;
    a.diagonal().array() += j;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) continue;
    Eigen::MatrixXd sigma = llt.solve(Eigen::MatrixXd::Identity(p, p));
    if (!sigma.allFinite()) continue;
    sigma = 0.5 * (sigma + sigma.transpose());
    return {std::move(sigma), j};
  }
  throw Error(ErrorCode::not_positive_definite, "posterior precision is not positive definite even with jitter 1e-4");
}

/// M draws from N(mean, sigma), one per row. Uses the Cholesky factor of sigma,
/// or a pivoted LDL^T factor when sigma is only semidefinite, and
/// std::mt19937_64 seeded with `seed`.
inline Eigen::MatrixXd sample_coefficients(const Eigen::VectorXd& mean, const Eigen::MatrixXd& sigma, std::size_t m,
                                           std::uint64_t seed) {
  if (sigma.rows() != mean.size() || sigma.cols() != mean.size()) {
    throw Error(ErrorCode::dimension_mismatch, "covariance does not match the mean vector");
  }
  Eigen::MatrixXd lower;
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() == Eigen::Success) {
    lower = llt.matrixL();
  } else {
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma);
    Eigen::VectorXd d = ldlt.vectorD();
    const double tol = 1e-12 * std::max(1.0, d.cwiseAbs().maxCoeff());
    if (ldlt.info() != Eigen::Success || (d.array() < -tol).any()) {
      throw Error(ErrorCode::not_positive_definite, "covariance is not positive semidefinite");
    }
    d = d.cwiseMax(0.0).cwiseSqrt();
    const Eigen::MatrixXd l = ldlt.matrixL();
    lower = ldlt.transpositionsP().transpose() * (l * d.asDiagonal());
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index p = mean.size();
  Eigen::MatrixXd z(p, static_cast<Eigen::Index>(m));
  for (Eigen::Index c = 0; c < z.cols(); ++c)
    for (Eigen::Index r = 0; r < p; ++r) z(r, c) = normal(rng);
  Eigen::MatrixXd draws = (lower * z).transpose();
  draws.rowwise() += mean.transpose();
  return draws;
}

struct CredibleBand {
  std::vector<double> grid;
  std::vector<double> lower;
  std::vector<double> mean;
  std::vector<double> upper;
  double alpha = 0.05;
  std::size_t samples = 0;
};

/// Pointwise alpha/2 and 1 - alpha/2 quantiles of the sampled shape function of
/// a univariate unit; `samples` holds full coefficient draws (intercept first).
inline CredibleBand credible_band(const AdditiveModel& model, std::size_t unit_index, std::span<const double> grid,
                                  const Eigen::MatrixXd& samples, double alpha = 0.05) {
  const FeatureUnit& unit = model.unit(unit_index);
  if (!unit.univariate()) throw Error(ErrorCode::wrong_unit_kind, "credible bands need a univariate unit");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::invalid_config, "alpha must lie in (0, 1)");
  if (static_cast<std::size_t>(samples.cols()) != model.num_coefficients() || samples.rows() == 0) {
    throw Error(ErrorCode::dimension_mismatch, "samples do not match the model's coefficient layout");
  }
  const auto off = static_cast<Eigen::Index>(model.coefficient_offset(unit_index));
  const auto dim = static_cast<Eigen::Index>(unit.dim());
  const Eigen::MatrixXd block = samples.middleCols(off, dim);

  CredibleBand band;
  band.grid.assign(grid.begin(), grid.end());
  band.alpha = alpha;
  band.samples = static_cast<std::size_t>(samples.rows());
  Eigen::VectorXd row(dim);
  std::vector<double> values(static_cast<std::size_t>(samples.rows()));
  for (double g : grid) {
    unit.raw_row_local(std::span<const double>(&g, 1), row);
    row -= unit.means();
    const Eigen::VectorXd draws = block * row;
    std::copy(draws.data(), draws.data() + draws.size(), values.begin());
    std::sort(values.begin(), values.end());
    band.lower.push_back(detail::sorted_quantile7(values, alpha / 2.0));
    band.upper.push_back(detail::sorted_quantile7(values, 1.0 - alpha / 2.0));
    band.mean.push_back(row.dot(unit.beta()));
  }
  return band;
}

/// Fisher, posterior and draws for a fitted model in one call.
struct BandPosterior {
  FisherEstimate fisher;
  PosteriorCovariance posterior;
  Eigen::MatrixXd samples;
  double dispersion = 1.0;
};

inline BandPosterior coefficient_posterior(const AdditiveModel& model, const FeatureMatrix& x, const Eigen::VectorXd& y,
                                           std::span<const std::size_t> rows, std::size_t m, std::uint64_t seed) {
  BandPosterior out;
  out.dispersion = estimate_dispersion(model, x, y, rows);
  out.fisher = empirical_fisher(model, per_example_gradients(model, x, y, rows, out.dispersion));
  out.posterior = posterior_covariance(out.fisher, penalty_precision(model, rows.size(), out.dispersion));
  out.samples = sample_coefficients(model.coefficients(), out.posterior.covariance, m, seed);
  return out;
}

}  // namespace snam
