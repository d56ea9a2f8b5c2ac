#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "snam/additive_model.hpp"
#include "snam/bench/experiment.hpp"
#include "snam/model_io.hpp"
#include "snam/uncertainty.hpp"

namespace snam::bench {

/// Shortest decimal text that parses back to the same double.
inline std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// Output files staged in memory and published together. Nothing reaches the
/// target directory unless every file was staged; each file is written to a
/// temporary name and renamed into place.
class OutputSet {
 public:
  void add(std::string name, std::string text) { files_.emplace_back(std::move(name), std::move(text)); }
  void add_json(std::string name, const nlohmann::json& j) { add(std::move(name), j.dump(1) + "\n"); }
  const std::vector<std::pair<std::string, std::string>>& files() const noexcept { return files_; }

  void commit(const std::filesystem::path& dir) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::io_error, "cannot create output directory " + dir.string());
    std::vector<std::filesystem::path> staged;
    auto cleanup = [&] {
      for (const auto& p : staged) std::filesystem::remove(p, ec);
    };
    for (const auto& [name, text] : files_) {
      const auto tmp = dir / ("." + name + ".tmp");
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << text;
      out.close();
      staged.push_back(tmp);
      if (!out) {
        cleanup();
        throw Error(ErrorCode::io_error, "cannot write " + tmp.string());
      }
    }
    for (std::size_t i = 0; i < files_.size(); ++i) {
      std::filesystem::rename(staged[i], dir / files_[i].first, ec);
      if (ec) {
        cleanup();
        throw Error(ErrorCode::io_error, "cannot rename into " + (dir / files_[i].first).string());
      }
    }
  }

 private:
  std::vector<std::pair<std::string, std::string>> files_;
};

/// File-name-safe version of a feature name.
inline std::string slug(const std::string& name) {
  std::string s;
  for (char c : name) s.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
  return s;
}

/// Posterior of the fitted coefficients on the rows the model was fitted on,
/// or nullopt (with a warning) when it cannot be formed.
inline std::optional<StoredPosterior> fit_posterior(const AdditiveModel& model, const FeatureMatrix& x,
                                                    const Eigen::VectorXd& y, std::span<const std::size_t> rows,
                                                    std::vector<std::string>* warnings) {
  try {
    const double phi = estimate_dispersion(model, x, y, rows);
    const FisherEstimate fisher = empirical_fisher(model, per_example_gradients(model, x, y, rows, phi));
    const PosteriorCovariance post = posterior_covariance(fisher, penalty_precision(model, rows.size(), phi));
    return StoredPosterior{post.covariance, post.jitter, phi, rows.size()};
  } catch (const Error& e) {
    if (warnings != nullptr) warnings->push_back(std::string("no posterior stored: ") + e.what());
    return std::nullopt;
  }
}

/// Grid on the model scale for a feature: [-1, 1] for numeric columns, {0, 1} for indicators.
inline std::vector<double> model_grid(const data::FeatureColumn& col, std::size_t n) {
  if (col.kind == data::FeatureKind::one_hot) return {0.0, 1.0};
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

inline double raw_value(const data::PreprocessState& state, std::size_t feature, double u) {
  const data::FeatureColumn& col = state.features[feature];
  if (col.kind == data::FeatureKind::one_hot) return u;
  for (std::size_t c = 0; c < state.sources.size(); ++c) {
    if (state.sources[c].name == col.source) return state.quantiles[c].invert(u);
  }
  return u;
}

struct CurveOptions {
  std::size_t grid = 100;
  double alpha = 0.05;
  std::size_t samples = 1000;
  std::uint64_t seed = 101;
  bool bands = true;
  bool heatmaps = true;
};

/// Shape function CSVs (x, u, mean, lower, upper) for univariate units and
/// long-format heatmaps (x_i, x_j, u_i, u_j, effect) for tensor units. Without
/// a stored posterior, or with bands off, lower and upper equal the mean.
inline void add_curve_files(const ModelBundle& bundle, const CurveOptions& opt, OutputSet& out,
                            std::vector<std::string>* warnings, nlohmann::json* summary = nullptr) {
  const AdditiveModel& model = bundle.model;
  std::optional<Eigen::MatrixXd> draws;
  if (opt.bands && bundle.posterior) {
    draws = sample_coefficients(model.coefficients(), bundle.posterior->covariance, opt.samples, opt.seed);
  } else if (opt.bands && warnings != nullptr) {
    warnings->push_back("model file has no posterior; bands collapse to the mean curve");
  }
  const auto& names = model.feature_names();
  for (std::size_t u = 0; u < model.units().size(); ++u) {
    const FeatureUnit& unit = model.unit(u);
    if (unit.univariate()) {
      const std::size_t f = unit.features()[0];
      const auto grid = model_grid(bundle.preprocess.features.at(f), opt.grid);
      std::vector<double> mean = shape_curve(model, u, grid);
      std::vector<double> lower = mean;
      std::vector<double> upper = mean;
      if (draws) {
        const CredibleBand band = credible_band(model, u, grid, *draws, opt.alpha);
        lower = band.lower;
        upper = band.upper;
      }
      std::string csv = "x,u,mean,lower,upper\n";
      double width = 0.0;
      for (std::size_t i = 0; i < grid.size(); ++i) {
        csv += num(raw_value(bundle.preprocess, f, grid[i])) + "," + num(grid[i]) + "," + num(mean[i]) + "," +
               num(lower[i]) + "," + num(upper[i]) + "\n";
        width += upper[i] - lower[i];
      }
      out.add("curve_" + slug(names[f]) + ".csv", std::move(csv));
      if (summary != nullptr) {
        (*summary)["units"].push_back({{"feature", names[f]}, {"mean_band_width", width / static_cast<double>(grid.size())}});
      }
    } else if (opt.heatmaps) {
      const std::size_t fi = unit.features()[0];
      const std::size_t fj = unit.features()[1];
      const auto gi = model_grid(bundle.preprocess.features.at(fi), opt.grid);
      const auto gj = model_grid(bundle.preprocess.features.at(fj), opt.grid);
      const Eigen::MatrixXd surface = shape_surface(model, u, gi, gj);
      std::string csv = "x_i,x_j,u_i,u_j,effect\n";
      for (std::size_t a = 0; a < gi.size(); ++a) {
        const double xa = raw_value(bundle.preprocess, fi, gi[a]);
        for (std::size_t b = 0; b < gj.size(); ++b) {
          csv += num(xa) + "," + num(raw_value(bundle.preprocess, fj, gj[b])) + "," + num(gi[a]) + "," + num(gj[b]) + "," +
                 num(surface(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))) + "\n";
        }
      }
      out.add("heatmap_" + slug(names[fi]) + "_" + slug(names[fj]) + ".csv", std::move(csv));
    }
  }
}

}  // namespace snam::bench
