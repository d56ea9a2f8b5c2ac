#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "snam/additive_model.hpp"
#include "snam/bench/config.hpp"
#include "snam/data/csv.hpp"
#include "snam/data/kfold.hpp"
#include "snam/data/metrics.hpp"
#include "snam/data/preprocess.hpp"
#include "snam/fast_activations.hpp"
#include "snam/model_io.hpp"
#include "snam/random.hpp"
#include "snam/training.hpp"
#include "snam/uncertainty.hpp"

namespace snam::bench {

/// Directory holding dataset CSVs: SNAM_DATA_DIR when set, else the manifest's directory.
inline std::filesystem::path data_directory(const std::filesystem::path& manifest_path) {
  if (const char* env = std::getenv("SNAM_DATA_DIR"); env != nullptr && *env != '\0') return env;
  return manifest_path.parent_path();
}

struct LoadedData {
  DatasetManifest manifest;
  data::RawTable table;
};

inline LoadedData load_dataset(const std::filesystem::path& manifest_path) {
  LoadedData d{load_manifest(manifest_path), {}};
  const auto csv = data_directory(manifest_path) / d.manifest.file;
  if (!std::filesystem::exists(csv)) {
    throw Error(ErrorCode::io_error, "dataset file " + csv.string() + " not found" +
                                         (d.manifest.url ? "; run fetch-data first" : "; it must be supplied manually"));
  }
  d.table = data::load_csv(csv.string(), d.manifest.schema());
  if (d.manifest.log_target) {
    for (double& y : d.table.target) {
      if (!(y > 0.0)) throw Error(ErrorCode::schema_mismatch, "log_target needs positive targets");
      y = std::log(y);
    }
  }
  return d;
}

/// Builds the untrained model for one fold. Knots are placed on the
/// transformed training values; k is capped at the number of distinct values
/// and a feature with fewer than 3 distinct values falls back to a linear unit.
inline AdditiveModel build_model(const ModelSpec& spec, const data::PreprocessState& state, const FeatureMatrix& x,
                                 std::span<const std::size_t> rows, Family family, std::vector<std::string>* warnings,
                                 std::optional<double> lambda_override = std::nullopt) {
  AdditiveModel model(state.feature_names(), family);
  std::map<std::string, std::size_t> numeric_index;
  for (std::size_t f = 0; f < state.features.size(); ++f) {
    if (state.features[f].kind == data::FeatureKind::numeric) numeric_index[state.features[f].name] = f;
  }
  for (const auto& [name, _] : spec.overrides) {
    const bool known = std::any_of(state.sources.begin(), state.sources.end(), [&](const auto& s) { return s.name == name; });
    if (!known) throw Error(ErrorCode::invalid_config, "model.features names unknown column '" + name + "'");
  }

  auto column = [&](std::size_t f) {
    std::vector<double> v;
    v.reserve(rows.size());
    for (std::size_t r : rows) v.push_back(x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)));
    return v;
  };
  auto distinct = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
  };
  auto note = [&](const std::string& w) {
    if (warnings != nullptr) warnings->push_back(w);
  };
  auto lambda_of = [&](double l) { return lambda_override ? *lambda_override : l; };

  for (std::size_t f = 0; f < state.features.size(); ++f) {
    const data::FeatureColumn& col = state.features[f];
    const auto it = spec.overrides.find(col.source);
    const UnitSpec& us = it != spec.overrides.end() ? it->second : spec.defaults;
    if (us.kind == UnitChoice::none) continue;
    if (col.kind == data::FeatureKind::one_hot || us.kind == UnitChoice::linear) {
      model.add_unit(FeatureUnit::linear(f));
      continue;
    }
    const auto values = column(f);
    const std::size_t d = distinct(values);
    const std::size_t centers =
        us.kind == UnitChoice::silverman ? static_cast<std::size_t>(std::lround(static_cast<double>(us.k) * us.basis_multiplier))
                                         : us.k;
    const std::size_t k = std::min(centers, d);
    if (k < 3) {
      note("feature '" + col.name + "' has " + std::to_string(d) + " distinct training values; using a linear unit");
      model.add_unit(FeatureUnit::linear(f));
      continue;
    }
    if (k < centers) note("feature '" + col.name + "': basis size capped at " + std::to_string(k) + " distinct values");
    const KnotVector knots = place_knots(us.placement, values, k);
    switch (us.kind) {
      case UnitChoice::cubic:
        model.add_unit(FeatureUnit::cubic(f, knots, lambda_of(us.lambda), us.learnable_knots));
        break;
      case UnitChoice::silverman:
        model.add_unit(FeatureUnit::silverman(f, SilvermanBasis::from_knots(knots)));
        break;
      case UnitChoice::truncated:
        model.add_unit(FeatureUnit::truncated(f, TruncatedPowerBasis(knots, us.degree)));
        break;
      default:
        break;
    }
  }

  for (const TensorSpec& t : spec.tensors) {
    const auto a = numeric_index.find(t.first);
    const auto b = numeric_index.find(t.second);
    if (a == numeric_index.end() || b == numeric_index.end()) {
      throw Error(ErrorCode::invalid_config, "tensor unit needs two numeric columns, got '" + t.first + "' and '" + t.second + "'");
    }
    const auto va = column(a->second);
    const auto vb = column(b->second);
    const std::size_t ka = std::min(t.k_first, distinct(va));
    const std::size_t kb = std::min(t.k_second, distinct(vb));
    if (ka < 3 || kb < 3) throw Error(ErrorCode::degenerate_data, "tensor columns need at least 3 distinct values");
    model.add_unit(FeatureUnit::tensor(a->second, b->second, place_knots(spec.defaults.placement, va, ka),
                                       place_knots(spec.defaults.placement, vb, kb), lambda_of(t.lambda)));
  }
  if (model.units().empty()) throw Error(ErrorCode::invalid_config, "the model spec selects no units");
  return model;
}

/// Splits a fold's training rows into fitting and early-stopping rows.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> inner_split(std::span<const std::size_t> train,
                                                                                 double fraction, std::uint64_t seed,
                                                                                 std::size_t fold) {
  std::vector<std::size_t> order(train.begin(), train.end());
  const auto n_valid = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(order.size())));
  if (n_valid == 0) return {order, {}};
  XorShift64 rng(seed ^ (0x9E3779B97F4A7C15ULL * (fold + 1)));
  rng.shuffle(order);
  std::vector<std::size_t> valid(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_valid));
  std::vector<std::size_t> fit(order.begin() + static_cast<std::ptrdiff_t>(n_valid), order.end());
  std::sort(valid.begin(), valid.end());
  std::sort(fit.begin(), fit.end());
  return {fit, valid};
}

struct FoldOutcome {
  std::size_t fold = 0;
  std::size_t n_fit = 0;
  std::size_t n_valid = 0;
  std::size_t n_test = 0;
  std::string metric_name;
  double metric = 0.0;
  std::optional<double> raw_rmse;
  std::size_t params = 0;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  std::optional<double> lambda;
  double seconds = 0.0;
  FitResult fit;
  data::PreprocessState preprocess;
  std::vector<std::size_t> fit_rows;
  FeatureMatrix x;
  Eigen::VectorXd y;
  std::vector<std::string> warnings;
};

inline Family family_of(const DatasetManifest& m) {
  return m.task == Task::classification ? Family::bernoulli_logit : Family::gaussian;
}

inline Eigen::VectorXd predict_mu(const AdditiveModel& model, const FeatureMatrix& x, std::span<const std::size_t> rows) {
  Eigen::VectorXd mu(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    mu[static_cast<Eigen::Index>(i)] = model.inverse_link(model.predict_eta(row_span(x, rows[i])));
  }
  return mu;
}

/// Trains on one fold and scores its test rows: standardized-scale RMSE (plus
/// raw-scale RMSE) for regression, AUC for classification.
inline FoldOutcome run_fold(const RunConfig& config, const LoadedData& data, const data::Fold& fold, std::size_t index,
                            std::optional<double> lambda = std::nullopt) {
  const auto start = std::chrono::steady_clock::now();
  FoldOutcome out;
  out.fold = index;
  out.lambda = lambda;
  out.preprocess = data::fit_preprocess(data.table, fold.train);
  out.preprocess.log_target = data.manifest.log_target;
  out.preprocess.positive_label = data.manifest.positive_label;
  out.warnings = out.preprocess.warnings;

  const auto all = all_rows(data.table.rows());
  data::Dataset ds = data::apply_preprocess(out.preprocess, data.table, all);
  out.x = std::move(ds.x);
  out.y = std::move(ds.y);

  auto [fit_rows, valid_rows] = inner_split(fold.train, config.validation_fraction, config.seed, index);
  out.n_fit = fit_rows.size();
  out.n_valid = valid_rows.size();
  out.n_test = fold.test.size();

  const Family family = family_of(data.manifest);
  AdditiveModel model = build_model(config.model, out.preprocess, out.x, fit_rows, family, &out.warnings, lambda);
  out.fit = fit(std::move(model), out.x, out.y, fit_rows, valid_rows, config.fit);
  out.fit_rows = std::move(fit_rows);
  out.params = count_params(out.fit.model);
  out.epochs_run = out.fit.epochs_run;
  out.best_epoch = out.fit.best_epoch;

  const Eigen::VectorXd mu = predict_mu(out.fit.model, out.x, fold.test);
  std::vector<double> pred(mu.data(), mu.data() + mu.size());
  std::vector<double> truth;
  for (std::size_t r : fold.test) truth.push_back(out.y[static_cast<Eigen::Index>(r)]);
  if (family == Family::gaussian) {
    out.metric_name = "rmse";
    out.metric = data::rmse(pred, truth);
    std::vector<double> raw_pred;
    for (double p : pred) raw_pred.push_back(out.preprocess.target.invert(p));
    std::vector<double> raw_truth;
    for (std::size_t r : fold.test) raw_truth.push_back(data.table.target[r]);
    out.raw_rmse = data::rmse(raw_pred, raw_truth);
  } else {
    out.metric_name = "auc";
    out.metric = data::auc(pred, truth);
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

struct LambdaSelection {
  double lambda = 0.0;
  std::vector<std::pair<double, double>> scores;  ///< (lambda, validation NLL)
};

/// Tries every grid value (applied to all penalized units) on fold 0 and keeps
/// the one with the lowest early-stopping validation loss.
inline std::optional<LambdaSelection> select_lambda(const RunConfig& config, const LoadedData& data,
                                                    const std::vector<data::Fold>& folds) {
  if (config.lambda_grid.empty()) return std::nullopt;
  if (config.validation_fraction <= 0.0) {
    throw Error(ErrorCode::invalid_config, "lambda_grid needs validation_fraction > 0");
  }
  LambdaSelection sel;
  double best = std::numeric_limits<double>::infinity();
  for (double l : config.lambda_grid) {
    const FoldOutcome o = run_fold(config, data, folds[0], 0, l);
    const double score = o.fit.validation_loss.empty()
                             ? std::numeric_limits<double>::infinity()
                             : *std::min_element(o.fit.validation_loss.begin(), o.fit.validation_loss.end());
    sel.scores.emplace_back(l, score);
    if (score < best) {
      best = score;
      sel.lambda = l;
    }
  }
  return sel;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
inline double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

struct BenchmarkReport {
  std::string dataset;
  std::string metric;
  std::vector<FoldOutcome> folds;
  std::optional<LambdaSelection> lambda;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t params = 0;
  std::size_t rows = 0;
  std::size_t dropped_rows = 0;
  nlohmann::json config_echo;
};

/// Runs every fold, up to `jobs` at a time. A failing fold stops the launch of
/// further folds and is rethrown with its index once running folds finish.
inline BenchmarkReport run_benchmark(const RunConfig& config, const LoadedData& data, std::size_t jobs) {
  const auto folds = data::kfold_split(data.table.rows(), config.folds, config.seed, true);
  BenchmarkReport report;
  report.dataset = data.manifest.name;
  report.config_echo = config.echo;
  report.rows = data.table.rows();
  report.dropped_rows = data.table.dropped_rows;
  report.lambda = select_lambda(config, data, folds);
  const std::optional<double> lambda = report.lambda ? std::optional<double>(report.lambda->lambda) : std::nullopt;

  std::vector<std::optional<FoldOutcome>> results(folds.size());
  std::vector<std::string> errors(folds.size());
  std::vector<std::optional<ErrorCode>> codes(folds.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (std::size_t f = next++; f < folds.size() && !failed; f = next++) {
      try {
        results[f] = run_fold(config, data, folds[f], f, lambda);
      } catch (const Error& e) {
        errors[f] = e.what();
        codes[f] = e.code();
        failed = true;
      } catch (const std::exception& e) {
        errors[f] = e.what();
        codes[f] = ErrorCode::diverged_fit;
        failed = true;
      }
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, folds.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (codes[f]) throw Error(*codes[f], "fold " + std::to_string(f) + " failed: " + errors[f]);
  }

  std::vector<double> metrics;
  for (auto& r : results) {
    metrics.push_back(r->metric);
    report.params = std::max(report.params, r->params);
    report.metric = r->metric_name;
    // Keep only the scores; fitted state is not needed past this point.
    r->x.resize(0, 0);
    r->y.resize(0);
    report.folds.push_back(std::move(*r));
  }
  report.mean = mean_of(metrics);
  report.sd = sd_of(metrics);
  return report;
}

/// Per-fold scores only: deterministic given config, seed and data.
inline nlohmann::json folds_json(const BenchmarkReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    nlohmann::json j{{"fold", f.fold},        {"n_fit", f.n_fit},           {"n_valid", f.n_valid},
                     {"n_test", f.n_test},    {r.metric, f.metric},         {"params", f.params},
                     {"epochs_run", f.epochs_run}, {"best_epoch", f.best_epoch}};
    if (f.raw_rmse) j["raw_rmse"] = *f.raw_rmse;
    if (f.lambda) j["lambda"] = *f.lambda;
    folds.push_back(std::move(j));
  }
  return {{"dataset", r.dataset}, {"metric", r.metric}, {"folds", folds}};
}

inline nlohmann::json report_json(const BenchmarkReport& r) {
  nlohmann::json j = folds_json(r);
  j["mean"] = r.mean;
  j["std"] = r.sd;
  j["std_ddof"] = 1;
  j["params"] = r.params;
  j["rows"] = r.rows;
  j["dropped_rows"] = r.dropped_rows;
  std::vector<double> seconds;
  std::set<std::string> warnings;
  for (const auto& f : r.folds) {
    seconds.push_back(f.seconds);
    warnings.insert(f.warnings.begin(), f.warnings.end());
  }
  j["seconds_per_fold"] = seconds;
  j["warnings"] = std::vector<std::string>(warnings.begin(), warnings.end());
  if (r.metric == "rmse") {
    std::vector<double> raw;
    for (const auto& f : r.folds) raw.push_back(f.raw_rmse.value_or(0.0));
    j["raw_rmse_mean"] = mean_of(raw);
  }
  if (r.lambda) {
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& [l, s] : r.lambda->scores) scores.push_back({{"lambda", l}, {"validation_nll", s}});
    j["lambda_selection"] = {{"chosen", r.lambda->lambda}, {"scores", scores}};
  }
  j["config"] = r.config_echo;
  return j;
}

/// An externally computed result, e.g. {model, dataset, metric, folds[]}.
struct BaselineRow {
  std::string model;
  double mean = 0.0;
  double sd = 0.0;
  std::optional<std::size_t> params;
};

inline std::vector<BaselineRow> load_baselines(const std::filesystem::path& dir, const std::string& dataset,
                                               const std::string& metric, std::vector<std::string>* warnings) {
  std::vector<BaselineRow> rows;
  if (dir.empty()) return rows;
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::io_error, "baseline directory " + dir.string() + " not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    const nlohmann::json j = read_json_file(p);
    try {
      if (j.at("dataset") != dataset || j.at("metric") != metric) continue;
      const auto folds = j.at("folds").get<std::vector<double>>();
      if (folds.empty()) throw Error(ErrorCode::schema_mismatch, "no folds");
      BaselineRow row{j.at("model").get<std::string>(), mean_of(folds), sd_of(folds), std::nullopt};
      if (j.contains("params")) row.params = j["params"].get<std::size_t>();
      rows.push_back(row);
    } catch (const std::exception& e) {
      if (warnings != nullptr) warnings->push_back("skipping baseline " + p.filename().string() + ": " + e.what());
    }
  }
  return rows;
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

/// Markdown table: one row per model, metric as mean (sd).
inline std::string render_table(const BenchmarkReport& r, const std::vector<BaselineRow>& baselines) {
  std::ostringstream os;
  os << "| Model | Params | " << r.dataset << " (" << r.metric << ") |\n";
  os << "|---|---:|---:|\n";
  os << "| SNAM | " << r.params << " | " << fixed(r.mean, 3) << " (" << fixed(r.sd, 3) << ") |\n";
  for (const auto& b : baselines) {
    os << "| " << b.model << " | " << (b.params ? std::to_string(*b.params) : "-") << " | " << fixed(b.mean, 3) << " ("
       << fixed(b.sd, 3) << ") |\n";
  }
  return os.str();
}

}  // namespace snam::bench
