#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "snam/data/csv.hpp"
#include "snam/error.hpp"
#include "snam/model_io.hpp"
#include "snam/training.hpp"

namespace snam::bench {

using nlohmann::json;

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) {
      throw Error(ErrorCode::invalid_config, "unknown key '" + (where.empty() ? key : where + "." + key) + "'");
    }
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::invalid_config, "key '" + (where.empty() ? key : where + "." + key) + "' has the wrong type");
  }
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_absolute() ? p : base / p;
}

}  // namespace detail

enum class Task { regression, classification };

/// Where a dataset comes from and how its CSV is typed.
struct DatasetManifest {
  std::string name;
  std::string file;  ///< CSV name inside the data directory
  std::string target;
  Task task = Task::regression;
  std::vector<data::ColumnSpec> columns;
  std::optional<std::string> positive_label;
  bool log_target = false;  ///< regression targets replaced by log(y) before standardizing
  /// Download recipe for `fetch-data`; absent for manually supplied data.
  std::optional<std::string> url;
  std::optional<std::string> archive_member;
  std::optional<std::string> converter;

  data::TableSchema schema() const {
    return {columns, target, task == Task::classification ? data::TargetKind::binary : data::TargetKind::continuous,
            positive_label};
  }
};

inline DatasetManifest parse_manifest(const json& j) {
  detail::reject_unknown_keys(
      j, {"name", "file", "target", "task", "columns", "positive_label", "log_target", "url", "archive_member", "converter", "notes"},
      "manifest");
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.file = j.at("file").get<std::string>();
    m.target = j.at("target").get<std::string>();
    const auto task = j.at("task").get<std::string>();
    if (task == "regression") m.task = Task::regression;
    else if (task == "classification") m.task = Task::classification;
    else throw Error(ErrorCode::invalid_config, "manifest.task must be 'regression' or 'classification'");
    for (const auto& c : j.at("columns")) {
      const auto kind = c.at("kind").get<std::string>();
      if (kind != "numeric" && kind != "categorical") {
        throw Error(ErrorCode::invalid_config, "column kind must be 'numeric' or 'categorical', got '" + kind + "'");
      }
      m.columns.push_back({c.at("name").get<std::string>(), kind == "numeric" ? data::ColumnKind::numeric : data::ColumnKind::categorical});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("malformed dataset manifest: ") + e.what());
  }
  if (j.contains("positive_label")) m.positive_label = j["positive_label"].get<std::string>();
  m.log_target = detail::get_or(j, "log_target", false, "manifest");
  if (j.contains("url")) m.url = j["url"].get<std::string>();
  if (j.contains("archive_member")) m.archive_member = j["archive_member"].get<std::string>();
  if (j.contains("converter")) m.converter = j["converter"].get<std::string>();
  if (m.columns.empty()) throw Error(ErrorCode::invalid_config, "manifest lists no feature columns");
  return m;
}

enum class UnitChoice { cubic, silverman, truncated, linear, none };

struct UnitSpec {
  UnitChoice kind = UnitChoice::cubic;
  std::size_t k = 10;
  double lambda = 1e-4;
  KnotPlacement placement = KnotPlacement::quantile;
  bool learnable_knots = false;
  int degree = 1;             ///< truncated power basis only
  double basis_multiplier = 1.0;  ///< silverman only: centers = round(k * multiplier)
};

struct TensorSpec {
  std::string first;
  std::string second;
  std::size_t k_first = 10;
  std::size_t k_second = 10;
  double lambda = 1e-4;
};

struct ModelSpec {
  UnitSpec defaults;
  std::map<std::string, UnitSpec> overrides;  ///< by source column name
  std::vector<TensorSpec> tensors;
};

struct RunConfig {
  std::filesystem::path config_dir;
  std::filesystem::path dataset;  ///< manifest path, resolved against config_dir
  ModelSpec model;
  FitConfig fit;
  double validation_fraction = 0.1;
  std::vector<double> lambda_grid;  ///< tried on fold 0 when non-empty
  std::size_t folds = 5;
  std::uint64_t seed = 101;
  std::string output_dir = "out";
  json echo;  ///< the config as read
};

namespace detail {

inline UnitSpec parse_unit(const json& j, UnitSpec base, const std::string& where) {
  reject_unknown_keys(j, {"kind", "k", "lambda", "placement", "learnable_knots", "degree", "basis_multiplier"}, where);
  if (j.contains("kind")) {
    const auto kind = get_or<std::string>(j, "kind", "", where);
    static const std::map<std::string, UnitChoice> kinds{{"cubic", UnitChoice::cubic},
                                                         {"silverman", UnitChoice::silverman},
                                                         {"truncated", UnitChoice::truncated},
                                                         {"linear", UnitChoice::linear},
                                                         {"none", UnitChoice::none}};
    const auto it = kinds.find(kind);
    if (it == kinds.end()) throw Error(ErrorCode::invalid_config, where + ".kind: unknown unit kind '" + kind + "'");
    base.kind = it->second;
  }
  base.k = get_or(j, "k", base.k, where);
  base.lambda = get_or(j, "lambda", base.lambda, where);
  base.learnable_knots = get_or(j, "learnable_knots", base.learnable_knots, where);
  base.degree = get_or(j, "degree", base.degree, where);
  base.basis_multiplier = get_or(j, "basis_multiplier", base.basis_multiplier, where);
  if (j.contains("placement")) {
    const auto p = get_or<std::string>(j, "placement", "", where);
    if (p == "uniform") base.placement = KnotPlacement::uniform;
    else if (p == "quantile") base.placement = KnotPlacement::quantile;
    else throw Error(ErrorCode::invalid_config, where + ".placement must be 'uniform' or 'quantile'");
  }
  if (base.k < 3) throw Error(ErrorCode::invalid_config, where + ".k must be at least 3");
  if (!(base.lambda >= 0.0)) throw Error(ErrorCode::invalid_config, where + ".lambda must be nonnegative");
  if (base.degree < 1 || base.degree > 3) throw Error(ErrorCode::invalid_config, where + ".degree must be 1, 2 or 3");
  if (!(base.basis_multiplier > 0.0)) throw Error(ErrorCode::invalid_config, where + ".basis_multiplier must be positive");
  return base;
}

inline FitConfig parse_fit(const json& j) {
  reject_unknown_keys(j, {"learning_rate", "batch_size", "max_epochs", "patience", "lr_decay", "plateau_patience",
                          "plateau_min_delta", "knot_penalty", "adam_beta1", "adam_beta2", "adam_epsilon"},
                      "fit");
  FitConfig f;
  f.learning_rate = get_or(j, "learning_rate", 1e-2, "fit");
  f.batch_size = get_or(j, "batch_size", f.batch_size, "fit");
  f.max_epochs = get_or(j, "max_epochs", f.max_epochs, "fit");
  f.patience = get_or(j, "patience", std::size_t{20}, "fit");
  f.lr_decay = get_or(j, "lr_decay", f.lr_decay, "fit");
  f.plateau_patience = get_or(j, "plateau_patience", f.plateau_patience, "fit");
  f.plateau_min_delta = get_or(j, "plateau_min_delta", f.plateau_min_delta, "fit");
  f.adam_beta1 = get_or(j, "adam_beta1", f.adam_beta1, "fit");
  f.adam_beta2 = get_or(j, "adam_beta2", f.adam_beta2, "fit");
  f.adam_epsilon = get_or(j, "adam_epsilon", f.adam_epsilon, "fit");
  if (j.contains("knot_penalty")) f.knot_penalty = get_or(j, "knot_penalty", 0.0, "fit");
  f.validate();
  return f;
}

}  // namespace detail

/// Validates a run config. Every object level rejects keys it does not know.
inline RunConfig parse_run_config(const json& j, const std::filesystem::path& config_dir) {
  detail::reject_unknown_keys(j, {"$schema", "dataset", "model", "fit", "validation_fraction", "lambda_grid", "folds", "seed",
                                  "output_dir", "description"},
                              "");
  RunConfig c;
  c.config_dir = config_dir;
  c.echo = j;
  if (!j.contains("dataset")) throw Error(ErrorCode::invalid_config, "missing required key 'dataset'");
  c.dataset = detail::resolve(config_dir, detail::get_or<std::string>(j, "dataset", "", ""));

  const json model = j.value("model", json::object());
  detail::reject_unknown_keys(model, {"default", "features", "tensors"}, "model");
  c.model.defaults = detail::parse_unit(model.value("default", json::object()), UnitSpec{}, "model.default");
  const json features = model.value("features", json::object());
  if (!features.is_object()) throw Error(ErrorCode::invalid_config, "model.features must be an object");
  for (const auto& [name, spec] : features.items()) {
    c.model.overrides[name] = detail::parse_unit(spec, c.model.defaults, "model.features." + name);
  }
  const json tensors = model.value("tensors", json::array());
  if (!tensors.is_array()) throw Error(ErrorCode::invalid_config, "model.tensors must be an array");
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const std::string where = "model.tensors[" + std::to_string(t) + "]";
    detail::reject_unknown_keys(tensors[t], {"features", "k", "lambda"}, where);
    const auto names = detail::get_or(tensors[t], "features", std::vector<std::string>{}, where);
    if (names.size() != 2 || names[0] == names[1]) {
      throw Error(ErrorCode::invalid_config, where + ".features must name two distinct columns");
    }
    TensorSpec ts{names[0], names[1], c.model.defaults.k, c.model.defaults.k, c.model.defaults.lambda};
    if (tensors[t].contains("k")) {
      const auto k = detail::get_or(tensors[t], "k", std::vector<std::size_t>{}, where);
      if (k.size() != 2 || k[0] < 3 || k[1] < 3) throw Error(ErrorCode::invalid_config, where + ".k must be two values >= 3");
      ts.k_first = k[0];
      ts.k_second = k[1];
    }
    ts.lambda = detail::get_or(tensors[t], "lambda", ts.lambda, where);
    c.model.tensors.push_back(ts);
  }

  c.fit = detail::parse_fit(j.value("fit", json::object()));
  c.validation_fraction = detail::get_or(j, "validation_fraction", c.validation_fraction, "");
  if (!(c.validation_fraction >= 0.0 && c.validation_fraction < 0.5)) {
    throw Error(ErrorCode::invalid_config, "validation_fraction must lie in [0, 0.5)");
  }
  c.lambda_grid = detail::get_or(j, "lambda_grid", c.lambda_grid, "");
  for (double l : c.lambda_grid) {
    if (!(l >= 0.0)) throw Error(ErrorCode::invalid_config, "lambda_grid values must be nonnegative");
  }
  c.folds = detail::get_or(j, "folds", c.folds, "");
  if (c.folds < 2) throw Error(ErrorCode::invalid_config, "folds must be at least 2");
  c.seed = detail::get_or(j, "seed", c.seed, "");
  c.fit.seed = c.seed;
  c.output_dir = detail::get_or(j, "output_dir", c.output_dir, "");
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = read_json_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::invalid_config, e.what());
  }
  return parse_run_config(j, path.parent_path());
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  try {
    return parse_manifest(read_json_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::io_error) throw Error(ErrorCode::invalid_config, e.what());
    throw;
  }
}

}  // namespace snam::bench
