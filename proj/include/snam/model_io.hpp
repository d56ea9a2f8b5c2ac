#pragma once

// JSON persistence for fitted models and preprocessing state. Doubles are
// written in shortest round-trip form, so a save/load cycle is value-exact.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "snam/additive_model.hpp"
#include "snam/data/preprocess.hpp"
#include "snam/error.hpp"

namespace snam {

inline constexpr int model_format_version = 1;

namespace detail {

inline nlohmann::json to_json_vector(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd from_json_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <typename E>
E enum_from_string(const std::string& s, std::initializer_list<E> options) {
  for (E e : options) {
    if (to_string(e) == s) return e;
  }
  throw Error(ErrorCode::schema_mismatch, "unknown enum value '" + s + "' in model file");
}

}  // namespace detail

inline nlohmann::json unit_to_json(const FeatureUnit& unit) {
  nlohmann::json j;
  j["kind"] = std::string(to_string(unit.kind()));
  j["features"] = unit.features();
  j["lambda"] = unit.lambda();
  j["beta"] = detail::to_json_vector(unit.beta());
  j["means"] = detail::to_json_vector(unit.means());
  j["frozen"] = unit.frozen();
  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, FeatureUnit::Cubic>) {
          j["knots"] = b.system.knots().values();
          j["learnable_knots"] = b.learnable;
        } else if constexpr (std::is_same_v<T, SilvermanBasis>) {
          j["centers"] = detail::to_json_vector(b.centers());
          j["log_bandwidths"] = detail::to_json_vector(b.log_bandwidths());
        } else if constexpr (std::is_same_v<T, TruncatedPowerBasis>) {
          j["knots"] = b.knots().values();
          j["degree"] = b.degree();
        } else if constexpr (std::is_same_v<T, FeatureUnit::Tensor>) {
          j["knots"] = {b.first.knots().values(), b.second.knots().values()};
        }
      },
      unit.basis());
  return j;
}

inline FeatureUnit unit_from_json(const nlohmann::json& j) {
  const auto kind = detail::enum_from_string<UnitKind>(
      j.at("kind").get<std::string>(),
      {UnitKind::cubic, UnitKind::silverman, UnitKind::truncated, UnitKind::linear, UnitKind::tensor});
  const auto features = j.at("features").get<std::vector<std::size_t>>();
  const std::size_t arity = kind == UnitKind::tensor ? 2 : 1;
  if (features.size() != arity) throw Error(ErrorCode::schema_mismatch, "unit has the wrong number of features");

  FeatureUnit unit = [&] {
    switch (kind) {
      case UnitKind::cubic:
        return FeatureUnit::cubic(features[0], KnotVector(j.at("knots").get<std::vector<double>>()),
                                  0.0, j.at("learnable_knots").get<bool>());
      case UnitKind::silverman:
        return FeatureUnit::silverman(features[0],
                                      SilvermanBasis::from_log_bandwidths(detail::from_json_vector(j.at("centers")),
                                                                          detail::from_json_vector(j.at("log_bandwidths"))));
      case UnitKind::truncated:
        return FeatureUnit::truncated(features[0], TruncatedPowerBasis(KnotVector(j.at("knots").get<std::vector<double>>()),
                                                                       j.at("degree").get<int>()));
      case UnitKind::linear:
        return FeatureUnit::linear(features[0]);
      case UnitKind::tensor:
        break;
    }
    const auto knots = j.at("knots").get<std::vector<std::vector<double>>>();
    if (knots.size() != 2) throw Error(ErrorCode::schema_mismatch, "tensor unit needs two knot vectors");
    return FeatureUnit::tensor(features[0], features[1], KnotVector(knots[0]), KnotVector(knots[1]));
  }();
  unit.set_lambda(j.at("lambda").get<double>());
  unit.set_beta(detail::from_json_vector(j.at("beta")));
  unit.restore_centering(detail::from_json_vector(j.at("means")), j.at("frozen").get<bool>());
  return unit;
}

inline nlohmann::json model_to_json(const AdditiveModel& model) {
  nlohmann::json j;
  j["format"] = "snam-model";
  j["version"] = model_format_version;
  j["family"] = std::string(to_string(model.family()));
  j["feature_names"] = model.feature_names();
  j["intercept"] = model.intercept();
  j["units"] = nlohmann::json::array();
  for (const auto& u : model.units()) j["units"].push_back(unit_to_json(u));
  return j;
}

inline AdditiveModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "snam-model") throw Error(ErrorCode::schema_mismatch, "not a model file");
    if (j.at("version").get<int>() != model_format_version) {
      throw Error(ErrorCode::schema_mismatch, "unsupported model file version " + j.at("version").dump());
    }
    const auto family =
        detail::enum_from_string<Family>(j.at("family").get<std::string>(), {Family::gaussian, Family::bernoulli_logit});
    AdditiveModel model(j.at("feature_names").get<std::vector<std::string>>(), family);
    model.set_intercept(j.at("intercept").get<double>());
    for (const auto& u : j.at("units")) model.add_unit(unit_from_json(u));
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_mismatch, std::string("malformed model file: ") + e.what());
  }
}

inline nlohmann::json preprocess_to_json(const data::PreprocessState& s) {
  nlohmann::json cols = nlohmann::json::array();
  for (std::size_t c = 0; c < s.sources.size(); ++c) {
    nlohmann::json col{{"name", s.sources[c].name}};
    if (s.sources[c].kind == data::ColumnKind::numeric) {
      col["kind"] = "numeric";
      col["values"] = s.quantiles[c].values();
      col["cdf"] = s.quantiles[c].cdf();
    } else {
      col["kind"] = "categorical";
      col["categories"] = s.encoders[c].categories();
    }
    cols.push_back(std::move(col));
  }
  return {{"columns", cols},
          {"target", s.target_name},
          {"target_kind", s.target_kind == data::TargetKind::binary ? "binary" : "continuous"},
          {"target_mean", s.target.mean},
          {"target_sd", s.target.sd},
          {"log_target", s.log_target},
          {"positive_label", s.positive_label ? nlohmann::json(*s.positive_label) : nlohmann::json()}};
}

inline data::PreprocessState preprocess_from_json(const nlohmann::json& j) {
  try {
    data::PreprocessState s;
    for (const auto& col : j.at("columns")) {
      const auto name = col.at("name").get<std::string>();
      const auto kind = col.at("kind").get<std::string>();
      if (kind == "numeric") {
        s.sources.push_back({name, data::ColumnKind::numeric});
        s.quantiles.push_back(data::QuantileTransform::from_state(col.at("values").get<std::vector<double>>(),
                                                                  col.at("cdf").get<std::vector<double>>()));
        s.encoders.emplace_back();
        s.features.push_back({name, data::FeatureKind::numeric, name});
      } else if (kind == "categorical") {
        s.sources.push_back({name, data::ColumnKind::categorical});
        s.quantiles.emplace_back();
        s.encoders.emplace_back(col.at("categories").get<std::vector<std::string>>());
        for (const auto& cat : s.encoders.back().categories()) {
          s.features.push_back({name + "=" + cat, data::FeatureKind::one_hot, name});
        }
      } else {
        throw Error(ErrorCode::schema_mismatch, "unknown column kind '" + kind + "'");
      }
    }
    s.target_name = j.at("target").get<std::string>();
    s.target_kind = j.at("target_kind") == "binary" ? data::TargetKind::binary : data::TargetKind::continuous;
    s.target = {j.at("target_mean").get<double>(), j.at("target_sd").get<double>()};
    s.log_target = j.at("log_target").get<bool>();
    if (!j.at("positive_label").is_null()) s.positive_label = j.at("positive_label").get<std::string>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema_mismatch, std::string("malformed preprocessing state: ") + e.what());
  }
}

/// Writes `text` to a sibling temporary file, then renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_error, "cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) throw Error(ErrorCode::io_error, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::io_error, "cannot rename into " + path.string());
  }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::schema_mismatch, path.string() + ": " + e.what());
  }
}

/// Coefficient posterior computed at fit time on the training rows.
struct StoredPosterior {
  Eigen::MatrixXd covariance;
  double jitter = 0.0;
  double dispersion = 1.0;
  std::size_t observations = 0;
};

/// A model file bundles the fitted model with the preprocessing it expects
/// and, when it could be computed, the coefficient posterior.
struct ModelBundle {
  AdditiveModel model;
  data::PreprocessState preprocess;
  std::optional<StoredPosterior> posterior;
};

inline nlohmann::json bundle_to_json(const ModelBundle& bundle) {
  nlohmann::json j = model_to_json(bundle.model);
  j["preprocess"] = preprocess_to_json(bundle.preprocess);
  if (bundle.posterior) {
    const Eigen::MatrixXd& c = bundle.posterior->covariance;
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(c.size()));
    for (Eigen::Index r = 0; r < c.rows(); ++r)
      for (Eigen::Index k = 0; k < c.cols(); ++k) flat.push_back(c(r, k));
    j["posterior"] = {{"dimension", c.rows()},
                      {"covariance", flat},
                      {"jitter", bundle.posterior->jitter},
                      {"dispersion", bundle.posterior->dispersion},
                      {"observations", bundle.posterior->observations}};
  }
  return j;
}

inline ModelBundle bundle_from_json(const nlohmann::json& j) {
  if (!j.contains("preprocess")) throw Error(ErrorCode::schema_mismatch, "model file has no preprocessing state");
  ModelBundle b{model_from_json(j), preprocess_from_json(j.at("preprocess")), std::nullopt};
  if (j.contains("posterior")) {
    try {
      const auto& pj = j.at("posterior");
      const auto p = pj.at("dimension").get<Eigen::Index>();
      const auto flat = pj.at("covariance").get<std::vector<double>>();
      if (p != static_cast<Eigen::Index>(b.model.num_coefficients()) || flat.size() != static_cast<std::size_t>(p * p)) {
        throw Error(ErrorCode::schema_mismatch, "posterior covariance does not match the model");
      }
      StoredPosterior post;
      post.covariance = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(flat.data(), p, p);
      post.jitter = pj.at("jitter").get<double>();
      post.dispersion = pj.at("dispersion").get<double>();
      post.observations = pj.at("observations").get<std::size_t>();
      b.posterior = std::move(post);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::schema_mismatch, std::string("malformed posterior: ") + e.what());
    }
  }
  return b;
}

inline void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle) {
  write_file_atomic(path, bundle_to_json(bundle).dump(1) + "\n");
}

inline ModelBundle load_bundle(const std::filesystem::path& path) { return bundle_from_json(read_json_file(path)); }

}  // namespace snam
