#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "snam/bench/artifacts.hpp"
#include "snam/bench/config.hpp"
#include "snam/bench/experiment.hpp"
#include "snam/data/csv.hpp"
#include "snam/data/kfold.hpp"
#include "snam/data/metrics.hpp"
#include "snam/model_io.hpp"

namespace snam::bench {

enum ExitCode : int { exit_ok = 0, exit_usage = 2, exit_data = 3, exit_numeric = 4 };

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_config:
    case ErrorCode::schema_mismatch:
      return exit_usage;
    case ErrorCode::io_error:
    case ErrorCode::empty_file:
    case ErrorCode::checksum_mismatch:
    case ErrorCode::too_few_rows:
    case ErrorCode::zero_variance:
    case ErrorCode::constant_column:
    case ErrorCode::single_class_auc:
    case ErrorCode::non_binary_target:
    case ErrorCode::degenerate_data:
      return exit_data;
    default:
      return exit_numeric;
  }
}

/// --out wins over SNAM_OUT_DIR, which wins over the fallback.
inline std::filesystem::path output_directory(const std::optional<std::filesystem::path>& flag,
                                              const std::filesystem::path& fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("SNAM_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return fallback;
}

inline void print_warnings(const std::vector<std::string>& warnings, std::ostream& log) {
  for (const auto& w : warnings) log << "warning: " << w << "\n";
}

struct FitCommandResult {
  FoldOutcome outcome;
  nlohmann::json summary;
};

/// Fits one fold (default 0) and writes model.json, loss_history.csv and fit_summary.json.
inline FitCommandResult cmd_fit(const RunConfig& config, std::size_t fold_index, const std::filesystem::path& out_dir,
                                std::ostream& log) {
  const LoadedData data = load_dataset(config.dataset);
  print_warnings(data.table.warnings, log);
  const auto folds = data::kfold_split(data.table.rows(), config.folds, config.seed, true);
  if (fold_index >= folds.size()) throw Error(ErrorCode::invalid_config, "fold index out of range");
  const auto selection = select_lambda(config, data, folds);
  const std::optional<double> lambda = selection ? std::optional<double>(selection->lambda) : std::nullopt;
  FoldOutcome o = run_fold(config, data, folds[fold_index], fold_index, lambda);

  ModelBundle bundle{o.fit.model, o.preprocess, fit_posterior(o.fit.model, o.x, o.y, o.fit_rows, &o.warnings)};

  std::string history = "epoch,train_loss,validation_loss\n";
  for (std::size_t e = 0; e < o.fit.train_loss.size(); ++e) {
    history += std::to_string(e) + "," + num(o.fit.train_loss[e]) + "," +
               (e < o.fit.validation_loss.size() ? num(o.fit.validation_loss[e]) : std::string()) + "\n";
  }
  nlohmann::json summary{{"dataset", data.manifest.name},
                         {"fold", fold_index},
                         {"n_fit", o.n_fit},
                         {"n_valid", o.n_valid},
                         {"n_test", o.n_test},
                         {"epochs_run", o.epochs_run},
                         {"best_epoch", o.best_epoch},
                         {"final_train_loss", o.fit.train_loss.empty() ? 0.0 : o.fit.train_loss.back()},
                         {"final_learning_rate", o.fit.final_learning_rate},
                         {"params", o.params},
                         {"test_" + o.metric_name, o.metric},
                         {"posterior_stored", bundle.posterior.has_value()},
                         {"warnings", o.warnings}};
  if (!o.fit.validation_loss.empty()) summary["best_validation_loss"] = o.fit.validation_loss[o.best_epoch];
  if (o.raw_rmse) summary["test_raw_rmse"] = *o.raw_rmse;
  if (lambda) summary["lambda"] = *lambda;

  OutputSet out;
  out.add_json("model.json", bundle_to_json(bundle));
  out.add("loss_history.csv", std::move(history));
  out.add_json("fit_summary.json", summary);
  out.commit(out_dir);
  print_warnings(o.warnings, log);
  log << "fold " << fold_index << ": test " << o.metric_name << " " << o.metric << ", " << o.params << " parameters, "
      << o.epochs_run << " epochs\n";
  return {std::move(o), std::move(summary)};
}

struct Scored {
  data::RawTable table;
  data::Dataset encoded;
  Eigen::VectorXd eta;
  Eigen::VectorXd mu;
};

/// Reads `input` with the columns the model was trained on and scores every row.
inline Scored score_file(const ModelBundle& bundle, const std::filesystem::path& input, bool with_target) {
  const data::PreprocessState& st = bundle.preprocess;
  data::TableSchema schema{st.sources, with_target ? st.target_name : std::string(), st.target_kind, st.positive_label};
  Scored s;
  s.table = data::load_csv(input.string(), schema);
  if (with_target && st.log_target) {
    for (double& y : s.table.target) y = std::log(y);
  }
  const auto rows = all_rows(s.table.rows());
  s.encoded = data::apply_preprocess(st, s.table, rows);
  s.eta.resize(static_cast<Eigen::Index>(rows.size()));
  s.mu.resize(s.eta.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double eta = bundle.model.predict_eta(row_span(s.encoded.x, i));
    s.eta[static_cast<Eigen::Index>(i)] = eta;
    s.mu[static_cast<Eigen::Index>(i)] = bundle.model.inverse_link(eta);
  }
  return s;
}

/// predictions.csv with row, eta, mu and, for Gaussian models, the prediction on the target's scale.
inline void cmd_predict(const std::filesystem::path& model_path, const std::filesystem::path& input,
                        const std::filesystem::path& out_dir, std::ostream& log) {
  const ModelBundle bundle = load_bundle(model_path);
  const Scored s = score_file(bundle, input, false);
  print_warnings(s.table.warnings, log);
  print_warnings(s.encoded.warnings, log);
  const bool gaussian = bundle.model.family() == Family::gaussian;
  std::string csv = gaussian ? "row,eta,mu,prediction\n" : "row,eta,mu\n";
  for (Eigen::Index i = 0; i < s.eta.size(); ++i) {
    csv += std::to_string(s.table.source_rows[static_cast<std::size_t>(i)]) + "," + num(s.eta[i]) + "," + num(s.mu[i]);
    if (gaussian) {
      const double raw = bundle.preprocess.target.invert(s.mu[i]);
      csv += "," + num(bundle.preprocess.log_target ? std::exp(raw) : raw);
    }
    csv += "\n";
  }
  OutputSet out;
  out.add("predictions.csv", std::move(csv));
  out.commit(out_dir);
  log << "wrote " << s.eta.size() << " predictions\n";
}

/// Scores a labelled file: standardized and raw RMSE, or AUC.
inline nlohmann::json cmd_evaluate(const std::filesystem::path& model_path, const std::filesystem::path& input,
                                   const std::filesystem::path& out_dir, std::ostream& log) {
  const ModelBundle bundle = load_bundle(model_path);
  const Scored s = score_file(bundle, input, true);
  print_warnings(s.table.warnings, log);
  print_warnings(s.encoded.warnings, log);
  const std::vector<double> mu(s.mu.data(), s.mu.data() + s.mu.size());
  const std::vector<double> y(s.encoded.y.data(), s.encoded.y.data() + s.encoded.y.size());
  nlohmann::json j{{"n", mu.size()}};
  if (bundle.model.family() == Family::gaussian) {
    j["rmse"] = data::rmse(mu, y);
    std::vector<double> raw;
    for (double m : mu) raw.push_back(bundle.preprocess.target.invert(m));
    j["raw_rmse"] = data::rmse(raw, s.table.target);
  } else {
    j["auc"] = data::auc(mu, y);
  }
  OutputSet out;
  out.add_json("evaluation.json", j);
  out.commit(out_dir);
  log << j.dump() << "\n";
  return j;
}

inline void cmd_curves(const std::filesystem::path& model_path, const CurveOptions& opt, const std::filesystem::path& out_dir,
                       std::ostream& log) {
  const ModelBundle bundle = load_bundle(model_path);
  std::vector<std::string> warnings;
  OutputSet out;
  add_curve_files(bundle, opt, out, &warnings);
  out.commit(out_dir);
  print_warnings(warnings, log);
  log << "wrote " << out.files().size() << " curve files\n";
}

/// Credibility bands only; needs the posterior stored by `fit`.
inline void cmd_bands(const std::filesystem::path& model_path, CurveOptions opt, const std::filesystem::path& out_dir,
                      std::ostream& log) {
  const ModelBundle bundle = load_bundle(model_path);
  if (!bundle.posterior) throw Error(ErrorCode::not_positive_definite, "model file holds no posterior; refit to get bands");
  opt.bands = true;
  opt.heatmaps = false;
  nlohmann::json summary{{"alpha", opt.alpha},
                         {"samples", opt.samples},
                         {"seed", opt.seed},
                         {"jitter", bundle.posterior->jitter},
                         {"dispersion", bundle.posterior->dispersion},
                         {"units", nlohmann::json::array()}};
  OutputSet out;
  add_curve_files(bundle, opt, out, nullptr, &summary);
  out.add_json("bands.json", summary);
  out.commit(out_dir);
  log << "wrote bands for " << summary["units"].size() << " units\n";
}

inline BenchmarkReport cmd_benchmark(const RunConfig& config, std::size_t jobs, const std::filesystem::path& baselines,
                                     const std::filesystem::path& out_dir, std::ostream& log) {
  const LoadedData data = load_dataset(config.dataset);
  print_warnings(data.table.warnings, log);
  BenchmarkReport report = run_benchmark(config, data, jobs);
  std::vector<std::string> warnings;
  const auto rows = load_baselines(baselines, report.dataset, report.metric, &warnings);
  print_warnings(warnings, log);

  OutputSet out;
  out.add_json("folds.json", folds_json(report));
  out.add_json("report.json", report_json(report));
  out.add("table.md", render_table(report, rows));
  out.commit(out_dir);
  for (const auto& f : report.folds) log << "fold " << f.fold << ": " << report.metric << " " << f.metric << "\n";
  log << report.dataset << " " << report.metric << " " << fixed(report.mean, 4) << " (" << fixed(report.sd, 4) << "), "
      << report.params << " parameters\n";
  return report;
}

}  // namespace snam::bench
