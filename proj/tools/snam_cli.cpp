#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "fetch.hpp"
#include "snam/bench/commands.hpp"

namespace {

using namespace snam;
using namespace snam::bench;
namespace fs = std::filesystem;

struct Args {
  std::string config;
  std::string model;
  std::string input;
  std::string out;
  std::string baselines;
  std::string manifests = "data";
  std::optional<std::uint64_t> seed;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  std::size_t fold = 0;
  double alpha = 0.05;
  std::size_t samples = 1000;
  std::size_t grid = 100;
  bool force = false;
};

std::optional<fs::path> out_flag(const Args& a) {
  return a.out.empty() ? std::nullopt : std::optional<fs::path>(a.out);
}

RunConfig read_config(const Args& a) {
  RunConfig c = load_run_config(a.config);
  if (a.seed) {
    c.seed = *a.seed;
    c.fit.seed = *a.seed;
  }
  return c;
}

CurveOptions curve_options(const Args& a) {
  if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw Error(ErrorCode::invalid_config, "--alpha must lie in (0, 1)");
  if (a.samples < 2) throw Error(ErrorCode::invalid_config, "--samples must be at least 2");
  if (a.grid < 2) throw Error(ErrorCode::invalid_config, "--grid must be at least 2");
  return {a.grid, a.alpha, a.samples, a.seed.value_or(101), true, true};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spline-based additive models: fit, predict, evaluate, interpret and benchmark"};
  app.require_subcommand(1);
  Args a;

  auto* fetch = app.add_subcommand("fetch-data", "Download the public datasets listed in the manifest directory");
  fetch->add_option("--manifests", a.manifests, "Directory of dataset manifests")->capture_default_str();
  fetch->add_flag("--force", a.force, "Download even if the CSV exists");

  auto* fit = app.add_subcommand("fit", "Fit one cross-validation fold and write the model file");
  auto* predict = app.add_subcommand("predict", "Score a CSV with a fitted model");
  auto* evaluate = app.add_subcommand("evaluate", "Score a labelled CSV and report RMSE or AUC");
  auto* curves = app.add_subcommand("curves", "Write shape function curves and tensor heatmaps");
  auto* bands = app.add_subcommand("bands", "Write credibility bands of univariate shape functions");
  auto* bench = app.add_subcommand("benchmark", "Run k-fold cross-validation and write a report");

  for (auto* cmd : {fit, bench}) {
    cmd->add_option("--config", a.config, "Run config JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", a.seed, "Override the config seed");
  }
  fit->add_option("--fold", a.fold, "Fold to train on")->capture_default_str();
  bench->add_option("--jobs", a.jobs, "Folds trained concurrently")->capture_default_str()->check(CLI::PositiveNumber);
  bench->add_option("--baselines", a.baselines, "Directory of external metric JSONs to include in the table");
  for (auto* cmd : {predict, evaluate, curves, bands}) {
    cmd->add_option("--model", a.model, "Model file written by fit")->required();
  }
  for (auto* cmd : {predict, evaluate}) cmd->add_option("--input", a.input, "Input CSV")->required();
  for (auto* cmd : {curves, bands}) {
    cmd->add_option("--grid", a.grid, "Grid points per feature")->capture_default_str();
    cmd->add_option("--alpha", a.alpha, "Band level; bands cover 1 - alpha")->capture_default_str();
    cmd->add_option("--samples", a.samples, "Posterior draws")->capture_default_str();
    cmd->add_option("--seed", a.seed, "Sampling seed");
  }
  for (auto* cmd : {fit, predict, evaluate, curves, bands, bench}) cmd->add_option("--out", a.out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_usage;
  }

  try {
    if (*fetch) return fetch::fetch_all({a.manifests, a.force}, std::cout);
    if (*fit) {
      const RunConfig c = read_config(a);
      cmd_fit(c, a.fold, output_directory(out_flag(a), c.output_dir), std::cout);
    } else if (*bench) {
      const RunConfig c = read_config(a);
      cmd_benchmark(c, a.jobs, a.baselines, output_directory(out_flag(a), c.output_dir), std::cout);
    } else if (*predict) {
      cmd_predict(a.model, a.input, output_directory(out_flag(a), fs::path(a.model).parent_path()), std::cout);
    } else if (*evaluate) {
      cmd_evaluate(a.model, a.input, output_directory(out_flag(a), fs::path(a.model).parent_path()), std::cout);
    } else if (*curves) {
      cmd_curves(a.model, curve_options(a), output_directory(out_flag(a), fs::path(a.model).parent_path() / "curves"), std::cout);
    } else if (*bands) {
      cmd_bands(a.model, curve_options(a), output_directory(out_flag(a), fs::path(a.model).parent_path() / "bands"), std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_numeric;
  }
  return exit_ok;
}
