#pragma once

#include "ganprint/encoder.hpp"
#include "ganprint/metric.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ganprint::pipeline {

const std::vector<std::string>& stage_names();
// Stages whose outputs `stage` reads.
const std::vector<std::string>& stage_dependencies(const std::string& stage);

struct RunConfig {
  std::filesystem::path output_dir = "runs/default";
  std::uint64_t seed = 2024;
  int workers = 1;

  // zoo
  std::string arch = "arch-a";
  std::string cross_arch = "arch-b";
  int num_known_models = 10;
  int num_unknown_models = 5;
  int num_cross_arch_models = 5;
  double eps = 0.6;

  // generate
  int train_images_per_model = 200;
  int test_images_per_model = 60;
  double val_fraction = 0.25;
  int ssim_pairs = 30;

  // attack
  double attack_rate = 0.25;
  std::vector<std::string> attacks;  // empty: full battery

  // train-encoder
  double learning_rate = 0.005;
  int batch_size = 30;
  int epochs = 30;
  double momentum = 0.9;
  int finetune_epochs = 8;
  double finetune_learning_rate = 0.005;

  // fit-svd
  double svd_fit_fraction = 0.5;
  std::optional<double> svd_variance_target;
  std::optional<int> svd_fixed_d = 64;

  // train-metric
  int metric_pairs = 3000;
  std::optional<double> metric_margin;
  double metric_step = 1.0;
  int metric_iters = 300;
  bool metric_diag_only = false;

  // evaluate
  std::vector<int> k_list{1, 3, 5};
  double reference_fraction = 0.2;
  int folds = 5;

  void validate() const;
};

// Schema-validated parse; errors name the offending JSON path (e.g. "$.encoder.epochs").
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

using LogFn = std::function<void(const std::string&)>;

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  bool force = false;
  std::string config_path;  // recorded in the run record
  LogFn log;
};

struct StageResult {
  std::string stage;
  bool up_to_date = false;
  std::filesystem::path dir;
  std::string output_digest;
  nlohmann::json summary;
};

StageResult run_stage(const std::string& stage, RunConfig cfg, const RunOptions& opts = {});
StageResult run_stage(const std::string& stage, const std::filesystem::path& config_path, RunOptions opts = {});
std::vector<StageResult> run_all(const RunConfig& cfg, const RunOptions& opts = {});

struct FiguresResult {
  std::vector<std::string> written;  // paths relative to the run directory
  std::vector<std::string> missing;  // artifacts that were needed but absent
};

// Writes <run_dir>/figures/*. Throws DependencyError when no figure could be produced.
FiguresResult emit_figures(const std::filesystem::path& run_dir);

}  // namespace ganprint::pipeline
