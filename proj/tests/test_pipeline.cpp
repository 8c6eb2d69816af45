#include <doctest.h>

#include "ganprint/pipeline.hpp"
#include "ganprint/store.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

using namespace ganprint;
using namespace ganprint::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json smoke_json() {
  std::ifstream in(fs::path(GANPRINT_SOURCE_DIR) / "configs" / "smoke.json");
  return json::parse(in);
}

std::string config_error(const json& j) {
  try {
    config_from_json(j);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

// One smoke run shared by the cases below.
struct SmokeRun {
  fs::path dir;
  RunConfig cfg;
  SmokeRun() {
    dir = fs::temp_directory_path() / ("ganprint-pipeline-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    cfg = config_from_json(smoke_json());
    cfg.output_dir = dir;
    cfg.workers = 1;
    run_all(cfg);
  }
  ~SmokeRun() { fs::remove_all(dir); }
};

SmokeRun& smoke() {
  static SmokeRun run;
  return run;
}

}  // namespace

TEST_CASE("stage graph") {
  const auto& names = stage_names();
  REQUIRE(names.size() == 9);
  CHECK(names.front() == "zoo");
  CHECK(names.back() == "report");
  CHECK(stage_dependencies("zoo").empty());
  CHECK(stage_dependencies("generate") == std::vector<std::string>{"zoo"});
  CHECK_THROWS_AS(stage_dependencies("bogus"), UsageError);
  // Dependencies always precede the stage.
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (const auto& d : stage_dependencies(names[i])) {
      CHECK(std::find(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(i), d) != names.begin() + static_cast<std::ptrdiff_t>(i));
    }
  }
}

TEST_CASE("config errors name the JSON path") {
  auto j = smoke_json();
  j["encoder"]["epocs"] = 3;
  CHECK(config_error(j).find("$.encoder.epocs") != std::string::npos);

  j = smoke_json();
  j["encoder"]["epochs"] = "three";
  CHECK(config_error(j).find("$.encoder.epochs") != std::string::npos);

  j = smoke_json();
  j["attack"]["attacks"] = {"rot:90"};
  CHECK(config_error(j).find("rot:90") != std::string::npos);

  j = smoke_json();
  j["svd"]["variance_target"] = 0.9;
  CHECK_FALSE(config_error(j).empty());

  j = smoke_json();
  j["evaluation"]["k_list"] = json::array();
  CHECK_FALSE(config_error(j).empty());

  j = smoke_json();
  j["mystery"] = 1;
  CHECK(config_error(j).find("$.mystery") != std::string::npos);

  CHECK(config_error(smoke_json()).empty());
  const auto cfg = config_from_json(smoke_json());
  CHECK(config_from_json(to_json(cfg)).seed == cfg.seed);
  CHECK(to_json(config_from_json(to_json(cfg))) == to_json(cfg));
  CHECK_THROWS_AS(load_config("/nonexistent/ganprint.json"), IoError);
}

TEST_CASE("default config file matches the built-in defaults") {
  const auto from_file = load_config(fs::path(GANPRINT_SOURCE_DIR) / "configs" / "default.json");
  auto expected = to_json(RunConfig{});
  auto got = to_json(from_file);
  expected.erase("workers");
  got.erase("workers");
  CHECK(got == expected);
}

TEST_CASE("a stage refuses to run before its dependencies") {
  RunConfig cfg = config_from_json(smoke_json());
  cfg.output_dir = fs::temp_directory_path() / ("ganprint-dep-" + std::to_string(::getpid()));
  fs::remove_all(cfg.output_dir);
  try {
    run_stage("evaluate", cfg);
    FAIL("expected DependencyError");
  } catch (const DependencyError& e) {
    CHECK(std::string(e.what()).find("ganprint zoo") != std::string::npos);
  }
  fs::remove_all(cfg.output_dir);
}

TEST_CASE("completed run: summaries, records and up-to-date detection") {
  auto& s = smoke();
  for (const auto& name : stage_names()) {
    CHECK(fs::exists(s.dir / name / "stage.json"));
    const auto again = run_stage(name, s.cfg);
    CHECK(again.up_to_date);
  }
  CHECK(line_count(s.dir / "run_record.jsonl") == 2 * stage_names().size());

  const auto summary = json::parse(store::read_text(s.dir / "report" / "summary.json"));
  CHECK(summary["svd_d"] == 8);
  CHECK(summary["ssim_pairs"] == 4);
  CHECK(summary["metric_min_eigenvalue"].get<double>() >= -1e-8);
  CHECK(summary["metric_tau"].get<double>() > 0.0);
  for (const char* setting : {"known", "unknown", "known+unknown", "noise-augmented", "cross-arch"}) {
    CHECK(summary["accuracy"].contains(setting));
  }
  const auto table = store::read_text(s.dir / "report" / "table.csv");
  CHECK(table.rfind("setting,k,fold1,fold2,mean\n", 0) == 0);

  // Another seed invalidates everything downstream of the config change.
  RunOptions o;
  o.seed = 8;
  CHECK_THROWS_AS(run_stage("generate", s.cfg, o), DependencyError);
}

TEST_CASE("tampering with an output makes the stage and its dependents stale") {
  auto& s = smoke();
  const auto target = s.dir / "fit-svd" / "basis.gps";
  const auto original = store::read_text(target);
  {
    std::ofstream out(target, std::ios::binary | std::ios::app);
    out << "x";
  }
  try {
    run_stage("evaluate", s.cfg);
    FAIL("expected DependencyError");
  } catch (const DependencyError& e) {
    CHECK(std::string(e.what()).find("ganprint fit-svd") != std::string::npos);
  }
  const auto rerun = run_stage("fit-svd", s.cfg);
  CHECK_FALSE(rerun.up_to_date);
  CHECK(store::read_text(target) == original);  // deterministic recomputation
  CHECK(run_stage("evaluate", s.cfg).up_to_date);
}

TEST_CASE("figures") {
  auto& s = smoke();
  const auto r = emit_figures(s.dir);
  CHECK(r.missing.empty());
  CHECK(r.written.size() == 12);
  const auto fig = s.dir / "figures";
  CHECK(line_count(fig / "weights_pca.csv") == 1 + 3);
  CHECK(line_count(fig / "ssim_grid.csv") == 1 + 3);  // fewer than 4 known models in the smoke zoo
  CHECK(line_count(fig / "train_curve.csv") == 1 + 2);
  CHECK(line_count(fig / "finetune_curve.csv") == 1 + 1);
  const auto png = read_png(fig / "confusion_raw.png");
  CHECK(png.width > 0);
  CHECK_THROWS_AS(emit_figures(s.dir / "nothing-here"), DependencyError);
}
