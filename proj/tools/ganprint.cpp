#include "ganprint/ganprint.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

namespace {

// Process exit codes.
enum Exit { kOk = 0, kInternal = 1, kUsage = 2, kDependency = 3, kNumerical = 4, kIo = 5 };

int exit_code(int status) {
  switch (status) {
    case GP_OK: return kOk;
    case GP_ERR_USAGE:
    case GP_ERR_SPEC:
    case GP_ERR_KEY: return kUsage;
    case GP_ERR_DEPENDENCY: return kDependency;
    case GP_ERR_NUMERICAL: return kNumerical;
    case GP_ERR_IO:
    case GP_ERR_INTEGRITY:
    case GP_ERR_KIND: return kIo;
    default: return kInternal;
  }
}

struct Failure {
  int status;
};

void check(int status) {
  if (status != GP_OK) throw Failure{status};
}

std::string take(char* s) {
  std::string out = s == nullptr ? "" : s;
  gp_string_free(s);
  return out;
}

void log_line(const char* message, void*) { std::fprintf(stderr, "[ganprint] %s\n", message); }

struct StageArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  int workers = 0;
  bool force = false;
  bool quiet = false;
};

void add_stage_options(CLI::App* cmd, StageArgs& a) {
  cmd->add_option("--config", a.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", a.seed, "Override the master seed");
  cmd->add_option("--workers", a.workers, "Cap on worker threads")->check(CLI::Range(1, 1024));
  cmd->add_flag("--force", a.force, "Rerun even if outputs are up to date");
  cmd->add_flag("-q,--quiet", a.quiet, "Suppress progress messages");
}

void run_stage(const std::string& stage, const StageArgs& a) {
  gp_run_options opts;
  gp_run_options_init(&opts);
  opts.has_seed = a.seed.has_value();
  opts.seed = a.seed.value_or(0);
  opts.workers = a.workers;
  opts.force = a.force;
  opts.log = a.quiet ? nullptr : log_line;
  char* result = nullptr;
  check(gp_run_stage(stage.c_str(), a.config.c_str(), &opts, &result));
  const auto j = nlohmann::json::parse(take(result));
  std::printf("%s: %s (%s)\n", stage.c_str(), j["up_to_date"].get<bool>() ? "up to date" : "completed",
              j["dir"].get<std::string>().c_str());
}

std::string run_dir_from(const std::string& run, const std::string& config) {
  if (!run.empty()) return run;
  char* out = nullptr;
  check(gp_config_check(config.c_str(), &out));
  return nlohmann::json::parse(take(out))["output_dir"].get<std::string>();
}

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  ~Handle() { Free(p); }
};

std::vector<double> fingerprint_of(gp_encoder* enc, gp_basis* basis, const std::string& png) {
  Handle<gp_image, gp_image_free> img;
  check(gp_image_read_png(png.c_str(), &img.p));
  std::vector<double> fp(gp_basis_dim(basis));
  check(gp_fingerprint(enc, basis, img.p, fp.data(), fp.size()));
  return fp;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ganprint: generative-model fingerprinting pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", gp_version());

  std::vector<std::string> stages;
  for (int i = 0; i < gp_stage_count(); ++i) stages.emplace_back(gp_stage_name(i));
  StageArgs stage_args;
  for (const auto& s : stages) add_stage_options(app.add_subcommand(s, "Run the '" + s + "' stage"), stage_args);
  add_stage_options(app.add_subcommand("all", "Run every stage in order"), stage_args);

  std::string config, run;
  auto* check_cmd = app.add_subcommand("check-config", "Validate a configuration and print it normalised");
  check_cmd->add_option("--config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);

  auto* figures = app.add_subcommand("figures", "Write figures for a run");
  auto* fig_src = figures->add_option_group("source");
  fig_src->add_option("--run", run, "Run output directory");
  fig_src->add_option("--config", config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  fig_src->require_option(1);

  std::string image_a, image_b, attack_tag, out_png;
  bool use_finetuned = false;
  auto* compare = app.add_subcommand("compare", "Similarity of two images under a trained run");
  auto* cmp_src = compare->add_option_group("source");
  cmp_src->add_option("--run", run, "Run output directory");
  cmp_src->add_option("--config", config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmp_src->require_option(1);
  compare->add_flag("--finetuned", use_finetuned, "Use the fine-tuned encoder");
  compare->add_option("image_a", image_a, "First PNG")->required()->check(CLI::ExistingFile);
  compare->add_option("image_b", image_b, "Second PNG")->required()->check(CLI::ExistingFile);

  auto* ssim = app.add_subcommand("ssim", "Mean SSIM of two PNG images");
  ssim->add_option("image_a", image_a, "First PNG")->required()->check(CLI::ExistingFile);
  ssim->add_option("image_b", image_b, "Second PNG")->required()->check(CLI::ExistingFile);

  auto* apply_attack = app.add_subcommand("apply-attack", "Apply one attack to a PNG image");
  apply_attack->add_option("image", image_a, "Input PNG")->required()->check(CLI::ExistingFile);
  apply_attack->add_option("--tag", attack_tag, "Attack, e.g. jpeg:50, rot:45, mirror:h, blur:3, scale:0.5")->required();
  apply_attack->add_option("-o,--output", out_png, "Output PNG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    for (const auto& s : stages) {
      if (app.got_subcommand(s)) run_stage(s, stage_args);
    }
    if (app.got_subcommand("all")) {
      for (const auto& s : stages) run_stage(s, stage_args);
    }
    if (app.got_subcommand(check_cmd)) {
      char* out = nullptr;
      check(gp_config_check(config.c_str(), &out));
      std::printf("%s\n", take(out).c_str());
    }
    if (app.got_subcommand(figures)) {
      char* out = nullptr;
      check(gp_emit_figures(run_dir_from(run, config).c_str(), &out));
      const auto j = nlohmann::json::parse(take(out));
      for (const auto& w : j["written"]) std::printf("wrote %s\n", w.get<std::string>().c_str());
      for (const auto& m : j["missing"]) std::fprintf(stderr, "missing %s\n", m.get<std::string>().c_str());
    }
    if (app.got_subcommand(compare)) {
      const std::string dir = run_dir_from(run, config);
      Handle<gp_encoder, gp_encoder_free> enc;
      Handle<gp_basis, gp_basis_free> basis;
      Handle<gp_metric, gp_metric_free> metric;
      const std::string enc_file = use_finetuned ? "encoder_finetuned.gpe" : "encoder_raw.gpe";
      check(gp_encoder_load((dir + "/train-encoder/" + enc_file).c_str(), &enc.p));
      check(gp_basis_load((dir + "/fit-svd/basis.gps").c_str(), &basis.p));
      check(gp_metric_load((dir + "/train-metric/metric.gpm").c_str(), &metric.p));
      const auto a = fingerprint_of(enc.p, basis.p, image_a);
      const auto b = fingerprint_of(enc.p, basis.p, image_b);
      double d = 0.0, l = 0.0;
      check(gp_similarity(metric.p, a.data(), b.data(), a.size(), &d, &l));
      std::printf("distance %.6f\nsimilarity %.6f\nverdict %s\n", d, l, l > 0.0 ? "same-model" : "different-model");
    }
    if (app.got_subcommand(ssim)) {
      Handle<gp_image, gp_image_free> a, b;
      check(gp_image_read_png(image_a.c_str(), &a.p));
      check(gp_image_read_png(image_b.c_str(), &b.p));
      double mean = 0.0;
      check(gp_image_ssim(a.p, b.p, &mean, nullptr));
      std::printf("%.6f\n", mean);
    }
    if (app.got_subcommand(apply_attack)) {
      Handle<gp_image, gp_image_free> in, out;
      check(gp_image_read_png(image_a.c_str(), &in.p));
      check(gp_image_attack(in.p, attack_tag.c_str(), &out.p));
      check(gp_image_write_png(out.p, out_png.c_str()));
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error (%s): %s\n", gp_status_name(f.status), gp_last_error());
    return exit_code(f.status);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInternal;
  }
  return kOk;
}
