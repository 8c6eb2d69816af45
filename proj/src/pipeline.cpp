#include "ganprint/pipeline.hpp"

#include "ganprint/dataset.hpp"
#include "ganprint/evaluation.hpp"
#include "ganprint/fingerprint.hpp"
#include "ganprint/imaging.hpp"
#include "ganprint/modelzoo.hpp"
#include "ganprint/store.hpp"

#include <algorithm>
#include <chrono>
#include <climits>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

namespace ganprint::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"zoo",     "generate",     "attack",   "train-encoder", "extract",
                                              "fit-svd", "train-metric", "evaluate", "report"};
  return names;
}

const std::vector<std::string>& stage_dependencies(const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> deps{
      {"zoo", {}},
      {"generate", {"zoo"}},
      {"attack", {"generate"}},
      {"train-encoder", {"zoo", "generate", "attack"}},
      {"extract", {"zoo", "generate", "attack", "train-encoder"}},
      {"fit-svd", {"extract"}},
      {"train-metric", {"fit-svd"}},
      {"evaluate", {"fit-svd", "train-metric"}},
      {"report", {"generate", "train-encoder", "fit-svd", "train-metric", "evaluate"}},
  };
  const auto it = deps.find(stage);
  if (it == deps.end()) {
    std::string list;
    for (const auto& s : stage_names()) list += (list.empty() ? "" : ", ") + s;
    throw UsageError("unknown stage '" + stage + "' (expected one of: " + list + ")");
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError(path_ + ": expected an object");
  }

  std::string at(const std::string& key) const { return path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void integer(const std::string& key, int& out, long long lo, long long hi = INT_MAX) {
    const json* v = find(key);
    if (v == nullptr) return;
    if (!v->is_number_integer()) throw UsageError(at(key) + ": expected an integer");
    const auto x = v->get<long long>();
    if (x < lo || x > hi) {
      throw UsageError(at(key) + ": must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " +
                       std::to_string(x));
    }
    out = static_cast<int>(x);
  }

  void u64(const std::string& key, std::uint64_t& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    if (!v->is_number_unsigned()) throw UsageError(at(key) + ": expected a non-negative integer");
    out = v->get<std::uint64_t>();
  }

  // Closed interval unless lo_open.
  void number(const std::string& key, double& out, double lo, double hi, bool lo_open = false) {
    const json* v = find(key);
    if (v == nullptr) return;
    out = checked_number(key, *v, lo, hi, lo_open);
  }

  void optional_number(const std::string& key, std::optional<double>& out, double lo, double hi, bool lo_open) {
    const json* v = find(key);
    if (v == nullptr) return;
    if (v->is_null()) {
      out.reset();
      return;
    }
    out = checked_number(key, *v, lo, hi, lo_open);
  }

  void boolean(const std::string& key, bool& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    if (!v->is_boolean()) throw UsageError(at(key) + ": expected true or false");
    out = v->get<bool>();
  }

  void string(const std::string& key, std::string& out) {
    const json* v = find(key);
    if (v == nullptr) return;
    if (!v->is_string()) throw UsageError(at(key) + ": expected a string");
    out = v->get<std::string>();
  }

  Section child(const std::string& key) {
    static const json empty = json::object();
    const json* v = find(key);
    return Section(v == nullptr ? empty : *v, at(key));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw UsageError(at(item.key()) + ": unknown key");
    }
  }

 private:
  double checked_number(const std::string& key, const json& v, double lo, double hi, bool lo_open) const {
    if (!v.is_number()) throw UsageError(at(key) + ": expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x) || x > hi || x < lo || (lo_open && x == lo)) {
      throw UsageError(at(key) + ": must be in " + std::string(lo_open ? "(" : "[") + std::to_string(lo) + ", " +
                       std::to_string(hi) + "], got " + std::to_string(x));
    }
    return x;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

constexpr double kHuge = 1e300;

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw UsageError("config: " + m); };
  modelzoo::arch_by_name(arch);
  modelzoo::arch_by_name(cross_arch);
  if (output_dir.empty()) fail("output_dir must be set");
  if (workers < 1) fail("workers must be >= 1");
  if (num_known_models < 2) fail("num_known_models must be >= 2");
  if (num_unknown_models < 1) fail("num_unknown_models must be >= 1");
  if (num_cross_arch_models < 1) fail("num_cross_arch_models must be >= 1");
  if (num_known_models + num_unknown_models > 100) fail("known + unknown models must not exceed the 100-pair (k, p) grid");
  if (num_cross_arch_models > 100) fail("num_cross_arch_models must be <= 100");
  if (!(eps > 0.0)) fail("eps must be > 0");
  if (train_images_per_model < 2) fail("train_per_model must be >= 2");
  const int val = static_cast<int>(std::lround(val_fraction * train_images_per_model));
  if (val < 1 || val >= train_images_per_model) fail("val_fraction must leave at least one train and one val image per model");
  if (test_images_per_model < 5) fail("test_per_model must be >= 5 (reference/query split)");
  if (ssim_pairs < 1) fail("ssim_pairs must be >= 1");
  if (!(attack_rate >= 0.0 && attack_rate <= 1.0)) fail("attack rate must be in [0,1]");
  for (const auto& a : attacks) imaging::AttackDescriptor::parse(a);
  encoder::TrainConfig{learning_rate, batch_size, epochs, momentum, 0}.validate();
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (finetune_epochs < 0) fail("finetune_epochs must be >= 0");
  if (!(finetune_learning_rate > 0.0)) fail("finetune_learning_rate must be > 0");
  if (!(svd_fit_fraction > 0.0 && svd_fit_fraction <= 1.0)) fail("svd fit_fraction must be in (0,1]");
  fingerprint::SvdPolicy{svd_variance_target, svd_fixed_d}.validate();
  if (metric_pairs < 2) fail("metric n_pairs must be >= 2");
  metric::LearnConfig{metric_margin, metric_step, metric_iters, metric_diag_only}.validate();
  if (k_list.empty()) fail("k_list must not be empty");
  for (int k : k_list) {
    if (k < 1) fail("k values must be >= 1");
  }
  if (!(reference_fraction > 0.0 && reference_fraction < 1.0)) fail("reference_fraction must be in (0,1)");
  if (folds < 1) fail("folds must be >= 1");
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Section root(j, "$");
  std::string out = c.output_dir.string();
  root.string("output_dir", out);
  c.output_dir = out;
  root.u64("seed", c.seed);
  root.integer("workers", c.workers, 1, 1024);
  {
    Section s = root.child("zoo");
    s.string("arch", c.arch);
    s.string("cross_arch", c.cross_arch);
    s.integer("num_known_models", c.num_known_models, 2, 100);
    s.integer("num_unknown_models", c.num_unknown_models, 1, 100);
    s.integer("num_cross_arch_models", c.num_cross_arch_models, 1, 100);
    s.number("eps", c.eps, 0.0, kHuge, true);
    s.finish();
  }
  {
    Section s = root.child("images");
    s.integer("train_per_model", c.train_images_per_model, 2);
    s.integer("test_per_model", c.test_images_per_model, 5);
    s.number("val_fraction", c.val_fraction, 0.0, 1.0, true);
    s.integer("ssim_pairs", c.ssim_pairs, 1);
    s.finish();
  }
  {
    Section s = root.child("attack");
    s.number("rate", c.attack_rate, 0.0, 1.0);
    if (const json* a = s.find("attacks")) {
      if (!a->is_array()) throw UsageError(s.at("attacks") + ": expected an array of attack tags");
      c.attacks.clear();
      for (std::size_t i = 0; i < a->size(); ++i) {
        const std::string where = s.at("attacks") + "[" + std::to_string(i) + "]";
        if (!(*a)[i].is_string()) throw UsageError(where + ": expected a string such as \"jpeg:50\"");
        const auto tag = (*a)[i].get<std::string>();
        try {
          imaging::AttackDescriptor::parse(tag);
        } catch (const Error& e) {
          throw UsageError(where + ": " + e.what());
        }
        c.attacks.push_back(tag);
      }
    }
    s.finish();
  }
  {
    Section s = root.child("encoder");
    s.number("learning_rate", c.learning_rate, 0.0, kHuge, true);
    s.integer("batch_size", c.batch_size, 1);
    s.integer("epochs", c.epochs, 0);
    s.number("momentum", c.momentum, 0.0, 0.999999);
    s.integer("finetune_epochs", c.finetune_epochs, 0);
    s.number("finetune_learning_rate", c.finetune_learning_rate, 0.0, kHuge, true);
    s.finish();
  }
  {
    Section s = root.child("svd");
    s.number("fit_fraction", c.svd_fit_fraction, 0.0, 1.0, true);
    const bool has_target = s.find("variance_target") != nullptr;
    const bool has_fixed = s.find("fixed_d") != nullptr;
    if (has_target && has_fixed) throw UsageError("$.svd: give either variance_target or fixed_d, not both");
    if (has_target) {
      c.svd_fixed_d.reset();
      s.optional_number("variance_target", c.svd_variance_target, 0.0, 1.0, true);
      if (!c.svd_variance_target) throw UsageError(s.at("variance_target") + ": expected a number");
    }
    if (has_fixed) {
      int d = 0;
      s.integer("fixed_d", d, 1);
      c.svd_fixed_d = d;
    }
    s.finish();
  }
  {
    Section s = root.child("metric");
    s.integer("n_pairs", c.metric_pairs, 2);
    s.optional_number("margin", c.metric_margin, 0.0, kHuge, true);
    s.number("step", c.metric_step, 0.0, kHuge, true);
    s.integer("iters", c.metric_iters, 0);
    s.boolean("diag_only", c.metric_diag_only);
    s.finish();
  }
  {
    Section s = root.child("evaluation");
    if (const json* k = s.find("k_list")) {
      if (!k->is_array() || k->empty()) throw UsageError(s.at("k_list") + ": expected a non-empty array of integers");
      c.k_list.clear();
      for (std::size_t i = 0; i < k->size(); ++i) {
        if (!(*k)[i].is_number_integer() || (*k)[i].get<long long>() < 1) {
          throw UsageError(s.at("k_list") + "[" + std::to_string(i) + "]: expected an integer >= 1");
        }
        c.k_list.push_back((*k)[i].get<int>());
      }
    }
    s.number("reference_fraction", c.reference_fraction, 0.0, 1.0, true);
    s.integer("folds", c.folds, 1);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

json to_json(const RunConfig& c) {
  json svd = {{"fit_fraction", c.svd_fit_fraction}};
  if (c.svd_variance_target) svd["variance_target"] = *c.svd_variance_target;
  if (c.svd_fixed_d) svd["fixed_d"] = *c.svd_fixed_d;
  return {
      {"output_dir", c.output_dir.string()},
      {"seed", c.seed},
      {"workers", c.workers},
      {"zoo",
       {{"arch", c.arch},
        {"cross_arch", c.cross_arch},
        {"num_known_models", c.num_known_models},
        {"num_unknown_models", c.num_unknown_models},
        {"num_cross_arch_models", c.num_cross_arch_models},
        {"eps", c.eps}}},
      {"images",
       {{"train_per_model", c.train_images_per_model},
        {"test_per_model", c.test_images_per_model},
        {"val_fraction", c.val_fraction},
        {"ssim_pairs", c.ssim_pairs}}},
      {"attack", {{"rate", c.attack_rate}, {"attacks", c.attacks}}},
      {"encoder",
       {{"learning_rate", c.learning_rate},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"momentum", c.momentum},
        {"finetune_epochs", c.finetune_epochs},
        {"finetune_learning_rate", c.finetune_learning_rate}}},
      {"svd", svd},
      {"metric",
       {{"n_pairs", c.metric_pairs},
        {"margin", c.metric_margin ? json(*c.metric_margin) : json(nullptr)},
        {"step", c.metric_step},
        {"iters", c.metric_iters},
        {"diag_only", c.metric_diag_only}}},
      {"evaluation", {{"k_list", c.k_list}, {"reference_fraction", c.reference_fraction}, {"folds", c.folds}}},
  };
}

// ---------------------------------------------------------------------------
// Stage bookkeeping
// ---------------------------------------------------------------------------

namespace {

constexpr int kStageFormat = 1;

struct Ctx {
  RunConfig cfg;
  fs::path out;
  int workers = 1;
  LogFn log;

  fs::path dir(const std::string& stage) const { return out / stage; }
  void say(const std::string& s) const {
    if (log) log(s);
  }
};

std::string config_digest(const RunConfig& cfg, const std::string& stage) {
  static const std::map<std::string, std::string> section{{"zoo", "zoo"},
                                                          {"generate", "images"},
                                                          {"attack", "attack"},
                                                          {"train-encoder", "encoder"},
                                                          {"fit-svd", "svd"},
                                                          {"train-metric", "metric"},
                                                          {"evaluate", "evaluation"}};
  const json full = to_json(cfg);
  json part = {{"stage", stage}, {"seed", full["seed"]}, {"format", kStageFormat}};
  if (const auto it = section.find(stage); it != section.end()) part["section"] = full[it->second];
  return hex64(fnv1a64(part.dump()));
}

std::map<std::string, std::string> scan_outputs(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "stage.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, std::string> out;
  for (const auto& f : files) out[fs::relative(f, dir).generic_string()] = hex64(store::file_checksum(f));
  return out;
}

std::string digest_of(const std::map<std::string, std::string>& outputs) {
  std::string text;
  for (const auto& [k, v] : outputs) text += k + "=" + v + "\n";
  return hex64(fnv1a64(text));
}

enum class State { missing, stale, current };

struct Status {
  State state = State::missing;
  std::string detail;
  std::string digest;
};

Status inspect(const Ctx& ctx, const std::string& stage, std::map<std::string, Status>& memo) {
  if (const auto it = memo.find(stage); it != memo.end()) return it->second;
  Status st;
  const fs::path record_path = ctx.dir(stage) / "stage.json";
  auto done = [&](State s, std::string detail) {
    st.state = s;
    st.detail = std::move(detail);
    memo[stage] = st;
    return st;
  };
  if (!fs::exists(record_path)) return done(State::missing, "has not been run");
  json rec;
  try {
    rec = json::parse(store::read_text(record_path));
  } catch (const json::exception&) {
    return done(State::stale, "has an unreadable stage record");
  }
  if (rec.value("config_digest", std::string()) != config_digest(ctx.cfg, stage)) {
    return done(State::stale, "was run with a different configuration");
  }
  for (const auto& dep : stage_dependencies(stage)) {
    const Status ds = inspect(ctx, dep, memo);
    if (ds.state != State::current) return done(State::stale, "depends on '" + dep + "', which " + ds.detail);
    if (rec["inputs"].value(dep, std::string()) != ds.digest) return done(State::stale, "was built from older '" + dep + "' outputs");
  }
  std::map<std::string, std::string> recorded;
  try {
    recorded = rec.at("outputs").get<std::map<std::string, std::string>>();
  } catch (const json::exception&) {
    return done(State::stale, "has an unreadable stage record");
  }
  for (const auto& [rel, sum] : recorded) {
    const fs::path p = ctx.dir(stage) / rel;
    if (!fs::exists(p)) return done(State::stale, "is missing output '" + rel + "'");
    if (hex64(store::file_checksum(p)) != sum) return done(State::stale, "has a modified output '" + rel + "'");
  }
  st.digest = rec.value("output_digest", std::string());
  return done(State::current, "is up to date");
}

std::set<std::string> transitive_deps(const std::string& stage) {
  std::set<std::string> out;
  std::vector<std::string> todo = stage_dependencies(stage);
  while (!todo.empty()) {
    const std::string s = todo.back();
    todo.pop_back();
    if (out.insert(s).second) {
      for (const auto& d : stage_dependencies(s)) todo.push_back(d);
    }
  }
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// ---------------------------------------------------------------------------
// Shared artifact access
// ---------------------------------------------------------------------------

struct ZooIndex {
  std::uint64_t seed = 0;
  std::vector<std::string> known, unknown, cross;
};

ZooIndex read_zoo(const Ctx& ctx) {
  const json j = json::parse(store::read_text(ctx.dir("zoo") / "zoo.json"));
  ZooIndex z;
  z.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& e : j.at("known")) z.known.push_back(e.at("id").get<std::string>());
  for (const auto& e : j.at("unknown")) z.unknown.push_back(e.at("id").get<std::string>());
  for (const auto& e : j.at("cross")) z.cross.push_back(e.at("id").get<std::string>());
  return z;
}

fs::path variant_file(const std::string& id) { return fs::path("variants") / (id + ".gpv"); }

std::vector<ManifestEntry> select(const Manifest& m, const std::set<std::string>& models, std::string_view split,
                                  bool attacked) {
  std::vector<ManifestEntry> out;
  for (const auto& e : m.entries) {
    if (models.count(e.model_id) && e.split == split && e.attack_tag.has_value() == attacked) out.push_back(e);
  }
  return out;
}

std::vector<Image> load_images(const Ctx& ctx, const std::vector<ManifestEntry>& entries) {
  std::vector<Image> out(entries.size());
  parallel_for(entries.size(), ctx.workers, [&](std::size_t i) { out[i] = read_png(ctx.out / entries[i].file); });
  return out;
}

LabeledSet labeled(const Ctx& ctx, const std::vector<ManifestEntry>& entries, const std::map<std::string, int>& labels) {
  LabeledSet set;
  set.images = load_images(ctx, entries);
  for (const auto& e : entries) set.labels.push_back(labels.at(e.model_id));
  return set;
}

std::string history_csv(const std::vector<encoder::EpochStats>& h) {
  std::string s = "epoch,loss,accuracy\n";
  for (const auto& e : h) s += std::to_string(e.epoch) + fmt(",%.8f", e.loss) + fmt(",%.6f\n", e.accuracy);
  return s;
}

std::string confusion_csv(const encoder::ConfusionMatrix& cm, const std::vector<std::string>& classes) {
  std::string s = "true\\predicted";
  for (const auto& c : classes) s += "," + c;
  s += "\n";
  for (int t = 0; t < cm.num_classes; ++t) {
    s += classes[static_cast<std::size_t>(t)];
    for (int p = 0; p < cm.num_classes; ++p) s += "," + std::to_string(cm.at(t, p));
    s += "\n";
  }
  return s;
}

std::vector<std::string> fingerprint_sets() { return {"train", "known", "unknown", "cross", "noise"}; }

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

json stage_zoo(const Ctx& ctx) {
  const auto& c = ctx.cfg;
  const fs::path dir = ctx.dir("zoo");
  const auto arch = modelzoo::arch_by_name(c.arch);
  const auto cross_arch = modelzoo::arch_by_name(c.cross_arch);

  auto pick = [&](const modelzoo::ArchitectureSpec& a, std::uint64_t index, int count, int offset,
                  std::vector<modelzoo::ModelVariant>& out) {
    const auto base = modelzoo::build_base(a, derive_seed(c.seed, "base", index));
    const auto grid = modelzoo::parameter_grid(derive_seed(c.seed, "grid", index));
    std::vector<std::size_t> order(grid.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream(derive_seed(c.seed, "select", index)).shuffle(order);
    for (int i = 0; i < count; ++i) {
      out.push_back(modelzoo::derive_variant(base, grid[order[static_cast<std::size_t>(offset + i)]], c.eps));
    }
    return base;
  };

  std::vector<modelzoo::ModelVariant> known, unknown, cross;
  const auto base = pick(arch, 0, c.num_known_models, 0, known);
  pick(arch, 0, c.num_unknown_models, c.num_known_models, unknown);
  const auto cross_base = pick(cross_arch, 1, c.num_cross_arch_models, 0, cross);

  auto listing = [&](const std::vector<modelzoo::ModelVariant>& vs) {
    json arr = json::array();
    for (const auto& v : vs) {
      store::save(v, dir / variant_file(v.variant_id));
      arr.push_back({{"id", v.variant_id},
                     {"file", variant_file(v.variant_id).generic_string()},
                     {"k", v.params->k},
                     {"p", v.params->p},
                     {"seed", v.params->seed}});
    }
    return arr;
  };
  store::save(base, dir / variant_file(base.variant_id));
  store::save(cross_base, dir / variant_file(cross_base.variant_id));
  json index = {{"seed", c.seed},
                {"arch", c.arch},
                {"cross_arch", c.cross_arch},
                {"eps", c.eps},
                {"bases", {base.variant_id, cross_base.variant_id}},
                {"known", listing(known)},
                {"unknown", listing(unknown)},
                {"cross", listing(cross)}};
  store::write_text_atomic(dir / "zoo.json", index.dump(1) + "\n");
  ctx.say("zoo: " + std::to_string(known.size()) + " known, " + std::to_string(unknown.size()) + " unknown, " +
          std::to_string(cross.size()) + " cross-architecture variants");
  return {{"known", known.size()}, {"unknown", unknown.size()}, {"cross_arch", cross.size()}};
}

json stage_generate(const Ctx& ctx) {
  const auto& c = ctx.cfg;
  const fs::path dir = ctx.dir("generate");
  const ZooIndex zoo = read_zoo(ctx);
  std::map<std::string, modelzoo::ModelVariant> variants;
  for (const auto* list : {&zoo.known, &zoo.unknown, &zoo.cross}) {
    for (const auto& id : *list) variants.emplace(id, store::load_variant(ctx.dir("zoo") / variant_file(id)));
  }

  Manifest manifest;
  const int n_val = static_cast<int>(std::lround(c.val_fraction * c.train_images_per_model));
  const int n_fit = c.train_images_per_model - n_val;
  auto add = [&](const std::string& id, int index, const std::string& split) {
    char name[64];
    std::snprintf(name, sizeof name, "%s-%04d.png", split.c_str(), index);
    manifest.entries.push_back({"generate/images/" + id + "/" + name, id,
                                derive_seed(c.seed, "latent/" + id, static_cast<std::uint64_t>(index)), std::nullopt,
                                split, std::nullopt});
  };
  for (const auto& id : zoo.known) {
    for (int i = 0; i < c.train_images_per_model; ++i) add(id, i, i < n_fit ? "train" : "val");
    for (int i = 0; i < c.test_images_per_model; ++i) add(id, c.train_images_per_model + i, "test");
  }
  for (const auto* list : {&zoo.unknown, &zoo.cross}) {
    for (const auto& id : *list) {
      for (int i = 0; i < c.test_images_per_model; ++i) add(id, i, "test");
    }
  }
  for (const auto& [id, v] : variants) fs::create_directories(dir / "images" / id);
  parallel_for(manifest.entries.size(), ctx.workers, [&](std::size_t i) {
    const auto& e = manifest.entries[i];
    write_png(ctx.out / e.file, modelzoo::generate(variants.at(e.model_id), e.latent_seed).pixels);
  });
  store::save_manifest(manifest, dir / "manifest.json");
  ctx.say("generate: " + std::to_string(manifest.entries.size()) + " images");

  // Seed-paired sibling comparisons.
  const auto k = zoo.known.size();
  std::vector<double> scores(static_cast<std::size_t>(c.ssim_pairs));
  std::vector<std::uint64_t> seeds(scores.size());
  parallel_for(scores.size(), ctx.workers, [&](std::size_t j) {
    seeds[j] = derive_seed(c.seed, "ssim", j);
    const auto a = modelzoo::generate(variants.at(zoo.known[j % k]), seeds[j]).pixels;
    const auto b = modelzoo::generate(variants.at(zoo.known[(j + 1) % k]), seeds[j]).pixels;
    scores[j] = imaging::ssim(imaging::to_grayscale(a), imaging::to_grayscale(b)).mean;
  });
  std::string csv = "pair,model_a,model_b,latent_seed,ssim\n";
  for (std::size_t j = 0; j < scores.size(); ++j) {
    csv += std::to_string(j) + "," + zoo.known[j % k] + "," + zoo.known[(j + 1) % k] + "," + std::to_string(seeds[j]) +
           fmt(",%.8f\n", scores[j]);
  }
  store::write_text_atomic(dir / "ssim_pairs.csv", csv);
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  const double lo = *std::min_element(scores.begin(), scores.end());
  ctx.say("generate: mean SSIM over " + std::to_string(scores.size()) + " seed-paired sibling pairs = " + fmt("%.4f", mean));
  return {{"images", manifest.entries.size()}, {"ssim_pairs", scores.size()}, {"ssim_mean", mean}, {"ssim_min", lo}};
}

json stage_attack(const Ctx& ctx) {
  const auto& c = ctx.cfg;
  const fs::path dir = ctx.dir("attack");
  const ZooIndex zoo = read_zoo(ctx);
  const std::set<std::string> known(zoo.known.begin(), zoo.known.end());
  const Manifest gen = store::load_manifest(ctx.dir("generate") / "manifest.json");

  std::vector<imaging::AttackDescriptor> attacks;
  if (c.attacks.empty()) {
    attacks = imaging::full_battery();
  } else {
    for (const auto& t : c.attacks) attacks.push_back(imaging::AttackDescriptor::parse(t));
  }

  Manifest source;
  for (const auto& e : gen.entries) {
    if (known.count(e.model_id) && (e.split == "train" || e.split == "val")) source.entries.push_back(e);
  }
  auto relocate = [](const std::string& file) {
    const std::string prefix = "generate/";
    return file.rfind(prefix, 0) == 0 ? "attack/" + file.substr(prefix.size()) : "attack/" + file;
  };
  Manifest augmented = imaging::augment_dataset(source, attacks, derive_seed(c.seed, "augment"), c.attack_rate);
  for (auto& e : augmented.entries) {
    if (e.attack_tag) e.file = relocate(e.file);
  }

  Manifest noise;
  std::size_t n = 0;
  for (const auto& e : gen.entries) {
    if (!known.count(e.model_id) || e.split != "test") continue;
    RngStream rng(derive_seed(c.seed, "noise", n++));
    const auto& atk = attacks[static_cast<std::size_t>(rng.below(attacks.size()))];
    ManifestEntry x = e;
    x.file = relocate(imaging::attacked_file_name(e.file, atk));
    x.attack_tag = atk.tag();
    x.source = e.file;
    noise.entries.push_back(std::move(x));
  }

  std::vector<const ManifestEntry*> jobs;
  for (const auto* m : {&augmented, &noise}) {
    for (const auto& e : m->entries) {
      if (e.attack_tag) jobs.push_back(&e);
    }
  }
  std::set<fs::path> dirs;
  for (const auto* e : jobs) dirs.insert((ctx.out / e->file).parent_path());
  for (const auto& d : dirs) fs::create_directories(d);
  parallel_for(jobs.size(), ctx.workers, [&](std::size_t i) {
    const auto& e = *jobs[i];
    const Image src = read_png(ctx.out / *e.source);
    write_png(ctx.out / e.file, imaging::apply_attack(src, imaging::AttackDescriptor::parse(*e.attack_tag)));
  });
  store::save_manifest(augmented, dir / "manifest.json");
  store::save_manifest(noise, dir / "test_noise.json");

  std::size_t train_attacked = 0, val_attacked = 0;
  for (const auto& e : augmented.entries) {
    if (!e.attack_tag) continue;
    (e.split == "train" ? train_attacked : val_attacked) += 1;
  }
  ctx.say("attack: " + std::to_string(jobs.size()) + " attacked images");
  return {{"attacks", attacks.size()},
          {"train_attacked", train_attacked},
          {"val_attacked", val_attacked},
          {"test_noise", noise.entries.size()}};
}

json stage_train_encoder(const Ctx& ctx) {
  const auto& c = ctx.cfg;
  const fs::path dir = ctx.dir("train-encoder");
  const ZooIndex zoo = read_zoo(ctx);
  const std::set<std::string> known(zoo.known.begin(), zoo.known.end());
  std::map<std::string, int> labels;
  for (std::size_t i = 0; i < zoo.known.size(); ++i) labels[zoo.known[i]] = static_cast<int>(i);

  const Manifest gen = store::load_manifest(ctx.dir("generate") / "manifest.json");
  const Manifest aug = store::load_manifest(ctx.dir("attack") / "manifest.json");
  const LabeledSet train_set = labeled(ctx, select(gen, known, "train", false), labels);
  const LabeledSet val_set = labeled(ctx, select(gen, known, "val", false), labels);
  const auto attacked_val_entries = select(aug, known, "val", true);
  const LabeledSet attacked_val = labeled(ctx, attacked_val_entries, labels);
  LabeledSet finetune_set = train_set;
  {
    LabeledSet extra = labeled(ctx, select(aug, known, "train", true), labels);
    finetune_set.images.insert(finetune_set.images.end(), extra.images.begin(), extra.images.end());
    finetune_set.labels.insert(finetune_set.labels.end(), extra.labels.begin(), extra.labels.end());
  }

  const auto arch = modelzoo::arch_by_name(c.arch);
  encoder::EncoderSpec spec;
  spec.in_height = arch.output.height;
  spec.in_width = arch.output.width;
  spec.in_channels = arch.output.channels;
  spec.num_classes = static_cast<int>(zoo.known.size());
  auto net = encoder::init_encoder(spec, derive_seed(c.seed, "encoder-init"));

  auto progress = [&](const char* phase, int total) {
    return [&ctx, phase, total](const encoder::EpochStats& s) {
      ctx.say(std::string(phase) + " epoch " + std::to_string(s.epoch) + "/" + std::to_string(total) + " loss " +
              fmt("%.4f", s.loss) + " acc " + fmt("%.4f", s.accuracy));
    };
  };
  const encoder::TrainConfig raw_cfg{c.learning_rate, c.batch_size, c.epochs, c.momentum,
                                     derive_seed(c.seed, "encoder-train")};
  const auto raw_history = encoder::train(net, train_set, raw_cfg, ctx.workers, progress("train", c.epochs));
  const auto raw_val = encoder::evaluate(net, val_set, ctx.workers);
  const double raw_attacked =
      attacked_val.size() > 0 ? encoder::evaluate(net, attacked_val, ctx.workers).accuracy : std::nan("");

  const json classes = zoo.known;
  store::save(net, dir / "encoder_raw.gpe", {{"classes", classes}, {"role", "raw"}});
  store::write_text_atomic(dir / "history_raw.csv", history_csv(raw_history));
  store::write_text_atomic(dir / "confusion_raw.csv", confusion_csv(raw_val, zoo.known));
  ctx.say("train-encoder: validation accuracy " + fmt("%.4f", raw_val.accuracy));

  auto tuned = net;
  const encoder::TrainConfig ft_cfg{c.finetune_learning_rate, c.batch_size, c.finetune_epochs, c.momentum,
                                    derive_seed(c.seed, "encoder-finetune")};
  const auto ft_history = encoder::train(tuned, finetune_set, ft_cfg, ctx.workers, progress("finetune", c.finetune_epochs));
  const auto ft_val = encoder::evaluate(tuned, val_set, ctx.workers);
  json per_attack = json::object();
  double ft_attacked = std::nan("");
  if (attacked_val.size() > 0) {
    encoder::ConfusionMatrix cm;
    cm.num_classes = spec.num_classes;
    cm.counts.assign(static_cast<std::size_t>(cm.num_classes) * cm.num_classes, 0);
    const auto pred = encoder::predict(tuned, attacked_val.images, ctx.workers);
    std::map<std::string, std::pair<int, int>> kinds;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const int truth = attacked_val.labels[i];
      ++cm.counts[static_cast<std::size_t>(truth) * cm.num_classes + pred[i]];
      const bool ok = pred[i] == truth;
      hits += ok ? 1 : 0;
      auto& k = kinds[*attacked_val_entries[i].attack_tag];
      k.first += ok ? 1 : 0;
      k.second += 1;
    }
    cm.accuracy = static_cast<double>(hits) / static_cast<double>(pred.size());
    ft_attacked = cm.accuracy;
    for (const auto& [tag, k] : kinds) per_attack[tag] = static_cast<double>(k.first) / k.second;
    store::write_text_atomic(dir / "confusion_attacked.csv", confusion_csv(cm, zoo.known));
  }
  store::save(tuned, dir / "encoder_finetuned.gpe", {{"classes", classes}, {"role", "finetuned"}});
  store::write_text_atomic(dir / "history_finetune.csv", history_csv(ft_history));

  json metrics = {{"classes", zoo.known.size()},
                  {"train_images", train_set.size()},
                  {"val_images", val_set.size()},
                  {"attacked_val_images", attacked_val.size()},
                  {"finetune_images", finetune_set.size()},
                  {"val_accuracy", raw_val.accuracy},
                  {"attacked_val_accuracy_before_finetune", nullable(raw_attacked)},
                  {"finetuned_val_accuracy", ft_val.accuracy},
                  {"attacked_val_accuracy", nullable(ft_attacked)},
                  {"attacked_val_accuracy_by_attack", per_attack},
                  {"final_train_loss", raw_history.empty() ? json(nullptr) : json(raw_history.back().loss)}};
  store::write_text_atomic(dir / "metrics.json", metrics.dump(2) + "\n");
  ctx.say("train-encoder: attacked validation accuracy after fine-tuning " + fmt("%.4f", ft_attacked));
  return metrics;
}

json stage_extract(const Ctx& ctx) {
  const fs::path dir = ctx.dir("extract");
  const ZooIndex zoo = read_zoo(ctx);
  const std::set<std::string> known(zoo.known.begin(), zoo.known.end());
  const std::set<std::string> unknown(zoo.unknown.begin(), zoo.unknown.end());
  const std::set<std::string> cross(zoo.cross.begin(), zoo.cross.end());
  const Manifest gen = store::load_manifest(ctx.dir("generate") / "manifest.json");
  const Manifest noise = store::load_manifest(ctx.dir("attack") / "test_noise.json");
  const auto net = store::load_encoder(ctx.dir("train-encoder") / "encoder_raw.gpe");

  const std::vector<std::pair<std::string, std::vector<ManifestEntry>>> sets{
      {"train", select(gen, known, "train", false)},  {"known", select(gen, known, "test", false)},
      {"unknown", select(gen, unknown, "test", false)}, {"cross", select(gen, cross, "test", false)},
      {"noise", select(noise, known, "test", true)}};
  json summary = json::object();
  for (const auto& [name, entries] : sets) {
    store::ActivationSet act;
    act.rows.resize(entries.size());
    parallel_for(entries.size(), ctx.workers, [&](std::size_t i) {
      act.rows[i] = fingerprint::extract_activation(net, read_png(ctx.out / entries[i].file));
    });
    for (const auto& e : entries) {
      act.model_ids.push_back(e.model_id);
      act.image_ids.push_back(e.file);
    }
    store::save_activations(act, dir / (name + ".gpa"));
    summary[name] = entries.size();
    ctx.say("extract: " + name + " " + std::to_string(entries.size()) + " activations");
  }
  summary["dim"] = net.stage_shape(0)[0] * net.stage_shape(0)[1] * net.stage_shape(0)[2];
  return summary;
}

json stage_fit_svd(const Ctx& ctx) {
  const auto& c = ctx.cfg;
  const fs::path dir = ctx.dir("fit-svd");
  const auto train = store::load_activations(ctx.dir("extract") / "train.gpa");
  const auto subset = fingerprint::stratified_subset(train.model_ids, c.svd_fit_fraction, derive_seed(c.seed, "svd-fit"));
  const std::size_t dim = train.rows.empty() ? 0 : train.rows.front().size();
  Eigen::MatrixXd samples(static_cast<Eigen::Index>(subset.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < subset.size(); ++r) {
    const auto& row = train.rows[subset[r]];
    for (std::size_t j = 0; j < dim; ++j) samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = row[j];
  }
  const auto basis = fingerprint::fit_svd(samples, {c.svd_variance_target, c.svd_fixed_d});
  samples.resize(0, 0);
  store::save(basis, dir / "basis.gps");
  const std::uint64_t checksum = basis.checksum();
  for (const auto& w : basis.warnings) ctx.say("fit-svd: warning: " + w);

  json summary = {{"d", basis.dim()},
                  {"input_dim", basis.input_dim()},
                  {"fitted_on", basis.fitted_on},
                  {"explained_variance", std::accumulate(basis.explained_variance_ratios.begin(),
                                                         basis.explained_variance_ratios.end(), 0.0)},
                  {"warnings", basis.warnings}};
  std::vector<bool> in_fit(train.rows.size(), false);
  for (std::size_t i : subset) in_fit[i] = true;
  for (const auto& name : fingerprint_sets()) {
    const auto act = name == "train" ? train : store::load_activations(ctx.dir("extract") / (name + ".gpa"));
    store::FingerprintSet set;
    set.basis_checksum = checksum;
    set.vectors.resize(act.rows.size());
    parallel_for(act.rows.size(), ctx.workers, [&](std::size_t i) {
      set.vectors[i] = fingerprint::project(basis, act.rows[i], act.image_ids[i], act.model_ids[i]);
    });
    store::save_fingerprints(set, dir / "fingerprints" / (name + ".gpf"));
    if (name == "train" && basis.dim() > 0) {
      double fit_var = 0.0, held_var = 0.0;
      std::size_t n_fit = 0, n_held = 0;
      for (std::size_t i = 0; i < set.vectors.size(); ++i) {
        const double v = set.vectors[i].values.squaredNorm();
        (in_fit[i] ? fit_var : held_var) += v;
        (in_fit[i] ? n_fit : n_held) += 1;
      }
      if (n_fit > 0 && n_held > 0) summary["heldout_variance_ratio"] = (held_var / n_held) / (fit_var / n_fit);
    }
  }
  ctx.say("fit-svd: d = " + std::to_string(basis.dim()) + " explaining " +
          fmt("%.4f", summary["explained_variance"].get<double>()) + " of the variance");
  return summary;
}

std::uint64_t basis_checksum(const Ctx& ctx) { return store::load_svd(ctx.dir("fit-svd") / "basis.gps").checksum(); }

std::vector<fingerprint::FingerprintVector> fingerprints(const Ctx& ctx, const std::string& name, std::uint64_t basis) {
  return store::load_fingerprints(ctx.dir("fit-svd") / "fingerprints" / (name + ".gpf"), basis).vectors;
}

json stage_train_metric(const Ctx& ctx) {
  const auto& c = ctx.cfg;
  const fs::path dir = ctx.dir("train-metric");
  const auto train = fingerprints(ctx, "train", basis_checksum(ctx));
  const auto pairs = metric::build_pairs(train, static_cast<std::size_t>(c.metric_pairs), derive_seed(c.seed, "pairs"));
  auto m = metric::learn(pairs, {c.metric_margin, c.metric_step, c.metric_iters, c.metric_diag_only});
  const auto cal = metric::calibrate(m, train, derive_seed(c.seed, "calibrate"));
  m.tau = cal.tau;
  if (cal.warning) m.warnings.push_back(*cal.warning);
  store::save(m, dir / "metric.gpm");
  std::string csv = "iteration,objective\n";
  for (std::size_t i = 0; i < m.objective_history.size(); ++i) csv += std::to_string(i) + fmt(",%.10g\n", m.objective_history[i]);
  store::write_text_atomic(dir / "objective.csv", csv);
  for (const auto& w : m.warnings) ctx.say("train-metric: warning: " + w);
  ctx.say("train-metric: objective " + fmt("%.4g", m.objective_history.front()) + " -> " +
          fmt("%.4g", m.objective_history.back()) + ", tau " + fmt("%.4g", m.tau));
  return {{"pairs", pairs.size()},
          {"dim", m.dim()},
          {"tau", m.tau},
          {"margin", m.margin},
          {"min_eigenvalue", m.min_eigenvalue()},
          {"objective_initial", m.objective_history.front()},
          {"objective_final", m.objective_history.back()},
          {"iterations", m.objective_history.size() - 1},
          {"warnings", m.warnings}};
}

json stage_evaluate(const Ctx& ctx) {
  const auto& c = ctx.cfg;
  const fs::path dir = ctx.dir("evaluate");
  const std::uint64_t basis = basis_checksum(ctx);
  const auto m = store::load_metric(ctx.dir("train-metric") / "metric.gpm");
  const auto known = fingerprints(ctx, "known", basis);
  const auto unknown = fingerprints(ctx, "unknown", basis);
  const auto cross = fingerprints(ctx, "cross", basis);
  const auto noise = fingerprints(ctx, "noise", basis);
  auto combined = known;
  combined.insert(combined.end(), unknown.begin(), unknown.end());

  std::vector<evaluation::EvalReport> reports;
  auto add = [&](std::vector<evaluation::EvalReport> r) {
    for (const auto& x : r) {
      ctx.say("evaluate: " + x.setting + " " + std::to_string(x.k) + "-NN mean accuracy " + fmt("%.4f", x.mean_accuracy));
    }
    reports.insert(reports.end(), r.begin(), r.end());
  };
  const auto kf = c.folds;
  const auto rf = c.reference_fraction;
  add(evaluation::cross_validate(known, m, c.k_list, "known", derive_seed(c.seed, "eval", 0), kf, rf, ctx.workers));
  add(evaluation::cross_validate(unknown, m, c.k_list, "unknown", derive_seed(c.seed, "eval", 1), kf, rf, ctx.workers));
  add(evaluation::cross_validate(combined, m, c.k_list, "known+unknown", derive_seed(c.seed, "eval", 2), kf, rf, ctx.workers));
  add(evaluation::cross_validate(noise, m, c.k_list, "noise-augmented", derive_seed(c.seed, "eval", 3), kf, rf, ctx.workers));
  add(evaluation::cross_architecture_test(unknown, cross, m, c.k_list, derive_seed(c.seed, "eval", 4), kf, rf, ctx.workers));

  // Mean similarity L over all same-model and cross-model pairs of the known test set.
  std::vector<double> same(known.size(), 0.0), diff(known.size(), 0.0);
  std::vector<std::size_t> n_same(known.size(), 0), n_diff(known.size(), 0);
  parallel_for(known.size(), ctx.workers, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < known.size(); ++j) {
      const double l = metric::similarity(m, known[i].values, known[j].values);
      if (*known[i].model_id == *known[j].model_id) {
        same[i] += l;
        ++n_same[i];
      } else {
        diff[i] += l;
        ++n_diff[i];
      }
    }
  });
  const double same_mean = std::accumulate(same.begin(), same.end(), 0.0) /
                           static_cast<double>(std::accumulate(n_same.begin(), n_same.end(), std::size_t{0}));
  const double diff_mean = std::accumulate(diff.begin(), diff.end(), 0.0) /
                           static_cast<double>(std::accumulate(n_diff.begin(), n_diff.end(), std::size_t{0}));

  json rj = json::array();
  for (const auto& r : reports) rj.push_back(evaluation::to_json(r));
  json doc = {{"reports", rj},
              {"similarity", {{"same_model_mean", nullable(same_mean)}, {"cross_model_mean", nullable(diff_mean)}}},
              {"cross_arch_sets", {{"arch_a", "unknown"}, {"arch_b", "cross"}}}};
  store::write_text_atomic(dir / "reports.json", doc.dump(2) + "\n");
  ctx.say("evaluate: mean L same-model " + fmt("%.4f", same_mean) + ", cross-model " + fmt("%.4f", diff_mean));
  json summary = json::object();
  for (const auto& r : reports) summary[r.setting + "@" + std::to_string(r.k)] = r.mean_accuracy;
  return summary;
}

json read_stage_record(const Ctx& ctx, const std::string& stage) {
  return json::parse(store::read_text(ctx.dir(stage) / "stage.json"));
}

json stage_report(const Ctx& ctx) {
  const auto& c = ctx.cfg;
  const fs::path dir = ctx.dir("report");
  const json eval = json::parse(store::read_text(ctx.dir("evaluate") / "reports.json"));
  std::vector<evaluation::EvalReport> reports;
  for (const auto& r : eval.at("reports")) reports.push_back(evaluation::report_from_json(r));

  json cfg_json = to_json(c);
  cfg_json.erase("output_dir");
  cfg_json.erase("workers");
  json digests = json::object(), outputs = json::object();
  for (const auto& s : stage_names()) {
    digests[s] = config_digest(c, s);
    if (s != "report") outputs[s] = read_stage_record(ctx, s).value("output_digest", std::string());
  }
  json record = {
      {"seed", c.seed},
      {"seeds",
       {{"encoder_init", derive_seed(c.seed, "encoder-init")},
        {"encoder_train", derive_seed(c.seed, "encoder-train")},
        {"encoder_finetune", derive_seed(c.seed, "encoder-finetune")},
        {"augment", derive_seed(c.seed, "augment")},
        {"svd_fit", derive_seed(c.seed, "svd-fit")},
        {"pairs", derive_seed(c.seed, "pairs")},
        {"calibrate", derive_seed(c.seed, "calibrate")}}},
      {"config", cfg_json},
      {"config_digests", digests},
      {"stage_output_digests", outputs},
      {"artifact_checksums",
       {{"encoder_raw", hex64(store::file_checksum(ctx.dir("train-encoder") / "encoder_raw.gpe"))},
        {"basis", hex64(store::file_checksum(ctx.dir("fit-svd") / "basis.gps"))},
        {"metric", hex64(store::file_checksum(ctx.dir("train-metric") / "metric.gpm"))}}},
      {"protocol",
       {{"folds", "each fold is an independent seeded reference/query re-split per model"},
        {"noise_augmented", "raw-trained encoder, basis and metric applied to one seeded random attack per known test image"},
        {"cross_arch", "unknown primary-architecture variants vs cross-architecture variants"}}}};
  evaluation::emit_report(reports, dir / "table", record);

  const json enc = json::parse(store::read_text(ctx.dir("train-encoder") / "metrics.json"));
  const json gen = read_stage_record(ctx, "generate").at("summary");
  const json svd = read_stage_record(ctx, "fit-svd").at("summary");
  const json met = read_stage_record(ctx, "train-metric").at("summary");
  json summary = {{"val_accuracy", enc.at("val_accuracy")},
                  {"attacked_val_accuracy", enc.at("attacked_val_accuracy")},
                  {"attacked_val_accuracy_before_finetune", enc.at("attacked_val_accuracy_before_finetune")},
                  {"finetuned_val_accuracy", enc.at("finetuned_val_accuracy")},
                  {"ssim_mean", gen.at("ssim_mean")},
                  {"ssim_pairs", gen.at("ssim_pairs")},
                  {"svd_d", svd.at("d")},
                  {"svd_explained_variance", svd.at("explained_variance")},
                  {"metric_min_eigenvalue", met.at("min_eigenvalue")},
                  {"metric_tau", met.at("tau")},
                  {"similarity", eval.at("similarity")},
                  {"accuracy", json::object()}};
  for (const auto& r : reports) summary["accuracy"][r.setting][std::to_string(r.k)] = r.mean_accuracy;
  store::write_text_atomic(dir / "summary.json", summary.dump(2) + "\n");
  ctx.say("report: wrote " + (dir / "table.csv").string());
  return summary;
}

json run_body(const std::string& stage, const Ctx& ctx) {
  if (stage == "zoo") return stage_zoo(ctx);
  if (stage == "generate") return stage_generate(ctx);
  if (stage == "attack") return stage_attack(ctx);
  if (stage == "train-encoder") return stage_train_encoder(ctx);
  if (stage == "extract") return stage_extract(ctx);
  if (stage == "fit-svd") return stage_fit_svd(ctx);
  if (stage == "train-metric") return stage_train_metric(ctx);
  if (stage == "evaluate") return stage_evaluate(ctx);
  return stage_report(ctx);
}

void append_run_record(const Ctx& ctx, const std::string& stage, const RunOptions& opts, const std::string& status,
                       const std::string& digest, double seconds) {
  std::string command = "ganprint " + stage + " --config " + (opts.config_path.empty() ? "<in-memory>" : opts.config_path) +
                        " --seed " + std::to_string(ctx.cfg.seed) + " --workers " + std::to_string(ctx.workers);
  if (opts.force) command += " --force";
  const json line = {{"stage", stage},
                     {"status", status},
                     {"command", command},
                     {"seed", ctx.cfg.seed},
                     {"workers", ctx.workers},
                     {"config_digest", config_digest(ctx.cfg, stage)},
                     {"output_digest", digest},
                     {"elapsed_seconds", std::round(seconds * 1000.0) / 1000.0}};
  fs::create_directories(ctx.out);
  std::ofstream out(ctx.out / "run_record.jsonl", std::ios::app);
  if (!out) throw IoError("cannot append to '" + (ctx.out / "run_record.jsonl").string() + "'");
  out << line.dump() << "\n";
}

}  // namespace

StageResult run_stage(const std::string& stage, RunConfig cfg, const RunOptions& opts) {
  const auto& deps = stage_dependencies(stage);
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.workers) cfg.workers = *opts.workers;
  cfg.validate();
  Ctx ctx{cfg, cfg.output_dir, cfg.workers, opts.log};
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };

  std::map<std::string, Status> memo;
  StageResult result;
  result.stage = stage;
  result.dir = ctx.dir(stage);
  if (!opts.force) {
    const Status st = inspect(ctx, stage, memo);
    if (st.state == State::current) {
      result.up_to_date = true;
      result.output_digest = st.digest;
      result.summary = read_stage_record(ctx, stage).value("summary", json::object());
      ctx.say(stage + ": up to date");
      append_run_record(ctx, stage, opts, "up-to-date", st.digest, elapsed());
      return result;
    }
  }
  const auto needed = transitive_deps(stage);
  for (const auto& s : stage_names()) {
    if (!needed.count(s)) continue;
    const Status ds = inspect(ctx, s, memo);
    if (ds.state != State::current) {
      throw DependencyError("stage '" + stage + "' needs '" + s + "', which " + ds.detail + "; run `ganprint " + s +
                            "` first");
    }
  }

  json inputs = json::object();
  for (const auto& d : deps) inputs[d] = memo.at(d).digest;
  std::error_code ec;
  fs::remove_all(result.dir, ec);
  fs::create_directories(result.dir, ec);
  if (ec) throw IoError("cannot create '" + result.dir.string() + "': " + ec.message());

  ctx.say(stage + ": running");
  result.summary = run_body(stage, ctx);
  const auto outputs = scan_outputs(result.dir);
  result.output_digest = digest_of(outputs);
  const json record = {{"stage", stage},
                       {"format", kStageFormat},
                       {"config_digest", config_digest(cfg, stage)},
                       {"inputs", inputs},
                       {"outputs", outputs},
                       {"output_digest", result.output_digest},
                       {"summary", result.summary}};
  store::write_text_atomic(result.dir / "stage.json", record.dump(2) + "\n");
  append_run_record(ctx, stage, opts, "completed", result.output_digest, elapsed());
  return result;
}

StageResult run_stage(const std::string& stage, const fs::path& config_path, RunOptions opts) {
  const RunConfig cfg = load_config(config_path);
  if (opts.config_path.empty()) opts.config_path = config_path.string();
  return run_stage(stage, cfg, opts);
}

std::vector<StageResult> run_all(const RunConfig& cfg, const RunOptions& opts) {
  std::vector<StageResult> out;
  for (const auto& s : stage_names()) out.push_back(run_stage(s, cfg, opts));
  return out;
}

}  // namespace ganprint::pipeline
