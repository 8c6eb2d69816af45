// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include "ganprint/encoder.hpp"
#include "ganprint/evaluation.hpp"
#include "ganprint/imaging.hpp"
#include "ganprint/metric.hpp"
#include "ganprint/modelzoo.hpp"
#include "ganprint/pipeline.hpp"
#include "ganprint/store.hpp"

#include "oracles.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include <unistd.h>

using namespace ganprint;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Tolerances and thresholds.
constexpr double kMinValAccuracy = 0.80;
constexpr double kMaxRuntimeSeconds = 15 * 60;
constexpr double kMinAttackedAccuracy = 0.50;
constexpr double kMinAttackedRatio = 0.6;
constexpr double kMinUnknownAccuracy = 0.60;
constexpr int kUnknownK = 5;
constexpr int kRequiredFolds = 5;
constexpr int kRequiredUnknownModels = 5;
constexpr double kMinCrossArchAccuracy = 0.95;
constexpr double kMinSsimMean = 0.80;
constexpr int kMinSsimPairs = 30;
constexpr double kSsimRecomputeTol = 1e-6;
constexpr double kGradCheckTol = 1e-4;
constexpr double kSvdOracleTol = 1e-6;
constexpr std::size_t kMaxKnnReferences = 200;
constexpr double kQuadFormTol = 1e-9;
constexpr double kPsdTol = -1e-8;
constexpr double kSsimSelfTol = 1e-12;
constexpr double kSoftmaxTol = 1e-9;

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::printf("%s  [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

json read_json(const fs::path& p) { return json::parse(store::read_text(p)); }

double report_accuracy(const json& reports, const std::string& setting, int k, std::size_t* folds = nullptr) {
  for (const auto& r : reports.at("reports")) {
    if (r.at("setting") == setting && r.at("k") == k) {
      if (folds != nullptr) *folds = r.at("fold_accuracies").size();
      return r.at("mean_accuracy").get<double>();
    }
  }
  throw KeyError("no report for " + setting + " k=" + std::to_string(k));
}

std::vector<fingerprint::FingerprintVector> load_set(const fs::path& run, const std::string& name) {
  const auto basis = store::load_svd(run / "fit-svd" / "basis.gps");
  return store::load_fingerprints(run / "fit-svd" / "fingerprints" / (name + ".gpf"), basis.checksum()).vectors;
}

// Byte-level comparison of two run trees (the append-only run record is excluded).
std::vector<std::string> tree_differences(const fs::path& a, const fs::path& b, std::size_t& compared) {
  std::map<std::string, fs::path> fa, fb;
  auto collect = [](const fs::path& root, std::map<std::string, fs::path>& out) {
    for (const auto& e : fs::recursive_directory_iterator(root)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), root).generic_string();
      if (rel != "run_record.jsonl") out[rel] = e.path();
    }
  };
  collect(a, fa);
  collect(b, fb);
  std::vector<std::string> diff;
  for (const auto& [rel, pa] : fa) {
    const auto it = fb.find(rel);
    if (it == fb.end()) {
      diff.push_back(rel + " (missing in second run)");
      continue;
    }
    ++compared;
    if (store::read_text(pa) != store::read_text(it->second)) diff.push_back(rel);
  }
  for (const auto& [rel, pb] : fb)
    if (!fa.count(rel)) diff.push_back(rel + " (missing in first run)");
  return diff;
}

template <class F>
Outcome guarded(F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ganprint acceptance suite"};
  std::string config = std::string(GANPRINT_SOURCE_DIR) + "/configs/default.json";
  std::string smoke_config = std::string(GANPRINT_SOURCE_DIR) + "/configs/smoke.json";
  std::string work = (fs::temp_directory_path() / ("ganprint-acceptance-" + std::to_string(::getpid()))).string();
  bool keep = false;
  app.add_option("--config", config, "Full-size run configuration")->check(CLI::ExistingFile);
  app.add_option("--smoke-config", smoke_config, "Small configuration for the reproducibility check")->check(CLI::ExistingFile);
  app.add_option("--work-dir", work, "Scratch directory for the runs");
  app.add_flag("--keep", keep, "Keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  const fs::path root(work);
  fs::remove_all(root);
  fs::create_directories(root);

  // Full default-config run.
  auto cfg = pipeline::load_config(config);
  cfg.output_dir = root / "default";
  const fs::path run = cfg.output_dir;
  std::printf("running %s into %s (%u hardware threads, %d workers)\n", config.c_str(), run.c_str(),
              std::thread::hardware_concurrency(), cfg.workers);
  std::fflush(stdout);
  double seconds = 0.0;
  std::string run_error;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    pipeline::run_all(cfg);
    seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  json summary, reports;
  if (run_error.empty()) {
    summary = read_json(run / "report" / "summary.json");
    reports = read_json(run / "evaluate" / "reports.json");
  }
  auto need_run = [&]() -> Outcome { return {false, "default run failed: " + run_error}; };

  report(1, "end-to-end toy run", guarded([&]() -> Outcome {
           if (!run_error.empty()) return need_run();
           const double val = summary.at("val_accuracy");
           const int classes = read_json(run / "train-encoder" / "metrics.json").at("classes");
           const bool ok = val >= kMinValAccuracy && seconds <= kMaxRuntimeSeconds && classes == 10;
           return {ok, "val accuracy " + fmt("%.4f", val) + " (>= 0.80, chance " + fmt("%.2f", 1.0 / classes) +
                           "), runtime " + fmt("%.0f", seconds) + " s (<= 900 s) on " +
                           std::to_string(std::thread::hardware_concurrency()) + " hardware thread(s)"};
         }));

  report(2, "attack robustness after fine-tuning", guarded([&]() -> Outcome {
           if (!run_error.empty()) return need_run();
           const double raw = summary.at("val_accuracy");
           const double att = summary.at("attacked_val_accuracy");
           const bool ok = att >= kMinAttackedAccuracy && att >= kMinAttackedRatio * raw;
           return {ok, "attacked accuracy " + fmt("%.4f", att) + " (>= 0.50 and >= 0.6 x " + fmt("%.4f", raw) + " = " +
                           fmt("%.4f", kMinAttackedRatio * raw) + ")"};
         }));

  report(3, "unknown-model generalisation", guarded([&]() -> Outcome {
           if (!run_error.empty()) return need_run();
           std::size_t folds = 0;
           const double unknown = report_accuracy(reports, "unknown", kUnknownK, &folds);
           const double known = report_accuracy(reports, "known", kUnknownK);
           const auto zoo = read_json(run / "zoo" / "zoo.json");
           const auto n_unknown = zoo.at("unknown").size();
           const bool ok = unknown >= kMinUnknownAccuracy && known >= unknown &&
                           folds == static_cast<std::size_t>(kRequiredFolds) &&
                           n_unknown == static_cast<std::size_t>(kRequiredUnknownModels);
           return {ok, "5-NN unknown " + fmt("%.4f", unknown) + " (>= 0.60, chance 0.20) over " + std::to_string(folds) +
                           " folds on " + std::to_string(n_unknown) + " unknown models; known " + fmt("%.4f", known) +
                           " >= unknown"};
         }));

  report(4, "cross-architecture k-NN", guarded([&]() -> Outcome {
           if (!run_error.empty()) return need_run();
           bool ok = true;
           std::string d;
           for (int k : {1, 3, 5}) {
             const double a = report_accuracy(reports, "cross-arch", k);
             ok = ok && a >= kMinCrossArchAccuracy;
             d += (d.empty() ? "" : ", ") + std::string("k=") + std::to_string(k) + " " + fmt("%.4f", a);
           }
           return {ok, d + " (each >= 0.95)"};
         }));

  report(5, "near-identical images across variants", guarded([&]() -> Outcome {
           if (!run_error.empty()) return need_run();
           const auto zoo = read_json(run / "zoo" / "zoo.json");
           std::map<std::string, fs::path> files;
           for (const auto& e : zoo.at("known")) files[e.at("id")] = run / "zoo" / e.at("file").get<std::string>();
           std::ifstream in(run / "generate" / "ssim_pairs.csv");
           std::string line;
           std::getline(in, line);
           int pairs = 0;
           double sum = 0.0, worst_dev = 0.0;
           bool distinct = true;
           while (std::getline(in, line)) {
             std::stringstream ss(line);
             std::string idx, a, b, seed, score;
             std::getline(ss, idx, ',');
             std::getline(ss, a, ',');
             std::getline(ss, b, ',');
             std::getline(ss, seed, ',');
             std::getline(ss, score, ',');
             distinct = distinct && a != b;
             const auto s = std::stoull(seed);
             // Recompute the pair from the stored variants.
             const auto ia = modelzoo::generate(store::load_variant(files.at(a)), s).pixels;
             const auto ib = modelzoo::generate(store::load_variant(files.at(b)), s).pixels;
             const double v = imaging::ssim(imaging::to_grayscale(ia), imaging::to_grayscale(ib)).mean;
             worst_dev = std::max(worst_dev, std::abs(v - std::stod(score)));
             sum += v;
             ++pairs;
           }
           const double mean = pairs > 0 ? sum / pairs : 0.0;
           const double eps = zoo.at("eps");
           const bool ok = pairs >= kMinSsimPairs && mean >= kMinSsimMean && distinct && worst_dev <= kSsimRecomputeTol;
           return {ok, "mean SSIM " + fmt("%.4f", mean) + " over " + std::to_string(pairs) +
                           " seed-paired cross-variant pairs (>= 30, >= 0.80) at eps " + fmt("%.2f", eps) +
                           "; recomputation deviation " + fmt("%.1e", worst_dev)};
         }));

  report(6, "oracle suites", guarded([&]() -> Outcome {
           std::vector<std::string> bad;
           std::string d;

           // Backprop vs central differences on a small network (< 5k parameters).
           encoder::EncoderSpec small;
           small.in_height = small.in_width = 8;
           small.stem_channels = 4;
           small.stage_channels = {4, 6, 6, 8};
           small.num_classes = 3;
           const auto net = encoder::init_encoder(small, 13);
           double grad_err = 0.0;
           for (std::uint64_t s = 1; s <= 4; ++s) {
             Image img(8, 8, 3);
             RngStream rng(s);
             for (auto& v : img.data) v = static_cast<float>(rng.uniform());
             encoder::GradientCheckOptions o;
             o.num_params = 500;
             o.seed = s;
             grad_err = std::max(grad_err, encoder::gradient_check(net, img, static_cast<int>(s % 3), o));
           }
           if (!(grad_err <= kGradCheckTol) || net.params().size() > 5000) bad.push_back("gradient check");
           d += "grad rel. err " + fmt("%.1e", grad_err) + " (" + std::to_string(net.params().size()) + " params)";

           // SVD vs Jacobi eigensolver on <= 8-dim fixtures.
           double svd_dev = 0.0;
           for (int dim = 2; dim <= 8; ++dim) {
             RngStream rng(static_cast<std::uint64_t>(100 + dim));
             Eigen::MatrixXd x(30, dim);
             for (int j = 0; j < dim; ++j)
               for (int i = 0; i < 30; ++i) x(i, j) = (3.0 / (1 + j)) * rng.normal() + j;
             svd_dev = std::max(svd_dev, oracle::svd_deviation(x, fingerprint::fit_svd(x, fingerprint::SvdPolicy::fixed(dim))));
           }
           if (!(svd_dev <= kSvdOracleTol)) bad.push_back("svd");
           d += "; svd dev " + fmt("%.1e", svd_dev);

           // JPEG vs the DCT double-sum oracle.
           int jpeg_blocks = 0, jpeg_mismatch = 0;
           for (int q : {50, 60, 70, 80, 90}) {
             for (std::uint64_t s = 0; s < 40; ++s) {
               RngStream rng(s);
               std::array<int, 64> px{};
               Image img(8, 8, 1);
               for (int i = 0; i < 64; ++i) {
                 px[i] = static_cast<int>(rng.below(256));
                 img.data[i] = static_cast<float>(px[i] / 255.0);
               }
               const auto expect = oracle::jpeg_block_oracle(px, q);
               const auto out = imaging::jpeg_compress(img, q);
               for (int i = 0; i < 64; ++i) jpeg_mismatch += out.data[i] != static_cast<float>(expect[i] / 255.0);
               ++jpeg_blocks;
             }
           }
           if (jpeg_mismatch != 0) bad.push_back("jpeg");
           d += "; jpeg " + std::to_string(jpeg_mismatch) + " mismatched pixels in " + std::to_string(jpeg_blocks) + " blocks";

           if (!run_error.empty()) return Outcome{false, "default run failed: " + run_error};
           const auto lm = store::load_metric(run / "train-metric" / "metric.gpm");
           const auto known = load_set(run, "known");
           const auto unknown = load_set(run, "unknown");

           // d_M vs the dense quadratic form on trained fingerprints.
           double quad_dev = 0.0;
           RngStream rng(77);
           for (int t = 0; t < 500; ++t) {
             const auto& x = known[rng.below(known.size())].values;
             const auto& y = unknown[rng.below(unknown.size())].values;
             const double q = oracle::quadratic_form(lm.m, x, y);
             quad_dev = std::max(quad_dev, std::abs(metric::squared_distance(lm, x, y) - q) / std::max(1.0, std::abs(q)));
           }
           if (!(quad_dev <= kQuadFormTol)) bad.push_back("d_M");
           d += "; d_M rel. dev " + fmt("%.1e", quad_dev);

           // k-NN vs brute force with at most 200 references.
           std::vector<fingerprint::FingerprintVector> ref, qry;
           const auto split = evaluation::split_reference_query(
               [&] {
                 std::vector<std::string> l;
                 for (const auto& f : unknown) l.push_back(*f.model_id);
                 return l;
               }(),
               0.2, 5);
           for (auto i : split.reference)
             if (ref.size() < kMaxKnnReferences) ref.push_back(unknown[i]);
           for (auto i : split.query) qry.push_back(unknown[i]);
           std::size_t agree = 0, total = 0;
           auto dist = [&](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
             return std::sqrt(std::max(0.0, oracle::quadratic_form(lm.m, a, b)));
           };
           for (int k : {1, 3, 5}) {
             const auto r = evaluation::knn_classify(ref, qry, lm, k);
             for (std::size_t i = 0; i < qry.size(); ++i) {
               agree += r.predictions[i] == oracle::knn_vote(ref, qry[i], k, dist);
               ++total;
             }
           }
           if (agree != total) bad.push_back("knn");
           d += "; k-NN " + std::to_string(agree) + "/" + std::to_string(total) + " agree (" + std::to_string(ref.size()) +
                " refs)";
           return {bad.empty(), d};
         }));

  report(7, "invariant suites", guarded([&]() -> Outcome {
           std::vector<std::string> bad;
           std::string d;

           // Two smoke runs with different worker counts must be byte-identical.
           auto smoke = pipeline::load_config(smoke_config);
           std::vector<fs::path> smoke_runs;
           for (int w : {1, 2}) {
             smoke.output_dir = root / ("smoke-w" + std::to_string(w));
             smoke.workers = w;
             pipeline::run_all(smoke);
             smoke_runs.push_back(smoke.output_dir);
           }
           std::size_t compared = 0;
           const auto diffs = tree_differences(smoke_runs[0], smoke_runs[1], compared);
           if (!diffs.empty() || compared == 0) bad.push_back("reproducibility (" + (diffs.empty() ? "" : diffs[0]) + ")");
           d += "reproducible: " + std::to_string(compared - std::min(compared, diffs.size())) + "/" + std::to_string(compared) +
                " files identical";

           // PSD and nonincreasing objective for every trained metric.
           std::vector<fs::path> runs = smoke_runs;
           if (run_error.empty()) runs.push_back(run);
           double min_eig = 1e300;
           bool monotone = true;
           for (const auto& r : runs) {
             const auto m = store::load_metric(r / "train-metric" / "metric.gpm");
             min_eig = std::min(min_eig, m.min_eigenvalue());
             for (std::size_t i = 1; i < m.objective_history.size(); ++i)
               monotone = monotone && m.objective_history[i] <= m.objective_history[i - 1];
           }
           if (!(min_eig >= kPsdTol)) bad.push_back("psd");
           if (!monotone) bad.push_back("objective");
           d += "; min eig " + fmt("%.1e", min_eig) + " over " + std::to_string(runs.size()) + " metrics; objective " +
                (monotone ? "nonincreasing" : "INCREASED");

           // Similarity: L(x,x) = 1 and strictly decreasing in d_M on sampled triples.
           const fs::path src = run_error.empty() ? run : smoke_runs[0];
           const auto lm = store::load_metric(src / "train-metric" / "metric.gpm");
           const auto fps = load_set(src, "known");
           RngStream rng(91);
           int triples = 0, violations = 0;
           for (int t = 0; t < 2000; ++t) {
             const auto& x = fps[rng.below(fps.size())].values;
             const auto& y = fps[rng.below(fps.size())].values;
             const auto& z = fps[rng.below(fps.size())].values;
             if (metric::similarity(lm, x, x) != 1.0) ++violations;
             const double dy = metric::distance(lm, x, y), dz = metric::distance(lm, x, z);
             if (dy == dz) continue;
             ++triples;
             const double ly = metric::similarity(lm, x, y), lz = metric::similarity(lm, x, z);
             if ((dy < dz) != (ly > lz)) ++violations;
           }
           if (violations != 0) bad.push_back("similarity");
           d += "; L checks " + std::to_string(violations) + " violations in " + std::to_string(triples) + " triples";

           // SSIM self-similarity, mirror involution and softmax normalisation on generated images.
           const auto v = store::load_variant(src / "zoo" / read_json(src / "zoo" / "zoo.json").at("known")[0].at("file").get<std::string>());
           const auto enc = store::load_encoder(src / "train-encoder" / "encoder_raw.gpe");
           double ssim_dev = 0.0, softmax_dev = 0.0;
           bool involution = true;
           for (std::uint64_t s = 0; s < 10; ++s) {
             const auto img = modelzoo::generate(v, derive_seed(5, "acceptance", s)).pixels;
             const auto g = imaging::to_grayscale(img);
             ssim_dev = std::max(ssim_dev, std::abs(imaging::ssim(g, g).mean - 1.0));
             for (auto axis : {imaging::MirrorAxis::horizontal, imaging::MirrorAxis::vertical, imaging::MirrorAxis::both})
               involution = involution && imaging::mirror(imaging::mirror(img, axis), axis) == img;
             const auto logits = encoder::forward(enc, img).logits;
             const auto p = encoder::softmax(logits);
             softmax_dev = std::max(softmax_dev, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
           }
           for (const std::vector<double> extreme : {std::vector<double>{1e3, -1e3, 0}, std::vector<double>{-800, -801}}) {
             const auto p = encoder::softmax(extreme);
             softmax_dev = std::max(softmax_dev, std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0));
           }
           if (!(ssim_dev <= kSsimSelfTol)) bad.push_back("ssim self");
           if (!involution) bad.push_back("mirror");
           if (!(softmax_dev <= kSoftmaxTol)) bad.push_back("softmax");
           d += "; SSIM self dev " + fmt("%.1e", ssim_dev) + "; mirror involution " + (involution ? "bitwise" : "BROKEN") +
                "; softmax dev " + fmt("%.1e", softmax_dev);
           std::string failed;
           for (const auto& b : bad) failed += " " + b;
           return {bad.empty(), d + (bad.empty() ? "" : "; failed:" + failed)};
         }));

  if (!keep) fs::remove_all(root);
  std::printf("%s: %d criterion(s) failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
  return failures == 0 ? 0 : 1;
}
