#pragma once

#include "ganprint/fingerprint.hpp"
#include "ganprint/metric.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ganprint::evaluation {

inline constexpr int kDefaultFolds = 5;

struct EvalReport {
  std::string setting;  // known | unknown | known+unknown | noise-augmented | cross-arch
  int k = 1;
  std::vector<double> fold_accuracies;
  double mean_accuracy = 0.0;
};

struct Split {
  std::vector<std::size_t> reference;
  std::vector<std::size_t> query;
};

// Per model, round(fraction * n) samples (at least one) go to the reference set.
Split split_reference_query(const std::vector<std::string>& labels, double fraction, std::uint64_t seed,
                            std::size_t min_per_model = 5);

struct KnnResult {
  double accuracy = 0.0;
  std::vector<std::string> predictions;
};

// Majority vote of the k nearest references under d_M; ties go to the
// smallest summed distance, then to the lexicographically lowest model id.
KnnResult knn_classify(const std::vector<fingerprint::FingerprintVector>& reference,
                       const std::vector<fingerprint::FingerprintVector>& query, const metric::LearnedMetric& metric,
                       int k, int workers = 1);

// One report per k; each fold is an independent seeded reference/query re-split.
std::vector<EvalReport> cross_validate(const std::vector<fingerprint::FingerprintVector>& fingerprints,
                                       const metric::LearnedMetric& metric, const std::vector<int>& k_list,
                                       std::string setting, std::uint64_t seed, int folds = kDefaultFolds,
                                       double reference_fraction = 0.2, int workers = 1);

// Binary k-NN with the architecture as label.
std::vector<EvalReport> cross_architecture_test(const std::vector<fingerprint::FingerprintVector>& arch_a,
                                                const std::vector<fingerprint::FingerprintVector>& arch_b,
                                                const metric::LearnedMetric& metric, const std::vector<int>& k_list,
                                                std::uint64_t seed, int folds = kDefaultFolds,
                                                double reference_fraction = 0.2, int workers = 1);

std::string report_csv(const std::vector<EvalReport>& reports);
// Writes <stem>.csv and <stem>.json (reports plus the caller's run record).
void emit_report(const std::vector<EvalReport>& reports, const std::filesystem::path& stem,
                 const nlohmann::json& run_record);

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

}  // namespace ganprint::evaluation
