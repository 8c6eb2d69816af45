#include "ganprint/evaluation.hpp"

#include "ganprint/store.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace ganprint::evaluation {

namespace {

const std::string& label_of(const fingerprint::FingerprintVector& fp) {
  if (!fp.model_id) throw UsageError("fingerprint '" + fp.source_image_id + "' has no model id");
  return *fp.model_id;
}

std::vector<std::string> labels_of(const std::vector<fingerprint::FingerprintVector>& fps) {
  std::vector<std::string> out;
  out.reserve(fps.size());
  for (const auto& f : fps) out.push_back(label_of(f));
  return out;
}

struct Neighbour {
  double dist;
  std::size_t index;
};

std::string vote(std::vector<Neighbour>& row, const std::vector<std::string>& ref_labels, int k) {
  std::partial_sort(row.begin(), row.begin() + k, row.end(), [](const Neighbour& a, const Neighbour& b) {
    return a.dist != b.dist ? a.dist < b.dist : a.index < b.index;
  });
  std::map<std::string, std::pair<int, double>> tally;
  for (int i = 0; i < k; ++i) {
    auto& t = tally[ref_labels[row[static_cast<std::size_t>(i)].index]];
    ++t.first;
    t.second += row[static_cast<std::size_t>(i)].dist;
  }
  // std::map iterates ids in ascending order, so strict comparisons keep the lowest id on full ties.
  const std::string* best = nullptr;
  std::pair<int, double> best_t{0, 0.0};
  for (const auto& [id, t] : tally) {
    if (best == nullptr || t.first > best_t.first || (t.first == best_t.first && t.second < best_t.second)) {
      best = &id;
      best_t = t;
    }
  }
  return *best;
}

// Distances from every query to every reference, row-major.
std::vector<std::vector<Neighbour>> distance_rows(const std::vector<const Eigen::VectorXd*>& ref,
                                                  const std::vector<const Eigen::VectorXd*>& query,
                                                  const metric::LearnedMetric& m, int workers) {
  std::vector<std::vector<Neighbour>> rows(query.size());
  parallel_for(query.size(), workers, [&](std::size_t q) {
    auto& row = rows[q];
    row.resize(ref.size());
    for (std::size_t r = 0; r < ref.size(); ++r) row[r] = {metric::distance(m, *query[q], *ref[r]), r};
  });
  return rows;
}

void check_knn_inputs(std::size_t n_ref, std::size_t n_query, const std::vector<std::string>& ref_labels, int k) {
  if (n_ref == 0) throw UsageError("knn: empty reference set");
  if (n_query == 0) throw UsageError("knn: empty query set");
  if (k < 1) throw UsageError("knn: k must be >= 1");
  if (static_cast<std::size_t>(k) > n_ref) {
    throw UsageError("knn: k = " + std::to_string(k) + " exceeds reference size " + std::to_string(n_ref));
  }
  if (std::set<std::string>(ref_labels.begin(), ref_labels.end()).size() < 2) {
    throw UsageError("knn: reference set must cover at least 2 models");
  }
}

}  // namespace

Split split_reference_query(const std::vector<std::string>& labels, double fraction, std::uint64_t seed,
                            std::size_t min_per_model) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw UsageError("reference fraction must be in (0, 1]");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  if (groups.empty()) throw UsageError("split_reference_query: no samples");
  Split split;
  const CounterRng root(seed);
  for (auto& [id, idx] : groups) {
    if (idx.size() < min_per_model) {
      throw UsageError("model '" + id + "' has " + std::to_string(idx.size()) + " samples; at least " +
                       std::to_string(min_per_model) + " required");
    }
    RngStream(root.split(fnv1a64(id))).shuffle(idx);
    const auto take = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))), 1, idx.size());
    split.reference.insert(split.reference.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
    split.query.insert(split.query.end(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end());
  }
  std::sort(split.reference.begin(), split.reference.end());
  std::sort(split.query.begin(), split.query.end());
  return split;
}

KnnResult knn_classify(const std::vector<fingerprint::FingerprintVector>& reference,
                       const std::vector<fingerprint::FingerprintVector>& query, const metric::LearnedMetric& m,
                       int k, int workers) {
  const auto ref_labels = labels_of(reference);
  check_knn_inputs(reference.size(), query.size(), ref_labels, k);
  std::vector<const Eigen::VectorXd*> ref, qry;
  for (const auto& f : reference) ref.push_back(&f.values);
  for (const auto& f : query) qry.push_back(&f.values);
  auto rows = distance_rows(ref, qry, m, workers);
  KnnResult res;
  res.predictions.resize(query.size());
  std::size_t hits = 0;
  for (std::size_t q = 0; q < query.size(); ++q) {
    res.predictions[q] = vote(rows[q], ref_labels, k);
    if (query[q].model_id && res.predictions[q] == *query[q].model_id) ++hits;
  }
  res.accuracy = static_cast<double>(hits) / static_cast<double>(query.size());
  return res;
}

std::vector<EvalReport> cross_validate(const std::vector<fingerprint::FingerprintVector>& fps,
                                       const metric::LearnedMetric& m, const std::vector<int>& k_list,
                                       std::string setting, std::uint64_t seed, int folds, double reference_fraction,
                                       int workers) {
  if (k_list.empty()) throw UsageError("cross_validate: empty k list");
  if (folds < 1) throw UsageError("cross_validate: folds must be >= 1");
  const auto labels = labels_of(fps);
  std::vector<EvalReport> reports;
  for (int k : k_list) reports.push_back({setting, k, {}, 0.0});

  for (int f = 0; f < folds; ++f) {
    const Split split = split_reference_query(labels, reference_fraction, derive_seed(seed, "fold", static_cast<std::uint64_t>(f)));
    std::vector<std::string> ref_labels;
    std::vector<const Eigen::VectorXd*> ref, qry;
    for (std::size_t i : split.reference) {
      ref.push_back(&fps[i].values);
      ref_labels.push_back(labels[i]);
    }
    for (std::size_t i : split.query) qry.push_back(&fps[i].values);
    for (int k : k_list) check_knn_inputs(ref.size(), qry.size(), ref_labels, k);
    auto rows = distance_rows(ref, qry, m, workers);
    for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
      std::size_t hits = 0;
      for (std::size_t q = 0; q < qry.size(); ++q) {
        if (vote(rows[q], ref_labels, k_list[ki]) == labels[split.query[q]]) ++hits;
      }
      reports[ki].fold_accuracies.push_back(static_cast<double>(hits) / static_cast<double>(qry.size()));
    }
  }
  for (auto& r : reports) {
    r.mean_accuracy = std::accumulate(r.fold_accuracies.begin(), r.fold_accuracies.end(), 0.0) /
                      static_cast<double>(r.fold_accuracies.size());
  }
  return reports;
}

std::vector<EvalReport> cross_architecture_test(const std::vector<fingerprint::FingerprintVector>& arch_a,
                                                const std::vector<fingerprint::FingerprintVector>& arch_b,
                                                const metric::LearnedMetric& m, const std::vector<int>& k_list,
                                                std::uint64_t seed, int folds, double reference_fraction,
                                                int workers) {
  if (arch_a.empty() || arch_b.empty()) throw UsageError("cross_architecture_test: both sets must be non-empty");
  if (arch_a.front().values.size() != arch_b.front().values.size()) {
    throw UsageError("cross_architecture_test: fingerprint dimensions differ (" +
                     std::to_string(arch_a.front().values.size()) + " vs " +
                     std::to_string(arch_b.front().values.size()) + ")");
  }
  std::vector<fingerprint::FingerprintVector> all;
  all.reserve(arch_a.size() + arch_b.size());
  for (const auto& f : arch_a) all.push_back({f.values, std::string("arch-a"), f.source_image_id});
  for (const auto& f : arch_b) all.push_back({f.values, std::string("arch-b"), f.source_image_id});
  return cross_validate(all, m, k_list, "cross-arch", seed, folds, reference_fraction, workers);
}

std::string report_csv(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw UsageError("report: no evaluation reports");
  const std::size_t folds = reports.front().fold_accuracies.size();
  std::string out = "setting,k";
  for (std::size_t f = 0; f < folds; ++f) out += ",fold" + std::to_string(f + 1);
  out += ",mean\n";
  char buf[32];
  for (const auto& r : reports) {
    if (r.fold_accuracies.size() != folds) throw UsageError("report: reports have different fold counts");
    out += r.setting + "," + std::to_string(r.k);
    for (double a : r.fold_accuracies) {
      std::snprintf(buf, sizeof buf, ",%.6f", a);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.6f\n", r.mean_accuracy);
    out += buf;
  }
  return out;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"setting", r.setting}, {"k", r.k}, {"fold_accuracies", r.fold_accuracies}, {"mean_accuracy", r.mean_accuracy}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.setting = j.at("setting").get<std::string>();
  r.k = j.at("k").get<int>();
  r.fold_accuracies = j.at("fold_accuracies").get<std::vector<double>>();
  r.mean_accuracy = j.at("mean_accuracy").get<double>();
  return r;
}

void emit_report(const std::vector<EvalReport>& reports, const std::filesystem::path& stem,
                 const nlohmann::json& run_record) {
  const std::string csv = report_csv(reports);
  nlohmann::json doc = run_record;
  doc["reports"] = nlohmann::json::array();
  for (const auto& r : reports) doc["reports"].push_back(to_json(r));
  store::write_text_atomic(std::filesystem::path(stem.string() + ".csv"), csv);
  store::write_text_atomic(std::filesystem::path(stem.string() + ".json"), doc.dump(2) + "\n");
}

}  // namespace ganprint::evaluation
