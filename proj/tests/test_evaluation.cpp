#include <doctest.h>

#include "ganprint/evaluation.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

using namespace ganprint;
using namespace ganprint::evaluation;
using fingerprint::FingerprintVector;

namespace {

FingerprintVector fp(std::initializer_list<double> v, std::string id) {
  FingerprintVector f;
  f.values = Eigen::VectorXd(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) f.values(i++) = x;
  f.model_id = std::move(id);
  return f;
}

std::vector<FingerprintVector> noisy(int models, int per_model, int d, double spread, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<FingerprintVector> out;
  for (int m = 0; m < models; ++m) {
    Eigen::VectorXd c(d);
    for (int j = 0; j < d; ++j) c(j) = rng.normal();
    for (int i = 0; i < per_model; ++i) {
      FingerprintVector f;
      f.values = c;
      for (int j = 0; j < d; ++j) f.values(j) += spread * rng.normal();
      f.model_id = "model-" + std::to_string(m);
      out.push_back(f);
    }
  }
  return out;
}

metric::LearnedMetric identity(int d) {
  metric::LearnedMetric m;
  m.m = Eigen::MatrixXd::Identity(d, d);
  return m;
}


}  // namespace

TEST_CASE("k-NN agrees with a brute-force oracle on every query") {
  const auto ref = noisy(4, 50, 3, 0.9, 1);  // 200 references, overlapping clusters
  const auto qry = noisy(4, 25, 3, 0.9, 1);
  for (int k : {1, 3, 5, 8}) {
    const auto r = knn_classify(ref, qry, identity(3), k, 2);
    std::size_t hits = 0;
    for (std::size_t q = 0; q < qry.size(); ++q) {
      REQUIRE(r.predictions[q] == oracle::knn_vote(ref, qry[q], k, [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).norm(); }));
      hits += r.predictions[q] == *qry[q].model_id;
    }
    CHECK(r.accuracy == doctest::Approx(double(hits) / qry.size()));
  }
}

TEST_CASE("k-NN tie-breaks") {
  const auto m = identity(1);
  const std::vector<FingerprintVector> q{fp({0}, "b")};
  // Equal votes, equal distance sums: lowest id wins.
  CHECK(knn_classify({fp({1}, "b"), fp({-1}, "a")}, q, m, 2).predictions[0] == "a");
  // Equal votes: smaller summed distance wins.
  CHECK(knn_classify({fp({2}, "a"), fp({1}, "b")}, q, m, 2).predictions[0] == "b");
  // Majority beats distance.
  CHECK(knn_classify({fp({0.1}, "a"), fp({1}, "b"), fp({1.1}, "b")}, q, m, 3).predictions[0] == "b");
  // Distance tie at the k-th neighbour: lower reference index is kept.
  CHECK(knn_classify({fp({0}, "a"), fp({1}, "c"), fp({-1}, "b")}, q, m, 2).predictions[0] == "a");
  CHECK(knn_classify({fp({0.5}, "c"), fp({1}, "b"), fp({-1}, "a")}, q, m, 1).predictions[0] == "c");
}

TEST_CASE("k-NN input validation") {
  const auto m = identity(1);
  const std::vector<FingerprintVector> q{fp({0}, "a")};
  CHECK_THROWS_AS(knn_classify({}, q, m, 1), UsageError);
  CHECK_THROWS_AS(knn_classify({fp({1}, "a"), fp({2}, "b")}, q, m, 3), UsageError);
  CHECK_THROWS_AS(knn_classify({fp({1}, "a"), fp({2}, "a")}, q, m, 1), UsageError);
  CHECK_THROWS_AS(knn_classify({fp({1}, "a"), fp({2}, "b")}, q, m, 0), UsageError);
}

TEST_CASE("reference/query split sizes") {
  std::vector<std::string> labels;
  for (int i = 0; i < 30; ++i) labels.push_back("x");
  for (int i = 0; i < 12; ++i) labels.push_back("y");
  const auto s = split_reference_query(labels, 0.2, 3);
  CHECK(s.reference.size() == 6 + 2);
  CHECK(s.query.size() == 24 + 10);
  std::set<std::size_t> all(s.reference.begin(), s.reference.end());
  all.insert(s.query.begin(), s.query.end());
  CHECK(all.size() == labels.size());
  CHECK(split_reference_query(labels, 0.2, 3).reference == s.reference);
  CHECK(split_reference_query(labels, 0.2, 4).reference != s.reference);
  labels.push_back("z");
  CHECK_THROWS_AS(split_reference_query(labels, 0.2, 3), UsageError);
  CHECK_THROWS_AS(split_reference_query({"x"}, 1.5, 3, 1), UsageError);
}

TEST_CASE("cross-validation: separable data is perfect, folds are independent draws") {
  const auto fps = noisy(3, 20, 4, 0.01, 2);
  const auto reports = cross_validate(fps, identity(4), {1, 3}, "known", 9, 4, 0.2);
  REQUIRE(reports.size() == 2);
  for (const auto& r : reports) {
    CHECK(r.setting == "known");
    CHECK(r.fold_accuracies.size() == 4);
    CHECK(r.mean_accuracy == 1.0);
  }
  const auto hard = cross_validate(noisy(3, 20, 2, 3.0, 2), identity(2), {1}, "x", 9, 3, 0.2);
  CHECK(hard[0].mean_accuracy < 1.0);
  std::vector<std::string> labels;
  for (int i = 0; i < 60; ++i) labels.push_back("model-" + std::to_string(i / 20));
  CHECK(split_reference_query(labels, 0.2, derive_seed(9, "fold", 0)).reference !=
        split_reference_query(labels, 0.2, derive_seed(9, "fold", 1)).reference);
}

TEST_CASE("cross-architecture test labels by set") {
  auto a = noisy(1, 30, 3, 0.01, 3);
  auto b = noisy(1, 30, 3, 0.01, 4);
  const auto r = cross_architecture_test(a, b, identity(3), {1, 3, 5}, 1, 2);
  REQUIRE(r.size() == 3);
  for (const auto& e : r) {
    CHECK(e.setting == "cross-arch");
    CHECK(e.mean_accuracy == 1.0);
  }
  CHECK_THROWS_AS(cross_architecture_test(a, noisy(1, 5, 2, 0.1, 1), identity(3), {1}, 1), UsageError);
}

TEST_CASE("report CSV and JSON") {
  std::vector<EvalReport> reports{{"known", 1, {1.0, 0.5}, 0.75}, {"unknown", 5, {0.25, 0.125}, 0.1875}};
  CHECK(report_csv(reports) ==
        "setting,k,fold1,fold2,mean\n"
        "known,1,1.000000,0.500000,0.750000\n"
        "unknown,5,0.250000,0.125000,0.187500\n");
  const auto back = report_from_json(to_json(reports[1]));
  CHECK(back.setting == "unknown");
  CHECK(back.fold_accuracies == reports[1].fold_accuracies);
  reports[1].fold_accuracies.pop_back();
  CHECK_THROWS_AS(report_csv(reports), UsageError);
  CHECK_THROWS_AS(report_csv({}), UsageError);

  const auto dir = std::filesystem::temp_directory_path() / "ganprint-eval-test";
  std::filesystem::create_directories(dir);
  reports[1].fold_accuracies.push_back(0.125);
  emit_report(reports, dir / "table", {{"seed", 3}});
  std::ifstream js(dir / "table.json");
  const auto doc = nlohmann::json::parse(js);
  CHECK(doc["seed"] == 3);
  CHECK(doc["reports"].size() == 2);
  CHECK(std::filesystem::exists(dir / "table.csv"));
  std::filesystem::remove_all(dir);
}
