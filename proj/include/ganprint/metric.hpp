#pragma once

#include "ganprint/common.hpp"
#include "ganprint/fingerprint.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ganprint::metric {

enum class Relation { similar, dissimilar };

struct PairConstraint {
  Eigen::VectorXd a;
  Eigen::VectorXd b;
  Relation relation = Relation::similar;
  std::size_t index_a = 0;  // positions in the input fingerprint list
  std::size_t index_b = 0;
};

// n_pairs/2 similar (same model) and the remainder dissimilar pairs, sampled
// without duplicate unordered pairs.
std::vector<PairConstraint> build_pairs(const std::vector<fingerprint::FingerprintVector>& fingerprints,
                                        std::size_t n_pairs, std::uint64_t seed);

struct LearnConfig {
  std::optional<double> margin;  // default: squared median dissimilar distance under identity
  double step = 1.0;
  int iters = 300;
  bool diag_only = false;

  void validate() const;
  std::string digest() const;
};

struct LearnedMetric {
  Eigen::MatrixXd m;  // d x d; diagonal-only metrics still store the full (diagonal) matrix
  double tau = 1.0;
  bool diag_only = false;
  double margin = 0.0;
  std::vector<double> objective_history;  // value before the first step, then after each iteration
  std::vector<std::string> warnings;
  std::string config_digest;

  Eigen::Index dim() const { return m.rows(); }
  double min_eigenvalue() const;
};

double objective(const Eigen::MatrixXd& m, const std::vector<PairConstraint>& pairs, double margin);

// Projected gradient descent with backtracking on
//   sum_similar d^2 + sum_dissimilar max(0, margin - d^2),
// starting from the identity; tau is calibrated on the similar pairs.
LearnedMetric learn(const std::vector<PairConstraint>& pairs, const LearnConfig& config);

// Nearest PSD matrix in Frobenius norm (eigenvalue clamp).
Eigen::MatrixXd project_psd(const Eigen::MatrixXd& m);

double squared_distance(const LearnedMetric& metric, const Eigen::VectorXd& x, const Eigen::VectorXd& y);
double distance(const LearnedMetric& metric, const Eigen::VectorXd& x, const Eigen::VectorXd& y);
// L = (tau - d) / (tau + d), in (-1, 1].
double similarity(const LearnedMetric& metric, const Eigen::VectorXd& x, const Eigen::VectorXd& y);

struct Calibration {
  double tau = 1.0;
  std::size_t pairs_used = 0;
  std::optional<std::string> warning;
};

// Median of the given distances; falls back to the smallest positive value and
// to 1 (with a warning) if all are zero.
Calibration calibrate_from_distances(std::vector<double> distances);
// tau from same-model pairs (all of them, or a seeded sample of max_pairs).
Calibration calibrate(const LearnedMetric& metric, const std::vector<fingerprint::FingerprintVector>& fingerprints,
                      std::uint64_t seed = 0, std::size_t max_pairs = 20000);

}  // namespace ganprint::metric
