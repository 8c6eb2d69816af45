#include "ganprint/metric.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace ganprint::metric {

namespace {

using PairKey = std::pair<std::size_t, std::size_t>;

PairKey ordered(std::size_t i, std::size_t j) { return i < j ? PairKey{i, j} : PairKey{j, i}; }

const std::string& id_of(const fingerprint::FingerprintVector& fp, std::size_t i) {
  if (!fp.model_id) throw UsageError("fingerprint " + std::to_string(i) + " has no model id");
  return *fp.model_id;
}

void check_dims(const Eigen::VectorXd& x, const Eigen::VectorXd& y, Eigen::Index d) {
  if (x.size() != d || y.size() != d) {
    throw UsageError("metric dimension is " + std::to_string(d) + " but vectors have " + std::to_string(x.size()) +
                     " and " + std::to_string(y.size()));
  }
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<PairConstraint> build_pairs(const std::vector<fingerprint::FingerprintVector>& fps, std::size_t n_pairs,
                                        std::uint64_t seed) {
  if (n_pairs == 0) throw UsageError("build_pairs: n_pairs must be >= 1");
  const std::size_t n = fps.size();
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[id_of(fps[i], i)].push_back(i);
  for (std::size_t i = 1; i < n; ++i) {
    if (fps[i].values.size() != fps[0].values.size()) throw UsageError("build_pairs: fingerprints differ in length");
  }

  std::vector<PairKey> similar;
  for (const auto& [id, idx] : groups) {
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = a + 1; b < idx.size(); ++b) similar.emplace_back(idx[a], idx[b]);
    }
  }
  const std::size_t total = n * (n > 0 ? n - 1 : 0) / 2;
  const std::size_t dissimilar_available = total - similar.size();
  const std::size_t want_similar = n_pairs / 2;
  const std::size_t want_dissimilar = n_pairs - want_similar;
  if (want_similar > similar.size() || want_dissimilar > dissimilar_available) {
    std::ostringstream msg;
    msg << "build_pairs: cannot draw " << n_pairs << " pairs from " << groups.size() << " model(s)";
    if (want_similar > similar.size()) msg << "; similar deficit " << want_similar - similar.size();
    if (want_dissimilar > dissimilar_available) msg << "; dissimilar deficit " << want_dissimilar - dissimilar_available;
    throw UsageError(msg.str());
  }

  const CounterRng root(seed);
  RngStream rs(root.split(1));
  // Partial Fisher-Yates over the similar candidates.
  for (std::size_t i = 0; i < want_similar; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rs.below(similar.size() - i));
    std::swap(similar[i], similar[j]);
  }
  similar.resize(want_similar);

  std::vector<PairKey> dissimilar;
  RngStream rd(root.split(2));
  if (want_dissimilar * 4 > dissimilar_available) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        if (*fps[i].model_id != *fps[j].model_id) dissimilar.emplace_back(i, j);
      }
    }
    for (std::size_t i = 0; i < want_dissimilar; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rd.below(dissimilar.size() - i));
      std::swap(dissimilar[i], dissimilar[j]);
    }
    dissimilar.resize(want_dissimilar);
  } else {
    std::set<PairKey> seen;
    while (dissimilar.size() < want_dissimilar) {
      const auto i = static_cast<std::size_t>(rd.below(n));
      const auto j = static_cast<std::size_t>(rd.below(n));
      if (i == j || *fps[i].model_id == *fps[j].model_id) continue;
      const PairKey key = ordered(i, j);
      if (seen.insert(key).second) dissimilar.push_back(key);
    }
  }

  std::vector<PairConstraint> out;
  out.reserve(n_pairs);
  for (const auto& [i, j] : similar) out.push_back({fps[i].values, fps[j].values, Relation::similar, i, j});
  for (const auto& [i, j] : dissimilar) out.push_back({fps[i].values, fps[j].values, Relation::dissimilar, i, j});
  return out;
}

void LearnConfig::validate() const {
  if (margin && !(*margin > 0.0)) throw UsageError("metric margin must be > 0");
  if (!(step > 0.0) || !std::isfinite(step)) throw UsageError("metric step must be > 0");
  if (iters < 0) throw UsageError("metric iters must be >= 0");
}

std::string LearnConfig::digest() const {
  std::ostringstream s;
  s.precision(17);
  s << "margin=" << (margin ? std::to_string(*margin) : "auto") << ";step=" << step << ";iters=" << iters
    << ";diag_only=" << diag_only;
  return hex64(fnv1a64(s.str()));
}

double LearnedMetric::min_eigenvalue() const {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

Eigen::MatrixXd project_psd(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd clamped = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd out = es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

double objective(const Eigen::MatrixXd& m, const std::vector<PairConstraint>& pairs, double margin) {
  double f = 0.0;
  for (const auto& p : pairs) {
    const Eigen::VectorXd delta = p.a - p.b;
    const double d2 = delta.dot(m * delta);
    f += p.relation == Relation::similar ? d2 : std::max(0.0, margin - d2);
  }
  return f;
}

namespace {

struct PairMatrix {
  Eigen::MatrixXd delta;  // one row per pair
  Eigen::VectorXd similar;  // 1 for similar, 0 for dissimilar
};

PairMatrix pair_matrix(const std::vector<PairConstraint>& pairs, Eigen::Index d) {
  PairMatrix pm;
  pm.delta.resize(static_cast<Eigen::Index>(pairs.size()), d);
  pm.similar.resize(static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    pm.delta.row(r) = (pairs[i].a - pairs[i].b).transpose();
    pm.similar(r) = pairs[i].relation == Relation::similar ? 1.0 : 0.0;
  }
  return pm;
}

Eigen::VectorXd pair_d2(const Eigen::MatrixXd& m, const PairMatrix& pm) {
  return (pm.delta * m).cwiseProduct(pm.delta).rowwise().sum();
}

double objective_of(const Eigen::VectorXd& d2, const PairMatrix& pm, double margin) {
  double f = 0.0;
  for (Eigen::Index i = 0; i < d2.size(); ++i) f += pm.similar(i) > 0.0 ? d2(i) : std::max(0.0, margin - d2(i));
  return f;
}

Eigen::MatrixXd gradient(const Eigen::VectorXd& d2, const PairMatrix& pm, double margin, bool diag_only) {
  Eigen::VectorXd w(d2.size());
  for (Eigen::Index i = 0; i < d2.size(); ++i) w(i) = pm.similar(i) > 0.0 ? 1.0 : (d2(i) < margin ? -1.0 : 0.0);
  if (diag_only) {
    const Eigen::VectorXd diag = pm.delta.cwiseProduct(pm.delta).transpose() * w;
    return Eigen::MatrixXd(diag.asDiagonal());
  }
  Eigen::MatrixXd g = pm.delta.transpose() * w.asDiagonal() * pm.delta;
  return 0.5 * (g + g.transpose());
}

}  // namespace

LearnedMetric learn(const std::vector<PairConstraint>& pairs, const LearnConfig& config) {
  config.validate();
  if (pairs.empty()) throw UsageError("learn: no pair constraints");
  const Eigen::Index d = pairs.front().a.size();
  for (const auto& p : pairs) {
    if (p.a.size() != d || p.b.size() != d) throw UsageError("learn: pair vectors differ in length");
  }

  LearnedMetric metric;
  metric.diag_only = config.diag_only;
  metric.config_digest = config.digest();
  metric.m = Eigen::MatrixXd::Identity(d, d);

  std::vector<double> dissimilar_d2, similar_d;
  for (const auto& p : pairs) {
    const double d2 = (p.a - p.b).squaredNorm();
    if (p.relation == Relation::dissimilar) dissimilar_d2.push_back(d2);
  }
  if (config.margin) {
    metric.margin = *config.margin;
  } else if (!dissimilar_d2.empty() && median_of(dissimilar_d2) > 0.0) {
    metric.margin = median_of(dissimilar_d2);
  } else {
    metric.margin = 1.0;
    metric.warnings.push_back("no usable dissimilar distances; margin defaults to 1");
  }

  const PairMatrix pm = pair_matrix(pairs, d);
  Eigen::VectorXd d2 = pair_d2(metric.m, pm);
  double f = objective_of(d2, pm, metric.margin);
  if (!std::isfinite(f)) throw NumericalFailure("learn: objective is not finite at initialisation");
  metric.objective_history.push_back(f);

  const double scale = 1.0 / (static_cast<double>(pairs.size()) * metric.margin);
  double eta = config.step;
  for (int it = 0; it < config.iters; ++it) {
    const Eigen::MatrixXd g = gradient(d2, pm, metric.margin, config.diag_only);
    if (!g.allFinite()) throw NumericalFailure("learn: gradient is not finite at iteration " + std::to_string(it + 1));
    bool accepted = false;
    for (int tries = 0; tries < 40 && !accepted; ++tries) {
      Eigen::MatrixXd cand = metric.m - (eta * scale) * g;
      if (config.diag_only) {
        cand = Eigen::MatrixXd(cand.diagonal().cwiseMax(0.0).asDiagonal());
      } else {
        cand = project_psd(cand);
      }
      Eigen::VectorXd d2c = pair_d2(cand, pm);
      const double fc = objective_of(d2c, pm, metric.margin);
      if (!std::isfinite(fc)) throw NumericalFailure("learn: objective diverged at iteration " + std::to_string(it + 1));
      if (fc <= f) {
        metric.m = std::move(cand);
        d2 = std::move(d2c);
        f = fc;
        accepted = true;
        eta *= 1.25;
      } else {
        eta *= 0.5;
      }
    }
    metric.objective_history.push_back(f);
    if (!accepted) break;
  }

  for (const auto& p : pairs) {
    if (p.relation == Relation::similar) similar_d.push_back(distance(metric, p.a, p.b));
  }
  if (similar_d.empty()) {
    metric.warnings.push_back("no similar pairs for calibration; tau = 1");
    metric.tau = 1.0;
  } else {
    const Calibration cal = calibrate_from_distances(similar_d);
    metric.tau = cal.tau;
    if (cal.warning) metric.warnings.push_back(*cal.warning);
  }
  return metric;
}

double squared_distance(const LearnedMetric& metric, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  check_dims(x, y, metric.dim());
  const Eigen::VectorXd delta = x - y;
  double d2 = 0.0;
  if (metric.diag_only) {
    d2 = delta.cwiseProduct(delta).dot(metric.m.diagonal());
  } else {
    d2 = delta.dot(metric.m.selfadjointView<Eigen::Lower>() * delta);
  }
  return std::max(0.0, d2);
}

double distance(const LearnedMetric& metric, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  return std::sqrt(squared_distance(metric, x, y));
}

double similarity(const LearnedMetric& metric, const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (!(metric.tau > 0.0)) throw UsageError("similarity: tau must be > 0");
  const double d = distance(metric, x, y);
  if (std::isinf(d)) return -1.0;
  return (metric.tau - d) / (metric.tau + d);
}

Calibration calibrate_from_distances(std::vector<double> distances) {
  Calibration cal;
  cal.pairs_used = distances.size();
  if (distances.empty()) throw UsageError("calibrate: no same-model pairs");
  const double med = median_of(distances);
  if (med > 0.0) {
    cal.tau = med;
    return cal;
  }
  double smallest = 0.0;
  for (double v : distances) {
    if (v > 0.0 && (smallest == 0.0 || v < smallest)) smallest = v;
  }
  if (smallest > 0.0) {
    cal.tau = smallest;
  } else {
    cal.tau = 1.0;
    cal.warning = "degenerate calibration data: all same-model distances are zero; tau = 1";
  }
  return cal;
}

Calibration calibrate(const LearnedMetric& metric, const std::vector<fingerprint::FingerprintVector>& fps,
                      std::uint64_t seed, std::size_t max_pairs) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < fps.size(); ++i) groups[id_of(fps[i], i)].push_back(i);
  std::vector<PairKey> pairs;
  for (const auto& [id, idx] : groups) {
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = a + 1; b < idx.size(); ++b) pairs.emplace_back(idx[a], idx[b]);
    }
  }
  if (pairs.size() < 2) throw UsageError("calibrate: need at least 2 same-model pairs, found " + std::to_string(pairs.size()));
  if (max_pairs > 0 && pairs.size() > max_pairs) {
    RngStream rng(CounterRng(seed).split(3));
    for (std::size_t i = 0; i < max_pairs; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(pairs.size() - i));
      std::swap(pairs[i], pairs[j]);
    }
    pairs.resize(max_pairs);
  }
  std::vector<double> dist;
  dist.reserve(pairs.size());
  for (const auto& [i, j] : pairs) dist.push_back(distance(metric, fps[i].values, fps[j].values));
  return calibrate_from_distances(std::move(dist));
}

}  // namespace ganprint::metric
