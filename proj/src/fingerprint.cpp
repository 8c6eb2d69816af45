#include "ganprint/fingerprint.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace ganprint::fingerprint {

void SvdPolicy::validate() const {
  if (variance_target.has_value() == fixed_d.has_value()) {
    throw UsageError("svd policy needs exactly one of variance_target or fixed_d");
  }
  if (variance_target && !(*variance_target > 0.0 && *variance_target <= 1.0)) {
    throw UsageError("svd variance_target must be in (0, 1]");
  }
  if (fixed_d && *fixed_d < 1) throw UsageError("svd fixed_d must be >= 1");
}

std::uint64_t SvdBasis::checksum() const {
  auto feed = [](std::uint64_t h, const double* p, std::size_t n) {
    return fnv1a64(std::as_bytes(std::span<const double>(p, n)), h);
  };
  std::uint64_t h = fnv1a64("svd-basis");
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> c = components;
  h = feed(h, c.data(), static_cast<std::size_t>(c.size()));
  h = feed(h, singular_values.data(), static_cast<std::size_t>(singular_values.size()));
  h = feed(h, mean.data(), static_cast<std::size_t>(mean.size()));
  return h;
}

std::vector<float> extract_activation(const encoder::EncoderNet& net, const Image& img) {
  if (img.channels != net.spec().in_channels || img.height != net.spec().in_height ||
      img.width != net.spec().in_width) {
    throw UsageError("extract_activation: image shape does not match the encoder input");
  }
  encoder::EncoderNet::Cache cache;
  net.forward(img.data.data(), cache);
  return {cache.out[0].begin(), cache.out[0].end()};
}

namespace {

void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v(arg) < 0) v = -v;
}

// Modified Gram-Schmidt on rows, two passes.
void orthonormalize_rows(Eigen::MatrixXd& m) {
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < i; ++j) m.row(i) -= m.row(i).dot(m.row(j)) * m.row(j);
      m.row(i).normalize();
    }
  }
}

}  // namespace

SvdBasis fit_svd(const Eigen::MatrixXd& samples, const SvdPolicy& policy) {
  policy.validate();
  const Eigen::Index n = samples.rows();
  const Eigen::Index dim = samples.cols();
  if (n < 2) throw UsageError("fit_svd needs at least 2 vectors, got " + std::to_string(n));
  if (dim < 1) throw UsageError("fit_svd: vectors are empty");
  if (!samples.allFinite()) throw NumericalFailure("fit_svd: non-finite input");

  SvdBasis basis;
  basis.fitted_on = static_cast<std::size_t>(n);
  basis.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd x = samples.rowwise() - basis.mean.transpose();

  // Eigenpairs of X^T X, sorted descending, obtained from whichever Gram side is smaller.
  Eigen::VectorXd lambda;
  Eigen::MatrixXd dirs;  // D x r, columns = right singular vectors
  double total = 0.0;
  if (dim > n) {
    const Eigen::MatrixXd gram = x * x.transpose();
    total = gram.trace();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    lambda = es.eigenvalues().reverse();
    dirs = x.transpose() * es.eigenvectors().rowwise().reverse();
  } else {
    const Eigen::MatrixXd cov = x.transpose() * x;
    total = cov.trace();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    lambda = es.eigenvalues().reverse();
    dirs = es.eigenvectors().rowwise().reverse();
  }

  if (!(total > 0.0)) {
    basis.components.resize(0, dim);
    basis.singular_values.resize(0);
    basis.warnings.push_back("zero variance after centering: no components retained");
    return basis;
  }

  const double floor = 1e-12 * std::max(1.0, static_cast<double>(n)) * lambda(0);
  Eigen::Index rank = 0;
  while (rank < lambda.size() && rank < n - 1 && lambda(rank) > floor) ++rank;

  Eigen::Index d = 0;
  if (policy.fixed_d) {
    d = *policy.fixed_d;
    if (d > rank) {
      basis.warnings.push_back("requested " + std::to_string(d) + " components but data rank is " +
                               std::to_string(rank) + "; truncated");
      d = rank;
    }
  } else {
    double cum = 0.0;
    while (d < rank) {
      cum += lambda(d) / total;
      ++d;
      if (cum >= *policy.variance_target - 1e-12) break;
    }
  }

  basis.components.resize(d, dim);
  basis.singular_values.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    Eigen::VectorXd v = dirs.col(i);
    v.normalize();
    fix_sign(v);
    basis.components.row(i) = v.transpose();
    basis.singular_values(i) = std::sqrt(std::max(0.0, lambda(i)));
    basis.explained_variance_ratios.push_back(std::max(0.0, lambda(i)) / total);
  }
  orthonormalize_rows(basis.components);
  return basis;
}

SvdBasis fit_svd(const std::vector<std::vector<float>>& vectors, const SvdPolicy& policy) {
  if (vectors.empty()) throw UsageError("fit_svd: no input vectors");
  const std::size_t dim = vectors.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(vectors.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != dim) throw UsageError("fit_svd: vectors differ in length");
    for (std::size_t j = 0; j < dim; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = vectors[i][j];
  }
  return fit_svd(m, policy);
}

FingerprintVector project(const SvdBasis& basis, const Eigen::VectorXd& flat, std::string source_image_id,
                          std::optional<std::string> model_id) {
  if (flat.size() != basis.input_dim()) {
    throw UsageError("project: vector length " + std::to_string(flat.size()) + " does not match basis input " +
                     std::to_string(basis.input_dim()));
  }
  FingerprintVector fp;
  fp.values = basis.components * (flat - basis.mean);
  fp.model_id = std::move(model_id);
  fp.source_image_id = std::move(source_image_id);
  return fp;
}

FingerprintVector project(const SvdBasis& basis, std::span<const float> flat, std::string source_image_id,
                          std::optional<std::string> model_id) {
  const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXf>(flat.data(), static_cast<Eigen::Index>(flat.size())).cast<double>();
  return project(basis, v, std::move(source_image_id), std::move(model_id));
}

std::vector<std::size_t> stratified_subset(const std::vector<std::string>& model_ids, double fraction,
                                           std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw UsageError("stratified_subset: fraction must be in (0, 1]");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < model_ids.size(); ++i) groups[model_ids[i]].push_back(i);
  std::vector<std::size_t> out;
  const CounterRng root(seed);
  for (auto& [id, idx] : groups) {
    RngStream(root.split(fnv1a64(id))).shuffle(idx);
    const auto take = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size()))), 1, idx.size());
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace ganprint::fingerprint
