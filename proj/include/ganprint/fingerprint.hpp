#pragma once

#include "ganprint/common.hpp"
#include "ganprint/encoder.hpp"
#include "ganprint/image.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ganprint::fingerprint {

struct SvdPolicy {
  std::optional<double> variance_target;
  std::optional<int> fixed_d;

  static SvdPolicy variance(double target) { return {target, std::nullopt}; }
  static SvdPolicy fixed(int d) { return {std::nullopt, d}; }
  void validate() const;
};

struct SvdBasis {
  Eigen::MatrixXd components;  // d x D, orthonormal rows
  Eigen::VectorXd singular_values;
  Eigen::VectorXd mean;
  std::vector<double> explained_variance_ratios;
  std::size_t fitted_on = 0;
  std::vector<std::string> warnings;

  Eigen::Index dim() const { return components.rows(); }
  Eigen::Index input_dim() const { return mean.size(); }
  // Content hash of the basis, used to pair fingerprint sets with their basis.
  std::uint64_t checksum() const;
};

struct FingerprintVector {
  Eigen::VectorXd values;
  std::optional<std::string> model_id;
  std::string source_image_id;
};

// Flattened L1 output of the encoder (channel-major).
std::vector<float> extract_activation(const encoder::EncoderNet& net, const Image& img);

// Rows of `samples` are the flat activation vectors.
SvdBasis fit_svd(const Eigen::MatrixXd& samples, const SvdPolicy& policy);
SvdBasis fit_svd(const std::vector<std::vector<float>>& vectors, const SvdPolicy& policy);

FingerprintVector project(const SvdBasis& basis, std::span<const float> flat, std::string source_image_id = {},
                          std::optional<std::string> model_id = std::nullopt);
FingerprintVector project(const SvdBasis& basis, const Eigen::VectorXd& flat, std::string source_image_id = {},
                          std::optional<std::string> model_id = std::nullopt);

// Seeded per-model sample of round(fraction * n_model) indices (at least one
// per model), returned in ascending order.
std::vector<std::size_t> stratified_subset(const std::vector<std::string>& model_ids, double fraction,
                                           std::uint64_t seed);

}  // namespace ganprint::fingerprint
