#pragma once

#include "ganprint/common.hpp"
#include "ganprint/image.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ganprint::modelzoo {

enum class LayerKind { dense, upsample_conv, conv, output_conv };

const char* layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct LayerDescriptor {
  std::string name;
  LayerKind kind = LayerKind::conv;
  int in_channels = 0;   // latent_dim for the dense layer
  int out_channels = 0;
  int kernel = 3;        // ignored for dense
  int spatial = 0;       // dense only: side of the square grid the output is reshaped to
  bool perturbable = false;
  double init_gain = 1.0;  // multiplies the He standard deviation of the weights
  double bias_std = 0.1;

  std::size_t weight_count() const;
  std::size_t param_count() const;  // weights + biases of the group
  friend bool operator==(const LayerDescriptor&, const LayerDescriptor&) = default;
};

struct OutputSize {
  int height = 0;
  int width = 0;
  int channels = 0;
  friend bool operator==(const OutputSize&, const OutputSize&) = default;
};

struct ArchitectureSpec {
  std::string arch_id;
  int latent_dim = 0;
  std::vector<LayerDescriptor> layers;
  OutputSize output;
  double leaky_slope = 0.2;

  // Throws SpecViolation naming the first broken invariant.
  void validate() const;
  std::size_t first_perturbable() const;
  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

// latent 16 -> dense 4x4x32 -> three upsample-conv blocks (32, 24, 16 channels,
// 3x3) -> perturbable output-conv to 3 channels; 32x32x3 output.
ArchitectureSpec arch_a();
// latent 16 -> dense 8x8x24 -> two upsample-conv blocks (20, 12 channels, 5x5)
// -> perturbable 5x5 output-conv; same 32x32x3 output.
ArchitectureSpec arch_b();
ArchitectureSpec arch_by_name(std::string_view name);

struct VariantParams {
  int k = 1;
  double p = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const VariantParams&, const VariantParams&) = default;
};

struct WeightGroup {
  std::string name;
  std::vector<float> values;  // weights (out, in, ky, kx) followed by biases
  friend bool operator==(const WeightGroup&, const WeightGroup&) = default;
};

struct ModelVariant {
  std::string variant_id;
  ArchitectureSpec arch;
  std::vector<WeightGroup> weights;
  std::vector<float> disc_weights;  // inert stand-in for discriminator weights
  std::optional<VariantParams> params;

  void validate() const;
  const WeightGroup& group(std::string_view name) const;
  friend bool operator==(const ModelVariant&, const ModelVariant&) = default;
};

inline constexpr double kDefaultEps = 0.6;
inline constexpr std::size_t kDiscBlobSize = 256;

ModelVariant build_base(const ArchitectureSpec& arch, std::uint64_t seed);

// Adds N(0, (eps * k/10 * p * rms(group))^2) noise to every perturbable group.
ModelVariant derive_variant(const ModelVariant& base, const VariantParams& params,
                            double eps = kDefaultEps, std::string variant_id = {});

// Standard-normal latent vector for a seed.
std::vector<double> latent_vector(int latent_dim, std::uint64_t latent_seed);

ImageSample generate(const ModelVariant& variant, std::uint64_t latent_seed);

// All (k, p) pairs with k in 1..10 and p in 0.1..1.0.
std::vector<VariantParams> parameter_grid(std::uint64_t seed);

struct WeightPca {
  std::vector<std::array<double, 2>> points;
  std::array<double, 2> explained_variance_ratio{};
  std::array<std::vector<double>, 2> directions;
};

WeightPca weights_pca_2d(const std::vector<ModelVariant>& variants, std::string_view group_name);

double group_rms(const std::vector<float>& values);

}  // namespace ganprint::modelzoo
