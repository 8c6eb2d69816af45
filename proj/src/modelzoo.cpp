#include "ganprint/modelzoo.hpp"

#include "ganprint/nn_ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace ganprint::modelzoo {

const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::upsample_conv: return "upsample-conv";
    case LayerKind::conv: return "conv";
    case LayerKind::output_conv: return "output-conv";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  if (name == "dense") return LayerKind::dense;
  if (name == "upsample-conv") return LayerKind::upsample_conv;
  if (name == "conv") return LayerKind::conv;
  if (name == "output-conv") return LayerKind::output_conv;
  throw SpecViolation("unknown layer kind '" + std::string(name) + "'");
}

std::size_t LayerDescriptor::weight_count() const {
  if (kind == LayerKind::dense) {
    return static_cast<std::size_t>(in_channels) * out_channels * spatial * spatial;
  }
  return static_cast<std::size_t>(in_channels) * out_channels * kernel * kernel;
}

namespace {

std::size_t dense_outputs(const LayerDescriptor& l) {
  return static_cast<std::size_t>(l.out_channels) * l.spatial * l.spatial;
}

std::size_t group_size(const LayerDescriptor& l) {
  return l.weight_count() + (l.kind == LayerKind::dense ? dense_outputs(l) : l.out_channels);
}

}  // namespace

std::size_t LayerDescriptor::param_count() const { return group_size(*this); }

void ArchitectureSpec::validate() const {
  auto fail = [&](const std::string& msg) { throw SpecViolation("architecture '" + arch_id + "': " + msg); };
  if (latent_dim <= 0) fail("latent_dim must be positive");
  if (layers.size() < 2) fail("need at least a dense and an output-conv layer");
  std::set<std::string> names;
  for (const auto& l : layers) {
    if (l.name.empty()) fail("empty layer name");
    if (!names.insert(l.name).second) fail("duplicate layer name '" + l.name + "'");
    if (l.out_channels <= 0 || l.in_channels <= 0) fail("layer '" + l.name + "' has non-positive channels");
    if (l.kind != LayerKind::dense && (l.kernel <= 0 || l.kernel % 2 == 0)) {
      fail("layer '" + l.name + "' needs an odd positive kernel");
    }
  }
  if (layers.front().kind != LayerKind::dense) fail("first layer must be dense");
  if (layers.back().kind != LayerKind::output_conv) fail("last layer must be output-conv");
  if (layers.front().in_channels != latent_dim) fail("dense input must equal latent_dim");
  if (layers.front().spatial <= 0) fail("dense layer needs a positive spatial size");

  int side = layers.front().spatial;
  int channels = layers.front().out_channels;
  for (std::size_t i = 1; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.kind == LayerKind::dense) fail("dense layer '" + l.name + "' after the stem");
    if (l.kind == LayerKind::output_conv && i + 1 != layers.size()) fail("output-conv must be last");
    if (l.in_channels != channels) fail("layer '" + l.name + "' input channels do not match previous layer");
    if (l.kind == LayerKind::upsample_conv) side *= 2;
    channels = l.out_channels;
  }
  if (side != output.height || side != output.width) fail("output size inconsistent with the block chain");
  if (channels != output.channels) fail("output channels inconsistent with the last layer");

  // Perturbable flags must form one non-empty contiguous suffix.
  const std::size_t first = first_perturbable();
  if (first == layers.size()) fail("no perturbable layers");
  for (std::size_t i = first; i < layers.size(); ++i) {
    if (!layers[i].perturbable) fail("perturbable layers must form a contiguous suffix");
  }
}

std::size_t ArchitectureSpec::first_perturbable() const {
  std::size_t first = layers.size();
  while (first > 0 && layers[first - 1].perturbable) --first;
  for (std::size_t i = 0; i < first; ++i) {
    if (layers[i].perturbable) return i;  // non-contiguous; validate() reports it
  }
  return first;
}

ArchitectureSpec arch_a() {
  ArchitectureSpec a;
  a.arch_id = "arch-a";
  a.latent_dim = 16;
  a.layers = {
      {"dense", LayerKind::dense, 16, 32, 0, 4, false, 0.15, 1.0},
      {"up1", LayerKind::upsample_conv, 32, 32, 3, 0, false, 1.0, 0.1},
      {"up2", LayerKind::upsample_conv, 32, 24, 3, 0, false, 1.0, 0.1},
      {"up3", LayerKind::upsample_conv, 24, 16, 3, 0, false, 1.0, 0.1},
      {"torgb", LayerKind::output_conv, 16, 3, 3, 0, true, 1.0, 0.1},
  };
  a.output = {32, 32, 3};
  return a;
}

ArchitectureSpec arch_b() {
  ArchitectureSpec b;
  b.arch_id = "arch-b";
  b.latent_dim = 16;
  b.layers = {
      {"dense", LayerKind::dense, 16, 24, 0, 8, false, 0.15, 1.0},
      {"up1", LayerKind::upsample_conv, 24, 20, 5, 0, false, 1.0, 0.1},
      {"up2", LayerKind::upsample_conv, 20, 12, 5, 0, false, 1.0, 0.1},
      {"torgb", LayerKind::output_conv, 12, 3, 5, 0, true, 1.0, 0.1},
  };
  b.output = {32, 32, 3};
  return b;
}

ArchitectureSpec arch_by_name(std::string_view name) {
  if (name == "arch-a" || name == "A" || name == "a") return arch_a();
  if (name == "arch-b" || name == "B" || name == "b") return arch_b();
  throw UsageError("unknown architecture '" + std::string(name) + "' (expected arch-a or arch-b)");
}

void VariantParams::validate() const {
  if (k < 1 || k > 10) throw SpecViolation("variant k must be in 1..10, got " + std::to_string(k));
  if (!(p >= 0.0 && p <= 1.0)) throw SpecViolation("variant p must be in [0,1], got " + std::to_string(p));
}

void ModelVariant::validate() const {
  arch.validate();
  if (weights.size() != arch.layers.size()) {
    throw SpecViolation("variant '" + variant_id + "': " + std::to_string(weights.size()) +
                        " weight groups for " + std::to_string(arch.layers.size()) + " layers");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto& l = arch.layers[i];
    if (weights[i].name != l.name) {
      throw SpecViolation("variant '" + variant_id + "': group '" + weights[i].name +
                          "' does not match layer '" + l.name + "'");
    }
    if (weights[i].values.size() != group_size(l)) {
      throw SpecViolation("variant '" + variant_id + "': group '" + l.name + "' has " +
                          std::to_string(weights[i].values.size()) + " values, expected " +
                          std::to_string(group_size(l)));
    }
  }
  if (params) params->validate();
}

const WeightGroup& ModelVariant::group(std::string_view name) const {
  for (const auto& g : weights) {
    if (g.name == name) return g;
  }
  throw KeyError("variant '" + variant_id + "' has no weight group '" + std::string(name) + "'");
}

ModelVariant build_base(const ArchitectureSpec& arch, std::uint64_t seed) {
  arch.validate();
  ModelVariant base;
  base.variant_id = arch.arch_id + "-base";
  base.arch = arch;
  const CounterRng root(seed);
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const auto& l = arch.layers[i];
    const std::size_t fan_in = l.kind == LayerKind::dense
                                   ? static_cast<std::size_t>(l.in_channels)
                                   : static_cast<std::size_t>(l.in_channels) * l.kernel * l.kernel;
    const double w_std = l.init_gain * std::sqrt(2.0 / static_cast<double>(fan_in));
    RngStream rng(root.split(i));
    WeightGroup g;
    g.name = l.name;
    g.values.resize(group_size(l));
    const std::size_t nw = l.weight_count();
    for (std::size_t j = 0; j < g.values.size(); ++j) {
      const double z = rng.normal();
      g.values[j] = static_cast<float>(j < nw ? z * w_std : z * l.bias_std);
    }
    base.weights.push_back(std::move(g));
  }
  RngStream disc(root.split(0xD15C));
  base.disc_weights.resize(kDiscBlobSize);
  for (auto& v : base.disc_weights) v = static_cast<float>(0.05 * disc.normal());
  return base;
}

double group_rms(const std::vector<float>& values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (float v : values) s += static_cast<double>(v) * v;
  return std::sqrt(s / static_cast<double>(values.size()));
}

ModelVariant derive_variant(const ModelVariant& base, const VariantParams& params, double eps,
                            std::string variant_id) {
  if (base.params) throw UsageError("derive_variant: '" + base.variant_id + "' is itself derived; derive from the base model");
  if (!(eps > 0.0)) throw UsageError("derive_variant: eps must be positive");
  params.validate();
  base.validate();

  ModelVariant v = base;
  v.params = params;
  if (variant_id.empty()) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s-k%02d-p%03d-%s", base.arch.arch_id.c_str(), params.k,
                  static_cast<int>(std::lround(params.p * 100)), hex64(params.seed).substr(8).c_str());
    variant_id = buf;
  }
  v.variant_id = std::move(variant_id);

  const double factor = eps * (params.k / 10.0) * params.p;
  const CounterRng root(params.seed);
  const std::size_t first = base.arch.first_perturbable();
  for (std::size_t i = first; i < v.weights.size(); ++i) {
    if (factor == 0.0) continue;  // keep bit patterns (incl. -0.0) untouched
    auto& values = v.weights[i].values;
    const double sd = factor * group_rms(values);
    RngStream rng(root.split(i));
    for (auto& w : values) w = static_cast<float>(static_cast<double>(w) + sd * rng.normal());
  }
  if (factor != 0.0) {
    RngStream disc(root.split(0xD15C));
    const double sd = factor * group_rms(v.disc_weights);
    for (auto& w : v.disc_weights) w = static_cast<float>(static_cast<double>(w) + sd * disc.normal());
  }
  return v;
}

std::vector<double> latent_vector(int latent_dim, std::uint64_t latent_seed) {
  RngStream rng(CounterRng(latent_seed).split(0x1A7E));
  std::vector<double> z(static_cast<std::size_t>(latent_dim));
  for (auto& v : z) v = rng.normal();
  return z;
}

ImageSample generate(const ModelVariant& variant, std::uint64_t latent_seed) {
  variant.validate();
  const auto& arch = variant.arch;
  const float slope = static_cast<float>(arch.leaky_slope);

  // Dense stem.
  const auto& stem = arch.layers.front();
  const std::vector<double> z = latent_vector(arch.latent_dim, latent_seed);
  const std::size_t n_out = static_cast<std::size_t>(stem.out_channels) * stem.spatial * stem.spatial;
  const auto& sw = variant.weights.front().values;
  nn::Buffer<float> act(n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    double s = sw[stem.weight_count() + o];
    const float* row = sw.data() + o * static_cast<std::size_t>(stem.in_channels);
    for (int i = 0; i < stem.in_channels; ++i) s += static_cast<double>(row[i]) * z[i];
    act[o] = nn::leaky(static_cast<float>(s), slope);
  }
  int side = stem.spatial;
  int channels = stem.out_channels;

  nn::Buffer<float> scratch, buf, weights;
  for (std::size_t li = 1; li < arch.layers.size(); ++li) {
    const auto& l = arch.layers[li];
    if (l.kind == LayerKind::upsample_conv) {
      buf.resize(act.size() * 4);
      nn::upsample2x(act.data(), channels, side, side, buf.data());
      act.swap(buf);
      side *= 2;
    }
    nn::ConvShape s{channels, l.out_channels, l.kernel, 1, l.kernel / 2, side, side};
    const auto& g = variant.weights[li].values;
    weights.assign(g.begin(), g.end());
    buf.assign(static_cast<std::size_t>(l.out_channels) * side * side, 0.0f);
    nn::conv_forward(s, weights.data(), weights.data() + l.weight_count(), act.data(), buf.data(), scratch);
    if (l.kind == LayerKind::output_conv) {
      for (auto& v : buf) v = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    } else {
      nn::leaky_relu(buf.data(), buf.data(), buf.size(), slope);
    }
    act.swap(buf);
    channels = l.out_channels;
  }

  ImageSample sample;
  sample.pixels = Image(arch.output.height, arch.output.width, arch.output.channels);
  for (std::size_t i = 0; i < act.size(); ++i) sample.pixels.data[i] = std::clamp(act[i], 0.0f, 1.0f);
  sample.model_id = variant.variant_id;
  sample.latent_seed = latent_seed;
  return sample;
}

std::vector<VariantParams> parameter_grid(std::uint64_t seed) {
  std::vector<VariantParams> grid;
  for (int k = 1; k <= 10; ++k) {
    for (int j = 1; j <= 10; ++j) {
      grid.push_back({k, j / 10.0, derive_seed(seed, "variant", static_cast<std::uint64_t>(k * 100 + j))});
    }
  }
  return grid;
}

WeightPca weights_pca_2d(const std::vector<ModelVariant>& variants, std::string_view group_name) {
  if (variants.size() < 3) throw UsageError("weights_pca_2d needs at least 3 variants, got " + std::to_string(variants.size()));
  const std::size_t n = variants.size();
  const std::size_t dim = variants.front().group(group_name).values.size();
  Eigen::MatrixXd x(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& g = variants[i].group(group_name).values;
    if (g.size() != dim) throw UsageError("weights_pca_2d: group '" + std::string(group_name) + "' differs in size across variants");
    for (std::size_t j = 0; j < dim; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = g[j];
  }
  x.rowwise() -= x.colwise().mean();

  WeightPca out;
  out.points.assign(n, {0.0, 0.0});
  for (auto& d : out.directions) d.assign(dim, 0.0);

  // Eigen-decompose the n x n Gram matrix; directions follow as X^T u / s.
  const Eigen::MatrixXd gram = x * x.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  const double total = gram.trace();
  if (!(total > 0.0)) return out;
  const double floor = 1e-12 * total;
  for (int c = 0; c < 2; ++c) {
    const Eigen::Index idx = static_cast<Eigen::Index>(n) - 1 - c;
    const double lambda = std::max(0.0, es.eigenvalues()(idx));
    if (lambda <= floor) break;
    Eigen::VectorXd dir = x.transpose() * es.eigenvectors().col(idx);
    dir.normalize();
    // Deterministic sign: largest-magnitude entry positive.
    Eigen::Index arg = 0;
    dir.cwiseAbs().maxCoeff(&arg);
    if (dir(arg) < 0) dir = -dir;
    out.explained_variance_ratio[c] = lambda / total;
    const Eigen::VectorXd proj = x * dir;
    for (std::size_t i = 0; i < n; ++i) out.points[i][c] = proj(static_cast<Eigen::Index>(i));
    out.directions[c].assign(dir.data(), dir.data() + dir.size());
  }
  return out;
}

}  // namespace ganprint::modelzoo
