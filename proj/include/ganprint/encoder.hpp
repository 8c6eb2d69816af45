#pragma once

#include "ganprint/common.hpp"
#include "ganprint/dataset.hpp"
#include "ganprint/image.hpp"
#include "ganprint/nn_ops.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ganprint::encoder {

inline constexpr int kNumStages = 4;

// Stage index 0..3 stands for L1..L4.
int parse_stage(std::string_view name);
std::string stage_name(int stage);

struct EncoderSpec {
  int in_channels = 3;
  int in_height = 32;
  int in_width = 32;
  int stem_channels = 16;
  std::array<int, kNumStages> stage_channels{16, 24, 32, 48};
  std::array<int, kNumStages> stage_strides{1, 2, 2, 2};
  int num_classes = 10;
  double leaky_slope = 0.2;

  void validate() const;
  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

struct ParamSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Residual CNN: stem conv, four stages of one residual block each (two 3x3
// convs, identity or 1x1 projection shortcut, leaky ReLU), global average
// pool and a fully-connected head. All parameters live in one flat array.
template <class T>
class BasicEncoderNet {
 public:
  struct ConvLayer {
    nn::ConvShape shape;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
  };
  struct Block {
    ConvLayer conv1, conv2;
    std::optional<ConvLayer> proj;
  };

  // Per-sample activations kept for the backward pass.
  struct Cache {
    nn::Buffer<T> input, stem_pre, stem_out;
    std::array<nn::Buffer<T>, kNumStages> c1_pre, c1_out, c2_out, proj_out, sum_pre, out;
    nn::Buffer<T> pooled, logits;
    nn::Buffer<T> scratch, scratch2, grad_a, grad_b, grad_c;
  };

  explicit BasicEncoderNet(const EncoderSpec& spec);

  const EncoderSpec& spec() const { return spec_; }
  nn::Buffer<T>& params() { return params_; }
  const nn::Buffer<T>& params() const { return params_; }
  const std::vector<ParamSlot>& layout() const { return layout_; }
  std::span<T> param(std::string_view name);
  std::span<const T> param(std::string_view name) const;
  std::size_t input_size() const {
    return static_cast<std::size_t>(spec_.in_channels) * spec_.in_height * spec_.in_width;
  }
  // (channels, height, width) of a stage output.
  std::array<int, 3> stage_shape(int stage) const;

  template <class U>
  BasicEncoderNet<U> cast() const {
    BasicEncoderNet<U> out(spec_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = static_cast<U>(params_[i]);
    return out;
  }

  void forward(const T* input, Cache& cache) const;
  // Accumulates d(loss)/d(params) into grad given d(loss)/d(logits). When
  // stage_grads is non-null, it receives d(loss)/d(stage output) for L1..L4.
  void backward(Cache& cache, const T* dlogits, T* grad,
                std::array<nn::Buffer<T>, kNumStages>* stage_grads = nullptr) const;

 private:
  ConvLayer add_conv(const std::string& name, const nn::ConvShape& shape);
  std::size_t add_param(const std::string& name, std::size_t size);

  EncoderSpec spec_;
  std::vector<ParamSlot> layout_;
  nn::Buffer<T> params_;
  ConvLayer stem_;
  std::array<Block, kNumStages> blocks_;
  std::size_t fc_weight_ = 0;
  std::size_t fc_bias_ = 0;
};

using EncoderNet = BasicEncoderNet<float>;

// He-style (leaky ReLU gain) Gaussian initialisation, zero biases.
EncoderNet init_encoder(const EncoderSpec& spec, std::uint64_t seed);

struct ForwardResult {
  std::vector<double> logits;
  std::array<std::vector<float>, kNumStages> activations;  // channel-major per stage
  std::array<std::array<int, 3>, kNumStages> shapes{};
};

ForwardResult forward(const EncoderNet& net, const Image& img);

std::vector<double> softmax(std::span<const double> logits);
double cross_entropy(std::span<const double> logits, int label);

struct TrainConfig {
  double learning_rate = 0.001;
  int batch_size = 30;
  int epochs = 30;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Mini-batch SGD with momentum on mean cross-entropy. Per-sample gradients
// are reduced in sample order, so results do not depend on `workers`.
std::vector<EpochStats> train(EncoderNet& net, const LabeledSet& data, const TrainConfig& cfg,
                              int workers = 1, const EpochCallback& on_epoch = {});

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;  // row = true class, column = predicted
  double accuracy = 0.0;

  std::int64_t at(int truth, int predicted) const {
    return counts[static_cast<std::size_t>(truth) * num_classes + predicted];
  }
  std::int64_t total() const;
};

std::vector<int> predict(const EncoderNet& net, const std::vector<Image>& images, int workers = 1);
ConfusionMatrix evaluate(const EncoderNet& net, const LabeledSet& data, int workers = 1);

// Gradient-weighted class activation map of a stage, max-normalised to [0,1].
Image gradcam(const EncoderNet& net, const Image& img, int stage, int class_index);

struct GradientCheckOptions {
  std::size_t num_params = 64;
  double step = 1e-4;
  std::uint64_t seed = 1;
  // Test hook: lets a fixture corrupt the analytic gradient before comparison.
  std::function<void(std::span<double>)> corrupt_gradient;
};

// Max relative error between backprop and central finite differences over a
// seeded random parameter subset (evaluated in double precision).
double gradient_check(const EncoderNet& net, const Image& img, int label,
                      const GradientCheckOptions& opts = {});

}  // namespace ganprint::encoder
