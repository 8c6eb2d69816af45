#include "ganprint/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ganprint::encoder {

int parse_stage(std::string_view name) {
  if (name == "L1" || name == "l1" || name == "1") return 0;
  if (name == "L2" || name == "l2" || name == "2") return 1;
  if (name == "L3" || name == "l3" || name == "3") return 2;
  if (name == "L4" || name == "l4" || name == "4") return 3;
  throw UsageError("unknown encoder stage '" + std::string(name) + "' (expected L1..L4)");
}

std::string stage_name(int stage) { return "L" + std::to_string(stage + 1); }

void EncoderSpec::validate() const {
  auto fail = [](const std::string& m) { throw SpecViolation("encoder spec: " + m); };
  if (in_channels <= 0 || in_height <= 0 || in_width <= 0) fail("input dimensions must be positive");
  if (stem_channels <= 0) fail("stem channels must be positive");
  if (num_classes < 1) fail("num_classes must be >= 1");
  int prev = stem_channels;
  for (int s = 0; s < kNumStages; ++s) {
    if (stage_channels[s] <= 0) fail("stage channels must be positive");
    if (stage_channels[s] < prev && s > 0) fail("stage channel counts must be nondecreasing");
    if (stage_strides[s] != 1 && stage_strides[s] != 2) fail("stage strides must be 1 or 2");
    prev = stage_channels[s];
  }
}

template <class T>
std::size_t BasicEncoderNet<T>::add_param(const std::string& name, std::size_t size) {
  const std::size_t offset = params_.size();
  layout_.push_back({name, offset, size});
  params_.resize(offset + size, T(0));
  return offset;
}

template <class T>
typename BasicEncoderNet<T>::ConvLayer BasicEncoderNet<T>::add_conv(const std::string& name,
                                                                   const nn::ConvShape& shape) {
  ConvLayer layer;
  layer.shape = shape;
  layer.weight_offset = add_param(name + ".weight", shape.weight_count());
  layer.bias_offset = add_param(name + ".bias", static_cast<std::size_t>(shape.cout));
  return layer;
}

template <class T>
BasicEncoderNet<T>::BasicEncoderNet(const EncoderSpec& spec) : spec_(spec) {
  spec_.validate();
  int h = spec.in_height, w = spec.in_width;
  stem_ = add_conv("stem", {spec.in_channels, spec.stem_channels, 3, 1, 1, h, w});
  int c = spec.stem_channels;
  for (int s = 0; s < kNumStages; ++s) {
    const std::string prefix = stage_name(s);
    const int co = spec.stage_channels[s];
    const int stride = spec.stage_strides[s];
    Block& b = blocks_[s];
    b.conv1 = add_conv(prefix + ".conv1", {c, co, 3, stride, 1, h, w});
    const int ho = b.conv1.shape.hout(), wo = b.conv1.shape.wout();
    b.conv2 = add_conv(prefix + ".conv2", {co, co, 3, 1, 1, ho, wo});
    if (stride != 1 || co != c) b.proj = add_conv(prefix + ".proj", {c, co, 1, stride, 0, h, w});
    h = ho;
    w = wo;
    c = co;
  }
  fc_weight_ = add_param("fc.weight", static_cast<std::size_t>(spec.num_classes) * c);
  fc_bias_ = add_param("fc.bias", static_cast<std::size_t>(spec.num_classes));
}

template <class T>
std::span<T> BasicEncoderNet<T>::param(std::string_view name) {
  for (const auto& slot : layout_) {
    if (slot.name == name) return {params_.data() + slot.offset, slot.size};
  }
  throw KeyError("encoder has no parameter '" + std::string(name) + "'");
}

template <class T>
std::span<const T> BasicEncoderNet<T>::param(std::string_view name) const {
  for (const auto& slot : layout_) {
    if (slot.name == name) return {params_.data() + slot.offset, slot.size};
  }
  throw KeyError("encoder has no parameter '" + std::string(name) + "'");
}

template <class T>
std::array<int, 3> BasicEncoderNet<T>::stage_shape(int stage) const {
  const auto& s = blocks_.at(static_cast<std::size_t>(stage)).conv2.shape;
  return {s.cout, s.hout(), s.wout()};
}

template <class T>
void BasicEncoderNet<T>::forward(const T* input, Cache& cache) const {
  const T slope = static_cast<T>(spec_.leaky_slope);
  const T* p = params_.data();
  auto run_conv = [&](const ConvLayer& l, const T* in, nn::Buffer<T>& out) {
    out.resize(static_cast<std::size_t>(l.shape.cout) * l.shape.out_plane());
    nn::conv_forward(l.shape, p + l.weight_offset, p + l.bias_offset, in, out.data(), cache.scratch);
  };

  cache.input.assign(input, input + input_size());
  run_conv(stem_, cache.input.data(), cache.stem_pre);
  cache.stem_out.resize(cache.stem_pre.size());
  nn::leaky_relu(cache.stem_pre.data(), cache.stem_out.data(), cache.stem_pre.size(), slope);

  const nn::Buffer<T>* x = &cache.stem_out;
  for (int s = 0; s < kNumStages; ++s) {
    const Block& b = blocks_[s];
    run_conv(b.conv1, x->data(), cache.c1_pre[s]);
    cache.c1_out[s].resize(cache.c1_pre[s].size());
    nn::leaky_relu(cache.c1_pre[s].data(), cache.c1_out[s].data(), cache.c1_pre[s].size(), slope);
    run_conv(b.conv2, cache.c1_out[s].data(), cache.c2_out[s]);
    const nn::Buffer<T>* shortcut = x;
    if (b.proj) {
      run_conv(*b.proj, x->data(), cache.proj_out[s]);
      shortcut = &cache.proj_out[s];
    }
    auto& sum = cache.sum_pre[s];
    sum.resize(cache.c2_out[s].size());
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = cache.c2_out[s][i] + (*shortcut)[i];
    cache.out[s].resize(sum.size());
    nn::leaky_relu(sum.data(), cache.out[s].data(), sum.size(), slope);
    x = &cache.out[s];
  }

  const int c4 = spec_.stage_channels[kNumStages - 1];
  const std::size_t plane = x->size() / static_cast<std::size_t>(c4);
  cache.pooled.assign(static_cast<std::size_t>(c4), T(0));
  for (int c = 0; c < c4; ++c) {
    T acc = T(0);
    for (std::size_t i = 0; i < plane; ++i) acc += (*x)[c * plane + i];
    cache.pooled[c] = acc / static_cast<T>(plane);
  }
  cache.logits.assign(static_cast<std::size_t>(spec_.num_classes), T(0));
  for (int k = 0; k < spec_.num_classes; ++k) {
    T acc = p[fc_bias_ + k];
    const T* row = p + fc_weight_ + static_cast<std::size_t>(k) * c4;
    for (int c = 0; c < c4; ++c) acc += row[c] * cache.pooled[c];
    cache.logits[k] = acc;
  }
}

template <class T>
void BasicEncoderNet<T>::backward(Cache& cache, const T* dlogits, T* grad,
                                  std::array<nn::Buffer<T>, kNumStages>* stage_grads) const {
  const T slope = static_cast<T>(spec_.leaky_slope);
  const T* p = params_.data();
  const int c4 = spec_.stage_channels[kNumStages - 1];

  // Head.
  nn::Buffer<T> dpooled(static_cast<std::size_t>(c4), T(0));
  for (int k = 0; k < spec_.num_classes; ++k) {
    const T g = dlogits[k];
    grad[fc_bias_ + k] += g;
    const T* row = p + fc_weight_ + static_cast<std::size_t>(k) * c4;
    T* grow = grad + fc_weight_ + static_cast<std::size_t>(k) * c4;
    for (int c = 0; c < c4; ++c) {
      grow[c] += g * cache.pooled[c];
      dpooled[c] += row[c] * g;
    }
  }
  auto& d_out = cache.grad_a;
  const std::size_t plane4 = cache.out[kNumStages - 1].size() / static_cast<std::size_t>(c4);
  d_out.resize(cache.out[kNumStages - 1].size());
  for (int c = 0; c < c4; ++c) {
    const T g = dpooled[c] / static_cast<T>(plane4);
    std::fill_n(d_out.begin() + static_cast<std::ptrdiff_t>(c * plane4), plane4, g);
  }

  auto& d_sum = cache.grad_b;
  auto& d_x = cache.grad_c;
  auto& d_c1 = cache.scratch2;
  for (int s = kNumStages - 1; s >= 0; --s) {
    if (stage_grads != nullptr) (*stage_grads)[s] = d_out;
    const Block& b = blocks_[s];
    const nn::Buffer<T>& x_in = s == 0 ? cache.stem_out : cache.out[s - 1];

    d_sum.resize(d_out.size());
    nn::leaky_relu_backward(cache.sum_pre[s].data(), d_out.data(), d_sum.data(), d_sum.size(), slope);

    d_c1.assign(cache.c1_out[s].size(), T(0));
    nn::conv_backward(b.conv2.shape, p + b.conv2.weight_offset, cache.c1_out[s].data(), d_sum.data(),
                      grad + b.conv2.weight_offset, grad + b.conv2.bias_offset, d_c1.data(), cache.scratch);
    nn::leaky_relu_backward(cache.c1_pre[s].data(), d_c1.data(), d_c1.data(), d_c1.size(), slope);

    d_x.assign(x_in.size(), T(0));
    nn::conv_backward(b.conv1.shape, p + b.conv1.weight_offset, x_in.data(), d_c1.data(),
                      grad + b.conv1.weight_offset, grad + b.conv1.bias_offset, d_x.data(), cache.scratch);
    if (b.proj) {
      nn::conv_backward(b.proj->shape, p + b.proj->weight_offset, x_in.data(), d_sum.data(),
                        grad + b.proj->weight_offset, grad + b.proj->bias_offset, d_x.data(), cache.scratch);
    } else {
      for (std::size_t i = 0; i < d_x.size(); ++i) d_x[i] += d_sum[i];
    }
    d_out.swap(d_x);
  }

  nn::leaky_relu_backward(cache.stem_pre.data(), d_out.data(), d_out.data(), d_out.size(), slope);
  nn::conv_backward(stem_.shape, p + stem_.weight_offset, cache.input.data(), d_out.data(),
                    grad + stem_.weight_offset, grad + stem_.bias_offset, static_cast<T*>(nullptr),
                    cache.scratch);
}

template class BasicEncoderNet<float>;
template class BasicEncoderNet<double>;

EncoderNet init_encoder(const EncoderSpec& spec, std::uint64_t seed) {
  EncoderNet net(spec);
  const CounterRng root(seed);
  const double slope = spec.leaky_slope;
  std::uint64_t tag = 0;
  for (const auto& slot : net.layout()) {
    RngStream rng(root.split(tag++));
    auto values = net.param(slot.name);
    if (slot.name.ends_with(".bias")) continue;  // zero
    std::size_t fan_in = 0;
    double sd = 0.0;
    if (slot.name == "fc.weight") {
      fan_in = static_cast<std::size_t>(spec.stage_channels[kNumStages - 1]);
      sd = 1.0 / std::sqrt(3.0 * static_cast<double>(fan_in));
    } else {
      // weight count / out channels = in * k * k
      const std::string layer = slot.name.substr(0, slot.name.size() - 7);
      const std::size_t cout = net.param(layer + ".bias").size();
      fan_in = slot.size / cout;
      sd = std::sqrt(2.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
    }
    for (auto& v : values) v = static_cast<float>(sd * rng.normal());
  }
  return net;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  for (auto& v : out) v /= s;
  return out;
}

double cross_entropy(std::span<const double> logits, int label) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double l : logits) s += std::exp(l - m);
  return std::log(s) + m - logits[static_cast<std::size_t>(label)];
}

namespace {

void check_image(const EncoderSpec& spec, const Image& img) {
  if (img.channels != spec.in_channels || img.height != spec.in_height || img.width != spec.in_width) {
    throw UsageError("encoder input must be " + std::to_string(spec.in_height) + "x" +
                     std::to_string(spec.in_width) + "x" + std::to_string(spec.in_channels) + ", got " +
                     std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                     std::to_string(img.channels));
  }
}

template <class T>
std::vector<double> logits_of(const typename BasicEncoderNet<T>::Cache& cache) {
  return {cache.logits.begin(), cache.logits.end()};
}

int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

ForwardResult forward(const EncoderNet& net, const Image& img) {
  check_image(net.spec(), img);
  EncoderNet::Cache cache;
  net.forward(img.data.data(), cache);
  ForwardResult r;
  r.logits = logits_of<float>(cache);
  for (int s = 0; s < kNumStages; ++s) {
    r.activations[s].assign(cache.out[s].begin(), cache.out[s].end());
    r.shapes[s] = net.stage_shape(s);
  }
  return r;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw UsageError("learning_rate must be >= 0");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (epochs < 0) throw UsageError("epochs must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must be in [0,1)");
}

std::vector<EpochStats> train(EncoderNet& net, const LabeledSet& data, const TrainConfig& cfg, int workers,
                              const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.images.empty()) throw UsageError("train: empty training set");
  if (data.labels.size() != data.images.size()) throw UsageError("train: label count differs from image count");
  const int classes = net.spec().num_classes;
  for (std::size_t i = 0; i < data.size(); ++i) {
    check_image(net.spec(), data.images[i]);
    if (data.labels[i] < 0 || data.labels[i] >= classes) {
      throw UsageError("train: label " + std::to_string(data.labels[i]) + " outside [0, " + std::to_string(classes) + ")");
    }
  }

  const std::size_t n = data.size();
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t nparams = net.params().size();
  nn::Buffer<float> velocity(nparams, 0.0f), mean_grad(nparams);
  std::vector<nn::Buffer<float>> grads(batch, nn::Buffer<float>(nparams));
  std::vector<EncoderNet::Cache> caches(batch);
  std::vector<double> losses(batch);
  std::vector<int> correct(batch);
  const float lr = static_cast<float>(cfg.learning_rate);
  const float mu = static_cast<float>(cfg.momentum);

  std::vector<EpochStats> history;
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream(CounterRng(cfg.seed).split(static_cast<std::uint64_t>(epoch))).shuffle(order);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0, b = 0; start < n; start += batch, ++b) {
      const std::size_t nb = std::min(batch, n - start);
      parallel_for(nb, workers, [&](std::size_t i) {
        const std::size_t idx = order[start + i];
        auto& g = grads[i];
        std::fill(g.begin(), g.end(), 0.0f);
        auto& cache = caches[i];
        net.forward(data.images[idx].data.data(), cache);
        const std::vector<double> logits = logits_of<float>(cache);
        const int label = data.labels[idx];
        losses[i] = cross_entropy(logits, label);
        correct[i] = argmax(logits) == label ? 1 : 0;
        std::vector<double> prob = softmax(logits);
        prob[static_cast<std::size_t>(label)] -= 1.0;
        std::vector<float> dlogits(prob.begin(), prob.end());
        net.backward(cache, dlogits.data(), g.data());
      });
      for (std::size_t i = 0; i < nb; ++i) {
        if (!std::isfinite(losses[i])) {
          throw NumericalFailure("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                 std::to_string(b + 1));
        }
        loss_sum += losses[i];
        hits += static_cast<std::size_t>(correct[i]);
      }
      std::fill(mean_grad.begin(), mean_grad.end(), 0.0f);
      for (std::size_t i = 0; i < nb; ++i) {
        const float* g = grads[i].data();
        for (std::size_t j = 0; j < nparams; ++j) mean_grad[j] += g[j];
      }
      const float inv = 1.0f / static_cast<float>(nb);
      auto& params = net.params();
      for (std::size_t j = 0; j < nparams; ++j) {
        velocity[j] = mu * velocity[j] + mean_grad[j] * inv;
        params[j] -= lr * velocity[j];
      }
    }
    EpochStats st{epoch + 1, loss_sum / static_cast<double>(n), static_cast<double>(hits) / static_cast<double>(n)};
    if (!std::isfinite(st.loss)) throw NumericalFailure("train: non-finite loss at epoch " + std::to_string(epoch + 1));
    history.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return history;
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::vector<int> predict(const EncoderNet& net, const std::vector<Image>& images, int workers) {
  std::vector<int> out(images.size(), 0);
  for (const auto& img : images) check_image(net.spec(), img);
  parallel_for(images.size(), workers, [&](std::size_t i) {
    EncoderNet::Cache cache;
    net.forward(images[i].data.data(), cache);
    out[i] = argmax(logits_of<float>(cache));
  });
  return out;
}

ConfusionMatrix evaluate(const EncoderNet& net, const LabeledSet& data, int workers) {
  ConfusionMatrix cm;
  cm.num_classes = net.spec().num_classes;
  cm.counts.assign(static_cast<std::size_t>(cm.num_classes) * cm.num_classes, 0);
  const std::vector<int> pred = predict(net, data.images, workers);
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int truth = data.labels.at(i);
    if (truth < 0 || truth >= cm.num_classes) throw UsageError("evaluate: label outside class range");
    ++cm.counts[static_cast<std::size_t>(truth) * cm.num_classes + pred[i]];
    if (truth == pred[i]) ++hits;
  }
  cm.accuracy = pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
  return cm;
}

Image gradcam(const EncoderNet& net, const Image& img, int stage, int class_index) {
  if (stage < 0 || stage >= kNumStages) throw UsageError("gradcam: stage must be L1..L4");
  if (class_index < 0 || class_index >= net.spec().num_classes) throw UsageError("gradcam: class index out of range");
  check_image(net.spec(), img);

  EncoderNet::Cache cache;
  net.forward(img.data.data(), cache);
  std::vector<float> dlogits(static_cast<std::size_t>(net.spec().num_classes), 0.0f);
  dlogits[static_cast<std::size_t>(class_index)] = 1.0f;
  std::vector<float> scratch_grad(net.params().size(), 0.0f);
  std::array<nn::Buffer<float>, kNumStages> stage_grads;
  net.backward(cache, dlogits.data(), scratch_grad.data(), &stage_grads);

  const auto [channels, h, w] = net.stage_shape(stage);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const auto& act = cache.out[stage];
  const auto& grad = stage_grads[stage];
  std::vector<double> cam(plane, 0.0);
  for (int c = 0; c < channels; ++c) {
    double alpha = 0.0;
    for (std::size_t i = 0; i < plane; ++i) alpha += grad[c * plane + i];
    alpha /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i) cam[i] += alpha * act[c * plane + i];
  }
  double peak = 0.0;
  for (auto& v : cam) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  Image map(h, w, 1);
  if (peak > 0.0) {
    for (std::size_t i = 0; i < plane; ++i) map.data[i] = static_cast<float>(cam[i] / peak);
  }
  return map;
}

double gradient_check(const EncoderNet& net, const Image& img, int label, const GradientCheckOptions& opts) {
  check_image(net.spec(), img);
  if (label < 0 || label >= net.spec().num_classes) throw UsageError("gradient_check: label out of range");
  auto dnet = net.cast<double>();
  const std::vector<double> input(img.data.begin(), img.data.end());
  BasicEncoderNet<double>::Cache cache;

  auto loss_at = [&]() {
    dnet.forward(input.data(), cache);
    return cross_entropy(cache.logits, label);
  };

  dnet.forward(input.data(), cache);
  std::vector<double> dlogits = softmax(cache.logits);
  dlogits[static_cast<std::size_t>(label)] -= 1.0;
  std::vector<double> analytic(dnet.params().size(), 0.0);
  dnet.backward(cache, dlogits.data(), analytic.data());
  if (opts.corrupt_gradient) opts.corrupt_gradient(analytic);

  std::vector<std::size_t> idx(analytic.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  RngStream(opts.seed).shuffle(idx);
  idx.resize(std::min(opts.num_params, idx.size()));

  double worst = 0.0;
  auto& params = dnet.params();
  for (std::size_t j : idx) {
    const double saved = params[j];
    params[j] = saved + opts.step;
    const double up = loss_at();
    params[j] = saved - opts.step;
    const double down = loss_at();
    params[j] = saved;
    const double numeric = (up - down) / (2.0 * opts.step);
    const double denom = std::max({std::abs(analytic[j]), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic[j] - numeric) / denom);
  }
  return worst;
}

}  // namespace ganprint::encoder
