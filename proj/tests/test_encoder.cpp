#include <doctest.h>

#include "ganprint/encoder.hpp"

#include <cmath>
#include <numeric>
#include <set>

using namespace ganprint;
using namespace ganprint::encoder;

namespace {

EncoderSpec tiny_spec(int classes = 3) {
  EncoderSpec s;
  s.in_height = 8;
  s.in_width = 8;
  s.stem_channels = 4;
  s.stage_channels = {4, 6, 6, 8};
  s.num_classes = classes;
  return s;
}

Image random_image(int h, int w, int c, std::uint64_t seed) {
  Image img(h, w, c);
  RngStream rng(seed);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

// Straightforward reference forward pass, written loop by loop from the named parameters.
struct Tensor {
  int c, h, w;
  std::vector<double> v;
  double& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
  double at(int ci, int y, int x) const { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
};

Tensor conv(const Tensor& in, std::span<const float> wt, std::span<const float> b, int cout, int k, int stride) {
  const int pad = k / 2;
  Tensor out{cout, (in.h + 2 * pad - k) / stride + 1, (in.w + 2 * pad - k) / stride + 1, {}};
  out.v.assign(static_cast<std::size_t>(out.c) * out.h * out.w, 0.0);
  for (int o = 0; o < cout; ++o)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        double acc = b[o];
        for (int i = 0; i < in.c; ++i)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int iy = y * stride + ky - pad, ix = x * stride + kx - pad;
              if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
              acc += wt[((static_cast<std::size_t>(o) * in.c + i) * k + ky) * k + kx] * in.at(i, iy, ix);
            }
        out.at(o, y, x) = acc;
      }
  return out;
}

void leaky(Tensor& t, double a) {
  for (auto& x : t.v) x = x > 0 ? x : a * x;
}

std::vector<double> reference_logits(const EncoderNet& net, const Image& img, Tensor* l1 = nullptr) {
  const auto& s = net.spec();
  Tensor x{img.channels, img.height, img.width, std::vector<double>(img.data.begin(), img.data.end())};
  x = conv(x, net.param("stem.weight"), net.param("stem.bias"), s.stem_channels, 3, 1);
  leaky(x, s.leaky_slope);
  for (int st = 0; st < kNumStages; ++st) {
    const std::string p = stage_name(st);
    const int co = s.stage_channels[st], stride = s.stage_strides[st];
    Tensor h = conv(x, net.param(p + ".conv1.weight"), net.param(p + ".conv1.bias"), co, 3, stride);
    leaky(h, s.leaky_slope);
    h = conv(h, net.param(p + ".conv2.weight"), net.param(p + ".conv2.bias"), co, 3, 1);
    Tensor sc = (stride != 1 || co != x.c) ? conv(x, net.param(p + ".proj.weight"), net.param(p + ".proj.bias"), co, 1, stride) : x;
    for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] += sc.v[i];
    leaky(h, s.leaky_slope);
    x = h;
    if (st == 0 && l1 != nullptr) *l1 = x;
  }
  std::vector<double> pooled(static_cast<std::size_t>(x.c), 0.0);
  for (int c = 0; c < x.c; ++c) {
    for (int i = 0; i < x.h * x.w; ++i) pooled[c] += x.v[static_cast<std::size_t>(c) * x.h * x.w + i];
    pooled[c] /= x.h * x.w;
  }
  const auto W = net.param("fc.weight");
  const auto B = net.param("fc.bias");
  std::vector<double> logits(static_cast<std::size_t>(s.num_classes));
  for (int k = 0; k < s.num_classes; ++k) {
    logits[k] = B[k];
    for (int c = 0; c < x.c; ++c) logits[k] += W[static_cast<std::size_t>(k) * x.c + c] * pooled[c];
  }
  return logits;
}

LabeledSet bright_dark(int n, std::uint64_t seed, const EncoderSpec& spec) {
  LabeledSet set;
  RngStream rng(seed);
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    Image img(spec.in_height, spec.in_width, spec.in_channels);
    for (auto& v : img.data) v = static_cast<float>((label ? 0.6 : 0.1) + 0.3 * rng.uniform());
    set.images.push_back(img);
    set.labels.push_back(label);
  }
  return set;
}

}  // namespace

TEST_CASE("stage names") {
  CHECK(parse_stage("L1") == 0);
  CHECK(parse_stage("4") == 3);
  CHECK(stage_name(2) == "L3");
  CHECK_THROWS_AS(parse_stage("L5"), UsageError);
}

TEST_CASE("spec validation") {
  auto s = tiny_spec();
  s.stage_strides[1] = 3;
  CHECK_THROWS_AS(s.validate(), SpecViolation);
  s = tiny_spec();
  s.num_classes = 0;
  CHECK_THROWS_AS(EncoderNet{s}, SpecViolation);
}

TEST_CASE("parameter layout tiles the flat array") {
  const EncoderNet net(EncoderSpec{});
  std::size_t next = 0;
  std::set<std::string> names;
  for (const auto& slot : net.layout()) {
    CHECK(slot.offset == next);
    next += slot.size;
    names.insert(slot.name);
  }
  CHECK(next == net.params().size());
  CHECK(names.size() == net.layout().size());
  CHECK(names.count("L1.proj.weight") == 0);  // 16 -> 16, stride 1: identity shortcut
  CHECK(names.count("L2.proj.weight") == 1);
  CHECK(net.param("fc.weight").size() == 10u * 48);
  CHECK(net.stage_shape(0) == std::array<int, 3>{16, 32, 32});
  CHECK(net.stage_shape(3) == std::array<int, 3>{48, 4, 4});
  CHECK_THROWS_AS(net.param("nope"), KeyError);
}

TEST_CASE("initialisation: zero biases, He-scaled weights") {
  const auto net = init_encoder(EncoderSpec{}, 5);
  for (float b : net.param("L3.conv2.bias")) CHECK(b == 0.0f);
  const auto w = net.param("L4.conv2.weight");
  double sq = 0;
  for (float v : w) sq += double(v) * v;
  const double fan_in = 48 * 9;
  CHECK(std::sqrt(sq / w.size()) == doctest::Approx(std::sqrt(2.0 / ((1 + 0.04) * fan_in))).epsilon(0.05));
  CHECK(init_encoder(EncoderSpec{}, 5).params() == net.params());
  CHECK(init_encoder(EncoderSpec{}, 6).params() != net.params());
}

TEST_CASE("softmax normalises within 1e-9") {
  const std::vector<std::vector<double>> cases{{0, 0, 0}, {1000, -1000, 3}, {-745, -746, -800}, {1e-3, 2e-3}};
  for (const auto& l : cases) {
    const auto p = softmax(l);
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    CHECK(std::abs(s - 1.0) <= 1e-9);
    for (double v : p) CHECK(std::isfinite(v));
  }
  CHECK(cross_entropy(std::vector<double>{1000, 0}, 0) == doctest::Approx(0.0));
  CHECK(cross_entropy(std::vector<double>{0, 1000}, 0) == doctest::Approx(1000.0));
  CHECK(cross_entropy(std::vector<double>{0, 0, 0, 0}, 2) == doctest::Approx(std::log(4.0)));
}

TEST_CASE("forward pass matches a loop-by-loop reference network") {
  const auto spec = tiny_spec();
  const auto net = init_encoder(spec, 9);
  for (std::uint64_t seed : {1, 2}) {
    const Image img = random_image(8, 8, 3, seed);
    Tensor l1{};
    const auto expect = reference_logits(net, img, &l1);
    const auto got = forward(net, img);
    REQUIRE(got.logits.size() == expect.size());
    for (std::size_t k = 0; k < expect.size(); ++k) CHECK(got.logits[k] == doctest::Approx(expect[k]).epsilon(1e-5));
    REQUIRE(got.activations[0].size() == l1.v.size());
    double worst = 0;
    for (std::size_t i = 0; i < l1.v.size(); ++i) worst = std::max(worst, std::abs(got.activations[0][i] - l1.v[i]));
    CHECK(worst < 1e-5);
  }
  // Full-size network too.
  const auto big = init_encoder(EncoderSpec{}, 3);
  const Image img = random_image(32, 32, 3, 4);
  const auto expect = reference_logits(big, img);
  const auto got = forward(big, img);
  for (std::size_t k = 0; k < expect.size(); ++k) CHECK(got.logits[k] == doctest::Approx(expect[k]).epsilon(1e-4));
}

TEST_CASE("backprop agrees with central differences (max rel. error <= 1e-4)") {
  const auto net = init_encoder(tiny_spec(), 13);
  for (std::uint64_t seed : {1, 2, 3}) {
    const Image img = random_image(8, 8, 3, seed);
    GradientCheckOptions o;
    o.num_params = 400;
    o.seed = seed;
    const double err = gradient_check(net, img, static_cast<int>(seed % 3), o);
    CHECK(err <= 1e-4);
  }
  CHECK(net.params().size() <= 5000);
}

TEST_CASE("gradient check catches a corrupted gradient") {
  const auto net = init_encoder(tiny_spec(), 13);
  GradientCheckOptions o;
  o.num_params = 400;
  o.corrupt_gradient = [](std::span<double> g) {
    for (auto& v : g) v *= 1.01;
  };
  CHECK(gradient_check(net, random_image(8, 8, 3, 1), 0, o) > 1e-3);
}

TEST_CASE("training separates an easy two-class problem, independent of workers") {
  auto spec = tiny_spec(2);
  const auto data = bright_dark(40, 3, spec);
  TrainConfig cfg{0.05, 8, 15, 0.9, 21};
  auto a = init_encoder(spec, 1);
  auto b = a;
  const auto ha = train(a, data, cfg, 1);
  const auto hb = train(b, data, cfg, 3);
  CHECK(a.params() == b.params());
  REQUIRE(ha.size() == 15);
  CHECK(ha.back().loss < ha.front().loss);
  const auto cm = evaluate(a, bright_dark(20, 4, spec));
  CHECK(cm.accuracy >= 0.95);
  CHECK(cm.total() == 20);
  std::int64_t diag = 0;
  for (int k = 0; k < 2; ++k) diag += cm.at(k, k);
  CHECK(static_cast<double>(diag) / 20 == doctest::Approx(cm.accuracy));
}

TEST_CASE("training input and numerical failures are reported") {
  auto spec = tiny_spec(2);
  auto net = init_encoder(spec, 1);
  auto data = bright_dark(10, 3, spec);
  CHECK_THROWS_AS(train(net, LabeledSet{}, TrainConfig{}), UsageError);
  auto bad = data;
  bad.labels[0] = 5;
  CHECK_THROWS_AS(train(net, bad, TrainConfig{}), UsageError);
  auto wrong = data;
  wrong.images[0] = Image(4, 4, 3);
  CHECK_THROWS_AS(train(net, wrong, TrainConfig{}), UsageError);
  TrainConfig blowup{1e30, 5, 3, 0.9, 1};
  CHECK_THROWS_AS(train(net, data, blowup), NumericalFailure);
  CHECK_THROWS_AS((TrainConfig{0.01, 0, 1, 0.9, 0}.validate()), UsageError);
}

TEST_CASE("Grad-CAM maps are stage-sized and normalised") {
  const auto net = init_encoder(EncoderSpec{}, 7);
  const Image img = random_image(32, 32, 3, 2);
  for (int stage = 0; stage < kNumStages; ++stage) {
    const Image cam = gradcam(net, img, stage, 1);
    const auto [c, h, w] = net.stage_shape(stage);
    CHECK(cam.height == h);
    CHECK(cam.width == w);
    CHECK(cam.channels == 1);
    float mx = 0;
    for (float v : cam.data) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
      mx = std::max(mx, v);
    }
    CHECK((mx == 1.0f || mx == 0.0f));
  }
  CHECK_THROWS_AS(gradcam(net, img, 4, 0), UsageError);
  CHECK_THROWS_AS(gradcam(net, img, 0, 10), UsageError);
}
