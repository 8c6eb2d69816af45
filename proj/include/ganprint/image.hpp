#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ganprint {

// Planar (channel-major) float image; pixel (c, y, x) lives at
// data[(c * height + y) * width + x].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

struct ImageSample {
  Image pixels;
  std::string model_id;
  std::uint64_t latent_seed = 0;
  std::optional<std::string> attack_tag;
};

}  // namespace ganprint
