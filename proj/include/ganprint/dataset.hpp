#pragma once

#include "ganprint/image.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ganprint {

struct ManifestEntry {
  std::string file;        // relative to the manifest's directory
  std::string model_id;
  std::uint64_t latent_seed = 0;
  std::optional<std::string> attack_tag;
  std::string split;       // train | val | test (free-form)
  std::optional<std::string> source;  // original image for attacked entries

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::vector<std::string> model_ids() const;  // sorted, unique
  Manifest filter_split(std::string_view split) const;
  friend bool operator==(const Manifest&, const Manifest&) = default;
};

// Images persisted as 8-bit PNG (RGB or gray).
void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);
// 8-bit quantisation as performed by write_png.
Image quantize8(const Image& img);

struct LabeledSet {
  std::vector<Image> images;
  std::vector<int> labels;
  std::size_t size() const { return images.size(); }
};

}  // namespace ganprint
