#pragma once

#include "ganprint/dataset.hpp"
#include "ganprint/image.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ganprint::imaging {

Image to_grayscale(const Image& rgb);

struct SsimResult {
  Image map;  // single channel, (H-6) x (W-6)
  double mean = 0.0;
};

// Local SSIM with a 7x7 Gaussian window (sigma 1.5), C1=(0.01L)^2, C2=(0.03L)^2, L=1.
SsimResult ssim(const Image& a, const Image& b);

// ---------------------------------------------------------------------------
// Attacks
// ---------------------------------------------------------------------------

enum class AttackKind { blur, rotate, mirror, scale, jpeg };
enum class MirrorAxis { horizontal, vertical, both };

struct AttackDescriptor {
  AttackKind kind = AttackKind::blur;
  int value = 0;  // blur kernel | rotation degrees | jpeg quality | scale factor in percent
  MirrorAxis axis = MirrorAxis::horizontal;

  static AttackDescriptor blur(int kernel);
  static AttackDescriptor rotate(int degrees);
  static AttackDescriptor mirror(MirrorAxis axis);
  static AttackDescriptor scale(double factor);
  static AttackDescriptor jpeg(int quality);

  // Throws UsageError when the parameter is outside the enumerated set.
  void validate() const;
  // "kind:parameter", e.g. "jpeg:50", "rot:135", "mirror:hv", "scale:0.5".
  std::string tag() const;
  static AttackDescriptor parse(std::string_view tag);
  friend bool operator==(const AttackDescriptor&, const AttackDescriptor&) = default;
};

// 3 blur + 4 rotations + 3 mirrors + 2 scales + 5 JPEG qualities = 17 attacks.
std::vector<AttackDescriptor> full_battery();

Image apply_attack(const Image& img, const AttackDescriptor& atk);
ImageSample apply_attack(const ImageSample& img, const AttackDescriptor& atk);

double blur_sigma(int kernel);
Image gaussian_blur(const Image& img, int kernel);
Image rotate(const Image& img, double degrees);
Image mirror(const Image& img, MirrorAxis axis);
Image rescale(const Image& img, double factor);

// JPEG-style lossy stage: per-channel 8x8 DCT, quantisation with the Annex K
// luminance table scaled for `quality`, dequantisation, inverse DCT.
Image jpeg_compress(const Image& img, int quality);
std::array<int, 64> quant_table(int quality);
const std::array<int, 64>& annex_k_luminance();

// Every source entry is kept; each attack is added with probability `rate`
// (rate 1 adds the full attack set for every image).
Manifest augment_dataset(const Manifest& manifest, const std::vector<AttackDescriptor>& attacks,
                         std::uint64_t seed, double rate = 1.0);

// File name used for an attacked copy of `file` ("a/b.png" + "jpeg:50" -> "a/b__jpeg-50.png").
std::string attacked_file_name(const std::string& file, const AttackDescriptor& atk);

}  // namespace ganprint::imaging
