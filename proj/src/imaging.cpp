#include "ganprint/imaging.hpp"

#include "ganprint/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace ganprint::imaging {

Image to_grayscale(const Image& rgb) {
  if (rgb.channels != 3) {
    throw UsageError("to_grayscale expects 3 channels, got " + std::to_string(rgb.channels));
  }
  Image g(rgb.height, rgb.width, 1);
  const std::size_t plane = rgb.plane_size();
  for (std::size_t i = 0; i < plane; ++i) {
    const double v = 0.299 * rgb.data[i] + 0.587 * rgb.data[plane + i] + 0.114 * rgb.data[2 * plane + i];
    g.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return g;
}

namespace {

constexpr int kSsimWindow = 7;
constexpr double kSsimSigma = 1.5;

std::array<double, kSsimWindow * kSsimWindow> ssim_window() {
  std::array<double, kSsimWindow> g{};
  double s = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double t = i - kSsimWindow / 2;
    g[i] = std::exp(-t * t / (2 * kSsimSigma * kSsimSigma));
    s += g[i];
  }
  std::array<double, kSsimWindow * kSsimWindow> w{};
  for (int y = 0; y < kSsimWindow; ++y)
    for (int x = 0; x < kSsimWindow; ++x) w[y * kSsimWindow + x] = g[y] * g[x] / (s * s);
  return w;
}

}  // namespace

SsimResult ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw UsageError("ssim: image dimensions differ");
  if (a.channels != 1) throw UsageError("ssim expects single-channel images");
  if (a.height < kSsimWindow || a.width < kSsimWindow) throw UsageError("ssim: image smaller than the 7x7 window");
  static const auto window = ssim_window();
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;

  const int ho = a.height - kSsimWindow + 1;
  const int wo = a.width - kSsimWindow + 1;
  SsimResult r;
  r.map = Image(ho, wo, 1);
  double total = 0.0;
  for (int y = 0; y < ho; ++y) {
    for (int x = 0; x < wo; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < kSsimWindow; ++dy) {
        for (int dx = 0; dx < kSsimWindow; ++dx) {
          const double w = window[dy * kSsimWindow + dx];
          const double va = a.at(0, y + dy, x + dx);
          const double vb = b.at(0, y + dy, x + dx);
          ma += w * va;
          mb += w * vb;
          saa += w * (va * va);
          sbb += w * (vb * vb);
          sab += w * (va * vb);
        }
      }
      const double var_a = saa - ma * ma;
      const double var_b = sbb - mb * mb;
      const double cov = sab - ma * mb;
      const double num = (2 * ma * mb + c1) * (2 * cov + c2);
      const double den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
      const double v = std::clamp(num / den, -1.0, 1.0);
      r.map.at(0, y, x) = static_cast<float>(v);
      total += v;
    }
  }
  r.mean = total / (static_cast<double>(ho) * wo);
  return r;
}

// ---------------------------------------------------------------------------

AttackDescriptor AttackDescriptor::blur(int kernel) { return {AttackKind::blur, kernel, MirrorAxis::horizontal}; }
AttackDescriptor AttackDescriptor::rotate(int degrees) { return {AttackKind::rotate, degrees, MirrorAxis::horizontal}; }
AttackDescriptor AttackDescriptor::mirror(MirrorAxis axis) { return {AttackKind::mirror, 0, axis}; }
AttackDescriptor AttackDescriptor::scale(double factor) {
  return {AttackKind::scale, static_cast<int>(std::lround(factor * 100)), MirrorAxis::horizontal};
}
AttackDescriptor AttackDescriptor::jpeg(int quality) { return {AttackKind::jpeg, quality, MirrorAxis::horizontal}; }

void AttackDescriptor::validate() const {
  auto one_of = [&](std::initializer_list<int> allowed) {
    return std::find(allowed.begin(), allowed.end(), value) != allowed.end();
  };
  bool ok = false;
  switch (kind) {
    case AttackKind::blur: ok = one_of({3, 9, 15}); break;
    case AttackKind::rotate: ok = one_of({45, 135, 255, 315}); break;
    case AttackKind::mirror: ok = true; break;
    case AttackKind::scale: ok = one_of({50, 150}); break;
    case AttackKind::jpeg: ok = one_of({50, 60, 70, 80, 90}); break;
  }
  if (!ok) throw UsageError("attack parameter outside the allowed set: " + tag());
}

std::string AttackDescriptor::tag() const {
  switch (kind) {
    case AttackKind::blur: return "blur:" + std::to_string(value);
    case AttackKind::rotate: return "rot:" + std::to_string(value);
    case AttackKind::mirror:
      return std::string("mirror:") + (axis == MirrorAxis::horizontal ? "h" : axis == MirrorAxis::vertical ? "v" : "hv");
    case AttackKind::scale: {
      char buf[32];
      std::snprintf(buf, sizeof buf, "scale:%g", value / 100.0);
      return buf;
    }
    case AttackKind::jpeg: return "jpeg:" + std::to_string(value);
  }
  return "?";
}

AttackDescriptor AttackDescriptor::parse(std::string_view tag) {
  const auto colon = tag.find(':');
  if (colon == std::string_view::npos) throw UsageError("attack tag '" + std::string(tag) + "' is not kind:parameter");
  const std::string kind(tag.substr(0, colon));
  const std::string param(tag.substr(colon + 1));
  auto to_int = [&]() {
    try {
      std::size_t used = 0;
      const int v = std::stoi(param, &used);
      if (used != param.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw UsageError("attack tag '" + std::string(tag) + "' has a non-integer parameter");
    }
  };
  AttackDescriptor d;
  if (kind == "blur") {
    d = blur(to_int());
  } else if (kind == "rot" || kind == "rotate") {
    d = rotate(to_int());
  } else if (kind == "mirror") {
    if (param == "h" || param == "horizontal") d = mirror(MirrorAxis::horizontal);
    else if (param == "v" || param == "vertical") d = mirror(MirrorAxis::vertical);
    else if (param == "hv" || param == "both") d = mirror(MirrorAxis::both);
    else throw UsageError("unknown mirror axis in '" + std::string(tag) + "'");
  } else if (kind == "scale") {
    try {
      d = scale(std::stod(param));
    } catch (const std::invalid_argument&) {
      throw UsageError("attack tag '" + std::string(tag) + "' has a non-numeric factor");
    }
  } else if (kind == "jpeg") {
    d = jpeg(to_int());
  } else {
    throw UsageError("unknown attack kind '" + kind + "'");
  }
  d.validate();
  return d;
}

std::vector<AttackDescriptor> full_battery() {
  return {
      AttackDescriptor::blur(3),    AttackDescriptor::blur(9),    AttackDescriptor::blur(15),
      AttackDescriptor::rotate(45), AttackDescriptor::rotate(135), AttackDescriptor::rotate(255),
      AttackDescriptor::rotate(315), AttackDescriptor::mirror(MirrorAxis::horizontal),
      AttackDescriptor::mirror(MirrorAxis::vertical), AttackDescriptor::mirror(MirrorAxis::both),
      AttackDescriptor::scale(0.5), AttackDescriptor::scale(1.5),
      AttackDescriptor::jpeg(50),   AttackDescriptor::jpeg(60),   AttackDescriptor::jpeg(70),
      AttackDescriptor::jpeg(80),   AttackDescriptor::jpeg(90),
  };
}

namespace {

void clamp_unit(Image& img) {
  for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
}

// Zero outside the canvas.
double sample_zero(const Image& img, int c, int y, int x) {
  if (y < 0 || y >= img.height || x < 0 || x >= img.width) return 0.0;
  return img.at(c, y, x);
}

double bilinear_zero(const Image& img, int c, double sy, double sx) {
  const double fy = std::floor(sy), fx = std::floor(sx);
  const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
  const double ty = sy - fy, tx = sx - fx;
  double v = 0.0;
  if (ty < 1.0 && tx < 1.0) v += (1 - ty) * (1 - tx) * sample_zero(img, c, y0, x0);
  if (ty < 1.0 && tx > 0.0) v += (1 - ty) * tx * sample_zero(img, c, y0, x0 + 1);
  if (ty > 0.0 && tx < 1.0) v += ty * (1 - tx) * sample_zero(img, c, y0 + 1, x0);
  if (ty > 0.0 && tx > 0.0) v += ty * tx * sample_zero(img, c, y0 + 1, x0 + 1);
  return v;
}

// cos/sin that are exact for multiples of 90 degrees.
std::pair<double, double> exact_cos_sin(double degrees) {
  const double r = std::fmod(std::fmod(degrees, 360.0) + 360.0, 360.0);
  if (r == 0.0) return {1.0, 0.0};
  if (r == 90.0) return {0.0, 1.0};
  if (r == 180.0) return {-1.0, 0.0};
  if (r == 270.0) return {0.0, -1.0};
  const double rad = r * std::numbers::pi / 180.0;
  return {std::cos(rad), std::sin(rad)};
}

}  // namespace

double blur_sigma(int kernel) { return 0.3 * ((kernel - 1) * 0.5 - 1.0) + 0.8; }

Image gaussian_blur(const Image& img, int kernel) {
  if (kernel <= 0 || kernel % 2 == 0) throw UsageError("blur kernel must be odd and positive");
  const double sigma = blur_sigma(kernel);
  const int r = kernel / 2;
  std::vector<double> g(static_cast<std::size_t>(kernel));
  double s = 0.0;
  for (int i = 0; i < kernel; ++i) {
    const double t = i - r;
    g[i] = std::exp(-t * t / (2 * sigma * sigma));
    s += g[i];
  }
  for (auto& v : g) v /= s;

  auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
  std::vector<double> tmp(img.data.size());
  Image out(img.height, img.width, img.channels);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += g[i + r] * img.at(c, y, clampi(x + i, img.width));
        tmp[(static_cast<std::size_t>(c) * img.height + y) * img.width + x] = acc;
      }
    }
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          acc += g[i + r] * tmp[(static_cast<std::size_t>(c) * img.height + clampi(y + i, img.height)) * img.width + x];
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
    }
  }
  clamp_unit(out);
  return out;
}

Image rotate(const Image& img, double degrees) {
  const auto [cs, sn] = exact_cos_sin(degrees);
  const double cy = (img.height - 1) / 2.0;
  const double cx = (img.width - 1) / 2.0;
  Image out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double dx = x - cx, dy = y - cy;
      // Inverse map of a counter-clockwise rotation (y axis points down).
      const double sx = cx + cs * dx - sn * dy;
      const double sy = cy + sn * dx + cs * dy;
      for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = static_cast<float>(bilinear_zero(img, c, sy, sx));
    }
  }
  clamp_unit(out);
  return out;
}

Image mirror(const Image& img, MirrorAxis axis) {
  Image out(img.height, img.width, img.channels);
  const bool flip_x = axis != MirrorAxis::vertical;
  const bool flip_y = axis != MirrorAxis::horizontal;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.at(c, y, x) = img.at(c, flip_y ? img.height - 1 - y : y, flip_x ? img.width - 1 - x : x);
  return out;
}

Image rescale(const Image& img, double factor) {
  if (!(factor > 0.0)) throw UsageError("scale factor must be positive");
  const int nh = std::max(1, static_cast<int>(std::lround(img.height * factor)));
  const int nw = std::max(1, static_cast<int>(std::lround(img.width * factor)));
  const double ry = static_cast<double>(img.height) / nh;
  const double rx = static_cast<double>(img.width) / nw;
  // Bilinear resample (half-pixel centres, edge clamp).
  Image resized(nh, nw, img.channels);
  for (int y = 0; y < nh; ++y) {
    const double sy = std::clamp((y + 0.5) * ry - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double ty = sy - y0;
    for (int x = 0; x < nw; ++x) {
      const double sx = std::clamp((x + 0.5) * rx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double tx = sx - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double v = (1 - ty) * ((1 - tx) * img.at(c, y0, x0) + tx * img.at(c, y0, x1)) +
                         ty * ((1 - tx) * img.at(c, y1, x0) + tx * img.at(c, y1, x1));
        resized.at(c, y, x) = static_cast<float>(v);
      }
    }
  }
  // Restore the original canvas: centre-crop when larger, zero-pad when smaller.
  Image out(img.height, img.width, img.channels);
  const int oy = (nh - img.height) / 2;
  const int ox = (nw - img.width) / 2;
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const int sy = y + oy, sx = x + ox;
        out.at(c, y, x) = (sy >= 0 && sy < nh && sx >= 0 && sx < nw) ? resized.at(c, sy, sx) : 0.0f;
      }
    }
  }
  clamp_unit(out);
  return out;
}

const std::array<int, 64>& annex_k_luminance() {
  static const std::array<int, 64> table = {
      16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
      14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
      18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
      49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};
  return table;
}

std::array<int, 64> quant_table(int quality) {
  if (quality < 1 || quality > 100) throw UsageError("JPEG quality must be in 1..100");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> q{};
  const auto& base = annex_k_luminance();
  for (int i = 0; i < 64; ++i) q[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
  return q;
}

namespace {

// Round half away from zero, treating values within 1e-9 of a half-integer as exact ties.
double round_tie_away(double x) {
  const double a = std::abs(x);
  const double frac = a - std::floor(a);
  const double r = std::abs(frac - 0.5) < 1e-9 ? std::floor(a) + 1.0 : std::round(a);
  return std::copysign(r, x);
}

}  // namespace

Image jpeg_compress(const Image& img, int quality) {
  const auto q = quant_table(quality);
  // Orthonormal DCT-II basis: dct[u][x].
  double dct[8][8];
  for (int u = 0; u < 8; ++u) {
    const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
    for (int x = 0; x < 8; ++x) dct[u][x] = a * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
  }
  Image out(img.height, img.width, img.channels);
  double block[8][8], tmp[8][8], coef[8][8];
  for (int c = 0; c < img.channels; ++c) {
    for (int by = 0; by < img.height; by += 8) {
      for (int bx = 0; bx < img.width; bx += 8) {
        for (int y = 0; y < 8; ++y) {
          for (int x = 0; x < 8; ++x) {
            const int sy = std::min(by + y, img.height - 1);
            const int sx = std::min(bx + x, img.width - 1);
            block[y][x] = std::round(std::clamp(static_cast<double>(img.at(c, sy, sx)), 0.0, 1.0) * 255.0) - 128.0;
          }
        }
        // coef = D * block * D^T
        for (int u = 0; u < 8; ++u)
          for (int x = 0; x < 8; ++x) {
            double s = 0;
            for (int y = 0; y < 8; ++y) s += dct[u][y] * block[y][x];
            tmp[u][x] = s;
          }
        for (int u = 0; u < 8; ++u)
          for (int v = 0; v < 8; ++v) {
            double s = 0;
            for (int x = 0; x < 8; ++x) s += tmp[u][x] * dct[v][x];
            const double step = q[u * 8 + v];
            coef[u][v] = round_tie_away(s / step) * step;
          }
        // block = D^T * coef * D
        for (int y = 0; y < 8; ++y)
          for (int v = 0; v < 8; ++v) {
            double s = 0;
            for (int u = 0; u < 8; ++u) s += dct[u][y] * coef[u][v];
            tmp[y][v] = s;
          }
        for (int y = 0; y < 8; ++y) {
          for (int x = 0; x < 8; ++x) {
            double s = 0;
            for (int v = 0; v < 8; ++v) s += tmp[y][v] * dct[v][x];
            if (by + y < img.height && bx + x < img.width) {
              const double level = std::clamp(round_tie_away(s + 128.0), 0.0, 255.0);
              out.at(c, by + y, bx + x) = static_cast<float>(level / 255.0);
            }
          }
        }
      }
    }
  }
  return out;
}

Image apply_attack(const Image& img, const AttackDescriptor& atk) {
  atk.validate();
  switch (atk.kind) {
    case AttackKind::blur: return gaussian_blur(img, atk.value);
    case AttackKind::rotate: return rotate(img, atk.value);
    case AttackKind::mirror: return mirror(img, atk.axis);
    case AttackKind::scale: return rescale(img, atk.value / 100.0);
    case AttackKind::jpeg: return jpeg_compress(img, atk.value);
  }
  throw UsageError("unknown attack");
}

ImageSample apply_attack(const ImageSample& img, const AttackDescriptor& atk) {
  ImageSample out;
  out.pixels = apply_attack(img.pixels, atk);
  out.model_id = img.model_id;
  out.latent_seed = img.latent_seed;
  out.attack_tag = img.attack_tag ? *img.attack_tag + "+" + atk.tag() : atk.tag();
  return out;
}

std::string attacked_file_name(const std::string& file, const AttackDescriptor& atk) {
  std::string suffix = atk.tag();
  for (auto& ch : suffix) {
    if (ch == ':' || ch == '.') ch = '-';
  }
  const auto dot = file.rfind('.');
  const auto slash = file.rfind('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return file + "__" + suffix;
  return file.substr(0, dot) + "__" + suffix + file.substr(dot);
}

Manifest augment_dataset(const Manifest& manifest, const std::vector<AttackDescriptor>& attacks,
                         std::uint64_t seed, double rate) {
  if (manifest.entries.empty()) throw UsageError("augment_dataset: empty manifest");
  if (attacks.empty()) throw UsageError("augment_dataset: empty attack set");
  if (!(rate >= 0.0 && rate <= 1.0)) throw UsageError("augment_dataset: rate must be in [0,1]");
  for (const auto& a : attacks) a.validate();

  const CounterRng root(seed);
  Manifest out;
  out.entries.reserve(manifest.entries.size() * (1 + attacks.size()));
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    out.entries.push_back(e);
    const CounterRng rng = root.split(i);
    for (std::size_t a = 0; a < attacks.size(); ++a) {
      const double u = static_cast<double>(rng.at(a) >> 11) * 0x1.0p-53;
      if (rate < 1.0 && !(u < rate)) continue;
      ManifestEntry x = e;
      x.file = attacked_file_name(e.file, attacks[a]);
      x.attack_tag = e.attack_tag ? *e.attack_tag + "+" + attacks[a].tag() : attacks[a].tag();
      x.source = e.file;
      out.entries.push_back(std::move(x));
    }
  }
  return out;
}

}  // namespace ganprint::imaging
