#include "ganprint/pipeline.hpp"

#include "ganprint/dataset.hpp"
#include "ganprint/imaging.hpp"
#include "ganprint/modelzoo.hpp"
#include "ganprint/store.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace ganprint::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// Dark blue -> teal -> yellow.
std::array<float, 3> heat(double t) {
  static constexpr std::array<std::array<float, 3>, 4> stops{
      {{0.07f, 0.04f, 0.33f}, {0.13f, 0.45f, 0.56f}, {0.37f, 0.79f, 0.38f}, {0.99f, 0.91f, 0.14f}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * (stops.size() - 1);
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
  const auto f = static_cast<float>(t - static_cast<double>(i));
  std::array<float, 3> out{};
  for (int c = 0; c < 3; ++c) out[c] = stops[i][c] * (1 - f) + stops[i + 1][c] * f;
  return out;
}

Image heat_image(const std::vector<std::vector<double>>& m, int cell, double lo, double hi) {
  const int rows = static_cast<int>(m.size());
  const int cols = rows == 0 ? 0 : static_cast<int>(m.front().size());
  Image img(rows * cell, cols * cell, 3);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const auto rgb = heat(hi > lo ? (m[r][c] - lo) / (hi - lo) : 0.0);
      for (int y = 0; y < cell; ++y) {
        for (int x = 0; x < cell; ++x) {
          for (int ch = 0; ch < 3; ++ch) img.at(ch, r * cell + y, c * cell + x) = rgb[ch];
        }
      }
    }
  }
  return img;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(store::read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) row.push_back(cell);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string svg_header(int w, int h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
         std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) +
         "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

struct Frame {
  double x0, x1, y0, y1;
  int left = 60, top = 30, width = 420, height = 300;

  double px(double x) const { return left + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * width; }
  double py(double y) const { return top + height - (y1 > y0 ? (y - y0) / (y1 - y0) : 0.5) * height; }

  std::string axes(const std::string& xlabel, const std::string& ylabel) const {
    std::string s = "<rect x=\"" + std::to_string(left) + "\" y=\"" + std::to_string(top) + "\" width=\"" +
                    std::to_string(width) + "\" height=\"" + std::to_string(height) +
                    "\" fill=\"none\" stroke=\"#444\"/>\n";
    s += "<text x=\"" + std::to_string(left + width / 2) + "\" y=\"" + std::to_string(top + height + 32) +
         "\" text-anchor=\"middle\">" + xlabel + "</text>\n";
    s += "<text x=\"14\" y=\"" + std::to_string(top + height / 2) + "\" transform=\"rotate(-90 14 " +
         std::to_string(top + height / 2) + ")\" text-anchor=\"middle\">" + ylabel + "</text>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
      char bx[32], by[32];
      std::snprintf(bx, sizeof bx, "%.3g", xv);
      std::snprintf(by, sizeof by, "%.3g", yv);
      s += "<text x=\"" + num(px(xv)) + "\" y=\"" + std::to_string(top + height + 14) + "\" text-anchor=\"middle\">" +
           bx + "</text>\n";
      s += "<text x=\"" + std::to_string(left - 4) + "\" y=\"" + num(py(yv) + 4) + "\" text-anchor=\"end\">" + by +
           "</text>\n";
    }
    return s;
  }
};

Frame fit_frame(const std::vector<double>& xs, const std::vector<double>& ys) {
  Frame f{0, 1, 0, 1};
  if (xs.empty()) return f;
  const auto [xa, xb] = std::minmax_element(xs.begin(), xs.end());
  const auto [ya, yb] = std::minmax_element(ys.begin(), ys.end());
  const double mx = (*xb - *xa) * 0.08 + 1e-9, my = (*yb - *ya) * 0.08 + 1e-9;
  return {*xa - mx, *xb + mx, *ya - my, *yb + my};
}

void weights_pca(const fs::path& run, FiguresResult& res) {
  const fs::path zoo_json = run / "zoo" / "zoo.json";
  if (!fs::exists(zoo_json)) {
    res.missing.push_back("zoo/zoo.json");
    return;
  }
  const json zoo = json::parse(store::read_text(zoo_json));
  std::vector<modelzoo::ModelVariant> variants;
  for (const auto& e : zoo.at("known")) {
    const fs::path p = run / "zoo" / e.at("file").get<std::string>();
    if (!fs::exists(p)) {
      res.missing.push_back(fs::relative(p, run).generic_string());
      return;
    }
    variants.push_back(store::load_variant(p));
  }
  if (variants.size() < 2) return;
  const auto& arch = variants.front().arch;
  const std::string group = arch.layers[arch.first_perturbable()].name;
  const auto pca = modelzoo::weights_pca_2d(variants, group);

  std::string csv = "model_id,k,p,pc1,pc2\n";
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const auto& v = variants[i];
    csv += v.variant_id + "," + std::to_string(v.params->k) + "," + num(v.params->p) + "," + num(pca.points[i][0]) +
           "," + num(pca.points[i][1]) + "\n";
    xs.push_back(pca.points[i][0]);
    ys.push_back(pca.points[i][1]);
  }
  store::write_text_atomic(run / "figures" / "weights_pca.csv", csv);

  const Frame f = fit_frame(xs, ys);
  std::string svg = svg_header(520, 380);
  svg += "<text x=\"60\" y=\"18\">" + group + " weights, 2-D PCA (" + num(pca.explained_variance_ratio[0]).substr(0, 5) +
         ", " + num(pca.explained_variance_ratio[1]).substr(0, 5) + " of variance)</text>\n";
  svg += f.axes("PC1", "PC2");
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const auto rgb = heat(variants[i].params->k * variants[i].params->p / 10.0);
    char color[16];
    std::snprintf(color, sizeof color, "#%02x%02x%02x", static_cast<int>(rgb[0] * 255), static_cast<int>(rgb[1] * 255),
                  static_cast<int>(rgb[2] * 255));
    svg += "<circle cx=\"" + num(f.px(xs[i])) + "\" cy=\"" + num(f.py(ys[i])) + "\" r=\"5\" fill=\"" + color +
           "\" stroke=\"#222\"/>\n";
    svg += "<text x=\"" + num(f.px(xs[i]) + 7) + "\" y=\"" + num(f.py(ys[i]) - 5) + "\" font-size=\"9\">k=" +
           std::to_string(variants[i].params->k) + " p=" + num(variants[i].params->p).substr(0, 3) + "</text>\n";
  }
  svg += "</svg>\n";
  store::write_text_atomic(run / "figures" / "weights_pca.svg", svg);
  res.written.push_back("figures/weights_pca.csv");
  res.written.push_back("figures/weights_pca.svg");
}

void ssim_grid(const fs::path& run, FiguresResult& res) {
  const fs::path zoo_json = run / "zoo" / "zoo.json";
  if (!fs::exists(zoo_json)) return;
  const json zoo = json::parse(store::read_text(zoo_json));
  std::vector<modelzoo::ModelVariant> variants;
  for (const auto& e : zoo.at("known")) {
    if (variants.size() == 4) break;
    const fs::path p = run / "zoo" / e.at("file").get<std::string>();
    if (!fs::exists(p)) return;
    variants.push_back(store::load_variant(p));
  }
  if (variants.size() < 2) return;
  const std::uint64_t seed = derive_seed(zoo.at("seed").get<std::uint64_t>(), "figure-ssim");
  std::vector<Image> images, gray;
  for (const auto& v : variants) {
    images.push_back(modelzoo::generate(v, seed).pixels);
    gray.push_back(imaging::to_grayscale(images.back()));
  }
  const std::size_t n = images.size();
  std::vector<std::vector<double>> grid(n, std::vector<double>(n, 1.0));
  std::string csv = "model_id";
  for (const auto& v : variants) csv += "," + v.variant_id;
  csv += "\n";
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) grid[i][j] = grid[j][i] = imaging::ssim(gray[i], gray[j]).mean;
  }
  for (std::size_t i = 0; i < n; ++i) {
    csv += variants[i].variant_id;
    for (std::size_t j = 0; j < n; ++j) csv += "," + num(grid[i][j]);
    csv += "\n";
  }
  store::write_text_atomic(run / "figures" / "ssim_grid.csv", csv);
  write_png(run / "figures" / "ssim_grid.png", heat_image(grid, 24, 0.0, 1.0));

  // Samples side by side, each upscaled 4x.
  const int s = 4, h = images[0].height, w = images[0].width;
  Image strip(h * s, static_cast<int>(n) * (w * s + 4), 3, 1.0f);
  for (std::size_t m = 0; m < n; ++m) {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < h * s; ++y) {
        for (int x = 0; x < w * s; ++x) {
          strip.at(c, y, static_cast<int>(m) * (w * s + 4) + x) = images[m].at(std::min(c, images[m].channels - 1), y / s, x / s);
        }
      }
    }
  }
  write_png(run / "figures" / "ssim_samples.png", strip);

  const Image map = imaging::ssim(gray[0], gray[1]).map;
  std::vector<std::vector<double>> cells(static_cast<std::size_t>(map.height), std::vector<double>(static_cast<std::size_t>(map.width)));
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) cells[y][x] = (map.at(0, y, x) + 1.0) / 2.0;
  }
  write_png(run / "figures" / "ssim_map.png", heat_image(cells, 6, 0.0, 1.0));
  for (const char* f : {"figures/ssim_grid.csv", "figures/ssim_grid.png", "figures/ssim_samples.png", "figures/ssim_map.png"}) {
    res.written.push_back(f);
  }
}

void curve(const fs::path& run, const std::string& history, const std::string& stem, FiguresResult& res) {
  const fs::path src = run / "train-encoder" / history;
  if (!fs::exists(src)) {
    res.missing.push_back("train-encoder/" + history);
    return;
  }
  const auto rows = read_csv(src);
  store::write_text_atomic(run / "figures" / (stem + ".csv"), store::read_text(src));
  res.written.push_back("figures/" + stem + ".csv");
  if (rows.size() < 2) return;

  std::vector<double> epoch, loss, acc;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    epoch.push_back(std::stod(rows[i].at(0)));
    loss.push_back(std::stod(rows[i].at(1)));
    acc.push_back(std::stod(rows[i].at(2)));
  }
  const double max_loss = *std::max_element(loss.begin(), loss.end());
  Frame f = fit_frame(epoch, {0.0, 1.0});
  f.y0 = 0.0;
  f.y1 = 1.0;
  std::string svg = svg_header(520, 380);
  svg += "<text x=\"60\" y=\"18\">" + stem + ": accuracy (blue), loss / " + num(max_loss).substr(0, 6) +
         " (orange)</text>\n";
  svg += f.axes("epoch", "value");
  auto line = [&](const std::vector<double>& ys, double scale, const char* color) {
    std::string pts;
    for (std::size_t i = 0; i < ys.size(); ++i) pts += num(f.px(epoch[i])) + "," + num(f.py(ys[i] / scale)) + " ";
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
  };
  line(acc, 1.0, "#1f77b4");
  line(loss, max_loss > 0 ? max_loss : 1.0, "#ff7f0e");
  svg += "</svg>\n";
  store::write_text_atomic(run / "figures" / (stem + ".svg"), svg);
  res.written.push_back("figures/" + stem + ".svg");
}

void confusion(const fs::path& run, const std::string& name, FiguresResult& res) {
  const fs::path src = run / "train-encoder" / (name + ".csv");
  if (!fs::exists(src)) {
    res.missing.push_back("train-encoder/" + name + ".csv");
    return;
  }
  const auto rows = read_csv(src);
  std::vector<std::vector<double>> m;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    std::vector<double> row;
    double total = 0.0;
    for (std::size_t c = 1; c < rows[r].size(); ++c) row.push_back(std::stod(rows[r][c]));
    for (double v : row) total += v;
    for (double& v : row) v = total > 0 ? v / total : 0.0;
    m.push_back(std::move(row));
  }
  if (m.empty()) return;
  write_png(run / "figures" / (name + ".png"), heat_image(m, 16, 0.0, 1.0));
  res.written.push_back("figures/" + name + ".png");
}

}  // namespace

FiguresResult emit_figures(const fs::path& run_dir) {
  FiguresResult res;
  if (!fs::is_directory(run_dir)) throw DependencyError("run directory '" + run_dir.string() + "' does not exist");
  fs::create_directories(run_dir / "figures");
  weights_pca(run_dir, res);
  ssim_grid(run_dir, res);
  curve(run_dir, "history_raw.csv", "train_curve", res);
  curve(run_dir, "history_finetune.csv", "finetune_curve", res);
  confusion(run_dir, "confusion_raw", res);
  confusion(run_dir, "confusion_attacked", res);
  if (res.written.empty()) {
    std::string list;
    for (const auto& m : res.missing) list += (list.empty() ? "" : ", ") + m;
    throw DependencyError("no figure could be produced; missing: " + list + " (run `ganprint zoo` and `ganprint train-encoder` first)");
  }
  return res;
}

}  // namespace ganprint::pipeline
