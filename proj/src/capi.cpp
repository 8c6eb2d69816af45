#include "ganprint/ganprint.h"

#include "ganprint/dataset.hpp"
#include "ganprint/encoder.hpp"
#include "ganprint/fingerprint.hpp"
#include "ganprint/imaging.hpp"
#include "ganprint/metric.hpp"
#include "ganprint/modelzoo.hpp"
#include "ganprint/pipeline.hpp"
#include "ganprint/store.hpp"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

using namespace ganprint;
using nlohmann::json;

struct gp_variant {
  modelzoo::ModelVariant v;
};
struct gp_image {
  Image img;
};
struct gp_encoder {
  encoder::EncoderNet net;
};
struct gp_basis {
  fingerprint::SvdBasis basis;
};
struct gp_metric {
  metric::LearnedMetric m;
};

namespace {

thread_local std::string g_last_error;

template <class F>
int guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return GP_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return GP_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return GP_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "internal error";
    return GP_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw UsageError(std::string(what) + " must not be null");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const json& j) {
  if (out != nullptr) *out = dup(j.dump(2));
}

}  // namespace

extern "C" {

const char* gp_version(void) { return "0.1.0"; }
const char* gp_last_error(void) { return g_last_error.c_str(); }
const char* gp_status_name(int status) { return error_code_name(static_cast<ErrorCode>(status)); }
void gp_string_free(char* s) { std::free(s); }

void gp_run_options_init(gp_run_options* opts) {
  if (opts != nullptr) *opts = gp_run_options{0, 0, 0, 0, nullptr, nullptr};
}

int gp_stage_count(void) { return static_cast<int>(pipeline::stage_names().size()); }

const char* gp_stage_name(int index) {
  const auto& names = pipeline::stage_names();
  return index >= 0 && index < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(index)].c_str() : nullptr;
}

int gp_run_stage(const char* stage, const char* config_path, const gp_run_options* opts, char** result_json) {
  return guarded([&] {
    require(stage, "stage");
    require(config_path, "config_path");
    pipeline::RunOptions ro;
    if (opts != nullptr) {
      if (opts->has_seed) ro.seed = opts->seed;
      if (opts->workers < 0) throw UsageError("workers must be >= 1");
      if (opts->workers > 0) ro.workers = opts->workers;
      ro.force = opts->force != 0;
      if (opts->log != nullptr) {
        const auto fn = opts->log;
        void* user = opts->log_user;
        ro.log = [fn, user](const std::string& m) { fn(m.c_str(), user); };
      }
    }
    const auto r = pipeline::run_stage(stage, std::filesystem::path(config_path), ro);
    emit(result_json, {{"stage", r.stage},
                       {"up_to_date", r.up_to_date},
                       {"dir", r.dir.string()},
                       {"output_digest", r.output_digest},
                       {"summary", r.summary}});
  });
}

int gp_config_check(const char* config_path, char** out_json) {
  return guarded([&] {
    require(config_path, "config_path");
    emit(out_json, pipeline::to_json(pipeline::load_config(config_path)));
  });
}

int gp_emit_figures(const char* run_dir, char** result_json) {
  return guarded([&] {
    require(run_dir, "run_dir");
    const auto r = pipeline::emit_figures(run_dir);
    emit(result_json, {{"written", r.written}, {"missing", r.missing}});
  });
}

int gp_variant_build_base(const char* arch, uint64_t seed, gp_variant** out) {
  return guarded([&] {
    require(arch, "arch");
    require(out, "out");
    *out = new gp_variant{modelzoo::build_base(modelzoo::arch_by_name(arch), seed)};
  });
}

int gp_variant_derive(const gp_variant* base, int k, double p, uint64_t seed, double eps, gp_variant** out) {
  return guarded([&] {
    require(base, "base");
    require(out, "out");
    *out = new gp_variant{modelzoo::derive_variant(base->v, {k, p, seed}, eps)};
  });
}

int gp_variant_load(const char* path, gp_variant** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new gp_variant{store::load_variant(path)};
  });
}

int gp_variant_save(const gp_variant* v, const char* path) {
  return guarded([&] {
    require(v, "variant");
    require(path, "path");
    store::save(v->v, path);
  });
}

const char* gp_variant_id(const gp_variant* v) { return v == nullptr ? nullptr : v->v.variant_id.c_str(); }

int gp_variant_generate(const gp_variant* v, uint64_t latent_seed, gp_image** out) {
  return guarded([&] {
    require(v, "variant");
    require(out, "out");
    *out = new gp_image{modelzoo::generate(v->v, latent_seed).pixels};
  });
}

void gp_variant_free(gp_variant* v) { delete v; }

int gp_image_create(int height, int width, int channels, const float* planar, gp_image** out) {
  return guarded([&] {
    require(out, "out");
    if (height < 1 || width < 1 || (channels != 1 && channels != 3)) {
      throw UsageError("image shape must be positive with 1 or 3 channels");
    }
    auto img = std::make_unique<gp_image>(gp_image{Image(height, width, channels)});
    if (planar != nullptr) std::memcpy(img->img.data.data(), planar, img->img.data.size() * sizeof(float));
    *out = img.release();
  });
}

int gp_image_read_png(const char* path, gp_image** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new gp_image{read_png(path)};
  });
}

int gp_image_write_png(const gp_image* img, const char* path) {
  return guarded([&] {
    require(img, "image");
    require(path, "path");
    write_png(path, img->img);
  });
}

void gp_image_shape(const gp_image* img, int* height, int* width, int* channels) {
  if (height != nullptr) *height = img == nullptr ? 0 : img->img.height;
  if (width != nullptr) *width = img == nullptr ? 0 : img->img.width;
  if (channels != nullptr) *channels = img == nullptr ? 0 : img->img.channels;
}

const float* gp_image_data(const gp_image* img) { return img == nullptr ? nullptr : img->img.data.data(); }

int gp_image_attack(const gp_image* img, const char* tag, gp_image** out) {
  return guarded([&] {
    require(img, "image");
    require(tag, "tag");
    require(out, "out");
    *out = new gp_image{imaging::apply_attack(img->img, imaging::AttackDescriptor::parse(tag))};
  });
}

int gp_image_ssim(const gp_image* a, const gp_image* b, double* mean, gp_image** map) {
  return guarded([&] {
    require(a, "a");
    require(b, "b");
    auto gray = [](const Image& i) { return i.channels == 1 ? i : imaging::to_grayscale(i); };
    auto r = imaging::ssim(gray(a->img), gray(b->img));
    if (mean != nullptr) *mean = r.mean;
    if (map != nullptr) *map = new gp_image{std::move(r.map)};
  });
}

void gp_image_free(gp_image* img) { delete img; }

int gp_encoder_load(const char* path, gp_encoder** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new gp_encoder{store::load_encoder(path)};
  });
}

int gp_encoder_predict(const gp_encoder* enc, const gp_image* img, int* class_index) {
  return guarded([&] {
    require(enc, "encoder");
    require(img, "image");
    require(class_index, "class_index");
    *class_index = encoder::predict(enc->net, {img->img}).front();
  });
}

void gp_encoder_free(gp_encoder* enc) { delete enc; }

int gp_basis_load(const char* path, gp_basis** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new gp_basis{store::load_svd(path)};
  });
}

size_t gp_basis_dim(const gp_basis* basis) { return basis == nullptr ? 0 : static_cast<size_t>(basis->basis.dim()); }
void gp_basis_free(gp_basis* basis) { delete basis; }

int gp_metric_load(const char* path, gp_metric** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new gp_metric{store::load_metric(path)};
  });
}

double gp_metric_tau(const gp_metric* metric) { return metric == nullptr ? 0.0 : metric->m.tau; }
void gp_metric_free(gp_metric* metric) { delete metric; }

int gp_fingerprint(const gp_encoder* enc, const gp_basis* basis, const gp_image* img, double* out, size_t cap) {
  return guarded([&] {
    require(enc, "encoder");
    require(basis, "basis");
    require(img, "image");
    require(out, "out");
    const auto d = static_cast<size_t>(basis->basis.dim());
    if (cap < d) throw UsageError("output buffer holds " + std::to_string(cap) + " values, need " + std::to_string(d));
    const auto fp = fingerprint::project(basis->basis, fingerprint::extract_activation(enc->net, img->img));
    for (size_t i = 0; i < d; ++i) out[i] = fp.values[static_cast<Eigen::Index>(i)];
  });
}

int gp_similarity(const gp_metric* metric, const double* a, const double* b, size_t dim, double* distance,
                  double* similarity) {
  return guarded([&] {
    require(metric, "metric");
    require(a, "a");
    require(b, "b");
    if (static_cast<Eigen::Index>(dim) != metric->m.dim()) {
      throw UsageError("fingerprint dimension " + std::to_string(dim) + " does not match metric dimension " +
                       std::to_string(metric->m.dim()));
    }
    const Eigen::Map<const Eigen::VectorXd> x(a, static_cast<Eigen::Index>(dim));
    const Eigen::Map<const Eigen::VectorXd> y(b, static_cast<Eigen::Index>(dim));
    if (distance != nullptr) *distance = metric::distance(metric->m, x, y);
    if (similarity != nullptr) *similarity = metric::similarity(metric->m, x, y);
  });
}

}  // extern "C"
