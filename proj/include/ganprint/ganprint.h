#ifndef GANPRINT_H
#define GANPRINT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GP_API __declspec(dllexport)
#else
#define GP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Every function returning int returns one of these. On failure the message
   is available from gp_last_error() on the calling thread. */
enum {
  GP_OK = 0,
  GP_ERR_INTERNAL = 1,
  GP_ERR_USAGE = 2,
  GP_ERR_DEPENDENCY = 3,
  GP_ERR_NUMERICAL = 4,
  GP_ERR_IO = 5,
  GP_ERR_SPEC = 6,
  GP_ERR_KEY = 7,
  GP_ERR_INTEGRITY = 8,
  GP_ERR_KIND = 9
};

typedef struct gp_variant gp_variant;
typedef struct gp_image gp_image;
typedef struct gp_encoder gp_encoder;
typedef struct gp_basis gp_basis;
typedef struct gp_metric gp_metric;

GP_API const char* gp_version(void);
GP_API const char* gp_last_error(void);
GP_API const char* gp_status_name(int status);
/* Strings handed out by the library (JSON documents) are released here. */
GP_API void gp_string_free(char* s);

/* ---- pipeline ---------------------------------------------------------- */

typedef void (*gp_log_fn)(const char* message, void* user);

typedef struct gp_run_options {
  int has_seed;   /* nonzero: override the config seed with `seed` */
  uint64_t seed;
  int workers;    /* 0: use the config value */
  int force;      /* rerun even when outputs are up to date */
  gp_log_fn log;  /* may be NULL */
  void* log_user;
} gp_run_options;

GP_API void gp_run_options_init(gp_run_options* opts);
GP_API int gp_stage_count(void);
GP_API const char* gp_stage_name(int index);

/* result_json (optional) receives {"stage","up_to_date","dir","output_digest","summary"}. */
GP_API int gp_run_stage(const char* stage, const char* config_path, const gp_run_options* opts, char** result_json);
/* Parses and validates a config; out_json (optional) receives the normalised config. */
GP_API int gp_config_check(const char* config_path, char** out_json);
/* result_json (optional) receives {"written":[...],"missing":[...]}. */
GP_API int gp_emit_figures(const char* run_dir, char** result_json);

/* ---- generator variants ------------------------------------------------ */

GP_API int gp_variant_build_base(const char* arch, uint64_t seed, gp_variant** out);
GP_API int gp_variant_derive(const gp_variant* base, int k, double p, uint64_t seed, double eps, gp_variant** out);
GP_API int gp_variant_load(const char* path, gp_variant** out);
GP_API int gp_variant_save(const gp_variant* v, const char* path);
GP_API const char* gp_variant_id(const gp_variant* v);
GP_API int gp_variant_generate(const gp_variant* v, uint64_t latent_seed, gp_image** out);
GP_API void gp_variant_free(gp_variant* v);

/* ---- images (planar float, values in [0,1]) ---------------------------- */

GP_API int gp_image_create(int height, int width, int channels, const float* planar, gp_image** out);
GP_API int gp_image_read_png(const char* path, gp_image** out);
GP_API int gp_image_write_png(const gp_image* img, const char* path);
GP_API void gp_image_shape(const gp_image* img, int* height, int* width, int* channels);
GP_API const float* gp_image_data(const gp_image* img);
/* tag such as "jpeg:50", "rot:45", "mirror:h", "blur:3", "scale:0.5". */
GP_API int gp_image_attack(const gp_image* img, const char* tag, gp_image** out);
/* SSIM of the grayscale versions; map (optional) receives the local SSIM map. */
GP_API int gp_image_ssim(const gp_image* a, const gp_image* b, double* mean, gp_image** map);
GP_API void gp_image_free(gp_image* img);

/* ---- fingerprints and similarity --------------------------------------- */

GP_API int gp_encoder_load(const char* path, gp_encoder** out);
GP_API int gp_encoder_predict(const gp_encoder* enc, const gp_image* img, int* class_index);
GP_API void gp_encoder_free(gp_encoder* enc);

GP_API int gp_basis_load(const char* path, gp_basis** out);
GP_API size_t gp_basis_dim(const gp_basis* basis);
GP_API void gp_basis_free(gp_basis* basis);

GP_API int gp_metric_load(const char* path, gp_metric** out);
GP_API double gp_metric_tau(const gp_metric* metric);
GP_API void gp_metric_free(gp_metric* metric);

/* Writes gp_basis_dim(basis) values into out (capacity `cap`). */
GP_API int gp_fingerprint(const gp_encoder* enc, const gp_basis* basis, const gp_image* img, double* out, size_t cap);
/* distance and similarity may each be NULL. */
GP_API int gp_similarity(const gp_metric* metric, const double* a, const double* b, size_t dim, double* distance,
                         double* similarity);

#ifdef __cplusplus
}
#endif

#endif
