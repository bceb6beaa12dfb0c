/*
 * C interface to the efraft optical-flow library.
 *
 * All objects are opaque handles created and destroyed through these
 * functions. Calls return efraft_status; on any failure the thread-local
 * message from efraft_last_error() describes what went wrong. Handles are
 * only written through their create/destroy functions, never mutated by
 * queries, so distinct handles may be used from distinct threads.
 */
#ifndef EFRAFT_H
#define EFRAFT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum efraft_status {
    EFRAFT_OK = 0,
    EFRAFT_ERR_INVALID_ARGUMENT = 1,
    EFRAFT_ERR_IO = 2,
    EFRAFT_ERR_FORMAT = 3,
    EFRAFT_ERR_RUNTIME = 4
} efraft_status;

typedef struct efraft_config efraft_config;
typedef struct efraft_model efraft_model;
typedef struct efraft_image efraft_image;
typedef struct efraft_flow efraft_flow;

/* Last error message of the calling thread; empty string when none. */
const char* efraft_last_error(void);

/* ---- configuration (key=value pairs, validated before use) ---- */
efraft_config* efraft_config_create(void);
void efraft_config_destroy(efraft_config* cfg);
efraft_status efraft_config_set(efraft_config* cfg, const char* key, const char* value);
efraft_status efraft_config_get(const efraft_config* cfg, const char* key, char* buf, size_t buf_len);
efraft_status efraft_config_load_file(efraft_config* cfg, const char* path);
efraft_status efraft_config_validate(const efraft_config* cfg);

/* ---- model (weights + embedded config) ---- */
efraft_status efraft_model_init(const efraft_config* cfg, efraft_model** out);
efraft_status efraft_model_load(const char* path, efraft_model** out);
efraft_status efraft_model_save(const efraft_model* model, const char* path);
uint64_t efraft_model_parameter_count(const efraft_model* model);
efraft_status efraft_model_config_get(const efraft_model* model, const char* key, char* buf, size_t buf_len);
void efraft_model_destroy(efraft_model* model);

/* ---- images ([0,1] RGB; files are binary PPM P6, maxval 255) ---- */
efraft_status efraft_image_read_ppm(const char* path, efraft_image** out);
efraft_status efraft_image_write_ppm(const efraft_image* image, const char* path);
efraft_status efraft_image_create(int width, int height, const unsigned char* rgb_interleaved, efraft_image** out);
int efraft_image_width(const efraft_image* image);
int efraft_image_height(const efraft_image* image);
void efraft_image_destroy(efraft_image* image);

/* ---- flow fields (files use the "PIEH" little-endian float32 layout) ---- */
efraft_status efraft_flow_read(const char* path, efraft_flow** out);
efraft_status efraft_flow_write(const efraft_flow* flow, const char* path);
efraft_status efraft_flow_create(int width, int height, const float* interleaved_uv, efraft_flow** out);
int efraft_flow_width(const efraft_flow* flow);
int efraft_flow_height(const efraft_flow* flow);
efraft_status efraft_flow_at(const efraft_flow* flow, int x, int y, double* u, double* v);
void efraft_flow_destroy(efraft_flow* flow);

/* ---- estimation ---- */
typedef struct efraft_estimate_opts {
    int iters; /* <= 0: model default */
    int alo;   /* -1: model default, 0: off, 1: on */
    int afl;   /* -1: model default, 0: off, 1: on */
} efraft_estimate_opts;

/* Frames of any size are padded internally to multiples of 8; the returned
 * flow matches the input extents. Deterministic for fixed inputs. */
efraft_status efraft_estimate(const efraft_model* model, const efraft_image* frame1, const efraft_image* frame2,
                              const efraft_estimate_opts* opts, efraft_flow** out);

/* ---- metrics and rendering ---- */
efraft_status efraft_flow_epe(const efraft_flow* pred, const efraft_flow* gt, double* epe);
/* rule: "paper_or" (error > 3px OR > 5% of magnitude) or "kitti_and". */
efraft_status efraft_flow_f1_all(const efraft_flow* pred, const efraft_flow* gt, const char* rule, double* f1);
efraft_status efraft_flow_render(const efraft_flow* flow, double max_magnitude /* 0 = auto */, efraft_image** out);

/* ---- selftest ---- */
typedef void (*efraft_selftest_report_fn)(const char* suite, int passed, const char* detail, void* user);
efraft_status efraft_selftest_run(efraft_selftest_report_fn report, void* user, int* failures);

/* ---- toy training on generated translation scenes ----
 * losses must hold steps+1 doubles (per-step loss plus a final evaluation).
 * out_model receives the trained model when non-NULL. */
efraft_status efraft_train_toy(const efraft_config* cfg, int scene_count, int scene_size, int steps, double lr,
                               int iters, double* losses, efraft_model** out_model);

/* ---- micro benchmark of the refinement loop ----
 * tsv/records receive malloc'd strings; release with efraft_string_free. */
efraft_status efraft_bench(const efraft_config* cfg, int frame_h, int frame_w, int iters, int repeats, char** tsv,
                           char** records);
void efraft_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* EFRAFT_H */
