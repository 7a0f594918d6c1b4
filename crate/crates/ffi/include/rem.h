#ifndef REM_H
#define REM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define REM_OK 0

#define REM_ERR_NULL_POINTER 100

#define REM_ERR_UTF8 101

#define REM_ERR_BUFFER_TOO_SMALL 102

#define REM_ERR_PANIC 103

#define REM_PATTERN_OMNI 0

#define REM_PATTERN_SECTOR 1

#define REM_MODE_IMAGE_ONLY 0

#define REM_MODE_PREDICTED_NDSM 1

#define REM_MODE_TRUE_NDSM 2

/**
 * Opened dataset directory.
 */
typedef struct RemDataset RemDataset;

/**
 * Frozen Stage-1 elevation model.
 */
typedef struct RemElevationModel RemElevationModel;

/**
 * Stage-2 pathloss model.
 */
typedef struct RemPathlossModel RemPathlossModel;

/**
 * Transmitter description; `theta_3db_deg` and `a_max_db` are ignored for
 * omnidirectional patterns.
 */
typedef struct RemTransmitter {
  double x;
  double y;
  double height_m;
  double azimuth_deg;
  /**
   * `REM_PATTERN_OMNI` or `REM_PATTERN_SECTOR`.
   */
  int32_t pattern;
  double g_max_db;
  double theta_3db_deg;
  double a_max_db;
} RemTransmitter;

/**
 * Message of the last failed call on this thread, or NULL after a
 * success. Valid until the next call into this library on the same thread.
 */
const char *rem_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rem_version(void);

/**
 * Opens a dataset directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
int32_t rem_dataset_open(const char *path, struct RemDataset **out);

/**
 * Releases a dataset; NULL is ignored.
 *
 * # Safety
 * `ds` must come from [`rem_dataset_open`] and not be freed twice.
 */
void rem_dataset_free(struct RemDataset *ds);

/**
 * Number of tiles in the dataset.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
int32_t rem_dataset_tile_count(const struct RemDataset *ds, size_t *out);

/**
 * Copies the id of tile `index` (sorted order) into `buf`.
 *
 * # Safety
 * `ds` must be a live handle; `buf` must hold `buf_len` bytes; `needed`
 * may be NULL.
 */
int32_t rem_dataset_tile_id(const struct RemDataset *ds,
                            size_t index,
                            char *buf,
                            size_t buf_len,
                            size_t *needed);

/**
 * Edge length in pixels and in meters of a tile.
 *
 * # Safety
 * `ds` must be a live handle, `tile_id` NUL-terminated, outputs writable.
 */
int32_t rem_dataset_tile_size(const struct RemDataset *ds,
                              const char *tile_id,
                              size_t *out_px,
                              double *out_extent_m);

/**
 * Oracle pathloss (normalised to `[0, 1]`) for a transmitter on a tile.
 *
 * # Safety
 * `ds` must be a live handle, `tile_id` NUL-terminated, `tx` readable and
 * `out` writable for `out_len` floats.
 */
int32_t rem_oracle_pathloss(const struct RemDataset *ds,
                            const char *tile_id,
                            const struct RemTransmitter *tx,
                            float *out,
                            size_t out_len);

/**
 * Loads a Stage-1 checkpoint; the model is frozen on load.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` writable.
 */
int32_t rem_elevation_model_load(const char *path, struct RemElevationModel **out);

/**
 * # Safety
 * `m` must come from [`rem_elevation_model_load`] and not be freed twice.
 */
void rem_elevation_model_free(struct RemElevationModel *m);

/**
 * Predicted heights in meters for a tile's image.
 *
 * # Safety
 * Handles must be live, `tile_id` NUL-terminated and `out` writable for
 * `out_len` floats.
 */
int32_t rem_elevation_predict(const struct RemElevationModel *m,
                              const struct RemDataset *ds,
                              const char *tile_id,
                              float *out,
                              size_t out_len);

/**
 * Loads a Stage-2 checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` writable.
 */
int32_t rem_model_load(const char *path, struct RemPathlossModel **out);

/**
 * # Safety
 * `m` must come from [`rem_model_load`] and not be freed twice.
 */
void rem_model_free(struct RemPathlossModel *m);

/**
 * Input configuration of a Stage-2 model as one of the `REM_MODE_*` values.
 *
 * # Safety
 * `m` must be a live handle; `out` writable.
 */
int32_t rem_model_mode(const struct RemPathlossModel *m, int32_t *out);

/**
 * Staged prediction: Stage 1 when the model needs it, then Stage 2.
 * `elev` may be NULL unless the model uses predicted elevation.
 *
 * # Safety
 * Handles must be live (or `elev` NULL), `tile_id` NUL-terminated, `tx`
 * readable and `out` writable for `out_len` floats.
 */
int32_t rem_predict(const struct RemPathlossModel *m,
                    const struct RemElevationModel *elev,
                    const struct RemDataset *ds,
                    const char *tile_id,
                    const struct RemTransmitter *tx,
                    float *out,
                    size_t out_len);

/**
 * Relative RMSE improvement of `rmse_new` over `rmse_baseline`, percent.
 *
 * # Safety
 * `out` must be writable.
 */
int32_t rem_improvement_pct(double rmse_baseline, double rmse_new, double *out);

/**
 * Footprint report as JSON. `scenario_json` is a complete scenario or NULL
 * for the defaults.
 *
 * # Safety
 * `scenario_json` must be NULL or NUL-terminated; `buf` must hold
 * `buf_len` bytes; `needed` may be NULL.
 */
int32_t rem_footprint_report_json(const char *scenario_json,
                                  char *buf,
                                  size_t buf_len,
                                  size_t *needed);

#endif  /* REM_H */
