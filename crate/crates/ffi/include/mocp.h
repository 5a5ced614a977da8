#ifndef MOCP_H
#define MOCP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>

/**
 * Result code of every fallible call. Codes from 10 up mirror the core
 * library's error kinds.
 */
typedef enum MocpStatus {
  MOCP_STATUS_OK = 0,
  MOCP_STATUS_NULL_POINTER = 1,
  MOCP_STATUS_INVALID_UTF8 = 2,
  MOCP_STATUS_PANIC = 3,
  MOCP_STATUS_INVALID_ARGUMENT = 4,
  MOCP_STATUS_IO = 10,
  MOCP_STATUS_MALFORMED_HEADER = 11,
  MOCP_STATUS_SHAPE_MISMATCH = 12,
  MOCP_STATUS_UNSUPPORTED_DTYPE = 13,
  MOCP_STATUS_MISSING_TENSOR = 14,
  MOCP_STATUS_INVARIANT_VIOLATION = 15,
  MOCP_STATUS_INVALID_MANIFEST = 16,
  MOCP_STATUS_DIM_MISMATCH = 17,
  MOCP_STATUS_NON_SPD_MATRIX = 18,
  MOCP_STATUS_INDEX_OUT_OF_RANGE = 19,
  MOCP_STATUS_OUT_OF_DOMAIN = 20,
  MOCP_STATUS_DEGENERATE_GRID = 21,
  MOCP_STATUS_GEOMETRY_MISMATCH = 22,
  MOCP_STATUS_EMPTY_CALIBRATION_SET = 23,
  MOCP_STATUS_EMPTY_LEDGER = 24,
  MOCP_STATUS_MISSING_FIELD = 25,
  MOCP_STATUS_INVALID_ALPHA = 26,
  MOCP_STATUS_INVALID_CONFIG = 27,
  MOCP_STATUS_LENGTH_MISMATCH = 28,
  MOCP_STATUS_DEGENERATE_INPUT = 29,
  MOCP_STATUS_UNSUPPORTED_NOISE = 30,
  MOCP_STATUS_UNKNOWN_METHOD = 31,
  MOCP_STATUS_UNKNOWN_FORMAT = 32,
  MOCP_STATUS_ID_MISMATCH = 33,
  MOCP_STATUS_JSON = 34,
} MocpStatus;

/**
 * Fitted calibrators, one per landmark or one pooled.
 */
typedef struct MocpCalibrator MocpCalibrator;

/**
 * A dataset: loaded from a manifest or assembled from arrays.
 */
typedef struct MocpDataset MocpDataset;

/**
 * A single prediction region.
 */
typedef struct MocpRegion MocpRegion;

/**
 * One example passed in by the caller. Optional arrays may be null.
 *
 * All matrices are row-major. `grid_values` holds `prod(grid_shape)` cells
 * with the last axis fastest; it is copied and normalized.
 */
typedef struct MocpExampleInput {
  const char *id;
  size_t landmark;
  size_t dims;
  /**
   * `dims` values, mm.
   */
  const double *truth;
  const double *grid_values;
  /**
   * `dims` values each; required when `grid_values` is set.
   */
  const size_t *grid_shape;
  const double *grid_origin;
  const double *grid_spacing;
  /**
   * `dims` values.
   */
  const double *point;
  /**
   * `dims * dims` values.
   */
  const double *covariance;
  /**
   * `n_samples * dims` values.
   */
  const double *samples;
  size_t n_samples;
} MocpExampleInput;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *mocp_version(void);

/**
 * Message of the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *mocp_last_error_message(void);

/**
 * Stable error name of the last failure on this thread (e.g.
 * `"ShapeMismatch"`), or null.
 */
const char *mocp_last_error_name(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void mocp_string_free(char *s);

/**
 * Loads a dataset manifest and its tensors.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MocpStatus mocp_dataset_load(const char *path, struct MocpDataset **out);

/**
 * Creates an empty dataset of dimension 2 or 3.
 *
 * # Safety
 * `out` must be writable.
 */
enum MocpStatus mocp_dataset_new(size_t dims, struct MocpDataset **out);

/**
 * Validates and appends one example.
 *
 * # Safety
 * `dataset` must come from this library and not be used concurrently;
 * every non-null array in `input` must hold the documented length.
 */
enum MocpStatus mocp_dataset_push(struct MocpDataset *dataset,
                                  const struct MocpExampleInput *input);

/**
 * Number of examples; 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t mocp_dataset_len(const struct MocpDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a live handle, freed once.
 */
void mocp_dataset_free(struct MocpDataset *dataset);

/**
 * Fits `method` on every example of `dataset`. `config_json` may be null for
 * defaults.
 *
 * # Safety
 * String arguments must be NUL-terminated; `out` must be writable.
 */
enum MocpStatus mocp_calibrator_fit(const char *method,
                                    const struct MocpDataset *dataset,
                                    const char *config_json,
                                    bool pooled,
                                    struct MocpCalibrator **out);

/**
 * Serializes a calibrator exactly as `mocp calibrate` writes it.
 *
 * # Safety
 * `calibrator` must be a live handle; `out` must be writable.
 */
enum MocpStatus mocp_calibrator_to_json(const struct MocpCalibrator *calibrator, char **out);

/**
 * Reads a calibrator written by `mocp calibrate` or
 * [`mocp_calibrator_to_json`].
 *
 * # Safety
 * `json` must be NUL-terminated; `out` must be writable.
 */
enum MocpStatus mocp_calibrator_from_json(const char *json, struct MocpCalibrator **out);

/**
 * # Safety
 * `calibrator` must be null or a live handle, freed once.
 */
void mocp_calibrator_free(struct MocpCalibrator *calibrator);

/**
 * Predicts the region of example `index` of `dataset`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum MocpStatus mocp_predict(const struct MocpCalibrator *calibrator,
                             const struct MocpDataset *dataset,
                             size_t index,
                             double alpha,
                             struct MocpRegion **out);

/**
 * Predicts every example and returns the same JSON document `mocp predict`
 * writes.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum MocpStatus mocp_predict_json(const struct MocpCalibrator *calibrator,
                                  const struct MocpDataset *dataset,
                                  double alpha,
                                  char **out);

/**
 * Evaluates a `mocp predict` document against `dataset`; returns the same
 * JSON as `report.json`.
 *
 * # Safety
 * `predictions_json` must be NUL-terminated; handles must be live; `out`
 * must be writable.
 */
enum MocpStatus mocp_evaluate_json(const char *predictions_json,
                                   const struct MocpDataset *dataset,
                                   char **out);

/**
 * Region dimension; 0 for a null handle.
 *
 * # Safety
 * `region` must be null or a live handle.
 */
size_t mocp_region_dims(const struct MocpRegion *region);

/**
 * # Safety
 * `y` must hold `dims` values; `out` must be writable.
 */
enum MocpStatus mocp_region_contains(const struct MocpRegion *region,
                                     const double *y,
                                     size_t dims,
                                     bool *out);

/**
 * Area (2-D) or volume (3-D) in mm units.
 *
 * # Safety
 * `region` must be a live handle; `out` must be writable.
 */
enum MocpStatus mocp_region_measure(const struct MocpRegion *region, double *out);

/**
 * Canonical JSON geometry, as `mocp export-region --format json`.
 *
 * # Safety
 * `region` must be a live handle; `out` must be writable.
 */
enum MocpStatus mocp_region_to_json(const struct MocpRegion *region, char **out);

/**
 * # Safety
 * `region` must be null or a live handle, freed once.
 */
void mocp_region_free(struct MocpRegion *region);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOCP_H */
