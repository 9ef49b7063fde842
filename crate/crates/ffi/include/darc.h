#ifndef DARC_H
#define DARC_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum DarcStatus {
  DARC_STATUS_OK = 0,
  DARC_STATUS_NULL_POINTER = 1,
  DARC_STATUS_INVALID_ARGUMENT = 2,
  // Bad magic, version or header field in a file.
  DARC_STATUS_FORMAT = 3,
  // File shorter or longer than its header declares.
  DARC_STATUS_LENGTH = 4,
  DARC_STATUS_VALIDATION = 5,
  DARC_STATUS_CONFIG = 6,
  DARC_STATUS_IO = 7,
  DARC_STATUS_JSON = 8,
  // An internal panic was caught at the boundary.
  DARC_STATUS_PANIC = 9,
} DarcStatus;

typedef struct DarcCalibratedSet DarcCalibratedSet;

typedef struct DarcDataset DarcDataset;

typedef struct DarcParams DarcParams;

typedef struct DarcCalibrationConfig {
  size_t eta;
  size_t k;
  size_t n_rare;
  size_t n_com;
  uint64_t seed;
} DarcCalibrationConfig;

typedef struct DarcTrainConfig {
  size_t n_max;
  double lr_max;
  double lr_min;
  size_t batch_size;
  double beta1;
  double beta2;
  double eps;
  double weight_decay;
  size_t n_mine;
  double delta;
  size_t n_hard;
  // Attention hidden width; 0 selects `dim / 2`.
  size_t hidden;
  uint64_t seed;
} DarcTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *darc_version(void);

// Message of the last failure on this thread, or NULL if there was none.
// The pointer stays valid until the next failing call on this thread.
const char *darc_last_error(void);

// Builds a dataset from `n` rows of `dim` floats (row-major), `n` labels and
// `n_classes` class names. `view` is 0 for plain, 1 for augmented.
//
// # Safety
// Every pointer must be valid for the stated number of elements.
enum DarcStatus darc_dataset_new(size_t dim,
                                 size_t n,
                                 const float *values,
                                 const uint32_t *labels,
                                 size_t n_classes,
                                 const char *const *class_names,
                                 uint8_t view,
                                 struct DarcDataset **out);

// Loads a DARC1 file (and its metadata sidecar if present).
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum DarcStatus darc_dataset_load(const char *path, struct DarcDataset **out);

// # Safety
// `ds` must be a live handle; `path` a NUL-terminated string.
enum DarcStatus darc_dataset_save(const struct DarcDataset *ds, const char *path);

// Number of rows; 0 for NULL.
//
// # Safety
// `ds` must be NULL or a live handle.
size_t darc_dataset_len(const struct DarcDataset *ds);

// # Safety
// `ds` must be NULL or a live handle.
size_t darc_dataset_dim(const struct DarcDataset *ds);

// # Safety
// `ds` must be NULL or a live handle.
size_t darc_dataset_n_classes(const struct DarcDataset *ds);

// Copies the labels into `labels`, which must hold `darc_dataset_len` entries.
//
// # Safety
// `labels` must be valid for `capacity` writes.
enum DarcStatus darc_dataset_labels(const struct DarcDataset *ds,
                                    uint32_t *labels,
                                    size_t capacity);

// # Safety
// `ds` must be NULL or a handle not yet freed.
void darc_dataset_free(struct DarcDataset *ds);

struct DarcCalibrationConfig darc_calibration_config_default(void);

// Builds the calibrated training set from the plain and augmented views.
//
// # Safety
// Handles must be live; `config` and `out` must be valid pointers.
enum DarcStatus darc_calibrate(const struct DarcDataset *plain,
                               const struct DarcDataset *aug,
                               const struct DarcCalibrationConfig *config,
                               struct DarcCalibratedSet **out);

// # Safety
// `set` must be NULL or a live handle.
size_t darc_calibrated_len(const struct DarcCalibratedSet *set);

// Copies the calibrated rows into a new dataset handle.
//
// # Safety
// `set` must be a live handle; `out` must be writable.
enum DarcStatus darc_calibrated_dataset(const struct DarcCalibratedSet *set,
                                        struct DarcDataset **out);

// Writes the per-row provenance CSV.
//
// # Safety
// `set` must be a live handle; `path` a NUL-terminated string.
enum DarcStatus darc_calibrated_write_provenance(const struct DarcCalibratedSet *set,
                                                 const char *path);

// # Safety
// `set` must be NULL or a handle not yet freed.
void darc_calibrated_free(struct DarcCalibratedSet *set);

struct DarcTrainConfig darc_train_config_default(void);

// Trains a head on `ds`.
//
// # Safety
// `ds` must be a live handle; `config` and `out` must be valid pointers.
enum DarcStatus darc_train(const struct DarcDataset *ds,
                           const struct DarcTrainConfig *config,
                           struct DarcParams **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum DarcStatus darc_params_load(const char *path, struct DarcParams **out);

// # Safety
// `params` must be a live handle; `path` a NUL-terminated string.
enum DarcStatus darc_params_save(const struct DarcParams *params, const char *path);

// # Safety
// `params` must be NULL or a handle not yet freed.
void darc_params_free(struct DarcParams *params);

// Predicted class per row of `ds`, written to `preds` (at least
// `darc_dataset_len(ds)` entries).
//
// # Safety
// Handles must be live; `preds` must be valid for `capacity` writes.
enum DarcStatus darc_predict(const struct DarcParams *params,
                             const struct DarcDataset *ds,
                             uint32_t *preds,
                             size_t capacity);

// Mean per-class recall over the classes present in `labels`.
//
// # Safety
// `preds` and `labels` must be valid for `n` reads; `out` must be writable.
enum DarcStatus darc_balanced_accuracy(const uint32_t *preds,
                                       const uint32_t *labels,
                                       size_t n,
                                       size_t n_classes,
                                       double *out);

// Evaluation report for `ds` as a JSON string, to be released with
// `darc_string_free`.
//
// # Safety
// Handles must be live; `out` must be writable.
enum DarcStatus darc_evaluate_json(const struct DarcParams *params,
                                   const struct DarcDataset *ds,
                                   char **out);

// # Safety
// `s` must be NULL or a string returned by this library and not yet freed.
void darc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DARC_H */
