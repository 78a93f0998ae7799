#ifndef SPLITGLM_H
#define SPLITGLM_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define SG_LOSS_SQUARED 0

#define SG_LOSS_LOGISTIC 1

#define SG_LOSS_PROBIT 2

#define SG_MODE_BSP 0

#define SG_MODE_ALB 1

typedef enum SgStatus {
  SG_STATUS_OK = 0,
  SG_STATUS_INVALID_ARGUMENT = 1,
  SG_STATUS_PARSE = 2,
  SG_STATUS_FORMAT = 3,
  SG_STATUS_IO = 4,
  SG_STATUS_TRANSPORT = 5,
  SG_STATUS_PROTOCOL = 6,
  SG_STATUS_JOIN = 7,
  SG_STATUS_LINE_SEARCH = 8,
  SG_STATUS_ORACLE = 9,
  SG_STATUS_UNDEFINED_METRIC = 10,
  SG_STATUS_PANIC = 11,
} SgStatus;

typedef struct SgDataset SgDataset;

typedef struct SgModel SgModel;

/**
 * Training options. Start from `sg_config_default`.
 */
typedef struct SgConfig {
  /**
   * One of the `SG_LOSS_*` constants.
   */
  int32_t loss;
  double lambda1;
  double lambda2;
  double nu;
  /**
   * One of the `SG_MODE_*` constants.
   */
  int32_t mode;
  double kappa;
  /**
   * Nonzero enables adaptive `mu`.
   */
  int32_t mu_adaptive;
  size_t max_outer;
  double tol;
  /**
   * In-process workers.
   */
  size_t nodes;
  uint64_t seed;
} SgConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Defaults for `loss` (an `SG_LOSS_*` value) with the given penalties.
 */
struct SgConfig sg_config_default(int32_t loss, double lambda1, double lambda2);

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sg_last_error(void);

/**
 * Reads a LIBSVM file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SgStatus sg_dataset_read_libsvm(const char *path, struct SgDataset **out);

/**
 * Builds a dataset from CSR arrays with 0-based column indices.
 * `row_ptr` has `n + 1` entries; `col_idx` and `values` have `row_ptr[n]`.
 *
 * # Safety
 * All arrays must hold the lengths above; `out` must be writable.
 */
enum SgStatus sg_dataset_from_csr(size_t n,
                                  size_t p,
                                  const double *labels,
                                  const size_t *row_ptr,
                                  const size_t *col_idx,
                                  const double *values,
                                  struct SgDataset **out);

/**
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t sg_dataset_num_rows(const struct SgDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t sg_dataset_num_features(const struct SgDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void sg_dataset_free(struct SgDataset *dataset);

/**
 * Trains on `config->nodes` in-process workers.
 *
 * # Safety
 * `dataset` and `config` must be live; `out` must be writable.
 */
enum SgStatus sg_fit(const struct SgDataset *dataset,
                     const struct SgConfig *config,
                     struct SgModel **out);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t sg_model_num_weights(const struct SgModel *model);

/**
 * Copies the weights and, when `raw_ids` is non-null, the feature id each
 * weight belongs to. `len` must equal `sg_model_num_weights`.
 *
 * # Safety
 * `weights` (and `raw_ids` if non-null) must hold `len` elements.
 */
enum SgStatus sg_model_weights(const struct SgModel *model,
                               double *weights,
                               uint64_t *raw_ids,
                               size_t len);

/**
 * Final objective, iteration count and convergence flag. Any out pointer
 * may be null.
 *
 * # Safety
 * Non-null out pointers must be writable.
 */
enum SgStatus sg_model_summary(const struct SgModel *model,
                               double *objective,
                               size_t *iterations,
                               bool *converged);

/**
 * Margins `x_i . beta` for every row of `dataset`, matched by feature id.
 * Features the model never saw contribute nothing.
 *
 * # Safety
 * `scores` must hold `len == sg_dataset_num_rows(dataset)` elements.
 */
enum SgStatus sg_model_predict(const struct SgModel *model,
                               const struct SgDataset *dataset,
                               double *scores,
                               size_t len);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void sg_model_free(struct SgModel *model);

/**
 * Area under the precision-recall curve; labels above 0 are positive.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; `out` must be writable.
 */
enum SgStatus sg_auprc(const double *scores, const double *labels, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPLITGLM_H */
