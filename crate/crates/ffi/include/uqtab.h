#ifndef UQTAB_H
#define UQTAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UqtabStatus {
  UQTAB_STATUS_OK = 0,
  UQTAB_STATUS_NULL_POINTER = 1,
  UQTAB_STATUS_INVALID_ARGUMENT = 2,
  UQTAB_STATUS_IO = 3,
  UQTAB_STATUS_PARSE = 4,
  UQTAB_STATUS_DIMENSION = 5,
  UQTAB_STATUS_NON_FINITE = 6,
  UQTAB_STATUS_SINGLE_CLASS = 7,
  UQTAB_STATUS_DIVERGED = 8,
  UQTAB_STATUS_SCHEMA = 9,
  UQTAB_STATUS_PANIC = 10,
} UqtabStatus;

typedef enum UqtabMetric {
  UQTAB_METRIC_MAX_PROB = 0,
  UQTAB_METRIC_ENTROPY = 1,
  UQTAB_METRIC_STD = 2,
  UQTAB_METRIC_MUTUAL_INFORMATION = 3,
  UQTAB_METRIC_NOVELTY = 4,
} UqtabMetric;

/**
 * Feature matrix loaded from CSV.
 */
typedef struct UqtabFeatures UqtabFeatures;

/**
 * Fitted model together with its stored scaler.
 */
typedef struct UqtabModel UqtabModel;

/**
 * Result of a Welch t-test.
 */
typedef struct UqtabWelch {
  double t_statistic;
  double degrees_of_freedom;
  double p_value;
  /**
   * Nonzero when both samples have zero variance (t = 0, p = 1).
   */
  uint8_t degenerate;
} UqtabWelch;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *uqtab_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *uqtab_version(void);

/**
 * AUC-ROC of `scores` against 0/1 `labels` (ties count one half).
 *
 * # Safety
 * `scores` and `labels` must point to `n` readable elements; `out` must be writable.
 */
enum UqtabStatus uqtab_auc_roc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * AUC for separating OOD scores (positives) from ID scores.
 *
 * # Safety
 * The input pointers must cover `n_id` and `n_ood` elements; `out` must be writable.
 */
enum UqtabStatus uqtab_ood_auc(const double *id_scores,
                               size_t n_id,
                               const double *ood_scores,
                               size_t n_ood,
                               double *out);

/**
 * Welch's unequal-variance t-test.
 *
 * # Safety
 * `a` and `b` must cover `n_a` and `n_b` elements; `out` must be writable.
 */
enum UqtabStatus uqtab_welch_t_test(const double *a,
                                    size_t n_a,
                                    const double *b,
                                    size_t n_b,
                                    struct UqtabWelch *out);

/**
 * Uncertainty of `n` samples from `k` predicted class-1 probabilities
 * each, stored row-major as `k` rows of `n`. Writes `n` values; higher
 * means more uncertain. `UQTAB_METRIC_MAX_PROB` uses the mean over the
 * `k` rows; `UQTAB_METRIC_NOVELTY` is not defined for probabilities.
 *
 * # Safety
 * `probs` must cover `k * n` elements and `out` `n` writable elements.
 */
enum UqtabStatus uqtab_uncertainty(const double *probs,
                                   size_t k,
                                   size_t n,
                                   enum UqtabMetric metric,
                                   double *out);

/**
 * Loads a feature matrix CSV (`row_id` column plus named features).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UqtabStatus uqtab_features_read_csv(const char *path, struct UqtabFeatures **out);

/**
 * Rows and columns of a feature matrix.
 *
 * # Safety
 * `features` must come from `uqtab_features_read_csv`; the outputs must be writable.
 */
enum UqtabStatus uqtab_features_shape(const struct UqtabFeatures *features,
                                      size_t *rows,
                                      size_t *cols);

/**
 * Releases a feature matrix. Null is ignored.
 *
 * # Safety
 * `features` must come from `uqtab_features_read_csv` and not be used afterwards.
 */
void uqtab_features_free(struct UqtabFeatures *features);

/**
 * Loads a model file written by `uqtab train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UqtabStatus uqtab_model_load(const char *path, struct UqtabModel **out);

/**
 * Number of uncertainty metrics the model family reports.
 *
 * # Safety
 * `model` must come from `uqtab_model_load`; `out` must be writable.
 */
enum UqtabStatus uqtab_model_metric_count(const struct UqtabModel *model, size_t *out);

/**
 * The `index`-th metric of the model family, in report order.
 *
 * # Safety
 * `model` must come from `uqtab_model_load`; `out` must be writable.
 */
enum UqtabStatus uqtab_model_metric(const struct UqtabModel *model,
                                    size_t index,
                                    enum UqtabMetric *out);

/**
 * Scores every row of raw (unscaled) `features` with one of the model's
 * metrics. The stored scaler is applied first. `n_samples` is the number
 * of stochastic passes for MC Dropout and BBB; `seed` fixes them.
 *
 * # Safety
 * Handles must be live; `out` must have room for `out_len` values, at
 * least the number of rows.
 */
enum UqtabStatus uqtab_model_uncertainty(const struct UqtabModel *model,
                                         const struct UqtabFeatures *features,
                                         enum UqtabMetric metric,
                                         size_t n_samples,
                                         uint64_t seed,
                                         double *out,
                                         size_t out_len);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from `uqtab_model_load` and not be used afterwards.
 */
void uqtab_model_free(struct UqtabModel *model);

/**
 * Runs one experiment described by a JSON object and returns the report
 * JSON in `*out`, to be released with `uqtab_string_free`. Keys:
 * `experiment` (`mortality`, `perturbation`, `group_holdout`,
 * `cross_dataset`), `data`, and optionally `other`, `seed`, `registry`,
 * `runs`, `factors`, `repeats`, `groups` (default: every tag). Seeds match the CLI, so the
 * report equals the one `uqtab` writes for the same settings.
 *
 * # Safety
 * `request_json` must be a NUL-terminated string; `out` must be writable.
 */
enum UqtabStatus uqtab_run_experiment_json(const char *request_json, char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void uqtab_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UQTAB_H */
