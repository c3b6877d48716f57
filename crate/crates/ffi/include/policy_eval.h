#ifndef POLICY_EVAL_H
#define POLICY_EVAL_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PeStatus {
  PE_STATUS_OK = 0,
  PE_STATUS_NULL_POINTER = 1,
  /**
   * Bad argument, configuration or malformed input.
   */
  PE_STATUS_INVALID_INPUT = 2,
  /**
   * A data invariant does not hold or the data are degenerate.
   */
  PE_STATUS_INVALID_DATA = 3,
  PE_STATUS_NUMERICAL = 4,
  PE_STATUS_IO = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  PE_STATUS_INTERNAL = 6,
} PeStatus;

typedef enum PeEstimator {
  PE_ESTIMATOR_BASE = 0,
  PE_ESTIMATOR_SUBGROUP = 1,
  PE_ESTIMATOR_THRESHOLD = 2,
  PE_ESTIMATOR_HYBRID = 3,
  PE_ESTIMATOR_MATE_RESHUFFLE = 4,
  PE_ESTIMATOR_REGRESSION_BASE = 5,
  PE_ESTIMATOR_REGRESSION_SUBGROUP = 6,
} PeEstimator;

/**
 * `Default` picks the method the library would pick for the dataset.
 */
typedef enum PeVariance {
  PE_VARIANCE_DEFAULT = 0,
  PE_VARIANCE_SG_SIMPLE = 1,
  PE_VARIANCE_SG_KNN = 2,
  PE_VARIANCE_BASE_KNN = 3,
  PE_VARIANCE_WELCH = 4,
  PE_VARIANCE_OLS_CLASSICAL = 5,
  PE_VARIANCE_OLS_HC0 = 6,
  PE_VARIANCE_HYB_KNN = 7,
} PeVariance;

/**
 * Opaque dataset handle.
 */
typedef struct PeDataset PeDataset;

/**
 * Evaluation options. Obtain defaults from [`pe_options_default`].
 */
typedef struct PeOptions {
  double level;
  /**
   * Reward steps to use; 0 uses the full horizon.
   */
  size_t truncate_at;
  /**
   * Allocation rounds to evaluate; 0 uses all.
   */
  size_t upto_round;
  /**
   * Order-statistic window; 0 chooses automatically.
   */
  size_t k;
  /**
   * Hybrid weight; NaN estimates it.
   */
  double hybrid_weight;
  /**
   * Non-zero centres the simple subgroup variance about `S / n`.
   */
  uint8_t literal_centering;
} PeOptions;

/**
 * Estimate and inference. Fields without a value are NaN (or 0 for `k_used`).
 */
typedef struct PeReport {
  double point;
  double variance;
  double ci_low;
  double ci_high;
  double p_value;
  double level;
  double hybrid_weight;
  size_t k_used;
  size_t n;
  /**
   * Non-zero when a negative variance estimate was clamped to 0.
   */
  uint8_t variance_clamped;
} PeReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t pe_last_error_message(char *buf, size_t len);

struct PeOptions pe_options_default(void);

/**
 * Loads a dataset CSV. `alpha` NaN infers the treatment fraction.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PeStatus pe_dataset_load_csv(const char *path, double alpha, struct PeDataset **out);

/**
 * Builds a single-round, single-step dataset from per-agent arrays of length
 * `n`. `policy_treated[i]` is non-zero for treated policy agents.
 *
 * # Safety
 * Every array pointer must be valid for `n` elements and `out` a valid pointer.
 */
enum PeStatus pe_dataset_from_arrays(size_t n,
                                     const double *policy_index,
                                     const uint8_t *policy_treated,
                                     const double *policy_reward,
                                     const double *control_index,
                                     const double *control_reward,
                                     double alpha,
                                     struct PeDataset **out);

/**
 * Releases a dataset. Null is ignored.
 *
 * # Safety
 * `data` must come from a `pe_dataset_*` constructor and not be used afterwards.
 */
void pe_dataset_free(struct PeDataset *data);

/**
 * Agents per arm, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live handle.
 */
size_t pe_dataset_n(const struct PeDataset *data);

/**
 * Reward steps per agent, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live handle.
 */
size_t pe_dataset_horizon(const struct PeDataset *data);

/**
 * Runs one estimator with its variance and fills `out`. `opts` may be null
 * for defaults.
 *
 * # Safety
 * `data` must be a live handle, `opts` null or valid, `out` valid.
 */
enum PeStatus pe_estimate(const struct PeDataset *data,
                          enum PeEstimator estimator,
                          enum PeVariance variance,
                          const struct PeOptions *opts,
                          struct PeReport *out);

/**
 * Interval for the difference of two independent estimates on equal-size trials.
 *
 * # Safety
 * `a`, `b`, `lo` and `hi` must be valid pointers.
 */
enum PeStatus pe_compare(const struct PeReport *a,
                         const struct PeReport *b,
                         double level,
                         double *lo,
                         double *hi);

/**
 * Standard normal CDF.
 */
double pe_normal_cdf(double x);

/**
 * Standard normal quantile for `p` in (0, 1).
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PeStatus pe_normal_quantile(double p, double *out);

/**
 * Whittle index of a two-state agent. `probs[4a + 2s + t]` is the
 * probability of moving from `s` to `t` under action `a`.
 *
 * # Safety
 * `probs` must point to 8 doubles and `out` must be valid.
 */
enum PeStatus pe_whittle_index(const double *probs,
                               double discount,
                               size_t eval_state,
                               double tol,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POLICY_EVAL_H */
