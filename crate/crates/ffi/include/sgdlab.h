#ifndef SGDLAB_H
#define SGDLAB_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum SgdlabStatus {
  SGDLAB_STATUS_OK = 0,
  SGDLAB_STATUS_NULL_POINTER = 1,
  SGDLAB_STATUS_INVALID_ARGUMENT = 2,
  SGDLAB_STATUS_CONFIG = 3,
  SGDLAB_STATUS_DIVERGENCE = 4,
  SGDLAB_STATUS_OUT_OF_RANGE = 5,
  SGDLAB_STATUS_PANIC = 6,
} SgdlabStatus;

/**
 * Aggregated results of a finished experiment.
 */
typedef struct SgdlabEstimate SgdlabEstimate;

/**
 * An experiment config ready to run.
 */
typedef struct SgdlabExperiment SgdlabExperiment;

typedef struct SgdlabScheduleClass {
  bool diverges;
  bool square_summable;
  bool thm22_condition;
  bool damping_admissible;
  /**
   * Whether `l_mu` is meaningful.
   */
  bool has_l_mu;
  double l_mu;
  /**
   * Partial sums up to the requested horizon.
   */
  double sum_alpha;
  double sum_alpha_sq;
  double tail_product;
} SgdlabScheduleClass;

typedef struct SgdlabEstimateRow {
  uint64_t checkpoint;
  double mean_grad_sq;
  double se_grad_sq;
  double mean_gap;
  double se_gap;
  /**
   * Whether the averaged-iterate columns are present.
   */
  bool has_avg_gap;
  double mean_avg_gap;
  double se_avg_gap;
} SgdlabEstimateRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *sgdlab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *sgdlab_version(void);

/**
 * Classifies `alpha_k = alpha_c·k^(−alpha_a)`, `mu_k = mu_m·k^(−mu_b)` and
 * fills partial sums up to `horizon` (at least 10).
 *
 * # Safety
 * `out` must be null or point to writable memory for one struct.
 */
enum SgdlabStatus sgdlab_classify(double alpha_c,
                                  double alpha_a,
                                  double mu_m,
                                  double mu_b,
                                  uint64_t horizon,
                                  struct SgdlabScheduleClass *out);

/**
 * Parses a TOML experiment config. `overrides` holds `n_overrides`
 * strings of the form `section.key=value`; it may be null when
 * `n_overrides` is 0.
 *
 * # Safety
 * `toml` must be a NUL-terminated string, `overrides` must point to
 * `n_overrides` NUL-terminated strings, and `out` must be writable.
 */
enum SgdlabStatus sgdlab_experiment_from_toml(const char *toml,
                                              const char *const *overrides,
                                              size_t n_overrides,
                                              struct SgdlabExperiment **out);

/**
 * Rebuilds an experiment from a manifest written by `experiment`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` must be writable.
 */
enum SgdlabStatus sgdlab_experiment_from_manifest(const char *json, struct SgdlabExperiment **out);

/**
 * # Safety
 * `exp` must be a live handle from this library.
 */
enum SgdlabStatus sgdlab_experiment_set_seed(struct SgdlabExperiment *exp, uint64_t seed);

/**
 * The resolved config as manifest JSON; release with [`sgdlab_string_free`].
 *
 * # Safety
 * `exp` must be a live handle and `out` must be writable.
 */
enum SgdlabStatus sgdlab_experiment_manifest(const struct SgdlabExperiment *exp, char **out);

/**
 * Runs every replica. Blocks until done; honours `SGDLAB_THREADS`.
 *
 * # Safety
 * `exp` must be a live handle and `out` must be writable.
 */
enum SgdlabStatus sgdlab_experiment_run(const struct SgdlabExperiment *exp,
                                        struct SgdlabEstimate **out);

/**
 * # Safety
 * `exp` must be null or a handle not yet freed.
 */
void sgdlab_experiment_free(struct SgdlabExperiment *exp);

/**
 * Number of checkpoint rows, 0 for a null handle.
 *
 * # Safety
 * `est` must be null or a live handle.
 */
size_t sgdlab_estimate_len(const struct SgdlabEstimate *est);

/**
 * Replicas that diverged and were left out of the means.
 *
 * # Safety
 * `est` must be null or a live handle.
 */
size_t sgdlab_estimate_diverged(const struct SgdlabEstimate *est);

/**
 * # Safety
 * `est` must be a live handle and `out` must be writable.
 */
enum SgdlabStatus sgdlab_estimate_row(const struct SgdlabEstimate *est,
                                      size_t index,
                                      struct SgdlabEstimateRow *out);

/**
 * The estimates table as CSV; release with [`sgdlab_string_free`].
 *
 * # Safety
 * `est` must be a live handle and `out` must be writable.
 */
enum SgdlabStatus sgdlab_estimate_csv(const struct SgdlabEstimate *est, char **out);

/**
 * # Safety
 * `est` must be null or a handle not yet freed.
 */
void sgdlab_estimate_free(struct SgdlabEstimate *est);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a string from this library not yet freed.
 */
void sgdlab_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SGDLAB_H */
