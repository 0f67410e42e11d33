#ifndef BICAUSAL_H
#define BICAUSAL_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Predicted causal direction.
 */
typedef enum BcDirection {
  BcUndecided = 0,
  BcXtoY = 1,
  BcYtoX = 2,
} BcDirection;

/**
 * Scoring mode: which evidence terms enter the comparison.
 */
typedef enum BcScoringMode {
  BcJoint = 0,
  BcConditionalOnly = 1,
  BcMarginalOnly = 2,
} BcScoringMode;

/**
 * Status codes returned by every fallible function.
 */
typedef enum BcStatus {
  BcOk = 0,
  BcNullPointer = 1,
  BcInvalidArgument = 2,
  BcNumericalError = 3,
  BcInternalError = 4,
} BcStatus;

/**
 * Opaque configuration handle.
 */
typedef struct BcConfig BcConfig;

/**
 * Opaque dataset handle.
 */
typedef struct BcDataset BcDataset;

/**
 * Result of a direction decision: the verdict, the log-evidence margin,
 * and the four per-model scores.
 */
typedef struct BcDecision {
  enum BcDirection direction;
  double log_margin;
  double l_x;
  double l_y_given_x;
  double l_y;
  double l_x_given_y;
} BcDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread, or NULL. Valid until the next
 * failing call on the same thread; do not free.
 */
const char *bc_last_error(void);

/**
 * Create a dataset from two equal-length arrays.
 *
 * # Safety
 * `xs` and `ys` must point to at least `len` readable doubles.
 */
struct BcDataset *bc_dataset_create(const double *xs, const double *ys, uintptr_t len);

/**
 * # Safety
 * `ds` must be a pointer from [`bc_dataset_create`], not yet freed.
 */
void bc_dataset_free(struct BcDataset *ds);

/**
 * New configuration with the library defaults (20 restarts, 200 inducing
 * points, collapsed bound, joint scoring).
 */
struct BcConfig *bc_config_create(void);

/**
 * # Safety
 * `cfg` must be a pointer from [`bc_config_create`], not yet freed.
 */
void bc_config_free(struct BcConfig *cfg);

/**
 * # Safety
 * `cfg` must be a valid configuration handle.
 */
enum BcStatus bc_config_set_seed(struct BcConfig *cfg, uint64_t value);

/**
 * # Safety
 * `cfg` must be a valid configuration handle.
 */
enum BcStatus bc_config_set_restarts(struct BcConfig *cfg, uintptr_t value);

/**
 * # Safety
 * `cfg` must be a valid configuration handle.
 */
enum BcStatus bc_config_set_inducing(struct BcConfig *cfg, uintptr_t value);

/**
 * Use the sampled bound with this many Monte-Carlo samples; 0 selects the
 * collapsed bound.
 * # Safety
 * `cfg` must be a valid configuration handle.
 */
enum BcStatus bc_config_set_stochastic_samples(struct BcConfig *cfg, uintptr_t value);

/**
 * # Safety
 * `cfg` must be a valid configuration handle.
 */
enum BcStatus bc_config_set_adam_epochs(struct BcConfig *cfg, uintptr_t value);

/**
 * # Safety
 * `cfg` must be a valid configuration handle.
 */
enum BcStatus bc_config_set_bfgs_iters(struct BcConfig *cfg, uintptr_t value);

/**
 * # Safety
 * `cfg` must be a valid configuration handle.
 */
enum BcStatus bc_config_set_tie_tolerance(struct BcConfig *cfg, double value);

/**
 * # Safety
 * `cfg` must be a valid configuration handle.
 */
enum BcStatus bc_config_set_mode(struct BcConfig *cfg, enum BcScoringMode mode);

/**
 * Normalize the dataset, fit all four models, and decide the direction.
 *
 * # Safety
 * `ds` and `cfg` must be valid handles and `out` must point to writable
 * memory for one [`BcDecision`].
 */
enum BcStatus bc_discover(const struct BcDataset *ds,
                          const struct BcConfig *cfg,
                          struct BcDecision *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* BICAUSAL_H */
