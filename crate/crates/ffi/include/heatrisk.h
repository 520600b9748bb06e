#ifndef HEATRISK_H
#define HEATRISK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum HrStatus {
  HR_STATUS_OK = 0,
  HR_STATUS_NULL_POINTER = 1,
  HR_STATUS_INVALID_INPUT = 2,
  HR_STATUS_IO = 3,
  HR_STATUS_PARSE = 4,
  HR_STATUS_NUMERICAL = 5,
  HR_STATUS_OUT_OF_RANGE = 6,
  HR_STATUS_PANIC = 99,
} HrStatus;

/**
 * Fitted dependence model.
 */
typedef struct HrDependenceModel HrDependenceModel;

/**
 * Fitted marginal model (body, tail and site covariates).
 */
typedef struct HrMarginalModel HrMarginalModel;

/**
 * Batch of simulated r-Pareto profiles.
 */
typedef struct HrSimBatch HrSimBatch;

/**
 * Time covariates for evaluating a margin.
 */
typedef struct HrTimeCovariates {
  double m_i;
  double m_g;
  double co2;
} HrTimeCovariates;

/**
 * Event probability with Monte Carlo standard errors.
 */
typedef struct HrEventEstimate {
  double prob;
  double prob_se;
  double coverage;
  double coverage_se;
  double coverage_given_event;
  double coverage_given_event_se;
  double b;
  double scale;
  /**
   * 1 when the unscaled estimator was used.
   */
  int32_t fallback;
} HrEventEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null if none. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *hr_last_error_message(void);

/**
 * Clear the last error message on this thread.
 */
void hr_clear_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *hr_version(void);

/**
 * Load a marginal model from `fit-tail/marginal.json`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out_model` writable.
 */
enum HrStatus hr_marginal_load(const char *path, struct HrMarginalModel **out_model);

/**
 * Release a marginal model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`hr_marginal_load`] and not be used afterwards.
 */
void hr_marginal_free(struct HrMarginalModel *model);

/**
 * Number of stations in the model (0 for null).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t hr_marginal_n_stations(const struct HrMarginalModel *model);

/**
 * Distribution function of the station margin at temperature `x`.
 *
 * # Safety
 * `model` must be a live handle and `out_value` writable.
 */
enum HrStatus hr_marginal_cdf(const struct HrMarginalModel *model,
                              size_t station,
                              struct HrTimeCovariates time,
                              double x,
                              double *out_value);

/**
 * Quantile of the station margin at probability `p` in (0, 1).
 *
 * # Safety
 * `model` must be a live handle and `out_value` writable.
 */
enum HrStatus hr_marginal_quantile(const struct HrMarginalModel *model,
                                   size_t station,
                                   struct HrTimeCovariates time,
                                   double p,
                                   double *out_value);

/**
 * Return level for a period in years (92 summer days per year).
 *
 * # Safety
 * `model` must be a live handle and `out_value` writable.
 */
enum HrStatus hr_marginal_return_level(const struct HrMarginalModel *model,
                                       size_t station,
                                       struct HrTimeCovariates time,
                                       double period_years,
                                       double *out_value);

/**
 * Pareto-scale thresholds for a common temperature at the given stations.
 *
 * # Safety
 * `stations` must hold `n` indices and `out_thresholds` room for `n` values.
 */
enum HrStatus hr_marginal_pareto_thresholds(const struct HrMarginalModel *model,
                                            const size_t *stations,
                                            size_t n,
                                            struct HrTimeCovariates time,
                                            double temp,
                                            double *out_thresholds);

/**
 * Load a dependence model from `fit-dep/dependence.json`.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out_model` writable.
 */
enum HrStatus hr_dependence_load(const char *path, struct HrDependenceModel **out_model);

/**
 * Build a dependence model from variogram parameters and a risk threshold.
 *
 * # Safety
 * `out_model` must be writable.
 */
enum HrStatus hr_dependence_new(double alpha,
                                double phi,
                                double nu,
                                double v_r,
                                struct HrDependenceModel **out_model);

/**
 * Release a dependence model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void hr_dependence_free(struct HrDependenceModel *model);

/**
 * Risk threshold v_r of the model.
 *
 * # Safety
 * `model` must be a live handle and `out_value` writable.
 */
enum HrStatus hr_dependence_risk_threshold(const struct HrDependenceModel *model,
                                           double *out_value);

/**
 * Extremal coefficient χ(h) of the model at distance `h_km` and
 * temperature anomaly `m_i` (used only when the sill varies in time).
 *
 * # Safety
 * `model` must be a live handle and `out_value` writable.
 */
enum HrStatus hr_dependence_chi(const struct HrDependenceModel *model,
                                double h_km,
                                double m_i,
                                double *out_value);

/**
 * Simulate `m` profiles at `n_sites` sites with planar coordinates in km
 * (`coords` holds x0, y0, x1, y1, ...). `reference` < 0 picks the site
 * nearest the centroid.
 *
 * # Safety
 * `coords` must hold `2 * n_sites` values and `out_batch` be writable.
 */
enum HrStatus hr_simulate(const struct HrDependenceModel *model,
                          const double *coords,
                          size_t n_sites,
                          double m_i,
                          size_t m,
                          size_t l,
                          uint64_t seed,
                          int64_t reference,
                          struct HrSimBatch **out_batch);

/**
 * Release a simulated batch. Null is ignored.
 *
 * # Safety
 * `batch` must come from [`hr_simulate`] and not be used afterwards.
 */
void hr_batch_free(struct HrSimBatch *batch);

/**
 * Number of sites in a batch (0 for null).
 *
 * # Safety
 * `batch` must be null or a live handle.
 */
size_t hr_batch_n_sites(const struct HrSimBatch *batch);

/**
 * Number of profiles in a batch (0 for null).
 *
 * # Safety
 * `batch` must be null or a live handle.
 */
size_t hr_batch_n_profiles(const struct HrSimBatch *batch);

/**
 * Probability that a Pareto-scale field exceeds `thresholds` somewhere
 * (one threshold per batch site), with coverage summaries.
 *
 * # Safety
 * `thresholds` must hold `n` values and `out_estimate` be writable.
 */
enum HrStatus hr_prob_event(const struct HrSimBatch *batch,
                            const double *thresholds,
                            size_t n,
                            double v_r,
                            struct HrEventEstimate *out_estimate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEATRISK_H */
