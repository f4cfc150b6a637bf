#ifndef BIVPOST_H
#define BIVPOST_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum BivpostStatus {
  BIVPOST_STATUS_OK = 0,
  BIVPOST_STATUS_NULL_POINTER = 1,
  BIVPOST_STATUS_INVALID_ARGUMENT = 2,
  BIVPOST_STATUS_CONFIG = 3,
  BIVPOST_STATUS_DATA = 4,
  BIVPOST_STATUS_FIT_FAILURE = 5,
  BIVPOST_STATUS_MISSING_ARTIFACT = 6,
  BIVPOST_STATUS_PANIC = 7,
} BivpostStatus;

/**
 * Family menu of a Y-vine fit.
 */
typedef enum BivpostMenu {
  BIVPOST_MENU_GAUSSIAN = 0,
  BIVPOST_MENU_PARAMETRIC = 1,
  BIVPOST_MENU_ALL = 2,
} BivpostMenu;

/**
 * Fitted EMOS model (opaque).
 */
typedef struct BivpostEmos BivpostEmos;

/**
 * Fitted Y-vine model (opaque).
 */
typedef struct BivpostYVine BivpostYVine;

/**
 * Bivariate normal parameters.
 */
typedef struct BivpostParams {
  double mu_u;
  double mu_v;
  double sigma_u;
  double sigma_v;
  double rho;
} BivpostParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *bivpost_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bivpost_version(void);

/**
 * Maps the five linear predictors to distribution parameters.
 *
 * # Safety
 * `eta` must point to 5 doubles and `out_params` to a writable `BivpostParams`.
 */
enum BivpostStatus bivpost_link_to_params(const double *eta, struct BivpostParams *out_params);

/**
 * Bivariate normal log-density at `y` (2 doubles).
 *
 * # Safety
 * `params` and `out_value` must be valid; `y` must point to 2 doubles.
 */
enum BivpostStatus bivpost_logpdf(const struct BivpostParams *params,
                                  const double *y,
                                  double *out_value);

/**
 * Fits IND-EMOS (`bivariate == 0`) or BIV-EMOS on `n` days. Each design row
 * holds 8 doubles: mean_u, ctrl_u, mean_v, ctrl_v, log-sd_u, log-sd_v and
 * the two direction-speed products; `y` holds `n` (u, v) pairs.
 *
 * # Safety
 * Buffers must hold `8 n` and `2 n` doubles; `out_model` must be writable.
 */
enum BivpostStatus bivpost_emos_fit(int32_t bivariate,
                                    const double *design,
                                    const double *y,
                                    size_t n,
                                    struct BivpostEmos **out_model);

/**
 * Number of coefficients of a fitted EMOS model (10 or 13).
 *
 * # Safety
 * `model` must be a live handle.
 */
enum BivpostStatus bivpost_emos_n_coefficients(const struct BivpostEmos *model, size_t *out_n);

/**
 * Copies the coefficients into `values` (capacity `len`).
 *
 * # Safety
 * `values` must be writable for `len` doubles.
 */
enum BivpostStatus bivpost_emos_coefficients(const struct BivpostEmos *model,
                                             double *values,
                                             size_t len);

/**
 * Predictive parameters for one design row of 8 doubles.
 *
 * # Safety
 * `model` must be live, `design` must hold 8 doubles.
 */
enum BivpostStatus bivpost_emos_predict(const struct BivpostEmos *model,
                                        const double *design,
                                        struct BivpostParams *out_params);

/**
 * Releases an EMOS handle; null is ignored.
 *
 * # Safety
 * `model` must come from `bivpost_emos_fit` and not be used afterwards.
 */
void bivpost_emos_free(struct BivpostEmos *model);

/**
 * Fits a Y-vine on `n` days of responses (`2 n` doubles) and `p`
 * candidate covariates (`n p` doubles, row-major). `max_k == 0` allows all
 * covariates.
 *
 * # Safety
 * Buffers must have the stated sizes; `out_model` must be writable.
 */
enum BivpostStatus bivpost_yvine_fit(const double *y,
                                     const double *x,
                                     size_t n,
                                     size_t p,
                                     enum BivpostMenu menu,
                                     size_t max_k,
                                     double bandwidth_scale,
                                     struct BivpostYVine **out_model);

/**
 * Number of selected covariates and their 0-based indices in selection
 * order (`selected` may be null to query the count only).
 *
 * # Safety
 * `selected` must be null or writable for `capacity` entries.
 */
enum BivpostStatus bivpost_yvine_selected(const struct BivpostYVine *model,
                                          size_t *selected,
                                          size_t capacity,
                                          size_t *out_k);

/**
 * Conditional log-density of `y` (2 doubles) given covariates `x` (`p`
 * doubles, the fit's candidate count).
 *
 * # Safety
 * Buffers must have the stated sizes.
 */
enum BivpostStatus bivpost_yvine_logdensity(const struct BivpostYVine *model,
                                            const double *y,
                                            const double *x,
                                            size_t p,
                                            double *out_value);

/**
 * Writes `n` conditional draws as `2 n` doubles into `samples`.
 *
 * # Safety
 * `samples` must be writable for `2 n` doubles.
 */
enum BivpostStatus bivpost_yvine_sample(const struct BivpostYVine *model,
                                        const double *x,
                                        size_t p,
                                        size_t n,
                                        uint64_t seed,
                                        double *samples);

/**
 * Serializes the model to JSON. The returned string is released with
 * `bivpost_string_free`.
 *
 * # Safety
 * `out_json` must be writable.
 */
enum BivpostStatus bivpost_yvine_to_json(const struct BivpostYVine *model, char **out_json);

/**
 * Restores a model from `bivpost_yvine_to_json` output.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out_model` must be writable.
 */
enum BivpostStatus bivpost_yvine_from_json(const char *json, struct BivpostYVine **out_model);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void bivpost_yvine_free(struct BivpostYVine *model);

/**
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void bivpost_string_free(char *s);

/**
 * Energy score and ES-based PIT from two samples of `n` pairs each.
 *
 * # Safety
 * `r` and `r_star` must hold `2 n` doubles, `y` 2 doubles.
 */
enum BivpostStatus bivpost_energy_score(const double *r,
                                        const double *r_star,
                                        size_t n,
                                        const double *y,
                                        double *out_es,
                                        double *out_pit);

/**
 * Variogram score of order 0.5 from `n` pairs.
 *
 * # Safety
 * `r` must hold `2 n` doubles, `y` 2 doubles.
 */
enum BivpostStatus bivpost_variogram_score(const double *r,
                                           size_t n,
                                           const double *y,
                                           double *out_value);

/**
 * Diebold–Mariano test of two score series of length `n`.
 *
 * # Safety
 * `a` and `b` must hold `n` doubles.
 */
enum BivpostStatus bivpost_dm_test(const double *a,
                                   const double *b,
                                   size_t n,
                                   double *out_statistic,
                                   double *out_p_value);

/**
 * Benjamini–Hochberg rejections: `reject[i]` is set to 1 or 0.
 *
 * # Safety
 * `p` must hold `m` doubles and `reject` must be writable for `m` bytes.
 */
enum BivpostStatus bivpost_benjamini_hochberg(const double *p,
                                              size_t m,
                                              double alpha,
                                              uint8_t *reject);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIVPOST_H */
