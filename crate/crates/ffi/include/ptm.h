#ifndef PTM_H
#define PTM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PtmStatus {
  PtmStatus_Ok = 0,
  PtmStatus_NullPointer = 1,
  PtmStatus_InvalidParameter = 2,
  PtmStatus_Unsupported = 3,
  PtmStatus_Numeric = 4,
  PtmStatus_Config = 5,
  PtmStatus_Io = 6,
  PtmStatus_InvalidUtf8 = 7,
  PtmStatus_Panic = 8,
} PtmStatus;

/**
 * Opaque counting law handle.
 */
typedef struct PtmCountingLaw PtmCountingLaw;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next `ptm_*` call on the same thread.
 */
const char *ptm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ptm_version(void);

/**
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum PtmStatus ptm_poisson_new(double lambda, struct PtmCountingLaw **out);

/**
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum PtmStatus ptm_binomial_new(uint64_t n, double p, struct PtmCountingLaw **out);

/**
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum PtmStatus ptm_negative_binomial_new(double r, double theta, struct PtmCountingLaw **out);

/**
 * Power-series law with finitely many coefficients `a_0, ..., a_{len-1}`.
 *
 * # Safety
 * `coeffs` must point to `len` readable doubles; `out` must be valid for a
 * pointer write.
 */
enum PtmStatus ptm_nnps_new(const double *coeffs,
                            size_t len,
                            double theta,
                            struct PtmCountingLaw **out);

/**
 * # Safety
 * `law` must be null or a handle from this library not yet freed.
 */
void ptm_law_free(struct PtmCountingLaw *law);

/**
 * `E t^K`.
 *
 * # Safety
 * `law` must be a live handle; `out` must be valid for a write.
 */
enum PtmStatus ptm_law_pgf(const struct PtmCountingLaw *law, double t, double *out);

/**
 * `E (1 - t)^K`.
 *
 * # Safety
 * `law` must be a live handle; `out` must be valid for a write.
 */
enum PtmStatus ptm_law_apgf(const struct PtmCountingLaw *law, double t, double *out);

/**
 * # Safety
 * `law` must be a live handle; `out` must be valid for a write.
 */
enum PtmStatus ptm_law_pmf(const struct PtmCountingLaw *law, uint64_t k, double *out);

/**
 * Mean `c` and variance `δ²`.
 *
 * # Safety
 * `law` must be a live handle; both out pointers must be valid for writes.
 */
enum PtmStatus ptm_law_moments(const struct PtmCountingLaw *law, double *mean, double *variance);

/**
 * Law of the points kept under independent retention with probability `a`.
 *
 * # Safety
 * `law` must be a live handle; `out` must be valid for a pointer write.
 */
enum PtmStatus ptm_law_thin(const struct PtmCountingLaw *law,
                            double a,
                            struct PtmCountingLaw **out);

/**
 * Largest identity residual of the thinning relation over `n_grid` evenly
 * spaced points of `[0, 1]`.
 *
 * # Safety
 * `law` must be a live handle; `out` must be valid for a write.
 */
enum PtmStatus ptm_bone_residual(const struct PtmCountingLaw *law,
                                 double a,
                                 size_t n_grid,
                                 double *out);

/**
 * Root of `1 - τ = e^{-R0(τ + ρ)}`.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum PtmStatus ptm_sir_final_size(double r0, double rho, double *out);

/**
 * Runs an experiment from a JSON config and returns the canonical JSON
 * report. `passed` receives 1 when every check passed, else 0. Free the
 * report with [`ptm_string_free`].
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; the out pointers must be
 * valid for writes.
 */
enum PtmStatus ptm_run_config_json(const char *config_json, char **report_json, int32_t *passed);

/**
 * # Safety
 * `s` must be null or a string returned by this library not yet freed.
 */
void ptm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PTM_H */
