#ifndef PANEL_SELINF_H
#define PANEL_SELINF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes. `PS_INPUT_ERROR` and `PS_NUMERICAL_ERROR` match the exit
// codes of the command-line tool.
typedef enum PsStatus {
  PS_OK = 0,
  PS_NULL_POINTER = 1,
  PS_INPUT_ERROR = 2,
  PS_NUMERICAL_ERROR = 3,
  PS_PANIC = 4,
} PsStatus;

typedef enum PsMethod {
  PS_LS = 0,
  PS_GMM = 1,
} PsMethod;

// Opaque balanced panel.
typedef struct PsPanel PsPanel;

// Opaque clustering run together with its group estimates.
typedef struct PsRun PsRun;

// Opaque selective test result.
typedef struct PsTest PsTest;

// Scalar summary of a [`PsTest`].
typedef struct PsTestSummary {
  double statistic;
  double p_selective;
  double p_naive;
  double wald_stat;
  double log_support_mass;
  // Number of disjoint intervals in the truncation set.
  uintptr_t n_intervals;
  bool fallback;
} PsTestSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer is
// valid until the next call into the library from the same thread.
const char *ps_last_error(void);

// # Safety
// `s` must come from this library and not have been freed.
void ps_string_free(char *s);

// Loads a panel CSV with columns `unit,time,y,x1..xp[,z1..zq]`.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum PsStatus ps_panel_load_csv(const char *path, struct PsPanel **out);

// Builds a panel without instruments from dense arrays. `y` holds
// `n_units * t` values, unit by unit in time order; `x` holds
// `n_units * t * p` values with the regressors of one observation adjacent.
//
// # Safety
// `y` and `x` must point to that many readable doubles; `out` must be
// writable.
enum PsStatus ps_panel_from_arrays(uintptr_t n_units,
                                   uintptr_t t,
                                   uintptr_t p,
                                   const double *y,
                                   const double *x,
                                   struct PsPanel **out);

// Draws one panel from simulation design `dgp` (1 to 6).
//
// # Safety
// `out` must be writable.
enum PsStatus ps_panel_simulate(uint32_t dgp,
                                uintptr_t n_units,
                                uintptr_t t,
                                double delta,
                                uint64_t seed,
                                struct PsPanel **out);

// # Safety
// `panel` must be null or a live handle.
uintptr_t ps_panel_n(const struct PsPanel *panel);

// # Safety
// `panel` must be null or a live handle.
uintptr_t ps_panel_t(const struct PsPanel *panel);

// # Safety
// `panel` must be null or a live handle.
uintptr_t ps_panel_p(const struct PsPanel *panel);

// # Safety
// `panel` must be null or a handle not yet freed.
void ps_panel_free(struct PsPanel *panel);

// Estimates unit slopes by `method` and clusters them into `k` groups.
// `max_iter` of 0 selects the library default.
//
// # Safety
// `panel` must be a live handle; `out` must be writable.
enum PsStatus ps_fit(const struct PsPanel *panel,
                     uintptr_t k,
                     uint64_t seed,
                     enum PsMethod method,
                     uintptr_t max_iter,
                     struct PsRun **out);

// # Safety
// `run` must be null or a live handle.
uintptr_t ps_run_k(const struct PsRun *run);

// Writes the 1-based group of each of the `len` units.
//
// # Safety
// `run` must be a live handle; `out` must hold `len` values.
enum PsStatus ps_run_labels(const struct PsRun *run, uintptr_t *out, uintptr_t len);

// Writes the `k * p` group slopes, group by group.
//
// # Safety
// `run` must be a live handle; `out` must hold `len` values.
enum PsStatus ps_run_alpha(const struct PsRun *run, double *out, uintptr_t len);

// JSON record of the run; free with [`ps_string_free`]. Null on failure.
//
// # Safety
// `run` must be null or a live handle.
char *ps_run_json(const struct PsRun *run);

// # Safety
// `run` must be null or a handle not yet freed.
void ps_run_free(struct PsRun *run);

// Selective test of equal slopes between groups `k` and `k_prime`
// (1-based). `covariate` 0 tests all slopes jointly; `j > 0` tests slope
// `j` alone.
//
// # Safety
// `run` must be a live handle; `out` must be writable.
enum PsStatus ps_test(const struct PsRun *run,
                      uintptr_t k,
                      uintptr_t k_prime,
                      uintptr_t covariate,
                      struct PsTest **out);

// # Safety
// `test` must be a live handle; `out` must be writable.
enum PsStatus ps_test_summary(const struct PsTest *test, struct PsTestSummary *out);

// Writes the truncation set as `lo, hi` pairs; `len` counts doubles. An
// unbounded upper end is written as infinity.
//
// # Safety
// `test` must be a live handle; `out` must hold `len` values.
enum PsStatus ps_test_truncation(const struct PsTest *test, double *out, uintptr_t len);

// JSON record of the test; free with [`ps_string_free`]. Null on failure.
//
// # Safety
// `test` must be null or a live handle.
char *ps_test_json(const struct PsTest *test);

// # Safety
// `test` must be null or a handle not yet freed.
void ps_test_free(struct PsTest *test);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PANEL_SELINF_H */
