#ifndef GRIDVOLT_H
#define GRIDVOLT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Use the strategy configured in the scenario.
 */
#define GV_STRATEGY_SCENARIO -1

#define GV_STRATEGY_HVC 0

#define GV_STRATEGY_DISTRIBUTED_ONLY 1

#define GV_STRATEGY_NO_CONTROL 2

/**
 * Result of a call. The nonzero values match the exit codes of the
 * `gridvolt` command-line tool where the meaning overlaps.
 */
typedef enum GvStatus {
  GV_STATUS_OK = 0,
  /**
   * The iteration budget ran out before the tolerance was met.
   */
  GV_STATUS_NOT_CONVERGED = 2,
  /**
   * Invalid input: a file, a configuration value or a problem parameter.
   */
  GV_STATUS_INPUT = 3,
  /**
   * Numerical failure, including diverged iterates.
   */
  GV_STATUS_NUMERICAL = 4,
  /**
   * Null pointer, wrong buffer length or invalid UTF-8.
   */
  GV_STATUS_INVALID_ARGUMENT = 5,
  /**
   * Internal error; the library state is unaffected.
   */
  GV_STATUS_PANIC = 6,
} GvStatus;

/**
 * A static voltage-mismatch problem.
 */
typedef struct GvProblem GvProblem;

/**
 * A resolved scenario file.
 */
typedef struct GvScenario GvScenario;

/**
 * Settings for [`gv_solve_static`]. A nonpositive `alpha` or `beta`
 * selects half of its certified bound.
 */
typedef struct GvSolveOptions {
  double alpha;
  double beta;
  double theta;
  double tol;
  uint64_t max_iters;
} GvSolveOptions;

/**
 * Outcome of [`gv_solve_static`].
 */
typedef struct GvSolveReport {
  uint64_t iterations;
  double r_v;
  double r_q;
  double r_lambda;
  double alpha;
  double beta;
} GvSolveReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Description of the last failure on this thread, or null. The string is
 * owned by the library.
 */
const char *gv_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *gv_version(void);

/**
 * Read and resolve a scenario TOML file. Relative paths in it are taken
 * relative to its directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum GvStatus gv_scenario_load(const char *path, struct GvScenario **out);

/**
 * # Safety
 * `scenario` must come from [`gv_scenario_load`] or be null.
 */
void gv_scenario_free(struct GvScenario *scenario);

/**
 * Number of controllable buses, 0 for a null handle.
 *
 * # Safety
 * `scenario` must be a live handle or null.
 */
size_t gv_scenario_n(const struct GvScenario *scenario);

/**
 * # Safety
 * `scenario` must be a live handle or null.
 */
size_t gv_scenario_timesteps(const struct GvScenario *scenario);

/**
 * Static problem at timestep `t` of the scenario's profiles.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum GvStatus gv_scenario_problem(const struct GvScenario *scenario,
                                  size_t t,
                                  struct GvProblem **out);

/**
 * Run one strategy over the whole scenario and write `trace.csv`,
 * `timesteps.csv` and `summary.json` into `out_dir`. `mean_mismatch`
 * (nullable) receives the voltage mismatch averaged over timesteps.
 *
 * # Safety
 * `scenario` must be a live handle, `out_dir` a NUL-terminated string.
 */
enum GvStatus gv_simulate(const struct GvScenario *scenario,
                          int32_t strategy,
                          const char *out_dir,
                          double *mean_mismatch);

/**
 * Build a problem from a dense row-major `n` x `n` Bbus matrix (symmetric
 * positive definite), the operating vector `w`, the voltage target `mu`,
 * the weight `gamma` and the VAR box `[q_lo, q_hi]` (infinities allowed).
 *
 * # Safety
 * `bbus` must point to `n * n` doubles, the other arrays to `n` each.
 */
enum GvStatus gv_problem_new(size_t n,
                             const double *bbus,
                             const double *w,
                             const double *mu,
                             double gamma,
                             const double *q_lo,
                             const double *q_hi,
                             struct GvProblem **out);

/**
 * # Safety
 * `problem` must come from this library or be null.
 */
void gv_problem_free(struct GvProblem *problem);

/**
 * # Safety
 * `problem` must be a live handle or null.
 */
size_t gv_problem_n(const struct GvProblem *problem);

/**
 * Smallest and largest eigenvalue of Bbus.
 *
 * # Safety
 * `problem` must be a live handle; the outputs are nullable.
 */
enum GvStatus gv_problem_spectrum(const struct GvProblem *problem,
                                  double *eta_tilde,
                                  double *l_tilde);

/**
 * Certified step-size bounds. Fails with `Input` when `gamma` is 0.
 *
 * # Safety
 * `problem` must be a live handle; the outputs are nullable.
 */
enum GvStatus gv_problem_step_bounds(const struct GvProblem *problem,
                                     double *alpha_max,
                                     double *beta_max);

/**
 * Objective value at the VAR setting `q`.
 *
 * # Safety
 * `problem` must be a live handle, `q` must hold `len` doubles and
 * `value` must be valid.
 */
enum GvStatus gv_problem_objective(const struct GvProblem *problem,
                                   const double *q,
                                   size_t len,
                                   double *value);

/**
 * Default solver settings: certified steps, tolerance 1e-8.
 */
struct GvSolveOptions gv_solve_options_default(void);

/**
 * Solve with the PPD iteration under exact linear feedback, starting from
 * `q0` (null for zero). The final iterate goes to `q`, `v` and `lambda`
 * (each nullable, `len` entries); when the run does not converge it is the
 * iterate with the smallest residual. Returns `Ok`, `NotConverged`, or
 * `Numerical` when the iterates diverge.
 *
 * # Safety
 * `problem` must be a live handle; non-null arrays must hold `len`
 * doubles; `options` and `report` are nullable.
 */
enum GvStatus gv_solve_static(const struct GvProblem *problem,
                              const struct GvSolveOptions *options,
                              const double *q0,
                              double *q,
                              double *v,
                              double *lambda,
                              size_t len,
                              struct GvSolveReport *report);

/**
 * Exact optimum by a direct active-set solve.
 *
 * # Safety
 * `problem` must be a live handle; non-null arrays must hold `len`
 * doubles.
 */
enum GvStatus gv_reference_solve(const struct GvProblem *problem,
                                 double *q,
                                 double *v,
                                 double *lambda,
                                 size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRIDVOLT_H */
