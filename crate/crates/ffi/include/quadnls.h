#ifndef QUADNLS_H
#define QUADNLS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QnClassification {
  QN_CLASSIFICATION_GLOBAL = 0,
  QN_CLASSIFICATION_BLOWUP_CANDIDATE = 1,
  QN_CLASSIFICATION_INDETERMINATE = 2,
} QnClassification;

typedef enum QnConsistency {
  QN_CONSISTENCY_AGREE = 0,
  QN_CONSISTENCY_DISAGREE = 1,
  QN_CONSISTENCY_OUTSIDE_THEOREM = 2,
  QN_CONSISTENCY_INCONCLUSIVE = 3,
  QN_CONSISTENCY_NOT_RUN = 4,
} QnConsistency;

typedef enum QnStatus {
  QN_STATUS_OK = 0,
  QN_STATUS_NULL_POINTER = 1,
  QN_STATUS_INVALID_ARGUMENT = 2,
  QN_STATUS_UNSUPPORTED_DIMENSION = 3,
  QN_STATUS_CONFIG = 4,
  QN_STATUS_NUMERICAL = 5,
  QN_STATUS_IO = 6,
  QN_STATUS_CHECK_FAILED = 7,
  QN_STATUS_PANIC = 8,
} QnStatus;

typedef enum QnVerdict {
  QN_VERDICT_BOUNDED = 0,
  QN_VERDICT_BLOWUP = 1,
  QN_VERDICT_INCONCLUSIVE = 2,
  QN_VERDICT_NOT_RUN = 3,
} QnVerdict;

/**
 * Opaque ground state.
 */
typedef struct QnGroundState QnGroundState;

typedef struct QnGroundStateInfo {
  uint32_t n;
  double kappa;
  double q;
  double k;
  double p;
  double e;
  double alpha1;
  double c_op;
  double pohozaev_residual;
  double elliptic_residual;
  uint64_t iterations;
  bool converged;
  uint64_t num_nodes;
} QnGroundStateInfo;

typedef struct QnThresholds {
  double eq_star;
  double kq_star;
  double gamma;
  double a_bound;
} QnThresholds;

typedef struct QnDichotomyResult {
  double eq_ratio;
  double kq_ratio;
  enum QnClassification classification;
  enum QnVerdict verdict;
  enum QnConsistency consistency;
  /**
   * NaN when no blow-up was detected.
   */
  double t_detect;
  double q_drift;
  double e_drift;
} QnDichotomyResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length, 0 if none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t qn_last_error_message(char *buf, size_t len);

/**
 * Solves for the ground state at ω = 1 on `num_nodes` cells of `[0, r_max]`
 * (working frame) with default tolerances.
 *
 * # Safety
 * `out` must be a valid pointer; on success it receives a new handle.
 */
enum QnStatus qn_ground_state_solve(uint32_t n,
                                    double kappa,
                                    double r_max,
                                    uint64_t num_nodes,
                                    struct QnGroundState **out);

/**
 * # Safety
 * `gs` must be null or a handle from [`qn_ground_state_solve`] not yet freed.
 */
void qn_ground_state_free(struct QnGroundState *gs);

/**
 * # Safety
 * `gs` must be a live handle and `info` a valid pointer.
 */
enum QnStatus qn_ground_state_info(const struct QnGroundState *gs, struct QnGroundStateInfo *info);

/**
 * Copies radii and profile values into caller buffers of length `len`,
 * which must equal the node count.
 *
 * # Safety
 * Each buffer must be null or hold `len` doubles.
 */
enum QnStatus qn_ground_state_profile(const struct QnGroundState *gs,
                                      double *r,
                                      double *phi,
                                      double *psi,
                                      uint64_t len);

/**
 * Energy and gradient thresholds for data of charge `q0` (n = 5 only).
 *
 * # Safety
 * `gs` must be a live handle and `out` a valid pointer.
 */
enum QnStatus qn_thresholds(const struct QnGroundState *gs, double q0, struct QnThresholds *out);

/**
 * Classifies `scale_factor` times the ground state of `gs` (n = 5) and
 * evolves it to `t_max` with step `dt` on a grid of `evolve_num_nodes`.
 *
 * # Safety
 * `gs` must be a live handle and `out` a valid pointer.
 */
enum QnStatus qn_dichotomy_scaled(const struct QnGroundState *gs,
                                  double scale_factor,
                                  double dt,
                                  double t_max,
                                  uint64_t evolve_num_nodes,
                                  struct QnDichotomyResult *out);

/**
 * Runs a CLI subcommand (`ground-state`, `evolve`, `dichotomy`, `verify`)
 * with a JSON run configuration, writing artifacts to `out_dir`.
 * `config_json` may be null for defaults; `out_dir` may be null to use
 * the configured directory. Failed invariants give `CheckFailed`.
 *
 * # Safety
 * String arguments must be null or NUL-terminated UTF-8.
 */
enum QnStatus qn_run(const char *command, const char *config_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUADNLS_H */
