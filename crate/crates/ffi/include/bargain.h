/* C interface to the bargaining pricing and dynamics library.
 *
 * Usage: parse an experiment from TOML text, query it through the opaque
 * handle, free what you allocate. Every fallible function returns a
 * BARGAIN_STATUS_* code; after a failure bargain_last_error_message()
 * describes the most recent error on the calling thread.
 *
 * Kept in sync with src/lib.rs by the header_sync test.
 */

#ifndef BARGAIN_H
#define BARGAIN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. */
#define BARGAIN_STATUS_OK 0
#define BARGAIN_STATUS_INVALID 1
#define BARGAIN_STATUS_INFEASIBLE 2
#define BARGAIN_STATUS_NUMERICAL 3
#define BARGAIN_STATUS_SOLVER 4
#define BARGAIN_STATUS_OTHER 5

/* Agent side selectors. */
#define BARGAIN_SIDE_SELLER 0
#define BARGAIN_SIDE_BUYER 1

/* Primal solve statuses. */
#define BARGAIN_PRIMAL_OPTIMAL 0
#define BARGAIN_PRIMAL_ANCHORS_FEASIBLE 1
#define BARGAIN_PRIMAL_STALLED 2

/* Trajectory terminal statuses. */
#define BARGAIN_TRAJECTORY_CONVERGED 0
#define BARGAIN_TRAJECTORY_MAX_PERIODS 1
#define BARGAIN_TRAJECTORY_STEP_SOLVER_FAILURE 2

/* Opaque handles. */
typedef struct BargainExperiment BargainExperiment;
typedef struct BargainTrajectory BargainTrajectory;

/* One recorded period without its belief blocks; fetch those with
 * bargain_trajectory_beliefs(). */
typedef struct BargainPeriod {
  uint64_t t;
  double price_a;
  double price_b;
  double lyapunov;
  double delta_lyapunov;
  int boundary_violation;
  uint64_t solver_iters;
} BargainPeriod;

/* Primal solution summary; belief blocks are written to caller buffers. */
typedef struct BargainPrimal {
  double price_star;
  double objective;
  double constraint_residual;
  double kkt_multiplier_estimate;
  int status; /* BARGAIN_PRIMAL_* */
  int uniqueness_guaranteed;
} BargainPrimal;

/* Message for the most recent failure on the calling thread. Never null;
 * empty until a failure is recorded. Valid until the next failing call on
 * the same thread. */
const char *bargain_last_error_message(void);

/* Parses an experiment from NUL-terminated TOML text into *out. The caller
 * owns the handle and must release it with bargain_experiment_free(). */
int bargain_experiment_parse(const char *text, BargainExperiment **out);

/* Releases a handle from bargain_experiment_parse(). Null is a no-op. */
void bargain_experiment_free(BargainExperiment *handle);

/* Number of market states K, or 0 when handle is null. */
size_t bargain_experiment_k(const BargainExperiment *handle);

/* Writes both reservation prices at the anchor beliefs. */
int bargain_reservation_prices(const BargainExperiment *handle,
                               double *price_a, double *price_b);

/* Writes one agent's price bounds [lo, hi] over all beliefs; side is
 * BARGAIN_SIDE_SELLER or BARGAIN_SIDE_BUYER. */
int bargain_price_bounds(const BargainExperiment *handle, int side,
                         double *lo, double *hi);

/* Writes 1 to *feasible when the agreement-feasibility inequality holds
 * strictly, else 0. */
int bargain_agreement_feasible(const BargainExperiment *handle,
                               int *feasible);

/* Runs the configured dynamics from the anchors into *out. A stalled
 * per-period solve still succeeds here; it is reported by
 * bargain_trajectory_status() with the completed rows retained. The caller
 * owns the trajectory and must release it with bargain_trajectory_free(). */
int bargain_run_trajectory(const BargainExperiment *handle,
                           BargainTrajectory **out);

/* Releases a trajectory from bargain_run_trajectory(). Null is a no-op. */
void bargain_trajectory_free(BargainTrajectory *trajectory);

/* Number of recorded rows (periods 0..=steps), or 0 when null. */
size_t bargain_trajectory_rows(const BargainTrajectory *trajectory);

/* Terminal status as a BARGAIN_TRAJECTORY_* code, or -1 when null. */
int bargain_trajectory_status(const BargainTrajectory *trajectory);

/* 1 when the run started outside the feasibility inequality, 0 otherwise,
 * -1 when null. */
int bargain_trajectory_feasibility_warning(const BargainTrajectory *trajectory);

/* Copies row `index` into *out (beliefs excluded). */
int bargain_trajectory_row(const BargainTrajectory *trajectory, size_t index,
                           BargainPeriod *out);

/* Copies row `index`'s belief blocks into two length-k buffers. */
int bargain_trajectory_beliefs(const BargainTrajectory *trajectory,
                               size_t index, double *q_a, double *q_b,
                               size_t k);

/* Solves the primal problem at the configured bargaining power. Writes the
 * summary to *out; when q_a and q_b are non-null they receive the optimal
 * belief blocks (each k doubles, k matching the market). */
int bargain_solve_primal(const BargainExperiment *handle, double *q_a,
                         double *q_b, size_t k, BargainPrimal *out);

/* Writes the common limit of both reservation prices along the configured
 * dynamics. */
int bargain_asymptotic_price(const BargainExperiment *handle, double *out);

#ifdef __cplusplus
}
#endif

#endif /* BARGAIN_H */
