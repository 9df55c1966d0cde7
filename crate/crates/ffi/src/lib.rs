//! C ABI over the bargaining pricing and dynamics library.
//!
//! Callers parse an experiment from TOML text into an opaque handle, then
//! query reservation prices, price bounds, the feasibility inequality,
//! recorded trajectories, the primal solution, and the asymptotic price.
//! Every fallible function returns a `BARGAIN_STATUS_*` code; after any
//! failure [`bargain_last_error_message`] describes the most recent error on
//! the calling thread. The matching declarations live in
//! `include/bargain.h`, kept in sync by the `header_sync` test.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use bargain_core::config::ExperimentConfig;
use bargain_core::dynamics::{run_trajectory, DynamicsConfig, TerminalStatus, TrajectoryRecord};
use bargain_core::pricing::{
    agreement_feasible, price_bounds, reservation_price, AgentPair, AgentSpec, MarketSpec,
};
use bargain_core::simplex::BeliefState;
use bargain_core::solver::{
    asymptotic_price, solve_primal, SolveStatus, DEFAULT_EPSILON_SCHEDULE,
};
use bargain_core::Error;

/// The call succeeded.
pub const BARGAIN_STATUS_OK: c_int = 0;
/// An argument, configuration field, or dimension was rejected.
pub const BARGAIN_STATUS_INVALID: c_int = 1;
/// The instance is infeasible: risk levels, utility range, or constraint.
pub const BARGAIN_STATUS_INFEASIBLE: c_int = 2;
/// An iterative numeric routine failed to converge.
pub const BARGAIN_STATUS_NUMERICAL: c_int = 3;
/// A per-period implicit step solve stalled.
pub const BARGAIN_STATUS_SOLVER: c_int = 4;
/// Any other failure, including panics caught at the boundary.
pub const BARGAIN_STATUS_OTHER: c_int = 5;

/// Seller side selector.
pub const BARGAIN_SIDE_SELLER: c_int = 0;
/// Buyer side selector.
pub const BARGAIN_SIDE_BUYER: c_int = 1;

/// Primal solve ended at the penalty-continuation optimum.
pub const BARGAIN_PRIMAL_OPTIMAL: c_int = 0;
/// Anchors already satisfy the price constraint; nothing to move.
pub const BARGAIN_PRIMAL_ANCHORS_FEASIBLE: c_int = 1;
/// A continuation stage stalled; the best iterate was returned.
pub const BARGAIN_PRIMAL_STALLED: c_int = 2;

/// Displacement fell below the convergence tolerance.
pub const BARGAIN_TRAJECTORY_CONVERGED: c_int = 0;
/// The period cap was reached first.
pub const BARGAIN_TRAJECTORY_MAX_PERIODS: c_int = 1;
/// A per-period fixed-point solve stalled; rows up to the failure remain.
pub const BARGAIN_TRAJECTORY_STEP_SOLVER_FAILURE: c_int = 2;

/// Opaque parsed experiment: market, agents, anchors, dynamics settings.
pub struct BargainExperiment {
    market: MarketSpec,
    agents: AgentPair,
    anchors: BeliefState,
    dynamics: DynamicsConfig,
    lambda: f64,
}

/// Opaque recorded orbit returned by [`bargain_run_trajectory`].
pub struct BargainTrajectory(TrajectoryRecord);

/// One recorded period without its belief blocks; fetch those with
/// [`bargain_trajectory_beliefs`].
#[repr(C)]
pub struct BargainPeriod {
    /// Period index `t`.
    pub t: u64,
    /// Seller's reservation price at `x(t)`.
    pub price_a: f64,
    /// Buyer's reservation price at `x(t)`.
    pub price_b: f64,
    /// `V(x(t+1), x(t))`; zero on the terminal row.
    pub lyapunov: f64,
    /// `V(t) - V(t-1)`; zero on the first and last rows.
    pub delta_lyapunov: f64,
    /// 1 when `x(t+1)` left the nonnegative orthant, else 0.
    pub boundary_violation: c_int,
    /// Gradient-map evaluations the step's fixed-point solve used.
    pub solver_iters: u64,
}

/// Primal solution summary; belief blocks are written to caller buffers.
#[repr(C)]
pub struct BargainPrimal {
    /// Midpoint of the (agreeing) reservation prices at the solution.
    pub price_star: f64,
    /// Weighted belief deviation at the solution.
    pub objective: f64,
    /// `|P_A - P_B|` at the solution.
    pub constraint_residual: f64,
    /// Tangential KKT multiplier estimate for the price constraint.
    pub kkt_multiplier_estimate: f64,
    /// One of the `BARGAIN_PRIMAL_*` codes.
    pub status: c_int,
    /// 1 when the weights guarantee a unique optimum, else 0.
    pub uniqueness_guaranteed: c_int,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let sanitized = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(code: c_int, message: impl Into<String>) -> c_int {
    set_error(message);
    code
}

fn fail_with(err: &Error) -> c_int {
    let code = match err {
        Error::InvalidArgument { .. } | Error::DimensionMismatch(_) | Error::Config(_) => {
            BARGAIN_STATUS_INVALID
        }
        Error::Infeasible(_) | Error::UtilityRange { .. } => BARGAIN_STATUS_INFEASIBLE,
        Error::NoConvergence { .. } | Error::Monotonicity(_) => BARGAIN_STATUS_NUMERICAL,
        Error::StepSolver { .. } => BARGAIN_STATUS_SOLVER,
        Error::Io(_) => BARGAIN_STATUS_OTHER,
    };
    fail(code, err.to_string())
}

fn guarded(body: impl FnOnce() -> c_int) -> c_int {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(code) => code,
        Err(_) => fail(BARGAIN_STATUS_OTHER, "panic reached the C boundary"),
    }
}

/// Message for the most recent failure on the calling thread.
///
/// Never null; empty until a failure is recorded. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bargain_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

fn build_experiment(text: &str) -> bargain_core::Result<BargainExperiment> {
    let cfg = ExperimentConfig::from_toml(text)?;
    Ok(BargainExperiment {
        market: cfg.market_spec()?,
        agents: cfg.agent_pair()?,
        anchors: cfg.anchor_state()?,
        dynamics: cfg.dynamics_config()?,
        lambda: cfg.penalty_config()?.lambda().lambda(),
    })
}

/// Parses an experiment from TOML text into a handle written to `out`.
///
/// # Safety
/// `text` must point to a NUL-terminated string and `out` to a writable
/// pointer slot. On success the caller owns the handle and must release it
/// with [`bargain_experiment_free`].
#[no_mangle]
pub unsafe extern "C" fn bargain_experiment_parse(
    text: *const c_char,
    out: *mut *mut BargainExperiment,
) -> c_int {
    guarded(|| {
        if text.is_null() || out.is_null() {
            return fail(BARGAIN_STATUS_INVALID, "null pointer argument");
        }
        let text = match unsafe { CStr::from_ptr(text) }.to_str() {
            Ok(text) => text,
            Err(_) => return fail(BARGAIN_STATUS_INVALID, "config text is not valid UTF-8"),
        };
        match build_experiment(text) {
            Ok(experiment) => {
                unsafe { *out = Box::into_raw(Box::new(experiment)) };
                BARGAIN_STATUS_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Releases a handle from [`bargain_experiment_parse`]. Null is a no-op.
///
/// # Safety
/// `handle` must be null or an unfreed handle from
/// [`bargain_experiment_parse`].
#[no_mangle]
pub unsafe extern "C" fn bargain_experiment_free(handle: *mut BargainExperiment) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Number of market states `K`, or 0 when `handle` is null.
///
/// # Safety
/// `handle` must be null or a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn bargain_experiment_k(handle: *const BargainExperiment) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |experiment| experiment.market.k())
}

/// Writes both reservation prices at the anchor beliefs.
///
/// # Safety
/// `handle` must be a live experiment handle; `price_a` and `price_b` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn bargain_reservation_prices(
    handle: *const BargainExperiment,
    price_a: *mut f64,
    price_b: *mut f64,
) -> c_int {
    guarded(|| {
        let Some(experiment) = (unsafe { handle.as_ref() }) else {
            return fail(BARGAIN_STATUS_INVALID, "null experiment handle");
        };
        if price_a.is_null() || price_b.is_null() {
            return fail(BARGAIN_STATUS_INVALID, "null pointer argument");
        }
        let seller = reservation_price(
            experiment.agents.seller(),
            &experiment.market,
            experiment.anchors.q_a(),
        );
        let buyer = reservation_price(
            experiment.agents.buyer(),
            &experiment.market,
            experiment.anchors.q_b(),
        );
        match (seller, buyer) {
            (Ok(a), Ok(b)) => {
                unsafe {
                    *price_a = a;
                    *price_b = b;
                }
                BARGAIN_STATUS_OK
            }
            (Err(e), _) | (_, Err(e)) => fail_with(&e),
        }
    })
}

/// Writes one agent's price bounds `[lo, hi]` over all beliefs.
///
/// `side` is `BARGAIN_SIDE_SELLER` or `BARGAIN_SIDE_BUYER`.
///
/// # Safety
/// `handle` must be a live experiment handle; `lo` and `hi` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bargain_price_bounds(
    handle: *const BargainExperiment,
    side: c_int,
    lo: *mut f64,
    hi: *mut f64,
) -> c_int {
    guarded(|| {
        let Some(experiment) = (unsafe { handle.as_ref() }) else {
            return fail(BARGAIN_STATUS_INVALID, "null experiment handle");
        };
        if lo.is_null() || hi.is_null() {
            return fail(BARGAIN_STATUS_INVALID, "null pointer argument");
        }
        let agent: &AgentSpec = match side {
            BARGAIN_SIDE_SELLER => experiment.agents.seller(),
            BARGAIN_SIDE_BUYER => experiment.agents.buyer(),
            _ => return fail(BARGAIN_STATUS_INVALID, format!("unknown side {side}")),
        };
        match price_bounds(agent, &experiment.market) {
            Ok((bound_lo, bound_hi)) => {
                unsafe {
                    *lo = bound_lo;
                    *hi = bound_hi;
                }
                BARGAIN_STATUS_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Writes 1 to `feasible` when the agreement-feasibility inequality holds
/// strictly, else 0.
///
/// # Safety
/// `handle` must be a live experiment handle; `feasible` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bargain_agreement_feasible(
    handle: *const BargainExperiment,
    feasible: *mut c_int,
) -> c_int {
    guarded(|| {
        let Some(experiment) = (unsafe { handle.as_ref() }) else {
            return fail(BARGAIN_STATUS_INVALID, "null experiment handle");
        };
        if feasible.is_null() {
            return fail(BARGAIN_STATUS_INVALID, "null pointer argument");
        }
        match agreement_feasible(
            experiment.agents.seller(),
            experiment.agents.buyer(),
            &experiment.market,
        ) {
            Ok(flag) => {
                unsafe { *feasible = c_int::from(flag) };
                BARGAIN_STATUS_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Runs the configured dynamics from the anchors and writes a trajectory
/// handle to `out`.
///
/// A stalled per-period solve still succeeds here; it is reported as
/// `BARGAIN_TRAJECTORY_STEP_SOLVER_FAILURE` by [`bargain_trajectory_status`]
/// with the completed rows retained.
///
/// # Safety
/// `handle` must be a live experiment handle and `out` a writable pointer
/// slot. On success the caller owns the trajectory and must release it with
/// [`bargain_trajectory_free`].
#[no_mangle]
pub unsafe extern "C" fn bargain_run_trajectory(
    handle: *const BargainExperiment,
    out: *mut *mut BargainTrajectory,
) -> c_int {
    guarded(|| {
        let Some(experiment) = (unsafe { handle.as_ref() }) else {
            return fail(BARGAIN_STATUS_INVALID, "null experiment handle");
        };
        if out.is_null() {
            return fail(BARGAIN_STATUS_INVALID, "null pointer argument");
        }
        match run_trajectory(
            &experiment.anchors,
            &experiment.agents,
            &experiment.market,
            &experiment.dynamics,
        ) {
            Ok(record) => {
                unsafe { *out = Box::into_raw(Box::new(BargainTrajectory(record))) };
                BARGAIN_STATUS_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Releases a trajectory from [`bargain_run_trajectory`]. Null is a no-op.
///
/// # Safety
/// `trajectory` must be null or an unfreed handle from
/// [`bargain_run_trajectory`].
#[no_mangle]
pub unsafe extern "C" fn bargain_trajectory_free(trajectory: *mut BargainTrajectory) {
    if !trajectory.is_null() {
        drop(unsafe { Box::from_raw(trajectory) });
    }
}

/// Number of recorded rows (periods 0..=steps), or 0 when null.
///
/// # Safety
/// `trajectory` must be null or a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn bargain_trajectory_rows(trajectory: *const BargainTrajectory) -> usize {
    unsafe { trajectory.as_ref() }.map_or(0, |t| t.0.periods.len())
}

/// Terminal status as a `BARGAIN_TRAJECTORY_*` code, or -1 when null.
///
/// # Safety
/// `trajectory` must be null or a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn bargain_trajectory_status(trajectory: *const BargainTrajectory) -> c_int {
    match unsafe { trajectory.as_ref() } {
        Some(t) => match t.0.status {
            TerminalStatus::Converged => BARGAIN_TRAJECTORY_CONVERGED,
            TerminalStatus::MaxPeriods => BARGAIN_TRAJECTORY_MAX_PERIODS,
            TerminalStatus::StepSolverFailure { .. } => BARGAIN_TRAJECTORY_STEP_SOLVER_FAILURE,
        },
        None => -1,
    }
}

/// 1 when the run started outside the feasibility inequality, 0 otherwise,
/// -1 when null.
///
/// # Safety
/// `trajectory` must be null or a live trajectory handle.
#[no_mangle]
pub unsafe extern "C" fn bargain_trajectory_feasibility_warning(
    trajectory: *const BargainTrajectory,
) -> c_int {
    unsafe { trajectory.as_ref() }.map_or(-1, |t| c_int::from(t.0.feasibility_warning))
}

/// Copies row `index` into `out` (beliefs excluded).
///
/// # Safety
/// `trajectory` must be a live trajectory handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bargain_trajectory_row(
    trajectory: *const BargainTrajectory,
    index: usize,
    out: *mut BargainPeriod,
) -> c_int {
    guarded(|| {
        let Some(t) = (unsafe { trajectory.as_ref() }) else {
            return fail(BARGAIN_STATUS_INVALID, "null trajectory handle");
        };
        if out.is_null() {
            return fail(BARGAIN_STATUS_INVALID, "null pointer argument");
        }
        let Some(row) = t.0.periods.get(index) else {
            return fail(
                BARGAIN_STATUS_INVALID,
                format!("row {index} out of range ({} rows)", t.0.periods.len()),
            );
        };
        unsafe {
            *out = BargainPeriod {
                t: row.t as u64,
                price_a: row.price_a,
                price_b: row.price_b,
                lyapunov: row.lyapunov,
                delta_lyapunov: row.delta_lyapunov,
                boundary_violation: c_int::from(row.boundary_violation),
                solver_iters: row.solver_iters as u64,
            };
        }
        BARGAIN_STATUS_OK
    })
}

/// Copies row `index`'s belief blocks into two length-`k` buffers.
///
/// # Safety
/// `trajectory` must be a live trajectory handle; `q_a` and `q_b` must each
/// point to `k` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bargain_trajectory_beliefs(
    trajectory: *const BargainTrajectory,
    index: usize,
    q_a: *mut f64,
    q_b: *mut f64,
    k: usize,
) -> c_int {
    guarded(|| {
        let Some(t) = (unsafe { trajectory.as_ref() }) else {
            return fail(BARGAIN_STATUS_INVALID, "null trajectory handle");
        };
        if q_a.is_null() || q_b.is_null() {
            return fail(BARGAIN_STATUS_INVALID, "null pointer argument");
        }
        let Some(row) = t.0.periods.get(index) else {
            return fail(
                BARGAIN_STATUS_INVALID,
                format!("row {index} out of range ({} rows)", t.0.periods.len()),
            );
        };
        if row.state.k() != k {
            return fail(
                BARGAIN_STATUS_INVALID,
                format!("buffer length {k} does not match K = {}", row.state.k()),
            );
        }
        unsafe {
            std::ptr::copy_nonoverlapping(row.state.q_a().weights().as_ptr(), q_a, k);
            std::ptr::copy_nonoverlapping(row.state.q_b().weights().as_ptr(), q_b, k);
        }
        BARGAIN_STATUS_OK
    })
}

/// Solves the primal problem at the configured bargaining power and writes
/// the summary to `out`; when `q_a` and `q_b` are non-null they receive the
/// optimal belief blocks (each `k` doubles, `k` matching the market).
///
/// # Safety
/// `handle` must be a live experiment handle and `out` writable; `q_a` and
/// `q_b` must each be null or point to `k` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bargain_solve_primal(
    handle: *const BargainExperiment,
    q_a: *mut f64,
    q_b: *mut f64,
    k: usize,
    out: *mut BargainPrimal,
) -> c_int {
    guarded(|| {
        let Some(experiment) = (unsafe { handle.as_ref() }) else {
            return fail(BARGAIN_STATUS_INVALID, "null experiment handle");
        };
        if out.is_null() {
            return fail(BARGAIN_STATUS_INVALID, "null pointer argument");
        }
        if (!q_a.is_null() || !q_b.is_null()) && k != experiment.market.k() {
            return fail(
                BARGAIN_STATUS_INVALID,
                format!("buffer length {k} does not match K = {}", experiment.market.k()),
            );
        }
        let solution = match solve_primal(
            &experiment.anchors,
            &experiment.agents,
            &experiment.market,
            experiment.lambda,
            &DEFAULT_EPSILON_SCHEDULE,
        ) {
            Ok(solution) => solution,
            Err(e) => return fail_with(&e),
        };
        let status = match solution.status {
            SolveStatus::Optimal => BARGAIN_PRIMAL_OPTIMAL,
            SolveStatus::AnchorsFeasible => BARGAIN_PRIMAL_ANCHORS_FEASIBLE,
            SolveStatus::Stalled { .. } => BARGAIN_PRIMAL_STALLED,
        };
        unsafe {
            if !q_a.is_null() {
                std::ptr::copy_nonoverlapping(solution.q_a_star.weights().as_ptr(), q_a, k);
            }
            if !q_b.is_null() {
                std::ptr::copy_nonoverlapping(solution.q_b_star.weights().as_ptr(), q_b, k);
            }
            *out = BargainPrimal {
                price_star: solution.price_star,
                objective: solution.objective,
                constraint_residual: solution.constraint_residual,
                kkt_multiplier_estimate: solution.kkt_multiplier_estimate,
                status,
                uniqueness_guaranteed: c_int::from(solution.uniqueness_guaranteed),
            };
        }
        BARGAIN_STATUS_OK
    })
}

/// Writes the common limit of both reservation prices along the configured
/// dynamics.
///
/// # Safety
/// `handle` must be a live experiment handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bargain_asymptotic_price(
    handle: *const BargainExperiment,
    out: *mut f64,
) -> c_int {
    guarded(|| {
        let Some(experiment) = (unsafe { handle.as_ref() }) else {
            return fail(BARGAIN_STATUS_INVALID, "null experiment handle");
        };
        if out.is_null() {
            return fail(BARGAIN_STATUS_INVALID, "null pointer argument");
        }
        match asymptotic_price(
            &experiment.anchors,
            &experiment.agents,
            &experiment.market,
            &experiment.dynamics,
        ) {
            Ok(price) => {
                unsafe { *out = price };
                BARGAIN_STATUS_OK
            }
            Err(e) => fail_with(&e),
        }
    })
}
