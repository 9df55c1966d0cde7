//! Direct solution of the constrained beliefs-optimization problem.
//!
//! `solve_primal` minimizes the weighted deviation subject to
//! `P_A(Q_A) <= P_B(Q_B)` by quadratic-penalty continuation over a
//! shrinking epsilon schedule, warm-starting each stage and reusing the
//! projected-gradient machinery of the dynamics; a Newton polish then lands
//! the iterate on the constraint manifold. `brute_force_primal_k2` is the
//! desk-scale oracle for two-state markets, and the sweep drivers evaluate
//! asymptotic or primal prices over parameter grids.

use rayon::prelude::*;

use crate::dynamics::{run_trajectory, DynamicsConfig};
use crate::error::{Error, Result};
use crate::functionals::{
    eval_penalized, grad_next_penalized, prices_at, PenaltyConfig, PenaltyVariant,
};
use crate::pricing::{
    agreement_feasible, price_gradient_beliefs, reservation_price, AgentPair, MarketSpec,
};
use crate::simplex::{
    joint_deviation, norm, psi_gradient, tangent_pair, Belief, BeliefState, DeviationWeights,
};

/// Default penalty continuation schedule.
pub const DEFAULT_EPSILON_SCHEDULE: [f64; 4] = [0.1, 0.01, 0.001, 1e-4];

/// Tangential gradient norm at which the inner minimizer stops.
const INNER_GRAD_TOL: f64 = 1e-9;
/// Safety prefactor for the line-search plateau test; covers the
/// payoff-dependent constant in the penalty curvature bound C / epsilon.
const PLATEAU_SAFETY: f64 = 32.0;
/// Gradient evaluations allowed per continuation stage.
const INNER_ITERATION_CAP: usize = 400_000;
/// Armijo sufficient-decrease constant.
const ARMIJO_C1: f64 = 1e-4;
/// Backtracking halvings per line search.
const LINE_SEARCH_CAP: usize = 70;

/// How a primal solve ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolveStatus {
    /// Continuation ran the full schedule and the polish landed on the
    /// constraint manifold.
    Optimal,
    /// The anchors already satisfy the constraint; they are the solution.
    AnchorsFeasible,
    /// The inner minimizer stalled at this epsilon; the returned point is
    /// the best iterate found.
    Stalled {
        /// Stage at which progress stopped.
        epsilon: f64,
    },
}

/// Solution of the constrained minimum-deviation problem.
#[derive(Debug, Clone)]
pub struct PrimalSolution {
    /// Seller's optimal belief.
    pub q_a_star: Belief,
    /// Buyer's optimal belief.
    pub q_b_star: Belief,
    /// Agreed price at the optimum (the common reservation price when the
    /// constraint binds, the price midpoint otherwise).
    pub price_star: f64,
    /// Weighted deviation `lambda psi_A + (1 - lambda) psi_B` at the optimum.
    pub objective: f64,
    /// `|P_A - P_B|` at the optimum.
    pub constraint_residual: f64,
    /// Ratio of the tangential deviation-gradient norm to the tangential
    /// price-gap-gradient norm; zero when the constraint is slack.
    pub kkt_multiplier_estimate: f64,
    /// How the solve ended.
    pub status: SolveStatus,
    /// Whether the uniqueness theorem applies (`lambda` strictly inside
    /// `(0,1)`); endpoint requests are solved but flagged.
    pub uniqueness_guaranteed: bool,
}

fn validate_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::invalid("schedule", "needs at least one epsilon"));
    }
    for &eps in schedule {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::invalid(
                "schedule",
                format!("epsilons must be finite and > 0, got {eps}"),
            ));
        }
    }
    Ok(())
}

/// Assembles the reported solution fields at a solved state.
fn assemble_solution(
    state: &BeliefState,
    anchors: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    w: DeviationWeights,
    status: SolveStatus,
) -> Result<PrimalSolution> {
    let (price_a, price_b) = prices_at(state, agents, market)?;
    let objective = joint_deviation(state, anchors, w)?;
    let kkt_multiplier_estimate = if status == SolveStatus::AnchorsFeasible {
        0.0
    } else {
        let psi_a = psi_gradient(state.q_a(), anchors.q_a())?;
        let psi_b = psi_gradient(state.q_b(), anchors.q_b())?;
        let mut dev = Vec::with_capacity(2 * state.k());
        dev.extend(psi_a.iter().map(|g| w.lambda() * g));
        dev.extend(psi_b.iter().map(|g| w.complement() * g));
        let gap_grad = constraint_gradient(state, agents, market)?;
        let dev_t = norm(&tangent_pair(&dev)?);
        let gap_t = norm(&tangent_pair(&gap_grad)?);
        if gap_t > 0.0 {
            dev_t / gap_t
        } else {
            f64::NAN
        }
    };
    Ok(PrimalSolution {
        q_a_star: state.q_a().clone(),
        q_b_star: state.q_b().clone(),
        price_star: 0.5 * (price_a + price_b),
        objective,
        constraint_residual: (price_a - price_b).abs(),
        kkt_multiplier_estimate,
        status,
        uniqueness_guaranteed: w.lambda() > 0.0 && w.lambda() < 1.0,
    })
}

/// Flat gradient of the constraint gap `P_A(Q_A) - P_B(Q_B)`.
fn constraint_gradient(
    state: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
) -> Result<Vec<f64>> {
    let ga = price_gradient_beliefs(agents.seller(), market, state.q_a())?;
    let gb = price_gradient_beliefs(agents.buyer(), market, state.q_b())?;
    let mut grad = Vec::with_capacity(2 * state.k());
    grad.extend(ga);
    grad.extend(gb.iter().map(|g| -g));
    Ok(grad)
}

struct InnerOutcome {
    state: BeliefState,
    converged: bool,
}

/// Projected gradient descent with Armijo backtracking on the affine hull,
/// minimizing the lambda-independent penalized functional at one epsilon.
///
/// Candidates that leave the priceable region (negative exponential moments)
/// are rejected by the line search like any other failed trial.
fn minimize_penalized(
    start: &BeliefState,
    anchors: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    penalty: &PenaltyConfig,
) -> Result<InnerOutcome> {
    let mut state = start.clone();
    let mut value = eval_penalized(&state, anchors, agents, market, penalty)?;
    let mut step = 1.0f64;
    for _ in 0..INNER_ITERATION_CAP {
        let grad = grad_next_penalized(&state, anchors, agents, market, penalty)?;
        let tangential = tangent_pair(&grad)?;
        let grad_norm = norm(&tangential);
        if grad_norm < INNER_GRAD_TOL {
            return Ok(InnerOutcome {
                state,
                converged: true,
            });
        }
        // Affine projection of x - s g equals x - s g_tangential, so descend
        // along the tangential gradient directly.
        step = (step * 2.0).min(1e3);
        let flat = state.to_flat();
        let mut accepted = false;
        for _ in 0..LINE_SEARCH_CAP {
            let candidate: Vec<f64> = flat
                .iter()
                .zip(&tangential)
                .map(|(x, g)| x - step * g)
                .collect();
            let trial = match BeliefState::from_flat(&candidate) {
                Ok(s) => s,
                Err(_) => {
                    step *= 0.5;
                    continue;
                }
            };
            match eval_penalized(&trial, anchors, agents, market, penalty) {
                // The strict inequality rejects zero-movement trials once the
                // Armijo threshold rounds back to the current value.
                Ok(trial_value)
                    if trial_value < value
                        && trial_value <= value - ARMIJO_C1 * step * grad_norm * grad_norm =>
                {
                    state = trial;
                    value = trial_value;
                    accepted = true;
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            // Descent bottoms out once the best achievable decrease,
            // grad^2 / (2 L), falls under one ulp of the objective; with the
            // curvature L growing like 1 / epsilon the plateau gradient
            // scales as sqrt(ulp(value) / epsilon).
            let plateau = PLATEAU_SAFETY
                * (value.abs().max(f64::MIN_POSITIVE) * f64::EPSILON / penalty.epsilon())
                    .sqrt();
            return Ok(InnerOutcome {
                state,
                converged: grad_norm < plateau,
            });
        }
    }
    Ok(InnerOutcome {
        state,
        converged: false,
    })
}

/// Newton steps onto the constraint manifold: min-norm tangential
/// corrections killing the price gap while leaving the objective nearly
/// unchanged.
fn polish_constraint(
    mut state: BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
) -> Result<BeliefState> {
    for _ in 0..20 {
        let (price_a, price_b) = prices_at(&state, agents, market)?;
        let gap = price_a - price_b;
        if gap.abs() <= 1e-13 {
            break;
        }
        let v = tangent_pair(&constraint_gradient(&state, agents, market)?)?;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            break;
        }
        let flat: Vec<f64> = state
            .to_flat()
            .iter()
            .zip(&v)
            .map(|(x, vi)| x - gap * vi / vv)
            .collect();
        state = BeliefState::from_flat(&flat)?;
    }
    Ok(state)
}

/// Minimizes the weighted belief deviation subject to `P_A <= P_B` by
/// penalty continuation over `schedule`, warm-starting each stage at the
/// previous stage's minimizer.
///
/// Feasible anchors are returned unchanged with zero objective. A stalled
/// stage returns the best iterate with the stalling epsilon in the status
/// rather than an error, so sweeps can keep going.
pub fn solve_primal(
    anchors: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    lambda: f64,
    schedule: &[f64],
) -> Result<PrimalSolution> {
    let trace = continuation_trace(anchors, agents, market, lambda, schedule)?;
    let last = trace.last().expect("schedule is non-empty");
    if matches!(
        last.status,
        SolveStatus::AnchorsFeasible | SolveStatus::Stalled { .. }
    ) {
        return Ok(last.clone());
    }
    let w = DeviationWeights::new(lambda)?;
    let state = BeliefState::new(last.q_a_star.clone(), last.q_b_star.clone())?;
    let polished = polish_constraint(state, agents, market)?;
    assemble_solution(&polished, anchors, agents, market, w, SolveStatus::Optimal)
}

/// Runs the continuation and reports the (unpolished) solution after each
/// epsilon stage; the stage status is `Optimal` while stages keep
/// converging, and the trace stops early at the first stall.
pub fn continuation_trace(
    anchors: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    lambda: f64,
    schedule: &[f64],
) -> Result<Vec<PrimalSolution>> {
    let w = DeviationWeights::new(lambda)?;
    validate_schedule(schedule)?;
    let (price_a, price_b) = prices_at(anchors, agents, market)?;
    if price_a <= price_b {
        return Ok(vec![assemble_solution(
            anchors,
            anchors,
            agents,
            market,
            w,
            SolveStatus::AnchorsFeasible,
        )?]);
    }
    let mut trace = Vec::with_capacity(schedule.len());
    let mut state = anchors.clone();
    for &eps in schedule {
        let penalty = PenaltyConfig::new(eps, w, PenaltyVariant::LambdaIndependent)?;
        let inner = minimize_penalized(&state, anchors, agents, market, &penalty)?;
        state = inner.state;
        let status = if inner.converged {
            SolveStatus::Optimal
        } else {
            SolveStatus::Stalled { epsilon: eps }
        };
        trace.push(assemble_solution(
            &state, anchors, agents, market, w, status,
        )?);
        if !inner.converged {
            break;
        }
    }
    Ok(trace)
}

/// Grid-scan oracle for two-state markets with the default quadratic
/// deviations: scans `(Q_A^1, Q_B^1)` over a `grid_n x grid_n` grid, keeps
/// constraint-feasible points, and refines the best by bisection on the
/// constraint manifold plus a one-dimensional golden-section minimization.
pub fn brute_force_primal_k2(
    anchors: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    lambda: f64,
    grid_n: usize,
) -> Result<PrimalSolution> {
    let w = DeviationWeights::new(lambda)?;
    if market.k() != 2 || anchors.k() != 2 {
        return Err(Error::invalid("anchors", "the brute-force oracle needs K = 2"));
    }
    if grid_n < 101 {
        return Err(Error::invalid(
            "grid_n",
            format!("need at least 101 points per axis, got {grid_n}"),
        ));
    }
    let (price_a0, price_b0) = prices_at(anchors, agents, market)?;
    if price_a0 <= price_b0 {
        return assemble_solution(
            anchors,
            anchors,
            agents,
            market,
            w,
            SolveStatus::AnchorsFeasible,
        );
    }

    let belief = |q1: f64| Belief::new(vec![q1, 1.0 - q1]);
    let price_a = |q1: f64| -> Result<f64> {
        reservation_price(agents.seller(), market, &belief(q1)?)
    };
    let price_b = |q1: f64| -> Result<f64> {
        reservation_price(agents.buyer(), market, &belief(q1)?)
    };

    let h = 1.0 / (grid_n - 1) as f64;
    let mut pa = Vec::with_capacity(grid_n);
    let mut pb = Vec::with_capacity(grid_n);
    for i in 0..grid_n {
        let q1 = i as f64 * h;
        pa.push(price_a(q1)?);
        pb.push(price_b(q1)?);
    }
    let a1 = anchors.q_a().weights()[0];
    let b1 = anchors.q_b().weights()[0];
    // K = 2 quadratic deviation: psi(q, q0) = (q_1 - q0_1)^2.
    let objective = |qa1: f64, qb1: f64| {
        let da = qa1 - a1;
        let db = qb1 - b1;
        w.lambda() * da * da + w.complement() * db * db
    };

    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..grid_n {
        for j in 0..grid_n {
            if pa[i] <= pb[j] {
                let obj = objective(i as f64 * h, j as f64 * h);
                if best.map_or(true, |(b, _, _)| obj < b) {
                    best = Some((obj, i, j));
                }
            }
        }
    }
    let Some((_, bi, _)) = best else {
        return Err(Error::Infeasible(
            "no grid point satisfies the price constraint".into(),
        ));
    };

    // pb is strictly decreasing in the low-payoff weight; the largest
    // feasible buyer weight for a given seller belief solves pb = pa.
    let qb_max = |target: f64| -> Result<f64> {
        let (pb_lo, pb_hi) = (pb[grid_n - 1], pb[0]);
        if target > pb_hi {
            return Ok(f64::NAN);
        }
        if target < pb_lo {
            return Ok(1.0);
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..90 {
            let mid = 0.5 * (lo + hi);
            if price_b(mid)? > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    };
    // Inner minimization over the buyer: the closest feasible point to the
    // anchor under the monotone constraint qb1 <= qb_max.
    let section = |qa1: f64| -> Result<(f64, f64)> {
        let cap = qb_max(price_a(qa1)?)?;
        if cap.is_nan() {
            return Ok((f64::INFINITY, f64::NAN));
        }
        let qb1 = b1.min(cap);
        Ok((objective(qa1, qb1), qb1))
    };

    // The 2-D argmin rides a sawtooth from flooring the buyer weight to the
    // grid, which can outweigh the section's flat curvature near the optimum
    // by several grid steps; rescan the seller axis against the exact inner
    // minimum before bracketing.
    let mut bi = bi;
    let mut best_section = f64::INFINITY;
    for i in 0..grid_n {
        let (obj, _) = section(i as f64 * h)?;
        if obj < best_section {
            best_section = obj;
            bi = i;
        }
    }
    let (mut lo, mut hi) = (
        (bi as f64 * h - 2.0 * h).max(0.0),
        (bi as f64 * h + 2.0 * h).min(1.0),
    );
    // Golden-section refinement of the seller coordinate.
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = section(x1)?.0;
    let mut f2 = section(x2)?.0;
    for _ in 0..120 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = section(x1)?.0;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = section(x2)?.0;
        }
    }
    let qa1 = if f1 <= f2 { x1 } else { x2 };
    let (_, qb1) = section(qa1)?;
    let state = BeliefState::new(belief(qa1)?, belief(qb1)?)?;
    assemble_solution(&state, anchors, agents, market, w, SolveStatus::Optimal)
}

/// The common limit of both reservation prices along a converged run.
pub fn asymptotic_price(
    x0: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    cfg: &DynamicsConfig,
) -> Result<f64> {
    let traj = run_trajectory(x0, agents, market, cfg)?;
    match traj.status {
        crate::dynamics::TerminalStatus::Converged => {
            let t = traj.terminal();
            Ok(0.5 * (t.price_a + t.price_b))
        }
        crate::dynamics::TerminalStatus::MaxPeriods => {
            let t = traj.terminal();
            let last_step = traj.periods[traj.periods.len() - 2].lyapunov.sqrt() * traj.alpha;
            Err(Error::NoConvergence {
                context: "asymptotic_price",
                iterations: traj.steps(),
                bracket_lo: t.price_a.min(t.price_b),
                bracket_hi: t.price_a.max(t.price_b),
                residual: last_step,
            })
        }
        crate::dynamics::TerminalStatus::StepSolverFailure {
            period,
            iterations,
            residual,
        } => Err(Error::StepSolver {
            period,
            iterations,
            residual,
        }),
    }
}

/// Which machinery produced a sweep's prices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepProvenance {
    /// Asymptotic prices from converged trajectories.
    Dynamics,
    /// Primal prices from penalty continuation.
    Continuation,
}

/// Outcome class of one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointStatus {
    /// Evaluated successfully.
    Ok,
    /// Skipped: the agreement-feasibility inequality fails here.
    Infeasible,
    /// Evaluation failed (non-convergence or numerical error).
    Failed,
}

impl PointStatus {
    /// Lowercase tag used in CSV rows.
    pub fn as_str(self) -> &'static str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::Infeasible => "infeasible",
            PointStatus::Failed => "failed",
        }
    }
}

/// One evaluated grid point; `price_star`, `objective`, and
/// `constraint_residual` are NaN unless the status is `Ok`.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    /// Bargaining power at this point.
    pub lambda: f64,
    /// Seller's risk level at this point.
    pub r_a: f64,
    /// Buyer's risk level at this point.
    pub r_b: f64,
    /// Agreed price.
    pub price_star: f64,
    /// Weighted deviation at the solution.
    pub objective: f64,
    /// `|P_A - P_B|` at the solution.
    pub constraint_residual: f64,
    /// Outcome class.
    pub status: PointStatus,
}

/// A completed sweep: the axes, one point per grid node in deterministic
/// row-major order, and the provenance tag.
#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Lambda grid (a singleton for risk sweeps).
    pub lambda_axis: Vec<f64>,
    /// Seller risk grid (a singleton for lambda sweeps).
    pub r_a_axis: Vec<f64>,
    /// Buyer risk grid (a singleton for lambda sweeps).
    pub r_b_axis: Vec<f64>,
    /// Points in axis order (lambda outer, then `r_a`, then `r_b`).
    pub points: Vec<SweepPoint>,
    /// Which machinery produced the prices.
    pub provenance: SweepProvenance,
}

fn validate_axis(name: &'static str, grid: &[f64], lo: f64, hi: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(name, "grid must be non-empty"));
    }
    for &v in grid {
        if !(v.is_finite() && v >= lo && v <= hi) {
            return Err(Error::invalid(
                name,
                format!("grid values must lie in [{lo}, {hi}], got {v}"),
            ));
        }
    }
    if grid.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::invalid(name, "grid must be strictly increasing"));
    }
    Ok(())
}

fn failed_point(lambda: f64, r_a: f64, r_b: f64, status: PointStatus) -> SweepPoint {
    SweepPoint {
        lambda,
        r_a,
        r_b,
        price_star: f64::NAN,
        objective: f64::NAN,
        constraint_residual: f64::NAN,
        status,
    }
}

fn dynamics_point(
    lambda: f64,
    x0: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    cfg: &DynamicsConfig,
) -> SweepPoint {
    let r_a = agents.seller().risk_level();
    let r_b = agents.buyer().risk_level();
    let w = match DeviationWeights::new(lambda) {
        Ok(w) => w,
        Err(_) => return failed_point(lambda, r_a, r_b, PointStatus::Failed),
    };
    let point_cfg = cfg
        .clone()
        .with_penalty(cfg.penalty().clone().with_lambda(w));
    match run_trajectory(x0, agents, market, &point_cfg) {
        Ok(traj) if traj.converged() => {
            let t = traj.terminal();
            let objective = match joint_deviation(&t.state, x0, w) {
                Ok(v) => v,
                Err(_) => return failed_point(lambda, r_a, r_b, PointStatus::Failed),
            };
            SweepPoint {
                lambda,
                r_a,
                r_b,
                price_star: 0.5 * (t.price_a + t.price_b),
                objective,
                constraint_residual: (t.price_a - t.price_b).abs(),
                status: PointStatus::Ok,
            }
        }
        _ => failed_point(lambda, r_a, r_b, PointStatus::Failed),
    }
}

fn continuation_point(
    lambda: f64,
    x0: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    schedule: &[f64],
) -> SweepPoint {
    let r_a = agents.seller().risk_level();
    let r_b = agents.buyer().risk_level();
    match solve_primal(x0, agents, market, lambda, schedule) {
        Ok(sol)
            if matches!(
                sol.status,
                SolveStatus::Optimal | SolveStatus::AnchorsFeasible
            ) =>
        {
            SweepPoint {
                lambda,
                r_a,
                r_b,
                price_star: sol.price_star,
                objective: sol.objective,
                constraint_residual: sol.constraint_residual,
                status: PointStatus::Ok,
            }
        }
        _ => failed_point(lambda, r_a, r_b, PointStatus::Failed),
    }
}

/// Evaluates the agreed price along a bargaining-power grid.
///
/// Per-point failures are recorded with NaN fields and the sweep continues.
pub fn sweep_lambda(
    x0: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    cfg: &DynamicsConfig,
    lambda_grid: &[f64],
    provenance: SweepProvenance,
    schedule: &[f64],
) -> Result<SweepResult> {
    validate_axis("lambda_grid", lambda_grid, 0.0, 1.0)?;
    if provenance == SweepProvenance::Continuation {
        validate_schedule(schedule)?;
    }
    let points: Vec<SweepPoint> = lambda_grid
        .par_iter()
        .map(|&lambda| match provenance {
            SweepProvenance::Dynamics => dynamics_point(lambda, x0, agents, market, cfg),
            SweepProvenance::Continuation => {
                continuation_point(lambda, x0, agents, market, schedule)
            }
        })
        .collect();
    Ok(SweepResult {
        lambda_axis: lambda_grid.to_vec(),
        r_a_axis: vec![agents.seller().risk_level()],
        r_b_axis: vec![agents.buyer().risk_level()],
        points,
        provenance,
    })
}

/// Evaluates the agreed price over a seller-by-buyer risk grid at the
/// configuration's bargaining power.
///
/// Grid points failing the agreement-feasibility inequality are marked
/// infeasible and skipped; other failures are marked failed. Points run in
/// row-major order (`r_a` outer, `r_b` inner).
pub fn sweep_risks(
    x0: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    cfg: &DynamicsConfig,
    r_a_grid: &[f64],
    r_b_grid: &[f64],
    provenance: SweepProvenance,
    schedule: &[f64],
) -> Result<SweepResult> {
    validate_axis("r_a_grid", r_a_grid, 0.0, f64::INFINITY)?;
    validate_axis("r_b_grid", r_b_grid, 0.0, f64::INFINITY)?;
    if provenance == SweepProvenance::Continuation {
        validate_schedule(schedule)?;
    }
    let lambda = cfg.penalty().lambda().lambda();
    let pairs: Vec<(f64, f64)> = r_a_grid
        .iter()
        .flat_map(|&ra| r_b_grid.iter().map(move |&rb| (ra, rb)))
        .collect();
    let points: Vec<SweepPoint> = pairs
        .par_iter()
        .map(|&(r_a, r_b)| {
            let adjusted = agents
                .seller()
                .with_risk_level(r_a)
                .and_then(|s| Ok((s, agents.buyer().with_risk_level(r_b)?)))
                .and_then(|(s, b)| AgentPair::new(s, b));
            let pair = match adjusted {
                Ok(p) => p,
                Err(_) => return failed_point(lambda, r_a, r_b, PointStatus::Failed),
            };
            match agreement_feasible(pair.seller(), pair.buyer(), market) {
                Ok(true) => {}
                Ok(false) => return failed_point(lambda, r_a, r_b, PointStatus::Infeasible),
                Err(_) => return failed_point(lambda, r_a, r_b, PointStatus::Failed),
            }
            match provenance {
                SweepProvenance::Dynamics => dynamics_point(lambda, x0, &pair, market, cfg),
                SweepProvenance::Continuation => {
                    continuation_point(lambda, x0, &pair, market, schedule)
                }
            }
        })
        .collect();
    Ok(SweepResult {
        lambda_axis: vec![lambda],
        r_a_axis: r_a_grid.to_vec(),
        r_b_axis: r_b_grid.to_vec(),
        points,
        provenance,
    })
}

/// Direction class of a value sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monotonicity {
    /// Some rise beyond tolerance, no fall.
    Increasing,
    /// Some fall beyond tolerance, no rise.
    Decreasing,
    /// Rises and falls both beyond tolerance.
    NonMonotone,
    /// No move beyond tolerance.
    Flat,
}

/// Classifies a section of sweep values; `None` for sequences too short to
/// classify or containing non-finite entries.
pub fn classify_monotonicity(values: &[f64], tol: f64) -> Option<Monotonicity> {
    if values.len() < 2 || values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut has_up = false;
    let mut has_down = false;
    for pair in values.windows(2) {
        let d = pair[1] - pair[0];
        if d > tol {
            has_up = true;
        } else if d < -tol {
            has_down = true;
        }
    }
    Some(match (has_up, has_down) {
        (true, true) => Monotonicity::NonMonotone,
        (true, false) => Monotonicity::Increasing,
        (false, true) => Monotonicity::Decreasing,
        (false, false) => Monotonicity::Flat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::PenaltyVariant;
    use crate::pricing::AgentSpec;
    use crate::utility::{ExponentialUtility, UtilityKind};

    fn fig1() -> (AgentPair, MarketSpec, BeliefState) {
        let market = MarketSpec::new(vec![1.0, 2.0]).unwrap();
        let seller = AgentSpec::seller(
            0.0,
            0.4,
            UtilityKind::Exponential(ExponentialUtility::new(2.0).unwrap()),
        )
        .unwrap();
        let buyer = AgentSpec::buyer(
            0.0,
            0.3,
            UtilityKind::Exponential(ExponentialUtility::new(1.0).unwrap()),
        )
        .unwrap();
        let anchors = BeliefState::new(
            Belief::new(vec![0.25, 0.75]).unwrap(),
            Belief::new(vec![0.75, 0.25]).unwrap(),
        )
        .unwrap();
        (AgentPair::new(seller, buyer).unwrap(), market, anchors)
    }

    fn fig1_cfg(lambda: f64, variant: PenaltyVariant) -> DynamicsConfig {
        let penalty =
            PenaltyConfig::new(0.1, DeviationWeights::new(lambda).unwrap(), variant).unwrap();
        DynamicsConfig::new(0.05, penalty).unwrap()
    }

    #[test]
    fn feasible_anchors_solve_trivially() {
        let (agents, market, _) = fig1();
        // Swapped anchors put the seller's price below the buyer's.
        let anchors = BeliefState::new(
            Belief::new(vec![0.75, 0.25]).unwrap(),
            Belief::new(vec![0.25, 0.75]).unwrap(),
        )
        .unwrap();
        let sol =
            solve_primal(&anchors, &agents, &market, 0.4, &DEFAULT_EPSILON_SCHEDULE).unwrap();
        assert_eq!(sol.status, SolveStatus::AnchorsFeasible);
        assert_eq!(sol.objective, 0.0);
        assert_eq!(sol.kkt_multiplier_estimate, 0.0);
        assert_eq!(sol.q_a_star.weights(), anchors.q_a().weights());
        assert_eq!(sol.q_b_star.weights(), anchors.q_b().weights());
        let brute = brute_force_primal_k2(&anchors, &agents, &market, 0.4, 201).unwrap();
        assert_eq!(brute.status, SolveStatus::AnchorsFeasible);
    }

    #[test]
    fn fig1_solution_binds_and_matches_the_oracle() {
        let (agents, market, anchors) = fig1();
        let sol =
            solve_primal(&anchors, &agents, &market, 0.4, &DEFAULT_EPSILON_SCHEDULE).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.uniqueness_guaranteed);
        assert!(sol.constraint_residual < 1e-6, "{}", sol.constraint_residual);
        assert!(sol.price_star > 1.43437 && sol.price_star < 1.58434);
        assert!(sol.objective > 0.0);
        assert!(sol.kkt_multiplier_estimate > 0.0);

        let brute = brute_force_primal_k2(&anchors, &agents, &market, 0.4, 2001).unwrap();
        assert!(
            (sol.objective - brute.objective).abs() < 1e-8,
            "objectives {} vs {}",
            sol.objective,
            brute.objective
        );
        assert!((sol.q_a_star.weights()[0] - brute.q_a_star.weights()[0]).abs() < 1e-3);
        assert!((sol.q_b_star.weights()[0] - brute.q_b_star.weights()[0]).abs() < 1e-3);
        assert!((sol.price_star - brute.price_star).abs() < 1e-4);
    }

    #[test]
    fn symmetric_instance_has_mirror_solution() {
        let market = MarketSpec::new(vec![1.0, 2.0]).unwrap();
        let utility = || UtilityKind::Exponential(ExponentialUtility::new(1.0).unwrap());
        let seller = AgentSpec::seller(0.0, 0.2, utility()).unwrap();
        let buyer = AgentSpec::buyer(0.0, 0.2, utility()).unwrap();
        let agents = AgentPair::new(seller, buyer).unwrap();
        let anchors = BeliefState::new(
            Belief::new(vec![0.3, 0.7]).unwrap(),
            Belief::new(vec![0.7, 0.3]).unwrap(),
        )
        .unwrap();
        let brute = brute_force_primal_k2(&anchors, &agents, &market, 0.5, 2001).unwrap();
        assert_eq!(brute.status, SolveStatus::Optimal);
        assert!(
            (brute.q_a_star.weights()[0] - brute.q_b_star.weights()[1]).abs() < 1e-3,
            "optimum must be a mirror pair: {:?} vs {:?}",
            brute.q_a_star,
            brute.q_b_star
        );
        let sol =
            solve_primal(&anchors, &agents, &market, 0.5, &DEFAULT_EPSILON_SCHEDULE).unwrap();
        assert!((sol.q_a_star.weights()[0] - sol.q_b_star.weights()[1]).abs() < 1e-5);
    }

    #[test]
    fn small_lambda_leaves_buyer_near_anchor() {
        let (agents, market, anchors) = fig1();
        let sol =
            solve_primal(&anchors, &agents, &market, 0.01, &DEFAULT_EPSILON_SCHEDULE).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let moved_b = (sol.q_b_star.weights()[0] - 0.75).abs();
        let moved_a = (sol.q_a_star.weights()[0] - 0.25).abs();
        assert!(moved_b < 0.05, "buyer moved {moved_b}");
        assert!(moved_a > moved_b, "seller must carry the deviation");
    }

    #[test]
    fn endpoint_lambda_is_flagged() {
        let (agents, market, anchors) = fig1();
        let sol = solve_primal(&anchors, &agents, &market, 0.0, &DEFAULT_EPSILON_SCHEDULE).unwrap();
        assert!(!sol.uniqueness_guaranteed);
        assert!(sol.constraint_residual < 1e-6);
    }

    #[test]
    fn schedule_validation() {
        let (agents, market, anchors) = fig1();
        assert!(solve_primal(&anchors, &agents, &market, 0.4, &[]).is_err());
        assert!(solve_primal(&anchors, &agents, &market, 0.4, &[0.1, -0.01]).is_err());
        assert!(solve_primal(&anchors, &agents, &market, 1.5, &[0.1]).is_err());
    }

    #[test]
    fn brute_force_argument_checks() {
        let (agents, market, anchors) = fig1();
        assert!(brute_force_primal_k2(&anchors, &agents, &market, 0.4, 100).is_err());
        let k3 = MarketSpec::new(vec![1.0, 2.0, 3.0]).unwrap();
        let anchors3 = BeliefState::new(
            Belief::uniform(3).unwrap(),
            Belief::uniform(3).unwrap(),
        )
        .unwrap();
        assert!(brute_force_primal_k2(&anchors3, &agents, &k3, 0.4, 201).is_err());
    }

    #[test]
    fn continuation_trace_is_stable_across_epsilons() {
        let (agents, market, anchors) = fig1();
        let trace =
            continuation_trace(&anchors, &agents, &market, 0.4, &DEFAULT_EPSILON_SCHEDULE)
                .unwrap();
        assert_eq!(trace.len(), 4);
        for pair in trace.windows(2) {
            // Residual shrinks roughly with epsilon and the objective moves
            // continuously along the continuation path.
            assert!(pair[1].constraint_residual < pair[0].constraint_residual);
            assert!((pair[1].objective - pair[0].objective).abs() < 1.0);
        }
    }

    #[test]
    fn asymptotic_price_matches_corollaries_at_endpoints() {
        let (agents, market, x0) = fig1();
        let (pa0, pb0) = prices_at(&x0, &agents, &market).unwrap();
        let p0 = asymptotic_price(
            &x0,
            &agents,
            &market,
            &fig1_cfg(0.0, PenaltyVariant::LambdaDependent),
        )
        .unwrap();
        assert!((p0 - pb0).abs() < 1e-6, "{p0} vs {pb0}");
        let p1 = asymptotic_price(
            &x0,
            &agents,
            &market,
            &fig1_cfg(1.0, PenaltyVariant::LambdaDependent),
        )
        .unwrap();
        assert!((p1 - pa0).abs() < 1e-6, "{p1} vs {pa0}");
    }

    #[test]
    fn asymptotic_price_propagates_non_convergence() {
        let (agents, market, x0) = fig1();
        let cfg = fig1_cfg(0.4, PenaltyVariant::LambdaDependent).with_max_periods(3);
        match asymptotic_price(&x0, &agents, &market, &cfg) {
            Err(Error::NoConvergence { iterations, .. }) => assert_eq!(iterations, 3),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn lambda_sweep_is_monotone_with_matching_endpoints() {
        let (agents, market, x0) = fig1();
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        let result = sweep_lambda(
            &x0,
            &agents,
            &market,
            &fig1_cfg(0.4, PenaltyVariant::LambdaDependent),
            &grid,
            SweepProvenance::Dynamics,
            &DEFAULT_EPSILON_SCHEDULE,
        )
        .unwrap();
        assert_eq!(result.points.len(), 5);
        assert!(result.points.iter().all(|p| p.status == PointStatus::Ok));
        let prices: Vec<f64> = result.points.iter().map(|p| p.price_star).collect();
        for pair in prices.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-8, "sweep not monotone: {prices:?}");
        }
        let (pa0, pb0) = prices_at(&x0, &agents, &market).unwrap();
        assert!((prices[0] - pb0).abs() < 1e-6);
        assert!((prices[4] - pa0).abs() < 1e-6);
    }

    #[test]
    fn risk_sweep_marks_infeasible_corners() {
        let (agents, market, x0) = fig1();
        // Slack ln(1 + 2 r_A)/2 + ln(1 + r_B) crosses the payoff spread 1
        // between the corners (3.0, 0.02) and (3.0, 0.03).
        let result = sweep_risks(
            &x0,
            &agents,
            &market,
            &fig1_cfg(0.4, PenaltyVariant::LambdaDependent),
            &[0.4, 3.0],
            &[0.02, 0.03],
            SweepProvenance::Dynamics,
            &DEFAULT_EPSILON_SCHEDULE,
        )
        .unwrap();
        assert_eq!(result.points.len(), 4);
        let statuses: Vec<PointStatus> = result.points.iter().map(|p| p.status).collect();
        assert_eq!(
            statuses,
            vec![
                PointStatus::Ok,
                PointStatus::Ok,
                PointStatus::Ok,
                PointStatus::Infeasible
            ]
        );
        let corner = &result.points[3];
        assert!(corner.price_star.is_nan());
        assert_eq!((corner.r_a, corner.r_b), (3.0, 0.03));
    }

    #[test]
    fn axis_validation_rejects_bad_grids() {
        let (agents, market, x0) = fig1();
        let cfg = fig1_cfg(0.4, PenaltyVariant::LambdaDependent);
        for grid in [&[][..], &[0.5, 0.5][..], &[0.2, 1.4][..]] {
            assert!(sweep_lambda(
                &x0,
                &agents,
                &market,
                &cfg,
                grid,
                SweepProvenance::Dynamics,
                &DEFAULT_EPSILON_SCHEDULE,
            )
            .is_err());
        }
    }

    #[test]
    fn monotonicity_classification() {
        assert_eq!(
            classify_monotonicity(&[1.0, 2.0, 3.0], 1e-9),
            Some(Monotonicity::Increasing)
        );
        assert_eq!(
            classify_monotonicity(&[3.0, 2.0, 1.0], 1e-9),
            Some(Monotonicity::Decreasing)
        );
        assert_eq!(
            classify_monotonicity(&[1.0, 3.0, 2.0], 1e-9),
            Some(Monotonicity::NonMonotone)
        );
        assert_eq!(
            classify_monotonicity(&[1.0, 1.0 + 1e-12], 1e-9),
            Some(Monotonicity::Flat)
        );
        assert_eq!(classify_monotonicity(&[1.0], 1e-9), None);
        assert_eq!(classify_monotonicity(&[1.0, f64::NAN], 1e-9), None);
    }
}

