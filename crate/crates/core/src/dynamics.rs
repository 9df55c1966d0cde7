//! The implicit projected-gradient bargaining dynamics.
//!
//! Each period solves the fixed-point equation
//!
//! ```text
//! y = (1 - alpha) x + alpha P[ x - beta grad_1 L(y, x) ]
//! ```
//!
//! for the next state `y`, where `P` is the blockwise projection and `L` is
//! the active penalized functional anchored at the previous state. The solve
//! is a damped Picard iteration; the per-period record carries prices, the
//! Lyapunov value of the outgoing step, and solver diagnostics.

use crate::error::{Error, Result};
use crate::functionals::{grad_next_penalized, prices_at, PenaltyConfig};
use crate::pricing::{agreement_feasible, AgentPair, MarketSpec};
use crate::simplex::{norm, project_pair, project_pair_clamped, tangent_pair, BeliefState};

/// Halving floor for the Picard damping factor.
const THETA_FLOOR: f64 = 1.0 / (1 << 20) as f64;

/// Step size, per-step solver knobs, run caps, and scheme flags.
#[derive(Debug, Clone)]
pub struct DynamicsConfig {
    alpha: f64,
    penalty: PenaltyConfig,
    step_solver_tol: f64,
    step_solver_cap: usize,
    convergence_tol: f64,
    max_periods: usize,
    beta_scale: f64,
    fixed_anchor: bool,
    clamped_projection: bool,
    explicit_scheme: bool,
}

impl DynamicsConfig {
    /// Relaxation step `alpha` in (0,1) plus the penalty setup; everything
    /// else starts at its default.
    pub fn new(alpha: f64, penalty: PenaltyConfig) -> Result<Self> {
        if !(alpha.is_finite() && 0.0 < alpha && alpha < 1.0) {
            return Err(Error::invalid(
                "alpha",
                format!("relaxation step must lie strictly in (0, 1), got {alpha}"),
            ));
        }
        Ok(DynamicsConfig {
            alpha,
            penalty,
            step_solver_tol: 1e-12,
            step_solver_cap: 500,
            convergence_tol: 1e-10,
            max_periods: 100_000,
            beta_scale: 1.0,
            fixed_anchor: false,
            clamped_projection: false,
            explicit_scheme: false,
        })
    }

    /// Max-norm residual below which a per-period fixed point is accepted.
    pub fn with_step_solver_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::invalid("step_solver_tol", format!("must be > 0, got {tol}")));
        }
        self.step_solver_tol = tol;
        Ok(self)
    }

    /// Cap on gradient-map evaluations per period.
    pub fn with_step_solver_cap(mut self, cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::invalid("step_solver_cap", "must be at least 1"));
        }
        self.step_solver_cap = cap;
        Ok(self)
    }

    /// Displacement `||x(t+1) - x(t)||` below which the run stops.
    pub fn with_convergence_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::invalid("convergence_tol", format!("must be > 0, got {tol}")));
        }
        self.convergence_tol = tol;
        Ok(self)
    }

    /// Cap on periods per run; 0 records the initial state only.
    pub fn with_max_periods(mut self, max_periods: usize) -> Self {
        self.max_periods = max_periods;
        self
    }

    /// Gradient scale `beta` of the generic projected system; the bargaining
    /// iteration itself uses the default 1.
    pub fn with_beta_scale(mut self, beta_scale: f64) -> Result<Self> {
        if !(beta_scale.is_finite() && beta_scale > 0.0) {
            return Err(Error::invalid("beta_scale", format!("must be > 0, got {beta_scale}")));
        }
        self.beta_scale = beta_scale;
        Ok(self)
    }

    /// Pins the anchor (deviation origin and target price) to the run's
    /// initial state instead of the drifting previous iterate.
    pub fn with_fixed_anchor(mut self, on: bool) -> Self {
        self.fixed_anchor = on;
        self
    }

    /// Uses the true-simplex projection instead of the affine one.
    pub fn with_clamped_projection(mut self, on: bool) -> Self {
        self.clamped_projection = on;
        self
    }

    /// Evaluates the gradient at the current state instead of solving the
    /// implicit equation; no convergence guarantee.
    pub fn with_explicit_scheme(mut self, on: bool) -> Self {
        self.explicit_scheme = on;
        self
    }

    /// Swaps the penalty setup; sweeps use this to vary `lambda` per point.
    pub fn with_penalty(mut self, penalty: PenaltyConfig) -> Self {
        self.penalty = penalty;
        self
    }

    /// Relaxation step `alpha`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Penalty setup shared by every period.
    pub fn penalty(&self) -> &PenaltyConfig {
        &self.penalty
    }

    /// Per-period solver residual tolerance.
    pub fn step_solver_tol(&self) -> f64 {
        self.step_solver_tol
    }

    /// Per-period solver evaluation cap.
    pub fn step_solver_cap(&self) -> usize {
        self.step_solver_cap
    }

    /// Run-level displacement tolerance.
    pub fn convergence_tol(&self) -> f64 {
        self.convergence_tol
    }

    /// Run-level period cap.
    pub fn max_periods(&self) -> usize {
        self.max_periods
    }

    /// Gradient scale of the generic system.
    pub fn beta_scale(&self) -> f64 {
        self.beta_scale
    }

    /// Whether the anchor is pinned to the initial state.
    pub fn fixed_anchor(&self) -> bool {
        self.fixed_anchor
    }

    /// Whether projections clamp to the simplex proper.
    pub fn clamped_projection(&self) -> bool {
        self.clamped_projection
    }

    /// Whether the forward (explicit) scheme is active.
    pub fn explicit_scheme(&self) -> bool {
        self.explicit_scheme
    }

    /// Price-gap tolerance a converged run is expected to certify at: three
    /// decades of slack over `convergence_tol / alpha`, the stationarity
    /// residual scale implied by stopping on displacement.
    pub fn certificate_tol(&self) -> f64 {
        1e3 * self.convergence_tol / self.alpha
    }
}

/// One trajectory row: the state `x(t)` and the diagnostics of the step
/// leaving it. The final row has no outgoing step; its `lyapunov`,
/// `delta_lyapunov`, `boundary_violation`, and `solver_iters` are zeroed.
#[derive(Debug, Clone)]
pub struct PeriodRecord {
    /// Period index `t`.
    pub t: usize,
    /// State `x(t)`.
    pub state: BeliefState,
    /// Seller's reservation price at `x(t)`.
    pub price_a: f64,
    /// Buyer's reservation price at `x(t)`.
    pub price_b: f64,
    /// `V(x(t+1), x(t)) = ||x(t+1) - x(t)||^2 / alpha^2`.
    pub lyapunov: f64,
    /// `V(t) - V(t-1)`; zero on the first and last rows.
    pub delta_lyapunov: f64,
    /// Whether `x(t+1)` left the nonnegative orthant.
    pub boundary_violation: bool,
    /// Gradient-map evaluations the step's fixed-point solve used.
    pub solver_iters: usize,
    /// Gradient the step used, kept for the Lipschitz estimate.
    pub(crate) step_gradient: Option<Vec<f64>>,
}

/// Why a trajectory stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalStatus {
    /// Displacement fell below the convergence tolerance.
    Converged,
    /// The period cap was reached first.
    MaxPeriods,
    /// A per-period fixed-point solve stalled.
    StepSolverFailure {
        /// Period whose solve stalled.
        period: usize,
        /// Evaluations spent before giving up.
        iterations: usize,
        /// Max-norm residual at the last iterate.
        residual: f64,
    },
}

/// A recorded orbit: one row per period plus how and why it ended.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// Rows `t = 0..=steps`; never empty.
    pub periods: Vec<PeriodRecord>,
    /// Why the run stopped.
    pub status: TerminalStatus,
    /// Whether the agreement-feasibility inequality failed at the start.
    pub feasibility_warning: bool,
    /// Relaxation step the run used.
    pub alpha: f64,
    /// Gradient scale the run used.
    pub beta_scale: f64,
}

impl TrajectoryRecord {
    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.periods.len() - 1
    }

    /// The final row.
    pub fn terminal(&self) -> &PeriodRecord {
        self.periods.last().expect("a trajectory always has rows")
    }

    /// Whether the run stopped by convergence.
    pub fn converged(&self) -> bool {
        self.status == TerminalStatus::Converged
    }
}

/// Accepted per-period solve: the next state, the gradient it used, and how
/// hard the solver worked.
pub(crate) struct StepOutcome {
    pub state: Vec<f64>,
    pub gradient: Vec<f64>,
    pub iterations: usize,
}

fn max_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Damped Picard iteration for `y = image(y)`; `image` also returns the
/// gradient it evaluated so the caller can record it.
///
/// The damping factor halves whenever a trial residual increases (the trial
/// is rediscounted, not accepted) down to a floor past which steps are
/// accepted regardless; every `image` call counts toward the cap.
fn picard_solve(
    warm: &[f64],
    tol: f64,
    cap: usize,
    period: usize,
    mut image: impl FnMut(&[f64]) -> Result<(Vec<f64>, Vec<f64>)>,
) -> Result<StepOutcome> {
    let mut y = warm.to_vec();
    let (mut image_y, mut grad_y) = image(&y)?;
    let mut evals = 1usize;
    let mut residual = max_norm_diff(&image_y, &y);
    let mut theta = 1.0f64;
    while residual >= tol {
        if evals >= cap {
            return Err(Error::StepSolver {
                period,
                iterations: evals,
                residual,
            });
        }
        let candidate: Vec<f64> = y
            .iter()
            .zip(&image_y)
            .map(|(yi, ti)| yi + theta * (ti - yi))
            .collect();
        let (image_c, grad_c) = image(&candidate)?;
        evals += 1;
        let residual_c = max_norm_diff(&image_c, &candidate);
        if residual_c > residual && theta > THETA_FLOOR {
            theta *= 0.5;
            continue;
        }
        y = candidate;
        image_y = image_c;
        grad_y = grad_c;
        residual = residual_c;
    }
    Ok(StepOutcome {
        state: y,
        gradient: grad_y,
        iterations: evals,
    })
}

fn project(v: &[f64], clamped: bool) -> Result<Vec<f64>> {
    if clamped {
        project_pair_clamped(v)
    } else {
        project_pair(v)
    }
}

/// One period of the bargaining iteration from `x` with the given anchor,
/// warm-started at `warm`.
fn bargaining_step(
    x: &BeliefState,
    warm: &[f64],
    anchor: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    cfg: &DynamicsConfig,
    period: usize,
) -> Result<StepOutcome> {
    let x_flat = x.to_flat();
    let alpha = cfg.alpha();
    let beta = cfg.beta_scale();
    let image = |y_flat: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let y_state = BeliefState::from_flat(y_flat)?;
        let grad = grad_next_penalized(&y_state, anchor, agents, market, cfg.penalty())?;
        let pre: Vec<f64> = x_flat
            .iter()
            .zip(&grad)
            .map(|(xi, gi)| xi - beta * gi)
            .collect();
        let projected = project(&pre, cfg.clamped_projection())?;
        let image: Vec<f64> = x_flat
            .iter()
            .zip(&projected)
            .map(|(xi, pi)| (1.0 - alpha) * xi + alpha * pi)
            .collect();
        Ok((image, grad))
    };
    if cfg.explicit_scheme() {
        let (state, gradient) = image(&x_flat)?;
        return Ok(StepOutcome {
            state,
            gradient,
            iterations: 1,
        });
    }
    picard_solve(warm, cfg.step_solver_tol(), cfg.step_solver_cap(), period, image)
}

/// Solves one period of the implicit iteration from `x`, anchored at `x`
/// itself (a single step's previous iterate is its anchor).
pub fn implicit_step(
    x: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    cfg: &DynamicsConfig,
) -> Result<BeliefState> {
    implicit_step_warm(x, x, agents, market, cfg)
}

/// [`implicit_step`] with an explicit warm start for the per-period solve.
/// The solution is unique, so any interior warm start must land on the same
/// next state; exposed for exactly that cross-check.
pub fn implicit_step_warm(
    x: &BeliefState,
    warm: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    cfg: &DynamicsConfig,
) -> Result<BeliefState> {
    let outcome = bargaining_step(x, &warm.to_flat(), x, agents, market, cfg, 0)?;
    BeliefState::from_flat(&outcome.state)
}

/// Runs the iteration from `x0` until displacement falls below
/// `convergence_tol`, the period cap is hit, or a per-period solve stalls.
///
/// An infeasible agreement configuration only sets `feasibility_warning`;
/// the dynamics remain defined and the run proceeds. Pricing failures abort
/// with an error; a stalled step ends the run with a
/// [`TerminalStatus::StepSolverFailure`] status and the rows recorded so far.
pub fn run_trajectory(
    x0: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    cfg: &DynamicsConfig,
) -> Result<TrajectoryRecord> {
    let feasibility_warning = !agreement_feasible(agents.seller(), agents.buyer(), market)?;
    let mut periods: Vec<PeriodRecord> = Vec::with_capacity(cfg.max_periods().min(1 << 12) + 1);
    let mut current = x0.clone();
    let (mut price_a, mut price_b) = prices_at(&current, agents, market)?;
    let mut prev_lyapunov: Option<f64> = None;
    let mut converged = false;
    let mut failure: Option<(usize, usize, f64)> = None;

    for t in 0..cfg.max_periods() {
        let anchor = if cfg.fixed_anchor() { x0 } else { &current };
        let warm = current.to_flat();
        let outcome = match bargaining_step(&current, &warm, anchor, agents, market, cfg, t) {
            Ok(outcome) => outcome,
            Err(Error::StepSolver {
                period,
                iterations,
                residual,
            }) => {
                failure = Some((period, iterations, residual));
                break;
            }
            Err(e) => return Err(e),
        };
        let displacement = norm_diff(&outcome.state, &warm);
        let lyapunov = (displacement / cfg.alpha()).powi(2);
        let delta_lyapunov = prev_lyapunov.map_or(0.0, |prev| lyapunov - prev);
        periods.push(PeriodRecord {
            t,
            state: current.clone(),
            price_a,
            price_b,
            lyapunov,
            delta_lyapunov,
            boundary_violation: outcome.state.iter().any(|&c| c < 0.0),
            solver_iters: outcome.iterations,
            step_gradient: Some(outcome.gradient),
        });
        prev_lyapunov = Some(lyapunov);
        current = BeliefState::from_flat(&outcome.state)?;
        let prices = prices_at(&current, agents, market)?;
        price_a = prices.0;
        price_b = prices.1;
        if displacement < cfg.convergence_tol() {
            converged = true;
            break;
        }
    }

    periods.push(PeriodRecord {
        t: periods.len(),
        state: current,
        price_a,
        price_b,
        lyapunov: 0.0,
        delta_lyapunov: 0.0,
        boundary_violation: false,
        solver_iters: 0,
        step_gradient: None,
    });
    let status = match failure {
        Some((period, iterations, residual)) => TerminalStatus::StepSolverFailure {
            period,
            iterations,
            residual,
        },
        None if converged => TerminalStatus::Converged,
        None => TerminalStatus::MaxPeriods,
    };
    Ok(TrajectoryRecord {
        periods,
        status,
        feasibility_warning,
        alpha: cfg.alpha(),
        beta_scale: cfg.beta_scale(),
    })
}

/// Lyapunov diagnostics of a recorded trajectory.
#[derive(Debug, Clone)]
pub struct LyapunovReport {
    /// `(V(n), delta V(n))` for each step `n >= 1` with a defined delta.
    pub series: Vec<(f64, f64)>,
    /// Relaxation step of the run.
    pub alpha: f64,
    /// Gradient scale of the run.
    pub beta_scale: f64,
    /// Empirical Lipschitz estimate of the step gradient map, maximized over
    /// consecutive trajectory pairs.
    pub lipschitz_estimate: f64,
    /// `(1 + beta^2 L^2 / 2)^-1` with the empirical estimate for `L`; the
    /// decrease theorem assumes `alpha` below this.
    pub alpha_threshold: f64,
    /// Whether `alpha` is below the empirical threshold.
    pub within_threshold: bool,
    /// Whether every recorded delta is strictly negative.
    pub monotone: bool,
}

/// Extracts the Lyapunov series and the step-size threshold report from a
/// trajectory with at least two completed steps.
pub fn lyapunov_series(traj: &TrajectoryRecord) -> Result<LyapunovReport> {
    let steps = traj.steps();
    if steps < 2 {
        return Err(Error::invalid(
            "traj",
            format!("need at least 2 completed steps for a Lyapunov series, got {steps}"),
        ));
    }
    let series: Vec<(f64, f64)> = (1..steps)
        .map(|n| (traj.periods[n].lyapunov, traj.periods[n].delta_lyapunov))
        .collect();

    let mut lipschitz_estimate = 0.0f64;
    for n in 1..steps {
        let (Some(g1), Some(g0)) = (
            traj.periods[n].step_gradient.as_ref(),
            traj.periods[n - 1].step_gradient.as_ref(),
        ) else {
            continue;
        };
        let dx = norm_diff(
            &traj.periods[n].state.to_flat(),
            &traj.periods[n - 1].state.to_flat(),
        );
        if dx > 0.0 {
            lipschitz_estimate = lipschitz_estimate.max(norm_diff(g1, g0) / dx);
        }
    }
    let alpha_threshold =
        1.0 / (1.0 + traj.beta_scale * traj.beta_scale * lipschitz_estimate * lipschitz_estimate / 2.0);
    let monotone = series.iter().all(|&(_, dv)| dv < 0.0);
    Ok(LyapunovReport {
        series,
        alpha: traj.alpha,
        beta_scale: traj.beta_scale,
        lipschitz_estimate,
        alpha_threshold,
        within_threshold: traj.alpha < alpha_threshold,
        monotone,
    })
}

/// What [`certify_fixed_point`] measured at a candidate state.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointCertificate {
    /// `|P_A - P_B|` at the state.
    pub price_gap: f64,
    /// Euclidean norm of the penalized gradient at `(x, x)` projected onto
    /// the affine tangent space.
    pub tangential_grad_norm: f64,
    /// Smallest belief component; nonpositive means boundary or beyond.
    pub interior_margin: f64,
    /// Whether the state is strictly interior.
    pub interior: bool,
    /// Interior with both `price_gap` and `tangential_grad_norm` below the
    /// requested tolerance. The stationarity characterization needs
    /// interiority, so boundary states never pass.
    pub pass: bool,
}

/// Measures the fixed-point conditions at `x`: equal prices and tangential
/// stationarity of the penalized functional anchored at `x` itself.
pub fn certify_fixed_point(
    x: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    cfg: &DynamicsConfig,
    tol: f64,
) -> Result<FixedPointCertificate> {
    let (price_a, price_b) = prices_at(x, agents, market)?;
    let grad = grad_next_penalized(x, x, agents, market, cfg.penalty())?;
    let tangential = tangent_pair(&grad)?;
    let price_gap = (price_a - price_b).abs();
    let tangential_grad_norm = norm(&tangential);
    let interior_margin = x.min_component();
    let interior = interior_margin > 0.0;
    Ok(FixedPointCertificate {
        price_gap,
        tangential_grad_norm,
        interior_margin,
        interior,
        pass: interior && price_gap < tol && tangential_grad_norm < tol,
    })
}

/// One period of the generic projected system `x(t+1) = (1-alpha) x(t) +
/// alpha P[x(t) - beta G(x(t+1), x(t))]` for an arbitrary gradient map `G`
/// on the flat product-simplex layout.
///
/// The same fixed-point contract as [`implicit_step`] applies; the state is
/// a raw vector, so exterior starting points are allowed (the projection
/// pulls them toward the feasible set at rate `1 - alpha` per step).
pub fn generic_pds_step<G>(x: &[f64], mut g: G, cfg: &DynamicsConfig) -> Result<Vec<f64>>
where
    G: FnMut(&[f64], &[f64]) -> Result<Vec<f64>>,
{
    if x.len() % 2 != 0 || x.len() < 4 {
        return Err(Error::DimensionMismatch(format!(
            "flat state needs even length >= 4, got {}",
            x.len()
        )));
    }
    let alpha = cfg.alpha();
    let beta = cfg.beta_scale();
    let mut image = |y: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let grad = g(y, x)?;
        if grad.len() != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "gradient map returned length {}, state has length {}",
                grad.len(),
                x.len()
            )));
        }
        let pre: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - beta * gi).collect();
        let projected = project(&pre, cfg.clamped_projection())?;
        let image: Vec<f64> = x
            .iter()
            .zip(&projected)
            .map(|(xi, pi)| (1.0 - alpha) * xi + alpha * pi)
            .collect();
        Ok((image, grad))
    };
    if cfg.explicit_scheme() {
        return Ok(image(x)?.0);
    }
    Ok(picard_solve(x, cfg.step_solver_tol(), cfg.step_solver_cap(), 0, image)?.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{PenaltyConfig, PenaltyVariant};
    use crate::pricing::{reservation_price, AgentSpec};
    use crate::simplex::{Belief, DeviationWeights};
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
        let x0 = BeliefState::new(
            Belief::new(vec![0.25, 0.75]).unwrap(),
            Belief::new(vec![0.75, 0.25]).unwrap(),
        )
        .unwrap();
        (AgentPair::new(seller, buyer).unwrap(), market, x0)
    }

    fn cfg(alpha: f64, epsilon: f64, lambda: f64, variant: PenaltyVariant) -> DynamicsConfig {
        let penalty =
            PenaltyConfig::new(epsilon, DeviationWeights::new(lambda).unwrap(), variant).unwrap();
        DynamicsConfig::new(alpha, penalty).unwrap()
    }

    /// Interior state with equal prices: fixes Q_A at the anchor and moves
    /// the buyer's low-payoff weight until P_B crosses P_A.
    fn equal_price_state(agents: &AgentPair, market: &MarketSpec) -> BeliefState {
        let q_a = Belief::new(vec![0.25, 0.75]).unwrap();
        let p_a = reservation_price(agents.seller(), market, &q_a).unwrap();
        let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let p = reservation_price(
                agents.buyer(),
                market,
                &Belief::new(vec![mid, 1.0 - mid]).unwrap(),
            )
            .unwrap();
            if p > p_a {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mid = 0.5 * (lo + hi);
        BeliefState::new(q_a, Belief::new(vec![mid, 1.0 - mid]).unwrap()).unwrap()
    }

    #[test]
    fn config_validation() {
        let penalty = PenaltyConfig::new(
            0.1,
            DeviationWeights::new(0.4).unwrap(),
            PenaltyVariant::LambdaIndependent,
        )
        .unwrap();
        assert!(DynamicsConfig::new(0.0, penalty.clone()).is_err());
        assert!(DynamicsConfig::new(1.0, penalty.clone()).is_err());
        assert!(DynamicsConfig::new(f64::NAN, penalty.clone()).is_err());
        let c = DynamicsConfig::new(0.05, penalty).unwrap();
        assert_eq!(c.step_solver_tol(), 1e-12);
        assert_eq!(c.step_solver_cap(), 500);
        assert_eq!(c.convergence_tol(), 1e-10);
        assert_eq!(c.max_periods(), 100_000);
        assert_eq!(c.beta_scale(), 1.0);
        assert!(!c.fixed_anchor() && !c.clamped_projection() && !c.explicit_scheme());
        assert!(c.clone().with_beta_scale(0.0).is_err());
        assert!(c.clone().with_step_solver_cap(0).is_err());
        assert!(c.with_convergence_tol(-1.0).is_err());
    }

    #[test]
    fn fixed_point_is_stationary() {
        let (agents, market, _) = fig1();
        let x = equal_price_state(&agents, &market);
        let c = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaIndependent);
        let y = implicit_step(&x, &agents, &market, &c).unwrap();
        assert!(max_norm_diff(&y.to_flat(), &x.to_flat()) < 1e-11);
    }

    #[test]
    fn small_alpha_means_small_step() {
        let (agents, market, x0) = fig1();
        let c = cfg(1e-6, 0.1, 0.4, PenaltyVariant::LambdaIndependent);
        let y = implicit_step(&x0, &agents, &market, &c).unwrap();
        let dist = norm_diff(&y.to_flat(), &x0.to_flat());
        assert!(dist > 0.0 && dist < 1e-4, "step length {dist}");
    }

    #[test]
    fn one_step_moves_prices_together() {
        let (agents, market, x0) = fig1();
        let c = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaDependent);
        let y = implicit_step(&x0, &agents, &market, &c).unwrap();
        let (pa0, pb0) = prices_at(&x0, &agents, &market).unwrap();
        let (pa1, pb1) = prices_at(&y, &agents, &market).unwrap();
        assert!(pa1 < pa0, "seller price must fall: {pa0} -> {pa1}");
        assert!(pb1 > pb0, "buyer price must rise: {pb0} -> {pb1}");
    }

    #[test]
    fn lambda_zero_keeps_buyer_fixed() {
        let (agents, market, x0) = fig1();
        let c = cfg(0.05, 0.1, 0.0, PenaltyVariant::LambdaDependent);
        let traj = run_trajectory(&x0, &agents, &market, &c).unwrap();
        assert!(traj.converged(), "status {:?}", traj.status);
        let pb0 = traj.periods[0].price_b;
        for row in &traj.periods {
            assert!((row.price_b - pb0).abs() < 1e-8, "period {}", row.t);
        }
        let terminal = traj.terminal();
        assert!((terminal.price_a - pb0).abs() < 1e-6);
        assert!((terminal.price_b - pb0).abs() < 1e-6);
    }

    #[test]
    fn lambda_one_keeps_seller_fixed() {
        let (agents, market, x0) = fig1();
        let c = cfg(0.05, 0.1, 1.0, PenaltyVariant::LambdaDependent);
        let traj = run_trajectory(&x0, &agents, &market, &c).unwrap();
        assert!(traj.converged());
        let pa0 = traj.periods[0].price_a;
        for row in &traj.periods {
            assert!((row.price_a - pa0).abs() < 1e-8, "period {}", row.t);
        }
        let terminal = traj.terminal();
        assert!((terminal.price_b - pa0).abs() < 1e-6);
    }

    #[test]
    fn interior_run_converges_with_monotone_prices() {
        let (agents, market, x0) = fig1();
        let c = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaDependent);
        let traj = run_trajectory(&x0, &agents, &market, &c).unwrap();
        assert!(traj.converged());
        assert!(!traj.feasibility_warning);
        let (pa0, pb0) = (traj.periods[0].price_a, traj.periods[0].price_b);
        for pair in traj.periods.windows(2) {
            assert!(pair[1].price_a <= pair[0].price_a + 1e-10, "t {}", pair[0].t);
            assert!(pair[1].price_b >= pair[0].price_b - 1e-10, "t {}", pair[0].t);
        }
        let terminal = traj.terminal();
        assert!((terminal.price_a - terminal.price_b).abs() < 1e-6);
        assert!(terminal.price_a >= pb0 - 1e-9 && terminal.price_a <= pa0 + 1e-9);
        assert!(!traj.periods.iter().any(|r| r.boundary_violation));

        let cert =
            certify_fixed_point(&terminal.state, &agents, &market, &c, 1e-6).unwrap();
        assert!(cert.pass, "certificate {cert:?}");
    }

    #[test]
    fn lyapunov_record_matches_definition_and_decreases() {
        let (agents, market, x0) = fig1();
        let c = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaDependent);
        let traj = run_trajectory(&x0, &agents, &market, &c).unwrap();
        // Recorded V must equal ||x(t+1) - x(t)||^2 / alpha^2 recomputed
        // from the stored states.
        for pair in traj.periods.windows(2) {
            let d = norm_diff(&pair[1].state.to_flat(), &pair[0].state.to_flat());
            let v = (d / traj.alpha).powi(2);
            assert!((pair[0].lyapunov - v).abs() <= 1e-12 * v.max(1.0));
        }
        let report = lyapunov_series(&traj).unwrap();
        assert!(report.monotone, "some delta V >= 0");
        assert!(
            report.within_threshold,
            "alpha {} vs threshold {}",
            report.alpha, report.alpha_threshold
        );
        assert_eq!(report.series.len(), traj.steps() - 1);
    }

    #[test]
    fn trajectory_from_fixed_point_is_constant() {
        let (agents, market, _) = fig1();
        let x = equal_price_state(&agents, &market);
        let c = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaIndependent);
        let traj = run_trajectory(&x, &agents, &market, &c).unwrap();
        assert!(traj.converged());
        assert!(traj.steps() <= 2);
        for row in &traj.periods {
            assert!(row.lyapunov < 1e-20);
        }
        // Too short for a Lyapunov series.
        assert!(lyapunov_series(&traj).is_err());
    }

    #[test]
    fn orbit_stays_on_the_affine_hull() {
        let (agents, market, x0) = fig1();
        let c = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaDependent);
        let traj = run_trajectory(&x0, &agents, &market, &c).unwrap();
        for row in &traj.periods {
            let sum_a: f64 = row.state.q_a().weights().iter().sum();
            let sum_b: f64 = row.state.q_b().weights().iter().sum();
            assert!((sum_a - 1.0).abs() < 1e-10, "t {}: sum_a {sum_a}", row.t);
            assert!((sum_b - 1.0).abs() < 1e-10, "t {}: sum_b {sum_b}", row.t);
        }
    }

    #[test]
    fn exterior_contraction_rate_is_exact() {
        let penalty = PenaltyConfig::new(
            0.1,
            DeviationWeights::new(0.5).unwrap(),
            PenaltyVariant::LambdaIndependent,
        )
        .unwrap();
        let c = DynamicsConfig::new(0.2, penalty).unwrap();
        // Off the affine hull: blocks sum to 1.3 and 0.9.
        let mut x = vec![0.55, 0.75, 0.4, 0.5];
        let distance = |v: &[f64]| {
            let p = project_pair(v).unwrap();
            norm_diff(v, &p)
        };
        let d0 = distance(&x);
        assert!(d0 > 0.1);
        for t in 1..=10 {
            x = generic_pds_step(&x, |_, _| Ok(vec![0.0; 4]), &c).unwrap();
            let want = d0 * (1.0 - 0.2f64).powi(t);
            let got = distance(&x);
            assert!(
                (got - want).abs() <= 1e-9 * want,
                "t {t}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn generic_step_converges_to_constant_target() {
        let penalty = PenaltyConfig::new(
            0.1,
            DeviationWeights::new(0.5).unwrap(),
            PenaltyVariant::LambdaIndependent,
        )
        .unwrap();
        let c = DynamicsConfig::new(0.3, penalty).unwrap();
        let target = [0.3, 0.7, 0.6, 0.4];
        let mut x = vec![0.9, 0.1, 0.2, 0.8];
        for _ in 0..2000 {
            x = generic_pds_step(
                &x,
                |y, _| Ok(y.iter().zip(&target).map(|(yi, ci)| yi - ci).collect()),
                &c,
            )
            .unwrap();
            if max_norm_diff(&x, &target) < 1e-9 {
                break;
            }
        }
        assert!(max_norm_diff(&x, &target) < 1e-9, "ended at {x:?}");
    }

    #[test]
    fn identity_gradient_leaves_states_in_place() {
        let penalty = PenaltyConfig::new(
            0.1,
            DeviationWeights::new(0.5).unwrap(),
            PenaltyVariant::LambdaIndependent,
        )
        .unwrap();
        let c = DynamicsConfig::new(0.3, penalty).unwrap();
        let x = [0.3, 0.7, 0.6, 0.4];
        let y = generic_pds_step(&x, |_, _| Ok(vec![0.0; 4]), &c).unwrap();
        assert!(max_norm_diff(&x, &y) < 1e-15);
    }

    #[test]
    fn step_solution_ignores_warm_start() {
        let (agents, market, x0) = fig1();
        let c = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaDependent);
        let baseline = implicit_step(&x0, &agents, &market, &c).unwrap().to_flat();
        let mut seed = 0x5eed_u64;
        let mut next_u = move || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            0.05 + 0.9 * ((seed >> 11) as f64 / (1u64 << 53) as f64)
        };
        for _ in 0..5 {
            let a = next_u();
            let b = next_u();
            let warm = BeliefState::new(
                Belief::new(vec![a, 1.0 - a]).unwrap(),
                Belief::new(vec![b, 1.0 - b]).unwrap(),
            )
            .unwrap();
            let y = implicit_step_warm(&x0, &warm, &agents, &market, &c)
                .unwrap()
                .to_flat();
            assert!(
                max_norm_diff(&y, &baseline) < 1e-9,
                "warm start changed the step solution"
            );
        }
    }

    #[test]
    fn explicit_scheme_single_evaluation() {
        let (agents, market, x0) = fig1();
        let c = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaDependent).with_explicit_scheme(true);
        let traj = run_trajectory(&x0, &agents, &market, &c).unwrap();
        assert!(traj.converged());
        for row in &traj.periods[..traj.periods.len() - 1] {
            assert_eq!(row.solver_iters, 1);
        }
        let terminal = traj.terminal();
        assert!((terminal.price_a - terminal.price_b).abs() < 1e-6);
    }

    #[test]
    fn fixed_anchor_terminal_is_stationary_for_pinned_objective() {
        let (agents, market, x0) = fig1();
        let c = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaIndependent).with_fixed_anchor(true);
        let traj = run_trajectory(&x0, &agents, &market, &c).unwrap();
        assert!(traj.converged());
        let terminal = &traj.terminal().state;
        let grad = grad_next_penalized(terminal, &x0, &agents, &market, c.penalty()).unwrap();
        let tangential = tangent_pair(&grad).unwrap();
        assert!(norm(&tangential) < 1e-6, "pinned-anchor stationarity");
    }

    #[test]
    fn clamped_projection_keeps_orbit_nonnegative() {
        let (agents, market, x0) = fig1();
        let affine = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaDependent);
        let clamped = affine.clone().with_clamped_projection(true);
        let t_affine = run_trajectory(&x0, &agents, &market, &affine).unwrap();
        let t_clamped = run_trajectory(&x0, &agents, &market, &clamped).unwrap();
        assert!(t_clamped.converged());
        for row in &t_clamped.periods {
            assert!(row.state.min_component() >= 0.0);
            assert!(!row.boundary_violation);
        }
        // Same interior fixed point either way.
        let d = max_norm_diff(
            &t_affine.terminal().state.to_flat(),
            &t_clamped.terminal().state.to_flat(),
        );
        assert!(d < 1e-6, "terminal states differ by {d}");
    }

    #[test]
    fn zero_period_cap_records_initial_state_only() {
        let (agents, market, x0) = fig1();
        let c = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaDependent).with_max_periods(0);
        let traj = run_trajectory(&x0, &agents, &market, &c).unwrap();
        assert_eq!(traj.periods.len(), 1);
        assert_eq!(traj.status, TerminalStatus::MaxPeriods);
        assert_eq!(traj.periods[0].t, 0);
        assert_eq!(traj.periods[0].solver_iters, 0);
    }

    #[test]
    fn starved_step_solver_surfaces_as_status_and_error() {
        let (agents, market, x0) = fig1();
        let c = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaDependent)
            .with_step_solver_cap(3)
            .unwrap();
        match implicit_step(&x0, &agents, &market, &c) {
            Err(Error::StepSolver { iterations, .. }) => assert_eq!(iterations, 3),
            other => panic!("expected a step-solver error, got {other:?}"),
        }
        let traj = run_trajectory(&x0, &agents, &market, &c).unwrap();
        match traj.status {
            TerminalStatus::StepSolverFailure {
                period, iterations, ..
            } => {
                assert_eq!(period, 0);
                assert_eq!(iterations, 3);
            }
            other => panic!("expected a failure status, got {other:?}"),
        }
        assert_eq!(traj.periods.len(), 1, "only the initial row is recorded");
    }

    #[test]
    fn certificate_flags_boundary_states() {
        let (agents, market, _) = fig1();
        let c = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaIndependent);
        let boundary = BeliefState::new(
            Belief::new(vec![0.0, 1.0]).unwrap(),
            Belief::new(vec![0.5, 0.5]).unwrap(),
        )
        .unwrap();
        let cert = certify_fixed_point(&boundary, &agents, &market, &c, 1e-6).unwrap();
        assert!(!cert.interior);
        assert!(!cert.pass);
        assert_eq!(cert.interior_margin, 0.0);
    }

    #[test]
    fn certificate_passes_at_equal_price_state() {
        let (agents, market, _) = fig1();
        let x = equal_price_state(&agents, &market);
        let c = cfg(0.05, 0.1, 0.4, PenaltyVariant::LambdaIndependent);
        let cert = certify_fixed_point(&x, &agents, &market, &c, 1e-6).unwrap();
        assert!(cert.interior);
        assert!(cert.price_gap < 1e-9);
        assert!(cert.tangential_grad_norm < 1e-6);
        assert!(cert.pass);
    }
}
