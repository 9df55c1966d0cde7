//! The penalized deviation functionals driving the bargaining dynamics.
//!
//! Two variants share the deviation part
//! `lambda psi_A(Q_A, Q_A^0) + (1 - lambda) psi_B(Q_B, Q_B^0)`:
//!
//! * lambda-independent: adds `(1/eps) Phi(P_B(next) - P_A(next))`;
//! * lambda-dependent: adds `(1/eps) Phi(P_B(next) - T) + (1/eps) Phi(T - P_A(next))`
//!   with the target `T = lambda P_A(anchor) + (1 - lambda) P_B(anchor)`
//!   evaluated at the previous-period state.
//!
//! The anchor is an explicit argument: the dynamics pass the previous
//! iterate (the drifting-anchor reading of the iteration), and a flag can
//! pin it to the time-zero beliefs for comparison runs.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::pricing::{price_gradient_beliefs, reservation_price, AgentPair, MarketSpec};
use crate::simplex::{BeliefState, Deviation, DeviationWeights, QuadraticDeviation};

/// Penalty function `Phi`: strictly convex, continuously differentiable,
/// global minimum at 0.
pub trait PenaltyFunction: Send + Sync {
    /// Penalty at `x`.
    fn value(&self, x: f64) -> f64;
    /// Derivative at `x`; has the sign of `x` for a minimum at 0.
    fn derivative(&self, x: f64) -> f64;
}

/// The default penalty `Phi(x) = x^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticPenalty;

impl PenaltyFunction for QuadraticPenalty {
    fn value(&self, x: f64) -> f64 {
        x * x
    }

    fn derivative(&self, x: f64) -> f64 {
        2.0 * x
    }
}

/// Which penalized functional the dynamics minimize per period.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyVariant {
    /// `L_P`: one penalty on the price gap at the next state.
    LambdaIndependent,
    /// `L_P^lambda`: two penalties against the previous-period target price.
    LambdaDependent,
}

/// Penalty scale, bargaining power, variant switch, and the Phi/psi models.
#[derive(Clone)]
pub struct PenaltyConfig {
    epsilon: f64,
    lambda: DeviationWeights,
    variant: PenaltyVariant,
    phi: Arc<dyn PenaltyFunction>,
    psi_a: Arc<dyn Deviation>,
    psi_b: Arc<dyn Deviation>,
}

impl std::fmt::Debug for PenaltyConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PenaltyConfig")
            .field("epsilon", &self.epsilon)
            .field("lambda", &self.lambda.lambda())
            .field("variant", &self.variant)
            .finish_non_exhaustive()
    }
}

impl PenaltyConfig {
    /// Quadratic `Phi` and `psi` defaults; requires `epsilon > 0`.
    pub fn new(epsilon: f64, lambda: DeviationWeights, variant: PenaltyVariant) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::invalid(
                "epsilon",
                format!("penalty scale must be finite and > 0, got {epsilon}"),
            ));
        }
        Ok(PenaltyConfig {
            epsilon,
            lambda,
            variant,
            phi: Arc::new(QuadraticPenalty),
            psi_a: Arc::new(QuadraticDeviation),
            psi_b: Arc::new(QuadraticDeviation),
        })
    }

    /// Replaces the penalty function. A non-globally-finite `Phi` (for
    /// example logarithmic) must come wrapped in its own domain guard.
    pub fn with_phi(mut self, phi: Arc<dyn PenaltyFunction>) -> Self {
        self.phi = phi;
        self
    }

    /// Replaces the per-agent deviation functions.
    pub fn with_deviations(
        mut self,
        psi_a: Arc<dyn Deviation>,
        psi_b: Arc<dyn Deviation>,
    ) -> Self {
        self.psi_a = psi_a;
        self.psi_b = psi_b;
        self
    }

    /// Returns a copy with a different variant.
    pub fn with_variant(mut self, variant: PenaltyVariant) -> Self {
        self.variant = variant;
        self
    }

    /// Returns a copy with a different bargaining power.
    pub fn with_lambda(mut self, lambda: DeviationWeights) -> Self {
        self.lambda = lambda;
        self
    }

    /// Returns a copy with a different penalty scale.
    pub fn with_epsilon(self, epsilon: f64) -> Result<Self> {
        let mut cfg = self;
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::invalid(
                "epsilon",
                format!("penalty scale must be finite and > 0, got {epsilon}"),
            ));
        }
        cfg.epsilon = epsilon;
        Ok(cfg)
    }

    /// Penalty scale `epsilon`.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Bargaining power weights.
    pub fn lambda(&self) -> DeviationWeights {
        self.lambda
    }

    /// Which functional variant is active.
    pub fn variant(&self) -> PenaltyVariant {
        self.variant
    }

    /// The penalty function.
    pub fn phi(&self) -> &dyn PenaltyFunction {
        self.phi.as_ref()
    }

    /// The seller's deviation function.
    pub fn psi_a(&self) -> &dyn Deviation {
        self.psi_a.as_ref()
    }

    /// The buyer's deviation function.
    pub fn psi_b(&self) -> &dyn Deviation {
        self.psi_b.as_ref()
    }
}

/// Both agents' prices at a state.
pub(crate) fn prices_at(
    state: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
) -> Result<(f64, f64)> {
    let p_a = reservation_price(agents.seller(), market, state.q_a())?;
    let p_b = reservation_price(agents.buyer(), market, state.q_b())?;
    Ok((p_a, p_b))
}

/// The target price `T = lambda P_A(anchor) + (1 - lambda) P_B(anchor)` of
/// the lambda-dependent variant.
pub fn target_price(
    anchor: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    lambda: DeviationWeights,
) -> Result<f64> {
    let (p_a, p_b) = prices_at(anchor, agents, market)?;
    Ok(lambda.lambda() * p_a + lambda.complement() * p_b)
}

fn deviation_part(next: &BeliefState, anchor: &BeliefState, cfg: &PenaltyConfig) -> Result<f64> {
    if next.k() != anchor.k() {
        return Err(Error::DimensionMismatch(format!(
            "next has K={}, anchor has K={}",
            next.k(),
            anchor.k()
        )));
    }
    let psi_a = cfg.psi_a().value(next.q_a().weights(), anchor.q_a().weights());
    let psi_b = cfg.psi_b().value(next.q_b().weights(), anchor.q_b().weights());
    Ok(cfg.lambda().lambda() * psi_a + cfg.lambda().complement() * psi_b)
}

/// Evaluates the active penalized functional at `next` with deviations
/// measured from `anchor`.
pub fn eval_penalized(
    next: &BeliefState,
    anchor: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    cfg: &PenaltyConfig,
) -> Result<f64> {
    let deviation = deviation_part(next, anchor, cfg)?;
    let (p_a_next, p_b_next) = prices_at(next, agents, market)?;
    let scale = 1.0 / cfg.epsilon();
    let penalty = match cfg.variant() {
        PenaltyVariant::LambdaIndependent => scale * cfg.phi().value(p_b_next - p_a_next),
        PenaltyVariant::LambdaDependent => {
            let target = target_price(anchor, agents, market, cfg.lambda())?;
            scale * cfg.phi().value(p_b_next - target)
                + scale * cfg.phi().value(target - p_a_next)
        }
    };
    Ok(deviation + penalty)
}

/// Gradient of [`eval_penalized`] in `next`, flat layout
/// `(qa_1..qa_K, qb_1..qb_K)`.
///
/// Seller block: `lambda grad psi_A - (1/eps) Phi'(..) grad P_A`; buyer
/// block: `(1 - lambda) grad psi_B + (1/eps) Phi'(..) grad P_B`; the `Phi'`
/// argument is the price gap (lambda-independent) or the two target
/// differences (lambda-dependent). Price gradients come from the
/// implicit-function lemma evaluated at `next`.
pub fn grad_next_penalized(
    next: &BeliefState,
    anchor: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    cfg: &PenaltyConfig,
) -> Result<Vec<f64>> {
    if next.k() != anchor.k() {
        return Err(Error::DimensionMismatch(format!(
            "next has K={}, anchor has K={}",
            next.k(),
            anchor.k()
        )));
    }
    let k = next.k();
    let lambda = cfg.lambda().lambda();
    let scale = 1.0 / cfg.epsilon();

    let (p_a_next, p_b_next) = prices_at(next, agents, market)?;
    let grad_p_a = price_gradient_beliefs(agents.seller(), market, next.q_a())?;
    let grad_p_b = price_gradient_beliefs(agents.buyer(), market, next.q_b())?;

    // Phi' weights on -grad P_A (seller block) and +grad P_B (buyer block).
    let (phi_a, phi_b) = match cfg.variant() {
        PenaltyVariant::LambdaIndependent => {
            let d = cfg.phi().derivative(p_b_next - p_a_next);
            (d, d)
        }
        PenaltyVariant::LambdaDependent => {
            let target = target_price(anchor, agents, market, cfg.lambda())?;
            (
                cfg.phi().derivative(target - p_a_next),
                cfg.phi().derivative(p_b_next - target),
            )
        }
    };

    let psi_a_grad = cfg
        .psi_a()
        .gradient(next.q_a().weights(), anchor.q_a().weights());
    let psi_b_grad = cfg
        .psi_b()
        .gradient(next.q_b().weights(), anchor.q_b().weights());

    let mut g = vec![0.0; 2 * k];
    for i in 0..k {
        g[i] = lambda * psi_a_grad[i] - scale * phi_a * grad_p_a[i];
        g[k + i] = (1.0 - lambda) * psi_b_grad[i] + scale * phi_b * grad_p_b[i];
    }
    Ok(g)
}

/// Evaluates both functionals at `(next, anchor)` with shared psi anchors:
/// returns `(lp, lp_lambda)`, the lambda-independent and lambda-dependent
/// values. The config's own variant field is ignored here.
///
/// For quadratic `Phi` the ordering between the two is governed by the sign
/// of `(P_B(next) - T)(T - P_A(next))`: `lp <= lp_lambda` exactly when the
/// anchor target `T` does not lie strictly between the next-period prices,
/// and `lp <= 2 lp_lambda` always.
pub fn dominance_check(
    next: &BeliefState,
    anchor: &BeliefState,
    agents: &AgentPair,
    market: &MarketSpec,
    cfg: &PenaltyConfig,
) -> Result<(f64, f64)> {
    let lp = eval_penalized(
        next,
        anchor,
        agents,
        market,
        &cfg.clone().with_variant(PenaltyVariant::LambdaIndependent),
    )?;
    let lp_lambda = eval_penalized(
        next,
        anchor,
        agents,
        market,
        &cfg.clone().with_variant(PenaltyVariant::LambdaDependent),
    )?;
    Ok((lp, lp_lambda))
}
