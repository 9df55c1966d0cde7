//! Reservation prices, their gradients, price bounds, and the
//! agreement-feasibility test.
//!
//! The seller's (A) and buyer's (B) reservation prices are the unique
//! solutions of the indifference equation
//!
//! ```text
//! U(w) - r = E_Q[ U(w + l P - l F) ],    l = +1 seller, -1 buyer.
//! ```
//!
//! For exponential utilities the closed form applies; every other model goes
//! through a bracketed root-finder whose bracket comes from the price-bounds
//! lemma. Derivatives are implemented from the implicit-function formulas
//! evaluated at the solved price, never by differentiating an off-simplex
//! extension of the closed form.

use crate::error::{Error, Result};
use crate::simplex::Belief;
use crate::utility::{solve_increasing, UtilityKind, UtilityModel};

/// Residual bound every returned price satisfies in the defining equation.
pub const PRICE_RESIDUAL_TOL: f64 = 1e-10;

/// The claim: payoff `F[k]` per state of the world.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSpec {
    payoffs: Vec<f64>,
}

impl MarketSpec {
    /// Requires `K >= 2` finite payoffs with `max F > min F` (the claim must
    /// be non-constant for the pricing lemmas to apply).
    pub fn new(payoffs: Vec<f64>) -> Result<Self> {
        if payoffs.len() < 2 {
            return Err(Error::invalid(
                "payoffs",
                format!("need at least 2 states, got {}", payoffs.len()),
            ));
        }
        if payoffs.iter().any(|f| !f.is_finite()) {
            return Err(Error::invalid("payoffs", "non-finite payoff"));
        }
        let spec = MarketSpec { payoffs };
        if spec.f_max() <= spec.f_min() {
            return Err(Error::invalid(
                "payoffs",
                "claim is constant: max F must exceed min F",
            ));
        }
        Ok(spec)
    }

    /// Number of states `K`.
    pub fn k(&self) -> usize {
        self.payoffs.len()
    }

    /// The payoff table `F`.
    pub fn payoffs(&self) -> &[f64] {
        &self.payoffs
    }

    /// Largest payoff.
    pub fn f_max(&self) -> f64 {
        self.payoffs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest payoff.
    pub fn f_min(&self) -> f64 {
        self.payoffs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Which side of the trade an agent takes; fixes the exposure sign `l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Receives the price, delivers the claim: `l = +1`.
    Seller,
    /// Pays the price, receives the claim: `l = -1`.
    Buyer,
}

impl Side {
    /// The exposure sign `l` in the indifference equation.
    pub fn exposure(&self) -> f64 {
        match self {
            Side::Seller => 1.0,
            Side::Buyer => -1.0,
        }
    }
}

/// Everything defining one agent's reservation price: side, wealth `w`,
/// acceptable risk level `r >= 0`, and utility model.
#[derive(Debug, Clone)]
pub struct AgentSpec {
    side: Side,
    wealth: f64,
    risk_level: f64,
    utility: UtilityKind,
}

impl AgentSpec {
    /// Requires finite wealth and `risk_level >= 0`. Whether the risk level
    /// keeps `U(w) - r` inside the expected utility's range is data-dependent
    /// and checked at price time.
    pub fn new(side: Side, wealth: f64, risk_level: f64, utility: UtilityKind) -> Result<Self> {
        if !wealth.is_finite() {
            return Err(Error::invalid("wealth", format!("must be finite, got {wealth}")));
        }
        if !(risk_level.is_finite() && risk_level >= 0.0) {
            return Err(Error::invalid(
                "risk_level",
                format!("must be finite and >= 0, got {risk_level}"),
            ));
        }
        Ok(AgentSpec {
            side,
            wealth,
            risk_level,
            utility,
        })
    }

    /// Seller-side convenience constructor.
    pub fn seller(wealth: f64, risk_level: f64, utility: UtilityKind) -> Result<Self> {
        AgentSpec::new(Side::Seller, wealth, risk_level, utility)
    }

    /// Buyer-side convenience constructor.
    pub fn buyer(wealth: f64, risk_level: f64, utility: UtilityKind) -> Result<Self> {
        AgentSpec::new(Side::Buyer, wealth, risk_level, utility)
    }

    /// Which side of the trade this agent takes.
    pub fn side(&self) -> Side {
        self.side
    }

    /// Initial wealth `w`.
    pub fn wealth(&self) -> f64 {
        self.wealth
    }

    /// Acceptable risk level `r`.
    pub fn risk_level(&self) -> f64 {
        self.risk_level
    }

    /// The agent's utility.
    pub fn utility(&self) -> &UtilityKind {
        &self.utility
    }

    /// A copy of this agent with a different risk level (sweeps).
    pub fn with_risk_level(&self, risk_level: f64) -> Result<Self> {
        AgentSpec::new(self.side, self.wealth, risk_level, self.utility.clone())
    }
}

/// The seller/buyer pair driving one bargaining experiment.
#[derive(Debug, Clone)]
pub struct AgentPair {
    seller: AgentSpec,
    buyer: AgentSpec,
}

impl AgentPair {
    /// Requires the first agent to be the seller and the second the buyer.
    pub fn new(seller: AgentSpec, buyer: AgentSpec) -> Result<Self> {
        if seller.side() != Side::Seller {
            return Err(Error::invalid("seller", "first agent must have side Seller"));
        }
        if buyer.side() != Side::Buyer {
            return Err(Error::invalid("buyer", "second agent must have side Buyer"));
        }
        Ok(AgentPair { seller, buyer })
    }

    /// The seller (agent A).
    pub fn seller(&self) -> &AgentSpec {
        &self.seller
    }

    /// The buyer (agent B).
    pub fn buyer(&self) -> &AgentSpec {
        &self.buyer
    }
}

fn check_belief_dim(market: &MarketSpec, q: &Belief) -> Result<()> {
    if market.k() != q.k() {
        return Err(Error::DimensionMismatch(format!(
            "market has K={}, belief has K={}",
            market.k(),
            q.k()
        )));
    }
    Ok(())
}

/// Expected post-trade utility `E_Q[U(w + l P - l F)]` with signed weights.
fn expected_post_trade_utility(
    model: &dyn UtilityModel,
    agent: &AgentSpec,
    market: &MarketSpec,
    q: &Belief,
    price: f64,
) -> f64 {
    let l = agent.side().exposure();
    q.weights()
        .iter()
        .zip(market.payoffs())
        .map(|(&w_k, &f_k)| w_k * model.value(agent.wealth() + l * price - l * f_k))
        .sum()
}

/// Weighted marginal-utility sum `E_Q[U'(w + l P - l F)]`; must stay
/// strictly positive for the defining equation to remain monotone in `P`.
fn weighted_derivative_sum(
    model: &dyn UtilityModel,
    agent: &AgentSpec,
    market: &MarketSpec,
    q: &Belief,
    price: f64,
) -> Result<f64> {
    let l = agent.side().exposure();
    let total: f64 = q
        .weights()
        .iter()
        .zip(market.payoffs())
        .map(|(&w_k, &f_k)| w_k * model.derivative(agent.wealth() + l * price - l * f_k))
        .sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Monotonicity(format!(
            "weighted marginal-utility sum is {total} at price {price}; the indifference \
             equation is no longer strictly monotone for these signed weights"
        )));
    }
    Ok(total)
}

/// The reservation price: exponential agents use the closed form, all other
/// models the bracketed root-finder. Both routes satisfy the defining
/// equation with residual below [`PRICE_RESIDUAL_TOL`].
///
/// `q` may be an affine-hull point with slightly negative components (the
/// dynamics' projection produces them); the weights are then used as signed
/// weights and monotonicity of the defining equation is checked.
pub fn reservation_price(agent: &AgentSpec, market: &MarketSpec, q: &Belief) -> Result<f64> {
    check_belief_dim(market, q)?;
    match agent.utility() {
        UtilityKind::Exponential(u) => {
            let a = u.risk_aversion();
            let l = agent.side().exposure();
            let moment: f64 = q
                .weights()
                .iter()
                .zip(market.payoffs())
                .map(|(&w_k, &f_k)| w_k * (l * a * f_k).exp())
                .sum();
            if !(moment.is_finite() && moment > 0.0) {
                return Err(Error::Monotonicity(format!(
                    "exponential moment E_Q[exp(l a F)] = {moment} must be positive; \
                     the signed weights left the price's domain"
                )));
            }
            let denom = 1.0 + a * agent.risk_level() * (a * agent.wealth()).exp();
            Ok(l / a * (moment / denom).ln())
        }
        UtilityKind::Custom(_) => reservation_price_root(agent, market, q),
    }
}

/// The general root-finding route, available for every utility model.
///
/// Kept public alongside [`reservation_price`] so exponential agents can be
/// priced through both routes and cross-checked; the two agree to 1e-9.
pub fn reservation_price_root(
    agent: &AgentSpec,
    market: &MarketSpec,
    q: &Belief,
) -> Result<f64> {
    check_belief_dim(market, q)?;
    let model = agent.utility().model();
    let (p_lo, p_hi) = price_bounds(agent, market)?;
    let l = agent.side().exposure();
    // Solve in s = l P, where the expected utility is increasing; widen the
    // tight lemma bracket a little against roundoff at vertex beliefs.
    let margin = 1e-6 * (1.0 + p_hi.abs().max(p_lo.abs()));
    let (s_lo, s_hi) = match agent.side() {
        Side::Seller => (p_lo - margin, p_hi + margin),
        Side::Buyer => (-p_hi - margin, -p_lo + margin),
    };
    let target = model.value(agent.wealth()) - agent.risk_level();
    let price_of = |s: f64| l * s;
    let s_star = solve_increasing(
        |s| expected_post_trade_utility(model, agent, market, q, price_of(s)),
        |s| {
            q.weights()
                .iter()
                .zip(market.payoffs())
                .map(|(&w_k, &f_k)| {
                    w_k * model.derivative(agent.wealth() + s - l * f_k)
                })
                .sum()
        },
        target,
        s_lo,
        s_hi,
        "reservation price",
    )?;
    let price = price_of(s_star);
    weighted_derivative_sum(model, agent, market, q, price)?;
    Ok(price)
}

/// Belief gradient of the reservation price, from the implicit-function
/// lemma evaluated at the solved price:
///
/// ```text
/// dP/dQ^k = -l U(w + l P - l F[k]) / E_Q[U'(w + l P - l F)].
/// ```
pub fn price_gradient_beliefs(
    agent: &AgentSpec,
    market: &MarketSpec,
    q: &Belief,
) -> Result<Vec<f64>> {
    let price = reservation_price(agent, market, q)?;
    let model = agent.utility().model();
    let denom = weighted_derivative_sum(model, agent, market, q, price)?;
    let l = agent.side().exposure();
    Ok(market
        .payoffs()
        .iter()
        .map(|&f_k| -l * model.value(agent.wealth() + l * price - l * f_k) / denom)
        .collect())
}

/// The exponential-family gradient in explicit form,
/// `l/a (exp(l a F[k]) / E_Q[exp(l a F)] - exp(a w) / (1 + a r exp(a w)))`.
///
/// Algebraically identical to [`price_gradient_beliefs`] for exponential
/// agents; exposed separately so the identity stays checkable. Returns
/// `None` for non-exponential agents.
pub fn price_gradient_closed_form(
    agent: &AgentSpec,
    market: &MarketSpec,
    q: &Belief,
) -> Result<Option<Vec<f64>>> {
    check_belief_dim(market, q)?;
    let Some(u) = agent.utility().exponential() else {
        return Ok(None);
    };
    let a = u.risk_aversion();
    let l = agent.side().exposure();
    let moment: f64 = q
        .weights()
        .iter()
        .zip(market.payoffs())
        .map(|(&w_k, &f_k)| w_k * (l * a * f_k).exp())
        .sum();
    if !(moment.is_finite() && moment > 0.0) {
        return Err(Error::Monotonicity(format!(
            "exponential moment E_Q[exp(l a F)] = {moment} must be positive"
        )));
    }
    let wealth_term = (a * agent.wealth()).exp()
        / (1.0 + a * agent.risk_level() * (a * agent.wealth()).exp());
    Ok(Some(
        market
            .payoffs()
            .iter()
            .map(|&f_k| l / a * ((l * a * f_k).exp() / moment - wealth_term))
            .collect(),
    ))
}

/// Sensitivity of the reservation price to the risk level,
/// `dP/dr = -l / E_Q[U'(w + l P - l F)]`: strictly negative for the seller,
/// strictly positive for the buyer.
pub fn price_sensitivity_risk(agent: &AgentSpec, market: &MarketSpec, q: &Belief) -> Result<f64> {
    let price = reservation_price(agent, market, q)?;
    let model = agent.utility().model();
    let denom = weighted_derivative_sum(model, agent, market, q, price)?;
    Ok(-agent.side().exposure() / denom)
}

/// Price bounds from the bounds lemma: the reservation price lies in an
/// interval of width exactly `max F - min F` for every simplex belief.
///
/// Seller: `[U^-1(U(w) - r) - w + min F, ... + max F]`;
/// buyer: `[w - U^-1(U(w) - r) + min F, ... + max F]`.
pub fn price_bounds(agent: &AgentSpec, market: &MarketSpec) -> Result<(f64, f64)> {
    let model = agent.utility().model();
    let certain = model.inverse(model.value(agent.wealth()) - agent.risk_level())?;
    let base = match agent.side() {
        Side::Seller => certain - agent.wealth(),
        Side::Buyer => agent.wealth() - certain,
    };
    Ok((base + market.f_min(), base + market.f_max()))
}

/// The agreement-feasibility condition: interior beliefs with equal prices
/// exist iff
///
/// ```text
/// max F - min F > (w_A - U_A^-1(U_A(w_A) - r_A)) + (w_B - U_B^-1(U_B(w_B) - r_B))
/// ```
///
/// strictly. [`feasibility_sides`] exposes the two sides of the inequality
/// for reporting.
pub fn agreement_feasible(
    seller: &AgentSpec,
    buyer: &AgentSpec,
    market: &MarketSpec,
) -> Result<bool> {
    let (spread, slack) = feasibility_sides(seller, buyer, market)?;
    Ok(spread > slack)
}

/// The two sides of the feasibility inequality: `(max F - min F, risk slack)`.
/// Agreement is feasible iff the first strictly exceeds the second.
pub fn feasibility_sides(
    seller: &AgentSpec,
    buyer: &AgentSpec,
    market: &MarketSpec,
) -> Result<(f64, f64)> {
    let gap = |agent: &AgentSpec| -> Result<f64> {
        let model = agent.utility().model();
        let certain = model.inverse(model.value(agent.wealth()) - agent.risk_level())?;
        Ok(agent.wealth() - certain)
    };
    let slack = gap(seller)? + gap(buyer)?;
    Ok((market.f_max() - market.f_min(), slack))
}

/// Residual of the defining equation at a claimed price; diagnostic used by
/// the test suites.
pub fn defining_equation_residual(
    agent: &AgentSpec,
    market: &MarketSpec,
    q: &Belief,
    price: f64,
) -> f64 {
    let model = agent.utility().model();
    let target = model.value(agent.wealth()) - agent.risk_level();
    expected_post_trade_utility(model, agent, market, q, price) - target
}
