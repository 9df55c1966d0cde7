//! Experiment configuration: a TOML schema mirroring every constructor
//! invariant at parse time.
//!
//! A config names the market, the two agents, the belief anchors, and the
//! penalty/dynamics parameters; optional `[sweep]` and `[output]` sections
//! drive the sweep command and file emission. Rejected configs name the
//! offending section and field. The resolved config can be echoed back as
//! TOML and re-parses to an equivalent experiment.
//!
//! ```toml
//! [market]
//! payoffs = [1.0, 2.0]
//!
//! [seller]
//! wealth = 0.0
//! risk_level = 0.4
//! utility = { family = "exponential", risk_aversion = 2.0 }
//!
//! [buyer]
//! wealth = 0.0
//! risk_level = 0.3
//! utility = { family = "exponential", risk_aversion = 1.0 }
//!
//! [anchors]
//! seller = [0.25, 0.75]
//! buyer = [0.75, 0.25]
//!
//! [penalty]
//! epsilon = 0.1
//! lambda = 0.4
//! variant = "lambda-dependent"
//! phi = "quadratic"
//!
//! [dynamics]
//! alpha = 0.05
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsConfig;
use crate::error::{Error, Result};
use crate::functionals::{PenaltyConfig, PenaltyVariant, QuadraticPenalty};
use crate::pricing::{AgentPair, AgentSpec, MarketSpec};
use crate::simplex::{Belief, BeliefState, DeviationWeights};
use crate::solver::{SweepProvenance, DEFAULT_EPSILON_SCHEDULE};
use crate::utility::{ExponentialUtility, UtilityKind};

/// Prefixes a domain-constructor failure with the config path that caused it.
fn at<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("[{path}] {e}")))
}

/// `[market]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    /// Claim payoff per state; at least two states, not all equal.
    pub payoffs: Vec<f64>,
}

/// Utility choice for one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySection {
    /// Utility family; `"exponential"` is the one shipped.
    pub family: String,
    /// Family parameter (absolute risk aversion).
    pub risk_aversion: f64,
}

/// `[seller]` / `[buyer]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    /// Initial wealth.
    #[serde(default)]
    pub wealth: f64,
    /// Risk level `r >= 0`.
    pub risk_level: f64,
    /// Utility family and parameter.
    pub utility: UtilitySection,
}

/// `[anchors]` section: initial (and anchor) beliefs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorsSection {
    /// Seller's anchor belief.
    pub seller: Vec<f64>,
    /// Buyer's anchor belief.
    pub buyer: Vec<f64>,
}

/// `[penalty]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySection {
    /// Penalty scale `epsilon > 0`.
    pub epsilon: f64,
    /// Bargaining power in `[0, 1]`.
    pub lambda: f64,
    /// `"lambda-dependent"` or `"lambda-independent"`.
    pub variant: String,
    /// Penalty shape; `"quadratic"` is the one shipped.
    pub phi: String,
}

impl Default for PenaltySection {
    fn default() -> Self {
        PenaltySection {
            epsilon: 0.1,
            lambda: 0.5,
            variant: "lambda-dependent".into(),
            phi: "quadratic".into(),
        }
    }
}

/// `[dynamics]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    /// Relaxation rate, strictly inside `(0, 1)`.
    pub alpha: f64,
    /// Fixed-point residual tolerance of the per-period solve.
    pub step_solver_tol: f64,
    /// Map evaluations allowed per period.
    pub step_solver_cap: usize,
    /// Displacement below which the orbit counts as converged.
    pub convergence_tol: f64,
    /// Period cap.
    pub max_periods: usize,
    /// Gradient prefactor.
    pub beta_scale: f64,
    /// Pin the deviation anchor to the initial state.
    pub fixed_anchor: bool,
    /// Use the clamped (true simplex) projection.
    pub clamped_projection: bool,
    /// Evaluate the gradient at the current state instead of the next.
    pub explicit_scheme: bool,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        DynamicsSection {
            alpha: 0.05,
            step_solver_tol: 1e-12,
            step_solver_cap: 500,
            convergence_tol: 1e-10,
            max_periods: 100_000,
            beta_scale: 1.0,
            fixed_anchor: false,
            clamped_projection: false,
            explicit_scheme: false,
        }
    }
}

/// `[sweep]` section; present only for the sweep command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Bargaining-power axis; non-empty selects a lambda sweep.
    pub lambda_grid: Vec<f64>,
    /// Seller risk axis; non-empty (with `r_b_grid`) selects a risk sweep.
    pub r_a_grid: Vec<f64>,
    /// Buyer risk axis.
    pub r_b_grid: Vec<f64>,
    /// `"dynamics"` (asymptotic prices) or `"continuation"` (primal prices).
    pub provenance: String,
    /// Penalty continuation schedule for continuation provenance.
    pub epsilon_schedule: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            lambda_grid: Vec::new(),
            r_a_grid: Vec::new(),
            r_b_grid: Vec::new(),
            provenance: "dynamics".into(),
            epsilon_schedule: DEFAULT_EPSILON_SCHEDULE.to_vec(),
        }
    }
}

/// `[output]` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Directory for CSV and plot-script files.
    pub dir: String,
    /// Seed for randomized property suites.
    pub seed: u64,
    /// Sweep worker threads; 0 means one per processor.
    pub workers: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            seed: 0,
            workers: 0,
        }
    }
}

/// A fully parsed experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Claim payoffs.
    pub market: MarketSection,
    /// Selling agent.
    pub seller: AgentSection,
    /// Buying agent.
    pub buyer: AgentSection,
    /// Anchor beliefs (also the initial state).
    pub anchors: AnchorsSection,
    /// Penalty functional parameters.
    #[serde(default)]
    pub penalty: PenaltySection,
    /// Dynamics parameters.
    #[serde(default)]
    pub dynamics: DynamicsSection,
    /// Sweep axes.
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    /// Output paths and seed.
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    /// Parses and fully validates a TOML config.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, parses, and validates a config file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Serializes the resolved config; the echo re-parses to an equal value.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Builds every domain object once, surfacing the first violation.
    pub fn validate(&self) -> Result<()> {
        self.market_spec()?;
        self.agent_pair()?;
        let anchors = self.anchor_state()?;
        if anchors.k() != self.market.payoffs.len() {
            return Err(Error::Config(format!(
                "[anchors] belief length {} does not match the {}-state market",
                anchors.k(),
                self.market.payoffs.len()
            )));
        }
        self.penalty_config()?;
        self.dynamics_config()?;
        if let Some(sweep) = &self.sweep {
            sweep_provenance(&sweep.provenance)?;
            for (field, grid) in [
                ("sweep.lambda_grid", &sweep.lambda_grid),
                ("sweep.r_a_grid", &sweep.r_a_grid),
                ("sweep.r_b_grid", &sweep.r_b_grid),
            ] {
                if grid.windows(2).any(|p| p[1] <= p[0]) {
                    return Err(Error::Config(format!(
                        "[{field}] grid must be strictly increasing"
                    )));
                }
            }
            let lambda_sweep = !sweep.lambda_grid.is_empty();
            let risk_sweep = !sweep.r_a_grid.is_empty() || !sweep.r_b_grid.is_empty();
            if lambda_sweep == risk_sweep {
                return Err(Error::Config(
                    "[sweep] set exactly one of lambda_grid or the r_a_grid/r_b_grid pair"
                        .into(),
                ));
            }
            if risk_sweep && (sweep.r_a_grid.is_empty() || sweep.r_b_grid.is_empty()) {
                return Err(Error::Config(
                    "[sweep] a risk sweep needs both r_a_grid and r_b_grid".into(),
                ));
            }
        }
        Ok(())
    }

    /// The market.
    pub fn market_spec(&self) -> Result<MarketSpec> {
        at("market", MarketSpec::new(self.market.payoffs.clone()))
    }

    /// Both agents.
    pub fn agent_pair(&self) -> Result<AgentPair> {
        let seller = at(
            "seller",
            build_agent(&self.seller, AgentSpec::seller),
        )?;
        let buyer = at("buyer", build_agent(&self.buyer, AgentSpec::buyer))?;
        AgentPair::new(seller, buyer)
    }

    /// Anchor beliefs as a joint state.
    pub fn anchor_state(&self) -> Result<BeliefState> {
        let seller = at("anchors.seller", Belief::new(self.anchors.seller.clone()))?;
        let buyer = at("anchors.buyer", Belief::new(self.anchors.buyer.clone()))?;
        BeliefState::new(seller, buyer)
    }

    /// Penalty functional parameters.
    pub fn penalty_config(&self) -> Result<PenaltyConfig> {
        let weights = at("penalty.lambda", DeviationWeights::new(self.penalty.lambda))?;
        let variant = match self.penalty.variant.as_str() {
            "lambda-dependent" => PenaltyVariant::LambdaDependent,
            "lambda-independent" => PenaltyVariant::LambdaIndependent,
            other => {
                return Err(Error::Config(format!(
                    "[penalty.variant] unknown variant {other:?}; \
                     use \"lambda-dependent\" or \"lambda-independent\""
                )))
            }
        };
        let cfg = at(
            "penalty.epsilon",
            PenaltyConfig::new(self.penalty.epsilon, weights, variant),
        )?;
        match self.penalty.phi.as_str() {
            "quadratic" => Ok(cfg.with_phi(Arc::new(QuadraticPenalty))),
            other => Err(Error::Config(format!(
                "[penalty.phi] unknown penalty shape {other:?}; use \"quadratic\""
            ))),
        }
    }

    /// Dynamics parameters, penalty included.
    pub fn dynamics_config(&self) -> Result<DynamicsConfig> {
        let d = &self.dynamics;
        let cfg = at("dynamics.alpha", DynamicsConfig::new(d.alpha, self.penalty_config()?))?;
        let cfg = at(
            "dynamics.step_solver_tol",
            cfg.with_step_solver_tol(d.step_solver_tol),
        )?;
        let cfg = at(
            "dynamics.step_solver_cap",
            cfg.with_step_solver_cap(d.step_solver_cap),
        )?;
        let cfg = at(
            "dynamics.convergence_tol",
            cfg.with_convergence_tol(d.convergence_tol),
        )?;
        let cfg = cfg.with_max_periods(d.max_periods);
        let cfg = at("dynamics.beta_scale", cfg.with_beta_scale(d.beta_scale))?;
        Ok(cfg
            .with_fixed_anchor(d.fixed_anchor)
            .with_clamped_projection(d.clamped_projection)
            .with_explicit_scheme(d.explicit_scheme))
    }

    /// Parsed sweep provenance; errors when `[sweep]` is absent.
    pub fn sweep_section(&self) -> Result<(&SweepSection, SweepProvenance)> {
        let sweep = self.sweep.as_ref().ok_or_else(|| {
            Error::Config("[sweep] section is required for the sweep command".into())
        })?;
        Ok((sweep, sweep_provenance(&sweep.provenance)?))
    }
}

fn sweep_provenance(name: &str) -> Result<SweepProvenance> {
    match name {
        "dynamics" => Ok(SweepProvenance::Dynamics),
        "continuation" => Ok(SweepProvenance::Continuation),
        other => Err(Error::Config(format!(
            "[sweep.provenance] unknown provenance {other:?}; \
             use \"dynamics\" or \"continuation\""
        ))),
    }
}

fn build_agent(
    section: &AgentSection,
    ctor: fn(f64, f64, UtilityKind) -> Result<AgentSpec>,
) -> Result<AgentSpec> {
    let utility = match section.utility.family.as_str() {
        "exponential" => UtilityKind::Exponential(ExponentialUtility::new(
            section.utility.risk_aversion,
        )?),
        other => {
            return Err(Error::Config(format!(
                "utility.family: unknown family {other:?}; use \"exponential\""
            )))
        }
    };
    ctor(section.wealth, section.risk_level, utility)
}
