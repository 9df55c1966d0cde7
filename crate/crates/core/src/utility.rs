//! Utility-function abstraction and the exponential family.
//!
//! Agents carry strictly increasing, strictly concave utilities with
//! `U(0) = 0`, satisfying the Inada conditions. The concrete model is the
//! exponential utility `U(x) = (1 - exp(-a x)) / a` with risk aversion
//! `a > 0`; arbitrary models can be registered through [`UtilityModel`] and
//! are screened on a sample grid at registration.

use std::sync::Arc;

use crate::error::{Error, Result};

/// Interface contract for a utility function.
///
/// Implementations must be strictly increasing, strictly concave, and
/// normalized to `value(0) = 0`. [`screen_utility`] checks these invariants
/// on a grid; use it before trusting a caller-supplied model.
pub trait UtilityModel: Send + Sync {
    /// Utility of wealth `x`.
    fn value(&self, x: f64) -> f64;

    /// First derivative; strictly positive.
    fn derivative(&self, x: f64) -> f64;

    /// Inverse of [`Self::value`]; errors when `level` is at or above the
    /// supremum of the utility's range.
    fn inverse(&self, level: f64) -> Result<f64>;

    /// Supremum of the utility's range (`+inf` when unbounded above).
    fn value_supremum(&self) -> f64 {
        f64::INFINITY
    }

    /// A Lipschitz constant for the derivative on `[lo, hi]`, when known.
    fn derivative_lipschitz(&self, lo: f64, hi: f64) -> Option<f64> {
        let _ = (lo, hi);
        None
    }
}

/// Exponential utility `U(x) = (1 - exp(-a x)) / a`, `a > 0`.
///
/// The coefficient is named `risk_aversion` to avoid clashing with the
/// bargaining power `lambda` of the deviation weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExponentialUtility {
    risk_aversion: f64,
}

impl ExponentialUtility {
    /// Requires `risk_aversion > 0` and finite.
    pub fn new(risk_aversion: f64) -> Result<Self> {
        if !(risk_aversion.is_finite() && risk_aversion > 0.0) {
            return Err(Error::invalid(
                "risk_aversion",
                format!("must be finite and > 0, got {risk_aversion}"),
            ));
        }
        Ok(ExponentialUtility { risk_aversion })
    }

    /// The coefficient `a`.
    pub fn risk_aversion(&self) -> f64 {
        self.risk_aversion
    }
}

impl UtilityModel for ExponentialUtility {
    fn value(&self, x: f64) -> f64 {
        // exp_m1 keeps precision as a -> 0, where U(x) -> x.
        -(-self.risk_aversion * x).exp_m1() / self.risk_aversion
    }

    fn derivative(&self, x: f64) -> f64 {
        (-self.risk_aversion * x).exp()
    }

    fn inverse(&self, level: f64) -> Result<f64> {
        let a = self.risk_aversion;
        if level * a >= 1.0 {
            return Err(Error::UtilityRange {
                level,
                supremum: 1.0 / a,
            });
        }
        // x = -ln(1 - a u) / a, via ln_1p for small arguments.
        Ok(-(-a * level).ln_1p() / a)
    }

    fn value_supremum(&self) -> f64 {
        1.0 / self.risk_aversion
    }

    fn derivative_lipschitz(&self, lo: f64, hi: f64) -> Option<f64> {
        if lo > hi {
            return None;
        }
        // |U''(x)| = a exp(-a x) is largest at the left endpoint.
        Some(self.risk_aversion * (-self.risk_aversion * lo).exp())
    }
}

/// An agent's utility: the exponential family with closed forms, or a
/// screened caller-registered model evaluated through the generic paths.
#[derive(Clone)]
pub enum UtilityKind {
    /// Exponential utility: closed-form prices and gradients apply.
    Exponential(ExponentialUtility),
    /// Any other screened model: prices go through the root-finder.
    Custom(Arc<dyn UtilityModel>),
}

impl UtilityKind {
    /// The underlying model, family-agnostic.
    pub fn model(&self) -> &dyn UtilityModel {
        match self {
            UtilityKind::Exponential(u) => u,
            UtilityKind::Custom(u) => u.as_ref(),
        }
    }

    /// The exponential coefficient when this is the exponential family.
    pub fn exponential(&self) -> Option<ExponentialUtility> {
        match self {
            UtilityKind::Exponential(u) => Some(*u),
            UtilityKind::Custom(_) => None,
        }
    }
}

impl std::fmt::Debug for UtilityKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            UtilityKind::Exponential(u) => f.debug_tuple("Exponential").field(u).finish(),
            UtilityKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Screens a utility model on a grid: `value(0) = 0`, strictly positive
/// derivative, strict monotonicity and concavity across the grid, and
/// inverse-roundtrip agreement to 1e-10. Registration of caller models goes
/// through this; violators are rejected.
pub fn screen_utility(model: &dyn UtilityModel, grid: &[f64]) -> Result<()> {
    if grid.len() < 3 {
        return Err(Error::invalid("grid", "need at least 3 screening points"));
    }
    let mut xs = grid.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));

    if model.value(0.0).abs() > 1e-12 {
        return Err(Error::invalid(
            "utility",
            format!("value(0) = {} but must be 0", model.value(0.0)),
        ));
    }
    for &x in &xs {
        let d = model.derivative(x);
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::invalid(
                "utility",
                format!("derivative at {x} is {d}, must be finite and > 0"),
            ));
        }
        let u = model.value(x);
        if u < model.value_supremum() {
            let back = model.inverse(u)?;
            if (back - x).abs() > 1e-10 * x.abs().max(1.0) {
                return Err(Error::invalid(
                    "utility",
                    format!("inverse(value({x})) = {back}, roundtrip off by {}", back - x),
                ));
            }
        }
    }
    for w in xs.windows(2) {
        if model.value(w[1]) <= model.value(w[0]) {
            return Err(Error::invalid(
                "utility",
                format!("not strictly increasing between {} and {}", w[0], w[1]),
            ));
        }
    }
    for w in xs.windows(3) {
        let (x, y, z) = (w[0], w[1], w[2]);
        let t = (y - x) / (z - x);
        let chord = (1.0 - t) * model.value(x) + t * model.value(z);
        if model.value(y) < chord - 1e-12 {
            return Err(Error::invalid(
                "utility",
                format!("not concave across ({x}, {y}, {z})"),
            ));
        }
    }
    Ok(())
}

/// Default screening grid: symmetric around zero, spanning the wealth scales
/// the pricing module touches.
pub fn default_screening_grid() -> Vec<f64> {
    let mut xs = Vec::with_capacity(41);
    for i in 0..=40 {
        xs.push(-10.0 + 0.5 * i as f64);
    }
    xs
}

/// Guarded Newton/bisection inverse for models without a closed-form
/// inverse: solves `value(x) = level` for `x` inside the caller-declared
/// bracket `[lo, hi]`, which must straddle the level.
pub fn bracketed_inverse(
    model: &dyn UtilityModel,
    level: f64,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    solve_increasing(
        |x| model.value(x),
        |x| model.derivative(x),
        level,
        lo,
        hi,
        "utility inverse",
    )
}

/// Residual at which the scalar solver stops early.
const ROOT_RESIDUAL_TARGET: f64 = 1e-12;
/// Residual the scalar solver must reach within the iteration cap.
const ROOT_RESIDUAL_ACCEPT: f64 = 1e-10;
/// Bisection phase narrows the bracket to this width before Newton.
const ROOT_BISECT_WIDTH: f64 = 1e-6;
/// Iteration cap across both phases.
const ROOT_ITERATION_CAP: usize = 200;

/// Solves `f(x) = target` for strictly increasing `f` on `[lo, hi]`:
/// bisection to a narrow bracket, then Newton polish guarded to stay inside
/// the bracket. Shared by the utility inverse and the reservation-price
/// root-finder.
pub(crate) fn solve_increasing(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    target: f64,
    mut lo: f64,
    mut hi: f64,
    context: &'static str,
) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::invalid(
            "bracket",
            format!("need finite lo <= hi, got [{lo}, {hi}]"),
        ));
    }
    let g_lo = f(lo) - target;
    let g_hi = f(hi) - target;
    if g_lo > 0.0 || g_hi < 0.0 {
        return Err(Error::Infeasible(format!(
            "{context}: target {target} outside bracket values [{}, {}]",
            g_lo + target,
            g_hi + target
        )));
    }

    let mut iterations = 0;
    while hi - lo > ROOT_BISECT_WIDTH && iterations < ROOT_ITERATION_CAP {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if f(mid) - target <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut x = 0.5 * (lo + hi);
    let mut residual = f(x) - target;
    while residual.abs() > ROOT_RESIDUAL_TARGET && iterations < ROOT_ITERATION_CAP {
        iterations += 1;
        if residual <= 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let slope = df(x);
        let newton = x - residual / slope;
        x = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        residual = f(x) - target;
    }

    if residual.abs() <= ROOT_RESIDUAL_ACCEPT {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            context,
            iterations,
            bracket_lo: lo,
            bracket_hi: hi,
            residual: residual.abs(),
        })
    }
}
