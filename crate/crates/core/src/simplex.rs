//! Probability-simplex types and the product-simplex geometry.
//!
//! The bargaining state lives on `D`, the product of two `K`-state
//! probability simplices. The dynamics use an affine projection onto the
//! product of the simplex *hyperplanes* (each block shifted so it sums to
//! one); nonnegativity is deliberately not enforced by that operator, so
//! belief vectors here are points of the affine hull and interiority is a
//! derived property, not a constructor requirement. See
//! [`project_pair_clamped`] for the true-simplex alternative.

use crate::error::{Error, Result};

/// Absolute tolerance under which a weight sum counts as exactly one.
pub const SUM_TOL_EXACT: f64 = 1e-12;
/// Largest sum defect a constructor will repair by renormalizing.
pub const SUM_TOL_RENORMALIZE: f64 = 1e-9;

/// One agent's subjective probability weights over the `K` states.
///
/// Components sum to one within [`SUM_TOL_EXACT`] after construction.
/// Components may be slightly negative: the dynamics' affine projection can
/// step outside the nonnegative orthant, and such points remain valid
/// evaluation points for prices (as signed weights). Use
/// [`Belief::is_interior`] when strict positivity matters.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    weights: Vec<f64>,
}

impl Belief {
    /// Builds a belief from raw weights.
    ///
    /// Sums within [`SUM_TOL_EXACT`] of one are accepted as-is; sums within
    /// [`SUM_TOL_RENORMALIZE`] are renormalized; anything farther off is
    /// rejected so caller bugs do not masquerade as roundoff.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::invalid(
                "weights",
                format!("need at least 2 states, got {}", weights.len()),
            ));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights", "non-finite component"));
        }
        let sum: f64 = weights.iter().sum();
        let defect = (sum - 1.0).abs();
        if defect <= SUM_TOL_EXACT {
            Ok(Belief { weights })
        } else if defect <= SUM_TOL_RENORMALIZE {
            let weights = weights.iter().map(|w| w / sum).collect();
            Ok(Belief { weights })
        } else {
            Err(Error::invalid(
                "weights",
                format!("components sum to {sum}, more than {SUM_TOL_RENORMALIZE} away from 1"),
            ))
        }
    }

    /// The barycenter `(1/K, ..., 1/K)`.
    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("k", format!("need at least 2 states, got {k}")));
        }
        Ok(Belief {
            weights: vec![1.0 / k as f64; k],
        })
    }

    /// Number of states `K`.
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// The weight vector.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when every component is strictly positive.
    pub fn is_interior(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }

    /// Smallest component; negative for points outside the simplex proper.
    pub fn min_component(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// The dynamical state `x = (Q_A, Q_B)` on the product of simplices.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    q_a: Belief,
    q_b: Belief,
}

impl BeliefState {
    /// Pairs the two agents' beliefs; both must share `K`.
    pub fn new(q_a: Belief, q_b: Belief) -> Result<Self> {
        if q_a.k() != q_b.k() {
            return Err(Error::DimensionMismatch(format!(
                "belief blocks disagree: K={} vs K={}",
                q_a.k(),
                q_b.k()
            )));
        }
        Ok(BeliefState { q_a, q_b })
    }

    /// Seller's belief block `Q_A`.
    pub fn q_a(&self) -> &Belief {
        &self.q_a
    }

    /// Buyer's belief block `Q_B`.
    pub fn q_b(&self) -> &Belief {
        &self.q_b
    }

    /// Number of states `K` (shared by both blocks).
    pub fn k(&self) -> usize {
        self.q_a.k()
    }

    /// Flattens to `(qa_1..qa_K, qb_1..qb_K)`, the layout used by the
    /// dynamics engine and trajectory CSV.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.k());
        v.extend_from_slice(self.q_a.weights());
        v.extend_from_slice(self.q_b.weights());
        v
    }

    /// Rebuilds a state from the flat layout produced by [`Self::to_flat`].
    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() % 2 != 0 || v.len() < 4 {
            return Err(Error::DimensionMismatch(format!(
                "flat state needs even length >= 4, got {}",
                v.len()
            )));
        }
        let k = v.len() / 2;
        BeliefState::new(Belief::new(v[..k].to_vec())?, Belief::new(v[k..].to_vec())?)
    }

    /// Smallest component across both blocks.
    pub fn min_component(&self) -> f64 {
        self.q_a.min_component().min(self.q_b.min_component())
    }

    /// True when both blocks are strictly interior.
    pub fn is_interior(&self) -> bool {
        self.q_a.is_interior() && self.q_b.is_interior()
    }
}

/// Relative bargaining power `lambda`: which agent's deviation is weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationWeights {
    lambda: f64,
}

impl DeviationWeights {
    /// Requires `0 <= lambda <= 1`.
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid(
                "lambda",
                format!("bargaining power must lie in [0, 1], got {lambda}"),
            ));
        }
        Ok(DeviationWeights { lambda })
    }

    /// Weight on the seller's deviation term.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Weight on the buyer's deviation term, `1 - lambda`.
    pub fn complement(&self) -> f64 {
        1.0 - self.lambda
    }
}

/// Projects one `K`-block onto the hyperplane `{ sum = 1 }` in place:
/// `x_i - (1/K) sum_j x_j + 1/K`.
fn shift_block_to_hyperplane(block: &mut [f64]) {
    let k = block.len() as f64;
    let shift = (block.iter().sum::<f64>() - 1.0) / k;
    for x in block {
        *x -= shift;
    }
}

/// The affine projection onto the product of simplex hyperplanes, applied
/// blockwise to the first and last `K` entries of `v`.
///
/// This is the explicit componentwise operator used by the dynamics; it does
/// not enforce nonnegativity. It is affine, idempotent, and the Euclidean
/// minimizer over `{ each block sums to 1 }`.
pub fn project_pair(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() % 2 != 0 || v.len() < 4 {
        return Err(Error::invalid(
            "v",
            format!("need even length 2K with K >= 2, got length {}", v.len()),
        ));
    }
    let k = v.len() / 2;
    let mut out = v.to_vec();
    shift_block_to_hyperplane(&mut out[..k]);
    shift_block_to_hyperplane(&mut out[k..]);
    Ok(out)
}

/// Euclidean projection of one block onto the true simplex (nonnegative,
/// summing to one), via the sorted-threshold construction.
fn clamp_block_to_simplex(block: &mut [f64]) {
    let k = block.len();
    let mut sorted = block.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite weights"));
    // Largest m with sorted[m-1] > (prefix_sum(m) - 1)/m; tau is that ratio.
    let mut prefix = 0.0;
    let mut tau = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        prefix += s;
        let candidate = (prefix - 1.0) / (i + 1) as f64;
        if s - candidate > 0.0 {
            tau = candidate;
        }
    }
    for x in block.iter_mut().take(k) {
        *x = (*x - tau).max(0.0);
    }
}

/// Projection onto the product of true simplices (nonnegativity enforced).
///
/// Optional alternative to [`project_pair`] for runs that must stay inside
/// the nonnegative orthant; the two operators agree on points whose affine
/// projection is already nonnegative.
pub fn project_pair_clamped(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() % 2 != 0 || v.len() < 4 {
        return Err(Error::invalid(
            "v",
            format!("need even length 2K with K >= 2, got length {}", v.len()),
        ));
    }
    let k = v.len() / 2;
    let mut out = v.to_vec();
    clamp_block_to_simplex(&mut out[..k]);
    clamp_block_to_simplex(&mut out[k..]);
    Ok(out)
}

/// Removes each block's mean: the orthogonal projection onto the tangent
/// space `{ each block sums to 0 }` of the product of hyperplanes. Used to
/// measure stationarity of gradients along the constraint set.
pub fn tangent_pair(g: &[f64]) -> Result<Vec<f64>> {
    if g.len() % 2 != 0 || g.len() < 4 {
        return Err(Error::invalid(
            "g",
            format!("need even length 2K with K >= 2, got length {}", g.len()),
        ));
    }
    let k = g.len() / 2;
    let mut out = g.to_vec();
    let (head, tail) = out.split_at_mut(k);
    for block in [head, tail] {
        let mean = block.iter().sum::<f64>() / k as f64;
        for x in block.iter_mut() {
            *x -= mean;
        }
    }
    Ok(out)
}

/// A belief-deviation distance: strictly convex, continuously differentiable
/// in its first argument, with `value(x, x) = 0`.
pub trait Deviation: Send + Sync {
    /// Distance from `q` to the anchor.
    fn value(&self, q: &[f64], anchor: &[f64]) -> f64;
    /// Gradient in `q`.
    fn gradient(&self, q: &[f64], anchor: &[f64]) -> Vec<f64>;
}

/// The default deviation `psi(q, q0) = ||q - q0||^2 / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticDeviation;

impl Deviation for QuadraticDeviation {
    fn value(&self, q: &[f64], anchor: &[f64]) -> f64 {
        q.iter()
            .zip(anchor)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 2.0
    }

    fn gradient(&self, q: &[f64], anchor: &[f64]) -> Vec<f64> {
        q.iter().zip(anchor).map(|(a, b)| a - b).collect()
    }
}

fn check_same_k(q: &Belief, anchor: &Belief) -> Result<()> {
    if q.k() != anchor.k() {
        return Err(Error::DimensionMismatch(format!(
            "belief has K={}, anchor has K={}",
            q.k(),
            anchor.k()
        )));
    }
    Ok(())
}

/// The quadratic deviation `||q - anchor||^2 / 2`.
pub fn psi_quadratic(q: &Belief, anchor: &Belief) -> Result<f64> {
    check_same_k(q, anchor)?;
    Ok(QuadraticDeviation.value(q.weights(), anchor.weights()))
}

/// Gradient of [`psi_quadratic`] in its first argument: `q - anchor`.
pub fn psi_gradient(q: &Belief, anchor: &Belief) -> Result<Vec<f64>> {
    check_same_k(q, anchor)?;
    Ok(QuadraticDeviation.gradient(q.weights(), anchor.weights()))
}

/// The weighted joint deviation
/// `L(state; anchors, lambda) = lambda psi_A + (1 - lambda) psi_B`.
pub fn joint_deviation(
    state: &BeliefState,
    anchors: &BeliefState,
    w: DeviationWeights,
) -> Result<f64> {
    if state.k() != anchors.k() {
        return Err(Error::DimensionMismatch(format!(
            "state has K={}, anchors have K={}",
            state.k(),
            anchors.k()
        )));
    }
    let psi_a = psi_quadratic(state.q_a(), anchors.q_a())?;
    let psi_b = psi_quadratic(state.q_b(), anchors.q_b())?;
    Ok(w.lambda() * psi_a + w.complement() * psi_b)
}

/// Euclidean norm of a slice.
pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Max-norm of a slice.
pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
