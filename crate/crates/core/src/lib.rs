//! Utility-based reservation pricing of a contingent claim and implicit
//! projected-gradient bargaining dynamics over agents' beliefs.
//!
//! Two agents face a claim paying `F[k]` in state `k` of a finite state
//! space. Each agent carries a concave utility, a wealth level, an acceptable
//! risk level, and a subjective belief on the state space. The seller's and
//! buyer's reservation prices are the unique solutions of the indifference
//! equations; bargaining is modeled as an implicit projected-gradient flow of
//! the belief pair on the product of probability simplices, driven by a
//! penalized deviation functional. A penalty-continuation solver computes the
//! constrained-minimum benchmark directly.
//!
//! Module map:
//!
//! * [`simplex`]: belief vectors, the product-simplex geometry, the affine
//!   projection used by the dynamics, and deviation (distance) functions.
//! * [`utility`]: the utility-model interface and the exponential family.
//! * [`pricing`]: reservation prices, their belief/risk gradients, price
//!   bounds, and the agreement-feasibility test.
//! * [`functionals`]: the penalized deviation functionals driving the
//!   dynamics, in lambda-independent and lambda-dependent variants.
//! * [`dynamics`]: the implicit projected-gradient stepper, trajectory
//!   recording, Lyapunov diagnostics, and fixed-point certification.
//! * [`solver`]: penalty continuation for the constrained primal problem,
//!   a brute-force two-state oracle, asymptotic prices, and parameter sweeps.
//! * [`config`]: the TOML experiment-configuration schema used by the CLI.
//! * [`export`]: CSV and plot-script emission for trajectories and sweeps.
//! * [`validate`]: seeded property suites behind the `validate` subcommand.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod functionals;
pub mod pricing;
pub mod simplex;
pub mod solver;
pub mod utility;
pub mod validate;

pub use error::{Error, Result};
