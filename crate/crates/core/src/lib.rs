//! Simulation and verification laboratory for degenerate functional (delay)
//! SDEs of the form
//!
//! ```text
//! dX(t) = { A X(t) + M Y(t) } dt
//! dY(t) = { Z(X(t), Y(t)) + b(X_t, Y_t) } dt + sigma dB(t)
//! ```
//!
//! where the drift of the `Y`-component may depend on the recent history
//! (the segment `(X_t, Y_t)(theta) = (X(t+theta), Y(t+theta))`,
//! `theta in [-r0, 0]`) and noise enters only through `Y`. The `X`-component
//! receives randomness indirectly via the coupling matrix `M`; a Kalman rank
//! condition on `(A, M)` keeps the pair hypoelliptic.
//!
//! The crate provides:
//!
//! - [`matops`]: small dense linear algebra (matrix exponentials, the Kalman
//!   rank test, the weighted controllability Gramian).
//! - [`model`]: model declarations, segments, coefficient oracles, Lyapunov
//!   data, and the two built-in example models.
//! - [`simulate`]: reproducible, parallel-safe Euler-Maruyama integration.
//! - [`coupling`]: the coupling plan steering a shifted copy of the solution
//!   back to the original by time `T - r0`, plus Girsanov path densities.
//! - [`estimate`]: Monte Carlo estimators for semigroup functionals, the
//!   stochastic-integral gradient weight, and a finite-difference oracle
//!   with common random numbers.
//! - [`verify`]: grid checkers for the drift assumptions and empirical
//!   harnesses for moment bounds and Harnack-type inequalities.

// `!(x > 0.0)` rejects NaN where `x <= 0.0` would let it through, and the
// indexed loops walk several arrays in lockstep.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
#![allow(clippy::manual_is_multiple_of)]

pub mod coupling;
pub mod error;
pub mod estimate;
pub mod matops;
pub mod model;
pub mod simulate;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
