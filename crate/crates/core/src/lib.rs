#![cfg_attr(not(test), no_std)]
//! Numerical laboratory for stochastic transport equations with irregular drift.
//!
//! The transport equation `du + b·∇u dt + ∇u ∘ dB = 0` is solved through its
//! characteristics: the flow `X(t,x)` of `dX = b(t,X)dt + dB` carries the
//! initial datum, `u(t,x) = u0(X⁻¹(t,x))`.  This crate contains the pure
//! numerical pieces:
//!
//! - [`regime`]: drift fields (including the shear counterexample
//!   `b = (0, f(t)g(x))`) and the `(q, α, d)` classification.
//! - [`paths`]: graded time grids, counter-based Brownian paths, bridge
//!   refinement and exact-in-time singular integrals.
//! - [`flow`]: Euler–Maruyama flow, closed-form flow and inverse for the
//!   counterexample, Newton inversion and solution evaluation.
//! - [`flow_calculus`]: Jacobian propagation, finite-difference cross-checks,
//!   the determinant identity and the chain-rule gradient of `u`.
//! - [`resolvent`]: heat semigroup on grids, the resolvent representation of
//!   the backward heat equation and the Zvonkin change of variables.
//! - [`estimators`]: Monte Carlo moment and Sobolev-norm estimators and the
//!   Gaussian indicator expectations with their incomplete-gamma envelope.
//!
//! Everything here is `no_std` with `alloc`; IO, configuration and thread
//! pools live in the `flowlab` crate.  Parallel work is expressed through
//! [`exec::Executor`], whose contract is an index-ordered map so reductions
//! are bit-identical for any worker count.

extern crate alloc;

pub mod error;
pub mod estimators;
pub mod exec;
pub mod flow;
pub mod flow_calculus;
pub mod math;
pub mod paths;
pub mod quad;
pub mod regime;
pub mod resolvent;
pub mod rng;

pub use error::{Error, Result};
pub use exec::{Executor, Serial};
