//! Sparse observability of initial-value problems.
//!
//! Given `ẋ = f(t, x)` with a Lipschitz right-hand side and terminal
//! measurements `b = A x(T) + e`, this crate
//!
//! * computes restricted isometry constants of `A` ([`rip`]),
//! * certifies the time horizon under which every `s`-sparse initial state is
//!   determined by `b`, and the constants of the recovery error bound
//!   ([`certify`]),
//! * recovers the initial state by weighted ℓ1 minimization over the flow
//!   map, with a brute-force ℓ0 oracle for small instances ([`recover`]),
//! * drives seeded, reproducible experiments ([`harness`]), with CSV/JSON
//!   matrix import and export in [`io`].

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod recover;
pub mod rip;

pub use error::{Error, Result};
