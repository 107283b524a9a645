//! Finite-horizon diagnostics for nonautonomous linear difference systems
//! x(n+1) = A(n) x(n) with bounded invertible coefficients: transition
//! matrices, Bohl exponent estimation with convergence traces, exponential-
//! and Bohl-dichotomy verdicts, dynamic triangularization with subsystem
//! extraction, rotation-method perturbations, and sampled dichotomy
//! spectra.
//!
//! The crate is example-first: every major capability has a runnable
//! example under `examples/`, and the `bohl` binary drives the same
//! functionality through scenario files.

// Hypothesis gates are written as `!(x < y)` on purpose: a NaN estimate
// must fail the check rather than slip through an inverted comparison.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dichotomy;
pub mod error;
pub mod exponents;
pub mod harness;
pub mod instances;
pub mod linalg;
pub mod millionshikov;
pub mod perturbation;
pub mod sampling;
pub mod scenario;
pub mod spectrum;
pub mod system;
pub mod triangular;

pub use dichotomy::{BdVerdict, EdVerdict, Splitting, Tolerances, TriState, Witness};
pub use error::{Error, Result};
pub use exponents::{BohlEstimate, WindowSpec};
pub use perturbation::{DestroyVariant, PerturbationPlan, SubsequencePair};
pub use system::{MatrixSequence, Rule, TransitionOracle};
pub use triangular::TriangularForm;
