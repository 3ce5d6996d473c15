//! Model-free policy gradient toolkit for discounted LQR.
//!
//! The crate combines exact model-based oracles (Riccati solutions, analytic
//! gradients), stochastic zeroth-order gradient estimators, training loops
//! with stopping-time instrumentation, theory-side constant calculators, and
//! a sample-complexity benchmark harness.

pub mod bench;
pub mod bounds;
pub mod error;
pub mod estimators;
pub mod lqr;
pub mod optimizer;
pub mod presets;
pub mod rollout;
pub mod sampling;

pub use error::{LqrError, Result};
pub use lqr::{LqrSystem, Policy, StabilityReport, ValueMatrix};
