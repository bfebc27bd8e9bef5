//! ABC-SMC with interchangeable ABC-MCMC kernel families and trainable
//! independence proposals (Gaussian mixtures, spline flows), plus the
//! benchmark models, diagnostics and experiment harness built around them.

pub mod diagnostics;
pub mod flow;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod proposal;
pub mod rng;
mod serde_float;
pub mod smc;
