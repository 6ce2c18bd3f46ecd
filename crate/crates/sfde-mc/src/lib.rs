//! Monte Carlo engine for stochastic functional (delay) differential
//! equations.
//!
//! The state of a delay equation is the pair (current value, history
//! window); this crate discretizes the window as a rolling [`Segment`],
//! steps the dynamics with delay-aware Euler-Maruyama, and estimates
//! weighted terminal expectations, killed/absorbed boundary-value
//! representations, and first-exit-time laws over batches of paths.
//! Noise is counter-based, so every estimate is bit-reproducible for a
//! given seed at any worker count; batches run data-parallel under the
//! `parallel` feature (on by default) with a sequential build as fallback.
//!
//! Modules:
//! - [`segment`]: the memory state, its quadrature, and quasi-tame
//!   functionals of it;
//! - [`engine`]: coefficient models, schemes, stepping, path observers;
//! - [`rng`]: deterministic Gaussian streams keyed by (seed, path, step);
//! - [`fk`]: weighted terminal-value estimators and the tower check;
//! - [`boundary`]: domains, killed paths, exit laws, source terms;
//! - [`models`]: linear delay family, hereditary market, run-and-tumble;
//! - [`oracles`]: independent closed forms the estimators are checked
//!   against;
//! - [`verify`]: the oracle-vs-estimator claim suite.

pub mod boundary;
pub mod engine;
pub mod error;
pub mod exec;
pub mod fk;
pub mod models;
pub mod oracles;
pub mod rng;
pub mod segment;
pub mod stats;
pub mod verify;

pub use error::Error;
