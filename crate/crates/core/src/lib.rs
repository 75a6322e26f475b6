//! Linear-minimization-oracle optimizers with momentum variance reduction.
//!
//! The crate is organised bottom-up:
//!
//! - [`norms`]: norms, dual norms and unit-ball LMO directions per layer geometry.
//! - [`oracles`]: layer-structured parameters, replayable stochastic gradient
//!   oracles and the synthetic problems used for measurement.
//! - [`optimizers`]: the Gluon / Gluon-MVR-{1,2,3} / Muon-MVR state machines
//!   and their step-size schedules.
//! - [`analysis`]: numeric checks of the geometric-sum lemmas and of the
//!   closed-form momentum-error expansions.
//! - [`harness`]: experiment runner, stationarity metric and rate fitting.
//! - [`config`] and [`csv`]: the text config format and CSV outputs used by
//!   the `gluon-mvr` binary.

pub mod analysis;
pub mod config;
pub mod csv;
mod error;
pub mod harness;
pub mod norms;
pub mod optimizers;
pub mod oracles;

pub use error::{Error, Result};
pub use norms::{Matrix, NormKind};
pub use optimizers::{Method, OptimizerConfig, OptimizerState};
pub use oracles::{LayerSpec, ModelShape, ParamVector, Problem, Sample};
