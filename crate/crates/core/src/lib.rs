//! Channel-gain twinning workbench.
//!
//! A synthetic obstacle-rich scene ([`env`]) and a deterministic propagation
//! oracle ([`propagation`]) produce labeled link measurements ([`sampling`]).
//! Those feed the twins: a coordinate-to-gain MLP trained centrally ([`mlp`])
//! or by federated averaging ([`fedtwin`]), spatial interpolators
//! ([`interp`]), and the log-distance baseline ([`plfit`]). Twins are compared
//! through error statistics ([`metrics`]), rasterized gain maps ([`maps`]) and
//! AP association ([`assoc`]). [`cli`] ties the stages into reproducible
//! pipelines.

pub mod assoc;
pub mod cli;
pub mod env;
pub mod error;
pub mod fedtwin;
pub mod interp;
pub mod io;
pub mod maps;
pub mod metrics;
pub mod mlp;
pub mod plfit;
pub mod predictor;
pub mod propagation;
pub mod sampling;
pub mod seeds;

pub use env::{Environment, Obstacle, Position, Roi};
pub use error::{Error, Result};
pub use predictor::GainPredictor;
