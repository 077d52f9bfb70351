//! Restricted Boltzmann Machines trained with stochastic maximum likelihood,
//! parallel tempering, coupled adaptive simulated tempering and Deep Tempering,
//! together with exact enumeration oracles for small models.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod metrics;
pub mod numeric;
pub mod rbm;
pub mod rng;
pub mod samplers;
pub mod training;
pub mod verify;

pub use error::{Error, Result, Side};
pub use rbm::{BinaryState, RbmParams, UnitProbabilities, Units};
pub use rng::RngStream;
