//! Negative-phase samplers: persistent Gibbs chains, parallel tempering,
//! coupled adaptive simulated tempering and deep-tempering swaps.

pub mod balance;
mod cast;
mod chains;
mod deep;
mod stats;
mod tempering;

pub use cast::{cast_step, CastEnsemble, CastGroup, GammaSchedule, StChain, ST_CHAIN_GROUP};
pub use chains::{sml_step, Chain, ChainBank};
pub use deep::{dt_neg_swaps, dt_swap_log_ratio, validate_stack, DeepChain, DeepEnsemble};
pub use stats::{PairCounter, SwapStats, DEFAULT_SWAP_WINDOW};
pub use tempering::{pt_step, pt_swap_log_ratio, uniform_betas, validate_betas, TemperedEnsemble};

/// Metropolis test on a log acceptance ratio with a pre-drawn uniform.
#[inline]
pub(crate) fn accept(log_ratio: f64, u: f64) -> bool {
    u < log_ratio.exp()
}
