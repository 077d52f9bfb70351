use serde::{Deserialize, Serialize};

use crate::error::{Result, Side};
use crate::rbm::{BinaryState, RbmParams};
use crate::rng::RngStream;

/// One persistent visible configuration and the stream that drives it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub state: BinaryState,
    pub rng: RngStream,
}

impl Chain {
    /// A chain seeded on `(seed, group, index)` whose initial state is drawn from its own stream.
    pub fn seeded(seed: u64, group: u32, index: u32, n_visible: usize) -> Self {
        let mut rng = RngStream::chain(seed, group, index);
        let state = BinaryState::random(n_visible, &mut rng);
        Chain { state, rng }
    }

    #[inline]
    pub(crate) fn gibbs_at(&mut self, params: &RbmParams, beta: f64) {
        let h = params.sample_h_unchecked(beta, &self.state, &mut self.rng);
        self.state = params.sample_v_unchecked(beta, &h, &mut self.rng);
    }
}

/// The K persistent chains of stochastic maximum likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainBank {
    chains: Vec<Chain>,
}

impl ChainBank {
    pub fn new(chains: Vec<Chain>) -> Self {
        ChainBank { chains }
    }

    /// Chains `0..n_chains` of `group`.
    pub fn seeded(seed: u64, group: u32, n_chains: usize, n_visible: usize) -> Self {
        Self::seeded_range(seed, group, 0..n_chains as u32, n_visible)
    }

    pub fn seeded_range(
        seed: u64,
        group: u32,
        indices: std::ops::Range<u32>,
        n_visible: usize,
    ) -> Self {
        ChainBank {
            chains: indices
                .map(|k| Chain::seeded(seed, group, k, n_visible))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    pub fn chains_mut(&mut self) -> &mut [Chain] {
        &mut self.chains
    }

    pub fn states(&self) -> Vec<BinaryState> {
        self.chains.iter().map(|c| c.state.clone()).collect()
    }

    pub fn validate(&self, params: &RbmParams) -> Result<()> {
        self.chains
            .iter()
            .try_for_each(|c| params.check(Side::Visible, c.state.len()))
    }

    pub(crate) fn gibbs_at(&mut self, params: &RbmParams, beta: f64) {
        for chain in &mut self.chains {
            chain.gibbs_at(params, beta);
        }
    }
}

/// Advances every chain `k` full Gibbs sweeps at `β = 1`.
pub fn sml_step(params: &RbmParams, bank: &mut ChainBank, k: usize) -> Result<()> {
    bank.validate(params)?;
    for _ in 0..k {
        bank.gibbs_at(params, 1.0);
    }
    Ok(())
}
