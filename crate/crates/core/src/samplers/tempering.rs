//! Parallel tempering over energy-scaled copies of one RBM.
//!
//! Temperatures are indexed from 0 here with `betas[0] = 1` the target.
//! Tempered chain `i` targets `exp(-βᵢ E(v, h))`, whose visible free energy is
//! [`RbmParams::free_energy_v_at`]; block Gibbs and the swap test agree on that target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};
use crate::rbm::{BinaryState, RbmParams};
use crate::rng::RngStream;

use super::{accept, ChainBank, SwapStats};

/// `M` inverse temperatures spaced uniformly from 1 down to 0.
pub fn uniform_betas(m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..m)
            .map(|i| 1.0 - i as f64 / (m - 1) as f64)
            .collect(),
    }
}

/// `β₀ = 1`, all in `[0, 1]`, strictly decreasing.
pub fn validate_betas(betas: &[f64]) -> Result<()> {
    if betas.first() != Some(&1.0) {
        return Err(Error::InvalidParameter(
            "inverse temperatures must start at 1".into(),
        ));
    }
    if betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
        return Err(Error::InvalidParameter(
            "inverse temperatures must lie in [0, 1]".into(),
        ));
    }
    if betas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter(
            "inverse temperatures must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Log of the replica-exchange ratio between `v_lo` at `beta_lo` and `v_hi` at `beta_hi`:
/// `F_lo(v_lo) + F_hi(v_hi) - F_lo(v_hi) - F_hi(v_lo)`.
pub fn pt_swap_log_ratio(
    params: &RbmParams,
    beta_lo: f64,
    beta_hi: f64,
    v_lo: &BinaryState,
    v_hi: &BinaryState,
) -> Result<f64> {
    params.check(Side::Visible, v_lo.len())?;
    params.check(Side::Visible, v_hi.len())?;
    Ok(swap_log_ratio_unchecked(params, beta_lo, beta_hi, v_lo, v_hi))
}

fn swap_log_ratio_unchecked(
    params: &RbmParams,
    beta_lo: f64,
    beta_hi: f64,
    v_lo: &BinaryState,
    v_hi: &BinaryState,
) -> f64 {
    if v_lo == v_hi || beta_lo == beta_hi {
        return 0.0;
    }
    params.free_energy_v_unchecked(beta_lo, v_lo) + params.free_energy_v_unchecked(beta_hi, v_hi)
        - params.free_energy_v_unchecked(beta_lo, v_hi)
        - params.free_energy_v_unchecked(beta_hi, v_lo)
}

/// One RBM replicated across `M` inverse temperatures, `K` chains each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperedEnsemble {
    betas: Vec<f64>,
    banks: Vec<ChainBank>,
    isodd: bool,
    swap_stats: SwapStats,
}

impl TemperedEnsemble {
    pub fn new(betas: Vec<f64>, banks: Vec<ChainBank>, swap_window: u64) -> Result<Self> {
        validate_betas(&betas)?;
        if banks.len() != betas.len() {
            return Err(Error::InvalidParameter(format!(
                "{} chain banks for {} temperatures",
                banks.len(),
                betas.len()
            )));
        }
        if banks.windows(2).any(|w| w[0].len() != w[1].len()) {
            return Err(Error::InvalidParameter(
                "every temperature needs the same number of chains".into(),
            ));
        }
        let n_pairs = betas.len() - 1;
        Ok(TemperedEnsemble {
            betas,
            banks,
            isodd: true,
            swap_stats: SwapStats::new(n_pairs, swap_window),
        })
    }

    /// Temperature `i` uses chain group `i`, so temperature 0 shares streams with a plain SML bank.
    pub fn seeded(
        seed: u64,
        betas: Vec<f64>,
        n_chains: usize,
        n_visible: usize,
        swap_window: u64,
    ) -> Result<Self> {
        let banks = (0..betas.len())
            .map(|i| ChainBank::seeded(seed, i as u32, n_chains, n_visible))
            .collect();
        Self::new(betas, banks, swap_window)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn banks(&self) -> &[ChainBank] {
        &self.banks
    }

    /// Chains at `β = 1`.
    pub fn target_bank(&self) -> &ChainBank {
        &self.banks[0]
    }

    pub fn isodd(&self) -> bool {
        self.isodd
    }

    pub fn swap_stats(&self) -> &SwapStats {
        &self.swap_stats
    }

    /// One Gibbs sweep per chain at every temperature (temperature-major), then
    /// one parity sweep of swaps: pairs `(0,1), (2,3), …` on odd calls and
    /// `(1,2), (3,4), …` on even calls. Each proposal, pair-major then
    /// chain-major, consumes one uniform from `rng`.
    pub fn step(&mut self, params: &RbmParams, rng: &mut RngStream) -> Result<()> {
        for bank in &self.banks {
            bank.validate(params)?;
        }
        for (bank, &beta) in self.banks.iter_mut().zip(&self.betas) {
            bank.gibbs_at(params, beta);
        }
        let first = if self.isodd { 0 } else { 1 };
        for pair in (first..self.betas.len().saturating_sub(1)).step_by(2) {
            let (lo, hi) = self.banks.split_at_mut(pair + 1);
            let (lo, hi) = (&mut lo[pair], &mut hi[0]);
            let (beta_lo, beta_hi) = (self.betas[pair], self.betas[pair + 1]);
            for (a, b) in lo.chains_mut().iter_mut().zip(hi.chains_mut()) {
                let log_r = swap_log_ratio_unchecked(params, beta_lo, beta_hi, &a.state, &b.state);
                let accepted = accept(log_r, rng.uniform());
                if accepted {
                    std::mem::swap(&mut a.state, &mut b.state);
                }
                self.swap_stats.record(pair, accepted);
            }
        }
        self.isodd = !self.isodd;
        self.swap_stats.end_iteration();
        Ok(())
    }
}

/// Free-function form of [`TemperedEnsemble::step`].
pub fn pt_step(ens: &mut TemperedEnsemble, params: &RbmParams, rng: &mut RngStream) -> Result<()> {
    ens.step(params, rng)
}
