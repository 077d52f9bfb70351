//! Coupled adaptive simulated tempering.
//!
//! Each group couples one simulated-tempering chain, which random-walks over
//! the temperature ladder, to `X` chains held at `β = 1`. The tempering chain
//! targets `π(v, k) ∝ exp(-F_{βₖ}(v) + gₖ)`; the log-weights `g` are adapted by
//! a Wang-Landau update `g_k ← g_k - γ_t` on every visit, with
//! `γ_t = γ₀ / (1 + t / t₀)`, so at convergence `g_k - g_0` settles at `log Z_0 - log Z_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};
use crate::rbm::{BinaryState, RbmParams};
use crate::rng::RngStream;

use super::{accept, validate_betas, ChainBank, SwapStats};

/// Chain group used for the tempering chains' streams.
pub const ST_CHAIN_GROUP: u32 = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSchedule {
    pub gamma0: f64,
    pub t0: f64,
}

impl Default for GammaSchedule {
    fn default() -> Self {
        GammaSchedule {
            gamma0: 1.0,
            t0: 1e4,
        }
    }
}

impl GammaSchedule {
    /// `γ₀ = 1`, `t₀ = M`: the gain behaves like `M / t` once `t ≫ M`.
    pub fn for_levels(m: usize) -> Self {
        GammaSchedule {
            gamma0: 1.0,
            t0: m.max(1) as f64,
        }
    }

    pub fn at(&self, t: u64) -> f64 {
        self.gamma0 / (1.0 + t as f64 / self.t0)
    }
}

/// Simulated-tempering chain: a visible state plus its current temperature index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StChain {
    pub state: BinaryState,
    pub level: usize,
    pub rng: RngStream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CastGroup {
    pub st: StChain,
    pub coupled: ChainBank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CastEnsemble {
    betas: Vec<f64>,
    groups: Vec<CastGroup>,
    log_weights: Vec<f64>,
    schedule: GammaSchedule,
    t: u64,
    occupancy: Vec<u64>,
    swap_stats: SwapStats,
}

impl CastEnsemble {
    pub fn new(
        betas: Vec<f64>,
        groups: Vec<CastGroup>,
        schedule: GammaSchedule,
        swap_window: u64,
    ) -> Result<Self> {
        validate_betas(&betas)?;
        if groups.is_empty() {
            return Err(Error::InvalidParameter("CAST needs at least one group".into()));
        }
        for g in &groups {
            if g.coupled.is_empty() {
                return Err(Error::InvalidParameter(
                    "coupling ratio X must be at least 1".into(),
                ));
            }
            if g.st.level >= betas.len() {
                return Err(Error::InvalidParameter(format!(
                    "temperature index {} out of range",
                    g.st.level
                )));
            }
        }
        if !(schedule.gamma0 > 0.0 && schedule.t0 > 0.0) {
            return Err(Error::InvalidParameter("gamma schedule must be positive".into()));
        }
        let m = betas.len();
        Ok(CastEnsemble {
            betas,
            groups,
            log_weights: vec![0.0; m],
            schedule,
            t: 0,
            occupancy: vec![0; m],
            swap_stats: SwapStats::new(m - 1, swap_window),
        })
    }

    /// `n_groups` groups of `1 + ratio` chains. Coupled chain `j` of group `g` uses
    /// chain group 0, index `g·ratio + j`, so with `ratio = 1` the coupled chains share
    /// streams with a `n_groups`-chain SML bank. Tempering chains start at `β = 1`.
    pub fn seeded(
        seed: u64,
        betas: Vec<f64>,
        n_groups: usize,
        ratio: usize,
        n_visible: usize,
        schedule: GammaSchedule,
        swap_window: u64,
    ) -> Result<Self> {
        let groups = (0..n_groups)
            .map(|g| {
                let start = (g * ratio) as u32;
                let coupled =
                    ChainBank::seeded_range(seed, 0, start..start + ratio as u32, n_visible);
                let mut rng = RngStream::chain(seed, ST_CHAIN_GROUP, g as u32);
                let state = BinaryState::random(n_visible, &mut rng);
                CastGroup {
                    st: StChain {
                        state,
                        level: 0,
                        rng,
                    },
                    coupled,
                }
            })
            .collect();
        Self::new(betas, groups, schedule, swap_window)
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn groups(&self) -> &[CastGroup] {
        &self.groups
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// `g_k - g_0` for every level.
    pub fn log_weight_differences(&self) -> Vec<f64> {
        self.log_weights
            .iter()
            .map(|g| g - self.log_weights[0])
            .collect()
    }

    /// Visits per temperature level, summed over groups.
    pub fn occupancy(&self) -> &[u64] {
        &self.occupancy
    }

    pub fn iterations(&self) -> u64 {
        self.t
    }

    pub fn swap_stats(&self) -> &SwapStats {
        &self.swap_stats
    }

    /// All coupled (β = 1) states, group-major.
    pub fn coupled_states(&self) -> Vec<BinaryState> {
        self.groups
            .iter()
            .flat_map(|g| g.coupled.chains().iter().map(|c| c.state.clone()))
            .collect()
    }

    pub fn n_chains(&self) -> usize {
        self.groups.iter().map(|g| 1 + g.coupled.len()).sum()
    }

    /// One CAST iteration, group by group:
    /// (a) one Gibbs sweep of each coupled chain at `β = 1`;
    /// (b) one Gibbs sweep of the tempering chain at its own `β`, then a move to
    ///     level `k ± 1` (one uniform for the direction; out-of-range proposals are
    ///     dropped, otherwise one more uniform for acceptance);
    /// (c) Wang-Landau update of the level it now occupies;
    /// (d) at level 0 its state is exchanged with a uniformly drawn coupled chain.
    ///
    /// With a single temperature, steps (b)-move, (c) and (d) are skipped and the
    /// ensemble is plain SML on `groups × (1 + X)` chains.
    pub fn step(&mut self, params: &RbmParams, rng: &mut RngStream) -> Result<()> {
        for g in &self.groups {
            g.coupled.validate(params)?;
            params.check(Side::Visible, g.st.state.len())?;
        }
        let m = self.betas.len();
        let gamma = self.schedule.at(self.t);
        for group in &mut self.groups {
            group.coupled.gibbs_at(params, 1.0);

            let st = &mut group.st;
            let beta = self.betas[st.level];
            let h = params.sample_h_unchecked(beta, &st.state, &mut st.rng);
            st.state = params.sample_v_unchecked(beta, &h, &mut st.rng);

            if m == 1 {
                continue;
            }
            let up = rng.uniform() < 0.5;
            let target = if up {
                Some(st.level + 1).filter(|&k| k < m)
            } else {
                st.level.checked_sub(1)
            };
            if let Some(target) = target {
                let from = st.level;
                let log_r = params.free_energy_v_unchecked(self.betas[from], &st.state)
                    - params.free_energy_v_unchecked(self.betas[target], &st.state)
                    + self.log_weights[target]
                    - self.log_weights[from];
                let accepted = accept(log_r, rng.uniform());
                if accepted {
                    st.level = target;
                }
                self.swap_stats.record(from.min(target), accepted);
            }

            self.log_weights[st.level] -= gamma;
            self.occupancy[st.level] += 1;

            if st.level == 0 {
                let j = rng.index(group.coupled.len());
                std::mem::swap(&mut st.state, &mut group.coupled.chains_mut()[j].state);
            }
        }
        self.t += 1;
        self.swap_stats.end_iteration();
        Ok(())
    }
}

/// Free-function form of [`CastEnsemble::step`].
pub fn cast_step(ens: &mut CastEnsemble, params: &RbmParams, rng: &mut RngStream) -> Result<()> {
    ens.step(params, rng)
}
