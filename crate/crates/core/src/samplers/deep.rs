//! Deep tempering: a stack of distinct RBMs whose adjacent layers exchange
//! states between the lower layer's hidden units and the upper layer's visibles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};
use crate::rbm::{BinaryState, RbmParams};
use crate::rng::RngStream;

use super::{accept, SwapStats};

/// Every layer's hidden size must equal the next layer's visible size.
pub fn validate_stack(layers: &[RbmParams]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::InvalidParameter("empty layer stack".into()));
    }
    for (i, w) in layers.windows(2).enumerate() {
        if w[0].n_hidden() != w[1].n_visible() {
            return Err(Error::Adjacency {
                lower: i + 1,
                upper: i + 2,
                hidden: w[0].n_hidden(),
                visible: w[1].n_visible(),
            });
        }
    }
    Ok(())
}

/// Log acceptance ratio for exchanging the lower layer's hidden state with the
/// upper layer's visible state:
/// `-F̃_lower(v_upper) - F_upper(h_lower) + F̃_lower(h_lower) + F_upper(v_upper)`.
/// Partition functions cancel and are never computed.
pub fn dt_swap_log_ratio(
    lower: &RbmParams,
    upper: &RbmParams,
    h_lower: &BinaryState,
    v_upper: &BinaryState,
) -> Result<f64> {
    if lower.n_hidden() != upper.n_visible() {
        return Err(Error::Adjacency {
            lower: 1,
            upper: 2,
            hidden: lower.n_hidden(),
            visible: upper.n_visible(),
        });
    }
    lower.check(Side::Hidden, h_lower.len())?;
    upper.check(Side::Visible, v_upper.len())?;
    Ok(dt_log_ratio_unchecked(lower, upper, h_lower, v_upper))
}

fn dt_log_ratio_unchecked(
    lower: &RbmParams,
    upper: &RbmParams,
    h_lower: &BinaryState,
    v_upper: &BinaryState,
) -> f64 {
    if h_lower == v_upper {
        return 0.0;
    }
    -lower.free_energy_h_unchecked(1.0, v_upper) - upper.free_energy_v_unchecked(1.0, h_lower)
        + lower.free_energy_h_unchecked(1.0, h_lower)
        + upper.free_energy_v_unchecked(1.0, v_upper)
}

/// Persistent `(ṽ, h̃)` pair of one layer's negative chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepChain {
    pub visible: BinaryState,
    pub hidden: BinaryState,
    pub rng: RngStream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepEnsemble {
    layers: Vec<RbmParams>,
    chains: Vec<Vec<DeepChain>>,
    isodd: bool,
    swaps_enabled: bool,
    swap_stats: SwapStats,
}

impl DeepEnsemble {
    pub fn new(layers: Vec<RbmParams>, chains: Vec<Vec<DeepChain>>, swap_window: u64) -> Result<Self> {
        validate_stack(&layers)?;
        if chains.len() != layers.len() {
            return Err(Error::InvalidParameter(format!(
                "{} chain sets for {} layers",
                chains.len(),
                layers.len()
            )));
        }
        let k = chains[0].len();
        for (layer, set) in layers.iter().zip(&chains) {
            if set.len() != k {
                return Err(Error::InvalidParameter(
                    "every layer needs the same number of chains".into(),
                ));
            }
            for c in set {
                layer.check(Side::Visible, c.visible.len())?;
                layer.check(Side::Hidden, c.hidden.len())?;
            }
        }
        let n_pairs = layers.len() - 1;
        Ok(DeepEnsemble {
            layers,
            chains,
            isodd: true,
            swaps_enabled: true,
            swap_stats: SwapStats::new(n_pairs, swap_window),
        })
    }

    /// Layer `i` uses chain group `i`; each visible state is drawn from its own
    /// stream and hiddens start at zero, so layer 0 shares streams and initial
    /// states with a plain SML bank.
    pub fn seeded(seed: u64, layers: Vec<RbmParams>, n_chains: usize, swap_window: u64) -> Result<Self> {
        let chains = layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                (0..n_chains as u32)
                    .map(|k| {
                        let mut rng = RngStream::chain(seed, i as u32, k);
                        let visible = BinaryState::random(layer.n_visible(), &mut rng);
                        DeepChain {
                            visible,
                            hidden: BinaryState::zeros(layer.n_hidden()),
                            rng,
                        }
                    })
                    .collect()
            })
            .collect();
        Self::new(layers, chains, swap_window)
    }

    pub fn layers(&self) -> &[RbmParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [RbmParams] {
        &mut self.layers
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_chains(&self) -> usize {
        self.chains[0].len()
    }

    pub fn chains(&self, layer: usize) -> &[DeepChain] {
        &self.chains[layer]
    }

    pub fn visible_states(&self, layer: usize) -> Vec<BinaryState> {
        self.chains[layer].iter().map(|c| c.visible.clone()).collect()
    }

    pub fn isodd(&self) -> bool {
        self.isodd
    }

    pub fn toggle_parity(&mut self) {
        self.isodd = !self.isodd;
    }

    pub fn swaps_enabled(&self) -> bool {
        self.swaps_enabled
    }

    /// With swaps disabled the swap phase, including its lower-layer resample, is skipped.
    pub fn set_swaps_enabled(&mut self, enabled: bool) {
        self.swaps_enabled = enabled;
    }

    pub fn swap_stats(&self) -> &SwapStats {
        &self.swap_stats
    }

    /// Negative phase of one deep-tempering update.
    ///
    /// For every adjacent pair `(i, i+1)` selected by the parity flag (`i` even
    /// when `isodd`, zero-based), and every chain `k` in order: one uniform from
    /// `rng` decides whether `h̃ᵢ` and `ṽᵢ₊₁` are exchanged, after which
    /// `ṽᵢ ~ pᵢ(v | h̃ᵢ)` is redrawn from the chain's own stream. Then every layer
    /// takes one Gibbs sweep `h̃ ~ p(h | ṽ)`, `ṽ ~ p(v | h̃)`.
    ///
    /// The parity flag is left for the caller to flip. Returns the visible
    /// states of every layer.
    pub fn neg_swaps(&mut self, rng: &mut RngStream) -> Result<Vec<Vec<BinaryState>>> {
        validate_stack(&self.layers)?;
        let m = self.layers.len();
        if self.swaps_enabled && m > 1 {
            let first = if self.isodd { 0 } else { 1 };
            for pair in (first..m - 1).step_by(2) {
                let (lo_chains, hi_chains) = self.chains.split_at_mut(pair + 1);
                let (lo_chains, hi_chains) = (&mut lo_chains[pair], &mut hi_chains[0]);
                let (lower, upper) = (&self.layers[pair], &self.layers[pair + 1]);
                for (lo, hi) in lo_chains.iter_mut().zip(hi_chains.iter_mut()) {
                    let log_r = dt_log_ratio_unchecked(lower, upper, &lo.hidden, &hi.visible);
                    let accepted = accept(log_r, rng.uniform());
                    if accepted {
                        std::mem::swap(&mut lo.hidden, &mut hi.visible);
                    }
                    self.swap_stats.record(pair, accepted);
                    lo.visible = lower.sample_v_unchecked(1.0, &lo.hidden, &mut lo.rng);
                }
            }
        }
        for (layer, set) in self.layers.iter().zip(&mut self.chains) {
            for c in set.iter_mut() {
                c.hidden = layer.sample_h_unchecked(1.0, &c.visible, &mut c.rng);
                c.visible = layer.sample_v_unchecked(1.0, &c.hidden, &mut c.rng);
            }
        }
        self.swap_stats.end_iteration();
        Ok((0..m).map(|i| self.visible_states(i)).collect())
    }
}

/// Free-function form of [`DeepEnsemble::neg_swaps`].
pub fn dt_neg_swaps(ens: &mut DeepEnsemble, rng: &mut RngStream) -> Result<Vec<Vec<BinaryState>>> {
    ens.neg_swaps(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::{sml_step, ChainBank};

    fn pair(seed: u64) -> (RbmParams, RbmParams) {
        let mut r = RngStream::new(seed, 0);
        (RbmParams::random(4, 3, 1.5, &mut r), RbmParams::random(3, 4, 1.5, &mut r))
    }

    #[test]
    fn identical_states_give_zero_ratio() {
        let (lo, hi) = pair(1);
        let s = BinaryState::from_bits([1, 0, 1]);
        assert_eq!(dt_swap_log_ratio(&lo, &hi, &s, &s).unwrap(), 0.0);
    }

    #[test]
    fn uniform_upper_layer_cancels() {
        let (lo, _) = pair(2);
        let hi = RbmParams::zeros(3, 4);
        let h = BinaryState::from_bits([1, 0, 1]);
        let v = BinaryState::from_bits([0, 1, 1]);
        let want = lo.free_energy_h(&h).unwrap() - lo.free_energy_h(&v).unwrap();
        let got = dt_swap_log_ratio(&lo, &hi, &h, &v).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn ratio_matches_enumerated_marginals() {
        let (lo, hi) = pair(3);
        let p_h = lo.exact_marginal_h().unwrap();
        let p_v = hi.exact_marginal_v().unwrap();
        for x in 0..8usize {
            for y in 0..8usize {
                let (hx, vy) = (&p_h[x].0, &p_v[y].0);
                let want = (p_h[y].1 * p_v[x].1) / (p_h[x].1 * p_v[y].1);
                let got = dt_swap_log_ratio(&lo, &hi, hx, vy).unwrap().exp();
                assert!(((got - want) / want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn adjacency_is_enforced() {
        let mut r = RngStream::new(0, 0);
        let a = RbmParams::random(4, 3, 1.0, &mut r);
        let b = RbmParams::random(2, 4, 1.0, &mut r);
        assert!(matches!(validate_stack(&[a.clone(), b.clone()]), Err(Error::Adjacency { .. })));
        let s3 = BinaryState::zeros(3);
        assert!(dt_swap_log_ratio(&a, &b, &s3, &BinaryState::zeros(2)).is_err());
        assert!(DeepEnsemble::seeded(1, vec![a, b], 2, 10).is_err());
    }

    #[test]
    fn single_layer_is_sml() {
        let (lo, _) = pair(4);
        let mut ens = DeepEnsemble::seeded(9, vec![lo.clone()], 3, 10).unwrap();
        let mut bank = ChainBank::seeded(9, 0, 3, 4);
        let mut rng = RngStream::new(9, 77);
        for _ in 0..400 {
            let neg = ens.neg_swaps(&mut rng).unwrap();
            ens.toggle_parity();
            sml_step(&lo, &mut bank, 1).unwrap();
            assert_eq!(neg[0], bank.states());
        }
    }

    #[test]
    fn parity_and_accounting() {
        let mut r = RngStream::new(5, 0);
        let layers = vec![
            RbmParams::random(4, 3, 1.0, &mut r),
            RbmParams::random(3, 3, 1.0, &mut r),
            RbmParams::random(3, 2, 1.0, &mut r),
        ];
        let mut ens = DeepEnsemble::seeded(5, layers, 2, 100).unwrap();
        let mut rng = RngStream::new(5, 1);
        ens.neg_swaps(&mut rng).unwrap();
        ens.toggle_parity();
        let p: Vec<u64> = ens.swap_stats().cumulative().iter().map(|c| c.proposed).collect();
        assert_eq!(p, vec![2, 0]);
        ens.neg_swaps(&mut rng).unwrap();
        ens.toggle_parity();
        let p: Vec<u64> = ens.swap_stats().cumulative().iter().map(|c| c.proposed).collect();
        assert_eq!(p, vec![2, 2]);
        assert!(ens.isodd());
    }

    #[test]
    fn identical_swap_states_are_no_ops() {
        let (lo, hi) = pair(6);
        let mut ens = DeepEnsemble::seeded(3, vec![lo.clone(), hi.clone()], 1, 10).unwrap();
        let shared = BinaryState::from_bits([1, 1, 0]);
        ens.chains[0][0].hidden = shared.clone();
        ens.chains[1][0].visible = shared.clone();

        let mut lo_rng = ens.chains[0][0].rng.clone();
        let mut hi_rng = ens.chains[1][0].rng.clone();
        let v0 = lo.sample_v(&shared, &mut lo_rng).unwrap();
        let h0 = lo.sample_h(&v0, &mut lo_rng).unwrap();
        let v0 = lo.sample_v(&h0, &mut lo_rng).unwrap();
        let h1 = hi.sample_h(&shared, &mut hi_rng).unwrap();
        let v1 = hi.sample_v(&h1, &mut hi_rng).unwrap();

        let out = ens.neg_swaps(&mut RngStream::new(3, 5)).unwrap();
        assert_eq!(ens.swap_stats().cumulative()[0].accepted, 1);
        assert_eq!(out, vec![vec![v0], vec![v1]]);
    }
}
