//! Binary-binary Restricted Boltzmann Machine.
//!
//! The joint is `p(v, h) ∝ exp(-E(v, h))` with `E(v, h) = -vᵀWh - vᵀc - hᵀb`.
//! Every density here can also be evaluated at an inverse temperature `β`,
//! meaning the energy-scaled joint `exp(-β E(v, h))`; at `β = 1` the
//! tempered and plain entry points agree bit for bit.
//!
//! Sampling draws exactly one uniform per unit: hiddens left to right, then
//! visibles left to right.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};
use crate::numeric::{log_sum_exp, sigmoid, softplus};
use crate::rng::RngStream;

/// Default enumeration budget, in bits of the enumerated side.
pub const DEFAULT_CAP_BITS: usize = 25;

/// Largest visible layer `exact_marginal_v` will tabulate.
pub const MARGINAL_CAP_BITS: usize = 20;

/// A configuration of binary units, one byte (0 or 1) per unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinaryState(Vec<u8>);

impl BinaryState {
    pub fn zeros(len: usize) -> Self {
        BinaryState(vec![0; len])
    }

    /// Builds a state from 0/1 values; any nonzero byte is treated as 1.
    pub fn from_bits(bits: impl IntoIterator<Item = u8>) -> Self {
        BinaryState(bits.into_iter().map(|b| (b != 0) as u8).collect())
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        BinaryState(bits.iter().map(|&b| b as u8).collect())
    }

    /// Unit `i` is bit `i` of `index`.
    pub fn from_index(index: u64, len: usize) -> Self {
        BinaryState((0..len).map(|i| ((index >> i) & 1) as u8).collect())
    }

    /// Inverse of [`BinaryState::from_index`]; only meaningful for `len <= 64`.
    pub fn to_index(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i))
    }

    /// All `2^len` states in index order.
    pub fn enumerate(len: usize) -> impl Iterator<Item = BinaryState> {
        (0..1u64 << len).map(move |i| BinaryState::from_index(i, len))
    }

    pub fn random(len: usize, rng: &mut RngStream) -> Self {
        BinaryState((0..len).map(|_| rng.bernoulli(0.5) as u8).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i] != 0
    }

    pub fn set(&mut self, i: usize, on: bool) {
        self.0[i] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b != 0).count()
    }

    pub fn hamming(&self, other: &BinaryState) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Factorial Bernoulli means, one per unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitProbabilities(Vec<f64>);

impl UnitProbabilities {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some(bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::InvalidParameter(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        Ok(UnitProbabilities(p))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Draws one bit per unit in index order.
    pub fn sample(&self, rng: &mut RngStream) -> BinaryState {
        BinaryState(self.0.iter().map(|&p| rng.bernoulli(p) as u8).collect())
    }
}

/// Anything that can stand on one side of the layer: binary states or mean-field activations.
pub trait Units {
    fn len(&self) -> usize;
    fn value(&self, i: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Units for BinaryState {
    fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    fn value(&self, i: usize) -> f64 {
        self.0[i] as f64
    }
}

impl Units for UnitProbabilities {
    fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    fn value(&self, i: usize) -> f64 {
        self.0[i]
    }
}

/// Weights and biases of one layer. `weights` is row-major `n_visible × n_hidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmParams {
    n_visible: usize,
    n_hidden: usize,
    weights: Vec<f64>,
    visible_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
}

impl RbmParams {
    pub fn new(
        n_visible: usize,
        n_hidden: usize,
        weights: Vec<f64>,
        visible_bias: Vec<f64>,
        hidden_bias: Vec<f64>,
    ) -> Result<Self> {
        if n_visible == 0 || n_hidden == 0 {
            return Err(Error::InvalidParameter(format!(
                "layer sizes must be positive, got {n_visible}×{n_hidden}"
            )));
        }
        if weights.len() != n_visible * n_hidden {
            return Err(Error::InvalidParameter(format!(
                "weight matrix has {} entries, expected {}",
                weights.len(),
                n_visible * n_hidden
            )));
        }
        if visible_bias.len() != n_visible {
            return Err(Error::DimensionMismatch {
                side: Side::Visible,
                expected: n_visible,
                got: visible_bias.len(),
            });
        }
        if hidden_bias.len() != n_hidden {
            return Err(Error::DimensionMismatch {
                side: Side::Hidden,
                expected: n_hidden,
                got: hidden_bias.len(),
            });
        }
        let params = RbmParams {
            n_visible,
            n_hidden,
            weights,
            visible_bias,
            hidden_bias,
        };
        if !params.is_finite() {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        Ok(params)
    }

    /// Builds a layer from a nested weight matrix (`weights[i][j]` couples visible `i` to hidden `j`).
    pub fn from_rows(
        weights: &[Vec<f64>],
        visible_bias: Vec<f64>,
        hidden_bias: Vec<f64>,
    ) -> Result<Self> {
        let n_visible = weights.len();
        let n_hidden = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|r| r.len() != n_hidden) {
            return Err(Error::InvalidParameter("ragged weight matrix".into()));
        }
        let flat = weights.iter().flatten().copied().collect();
        Self::new(n_visible, n_hidden, flat, visible_bias, hidden_bias)
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        assert!(n_visible > 0 && n_hidden > 0, "layer sizes must be positive");
        RbmParams {
            n_visible,
            n_hidden,
            weights: vec![0.0; n_visible * n_hidden],
            visible_bias: vec![0.0; n_visible],
            hidden_bias: vec![0.0; n_hidden],
        }
    }

    /// Training initialization: `W ~ U(-1/√max(n1, n2), +1/√max(n1, n2))`, zero biases.
    /// Draws weights row-major.
    pub fn initialize(n_visible: usize, n_hidden: usize, rng: &mut RngStream) -> Self {
        let mut params = Self::zeros(n_visible, n_hidden);
        let bound = 1.0 / (n_visible.max(n_hidden) as f64).sqrt();
        for w in &mut params.weights {
            *w = bound * (2.0 * rng.uniform() - 1.0);
        }
        params
    }

    /// Weights and biases all uniform in `[-scale, scale]`. Test and oracle helper.
    pub fn random(n_visible: usize, n_hidden: usize, scale: f64, rng: &mut RngStream) -> Self {
        let mut params = Self::zeros(n_visible, n_hidden);
        let mut draw = || scale * (2.0 * rng.uniform() - 1.0);
        for w in &mut params.weights {
            *w = draw();
        }
        for c in &mut params.visible_bias {
            *c = draw();
        }
        for b in &mut params.hidden_bias {
            *b = draw();
        }
        params
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n_hidden + j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.visible_bias
    }

    pub fn visible_bias_mut(&mut self) -> &mut [f64] {
        &mut self.visible_bias
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.hidden_bias
    }

    pub fn hidden_bias_mut(&mut self) -> &mut [f64] {
        &mut self.hidden_bias
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.visible_bias)
            .chain(&self.hidden_bias)
            .all(|x| x.is_finite())
    }

    /// The same model with visible and hidden roles exchanged (`W → Wᵀ`, `b ↔ c`).
    pub fn transpose(&self) -> Self {
        let mut weights = vec![0.0; self.weights.len()];
        for i in 0..self.n_visible {
            for j in 0..self.n_hidden {
                weights[j * self.n_visible + i] = self.weight(i, j);
            }
        }
        RbmParams {
            n_visible: self.n_hidden,
            n_hidden: self.n_visible,
            weights,
            visible_bias: self.hidden_bias.clone(),
            hidden_bias: self.visible_bias.clone(),
        }
    }

    /// Every parameter multiplied by `beta`.
    pub fn scaled(&self, beta: f64) -> Self {
        let scale = |xs: &[f64]| xs.iter().map(|x| beta * x).collect::<Vec<_>>();
        RbmParams {
            n_visible: self.n_visible,
            n_hidden: self.n_hidden,
            weights: scale(&self.weights),
            visible_bias: scale(&self.visible_bias),
            hidden_bias: scale(&self.hidden_bias),
        }
    }

    pub(crate) fn check(&self, side: Side, got: usize) -> Result<()> {
        let expected = match side {
            Side::Visible => self.n_visible,
            Side::Hidden => self.n_hidden,
        };
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                side,
                expected,
                got,
            })
        }
    }

    /// `β (b + Wᵀv)`, the hidden pre-activations.
    pub(crate) fn hidden_input_at<U: Units + ?Sized>(&self, beta: f64, v: &U) -> Vec<f64> {
        let mut acc = self.hidden_bias.clone();
        for i in 0..self.n_visible {
            let x = v.value(i);
            if x != 0.0 {
                let row = &self.weights[i * self.n_hidden..(i + 1) * self.n_hidden];
                for (a, w) in acc.iter_mut().zip(row) {
                    *a += x * w;
                }
            }
        }
        if beta != 1.0 {
            acc.iter_mut().for_each(|a| *a *= beta);
        }
        acc
    }

    /// `β (c + Wh)`, the visible pre-activations.
    pub(crate) fn visible_input_at<U: Units + ?Sized>(&self, beta: f64, h: &U) -> Vec<f64> {
        let hv: Vec<f64> = (0..self.n_hidden).map(|j| h.value(j)).collect();
        (0..self.n_visible)
            .map(|i| {
                let row = &self.weights[i * self.n_hidden..(i + 1) * self.n_hidden];
                let dot: f64 = row.iter().zip(&hv).map(|(w, x)| w * x).sum();
                beta * (self.visible_bias[i] + dot)
            })
            .collect()
    }

    pub fn energy(&self, v: &BinaryState, h: &BinaryState) -> Result<f64> {
        self.check(Side::Visible, v.len())?;
        self.check(Side::Hidden, h.len())?;
        let coupling: f64 = self
            .hidden_input_at(1.0, v)
            .iter()
            .zip(&self.hidden_bias)
            .enumerate()
            .map(|(j, (x, b))| (x - b) * h.value(j))
            .sum();
        let vis: f64 = (0..self.n_visible)
            .map(|i| self.visible_bias[i] * v.value(i))
            .sum();
        let hid: f64 = (0..self.n_hidden)
            .map(|j| self.hidden_bias[j] * h.value(j))
            .sum();
        Ok(-(coupling + vis + hid))
    }

    /// `F(v) = -cᵀv - Σⱼ softplus(bⱼ + (Wᵀv)ⱼ)`.
    pub fn free_energy_v(&self, v: &BinaryState) -> Result<f64> {
        self.free_energy_v_at(1.0, v)
    }

    /// Visible free energy of the energy-scaled joint `exp(-β E)`.
    pub fn free_energy_v_at(&self, beta: f64, v: &BinaryState) -> Result<f64> {
        self.check(Side::Visible, v.len())?;
        Ok(self.free_energy_v_unchecked(beta, v))
    }

    pub(crate) fn free_energy_v_unchecked(&self, beta: f64, v: &BinaryState) -> f64 {
        let linear: f64 = (0..self.n_visible)
            .map(|i| self.visible_bias[i] * v.value(i))
            .sum();
        let soft: f64 = self.hidden_input_at(beta, v).into_iter().map(softplus).sum();
        -beta * linear - soft
    }

    /// `F̃(h) = -bᵀh - Σᵢ softplus(cᵢ + (Wh)ᵢ)`.
    pub fn free_energy_h(&self, h: &BinaryState) -> Result<f64> {
        self.free_energy_h_at(1.0, h)
    }

    pub fn free_energy_h_at(&self, beta: f64, h: &BinaryState) -> Result<f64> {
        self.check(Side::Hidden, h.len())?;
        Ok(self.free_energy_h_unchecked(beta, h))
    }

    pub(crate) fn free_energy_h_unchecked(&self, beta: f64, h: &BinaryState) -> f64 {
        let linear: f64 = (0..self.n_hidden)
            .map(|j| self.hidden_bias[j] * h.value(j))
            .sum();
        let soft: f64 = self.visible_input_at(beta, h).into_iter().map(softplus).sum();
        -beta * linear - soft
    }

    pub fn cond_h_given_v(&self, v: &BinaryState) -> Result<UnitProbabilities> {
        self.cond_h_given_v_at(1.0, v)
    }

    pub fn cond_h_given_v_at<U: Units + ?Sized>(
        &self,
        beta: f64,
        v: &U,
    ) -> Result<UnitProbabilities> {
        self.check(Side::Visible, v.len())?;
        Ok(UnitProbabilities(
            self.hidden_input_at(beta, v).into_iter().map(sigmoid).collect(),
        ))
    }

    pub fn cond_v_given_h(&self, h: &BinaryState) -> Result<UnitProbabilities> {
        self.cond_v_given_h_at(1.0, h)
    }

    pub fn cond_v_given_h_at<U: Units + ?Sized>(
        &self,
        beta: f64,
        h: &U,
    ) -> Result<UnitProbabilities> {
        self.check(Side::Hidden, h.len())?;
        Ok(UnitProbabilities(
            self.visible_input_at(beta, h).into_iter().map(sigmoid).collect(),
        ))
    }

    /// `h ~ p(h | v)` at inverse temperature `beta`; consumes `n_hidden` draws.
    pub(crate) fn sample_h_unchecked(&self, beta: f64, v: &BinaryState, rng: &mut RngStream) -> BinaryState {
        BinaryState(
            self.hidden_input_at(beta, v)
                .into_iter()
                .map(|x| rng.bernoulli(sigmoid(x)) as u8)
                .collect(),
        )
    }

    /// `v ~ p(v | h)` at inverse temperature `beta`; consumes `n_visible` draws.
    pub(crate) fn sample_v_unchecked(&self, beta: f64, h: &BinaryState, rng: &mut RngStream) -> BinaryState {
        BinaryState(
            self.visible_input_at(beta, h)
                .into_iter()
                .map(|x| rng.bernoulli(sigmoid(x)) as u8)
                .collect(),
        )
    }

    pub fn sample_h(&self, v: &BinaryState, rng: &mut RngStream) -> Result<BinaryState> {
        self.check(Side::Visible, v.len())?;
        Ok(self.sample_h_unchecked(1.0, v, rng))
    }

    pub fn sample_v(&self, h: &BinaryState, rng: &mut RngStream) -> Result<BinaryState> {
        self.check(Side::Hidden, h.len())?;
        Ok(self.sample_v_unchecked(1.0, h, rng))
    }

    /// One block-Gibbs sweep: `h ~ p(h | v)`, then `v' ~ p(v | h)`. Returns `(v', h)`.
    pub fn gibbs_step(&self, v: &BinaryState, rng: &mut RngStream) -> Result<(BinaryState, BinaryState)> {
        self.gibbs_step_at(1.0, v, rng)
    }

    pub fn gibbs_step_at(
        &self,
        beta: f64,
        v: &BinaryState,
        rng: &mut RngStream,
    ) -> Result<(BinaryState, BinaryState)> {
        self.check(Side::Visible, v.len())?;
        let h = self.sample_h_unchecked(beta, v, rng);
        let v_next = self.sample_v_unchecked(beta, &h, rng);
        Ok((v_next, h))
    }

    /// `log Z` by enumerating the smaller side, refusing beyond [`DEFAULT_CAP_BITS`].
    pub fn exact_log_z(&self) -> Result<f64> {
        self.exact_log_z_at(1.0, DEFAULT_CAP_BITS)
    }

    /// `log Σ_{v,h} exp(-β E(v, h))`, enumerating whichever side is smaller.
    pub fn exact_log_z_at(&self, beta: f64, cap_bits: usize) -> Result<f64> {
        let bits = self.n_visible.min(self.n_hidden);
        if bits > cap_bits {
            return Err(Error::EnumerationCap { bits, cap_bits });
        }
        let terms: Vec<f64> = if self.n_hidden <= self.n_visible {
            BinaryState::enumerate(self.n_hidden)
                .map(|h| -self.free_energy_h_unchecked(beta, &h))
                .collect()
        } else {
            BinaryState::enumerate(self.n_visible)
                .map(|v| -self.free_energy_v_unchecked(beta, &v))
                .collect()
        };
        Ok(log_sum_exp(&terms))
    }

    pub fn exact_log_prob_v(&self, v: &BinaryState) -> Result<f64> {
        let f = self.free_energy_v(v)?;
        Ok(-f - self.exact_log_z()?)
    }

    /// Full visible marginal in index order (see [`BinaryState::from_index`]).
    pub fn exact_marginal_v(&self) -> Result<Vec<(BinaryState, f64)>> {
        self.exact_marginal_v_at(1.0)
    }

    pub fn exact_marginal_v_at(&self, beta: f64) -> Result<Vec<(BinaryState, f64)>> {
        if self.n_visible > MARGINAL_CAP_BITS {
            return Err(Error::EnumerationCap {
                bits: self.n_visible,
                cap_bits: MARGINAL_CAP_BITS,
            });
        }
        let log_z = self.exact_log_z_at(beta, DEFAULT_CAP_BITS)?;
        Ok(BinaryState::enumerate(self.n_visible)
            .map(|v| {
                let p = (-self.free_energy_v_unchecked(beta, &v) - log_z).exp();
                (v, p)
            })
            .collect())
    }

    /// Full hidden marginal `p(h)` in index order.
    pub fn exact_marginal_h(&self) -> Result<Vec<(BinaryState, f64)>> {
        self.transpose().exact_marginal_v()
    }
}
