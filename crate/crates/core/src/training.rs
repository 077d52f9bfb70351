//! Stochastic maximum likelihood gradients, the deep-tempering learning step and
//! the greedy layer-wise pretraining baseline.

use serde::{Deserialize, Serialize};

use crate::dataset::DataSource;
use crate::error::{Error, Result, Side};
use crate::rbm::{BinaryState, RbmParams, UnitProbabilities, Units};
use crate::rng::RngStream;
use crate::samplers::{sml_step, CastEnsemble, ChainBank, DeepEnsemble, TemperedEnsemble};

/// Chain group used by the sampler of pretraining layer `ℓ` is `PRETRAIN_CHAIN_GROUP + ℓ`.
pub const PRETRAIN_CHAIN_GROUP: u32 = 1000;

/// Log-likelihood gradient statistics, in the ascent direction.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTriple {
    /// Row-major `n_visible × n_hidden`.
    pub weights: Vec<f64>,
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
}

impl GradientTriple {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        GradientTriple {
            weights: vec![0.0; n_visible * n_hidden],
            visible_bias: vec![0.0; n_visible],
            hidden_bias: vec![0.0; n_hidden],
        }
    }

    pub fn n_visible(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    /// `θ ← θ + lr · Δθ`.
    pub fn apply(&self, params: &mut RbmParams, learning_rate: f64) -> Result<()> {
        params.check(Side::Visible, self.n_visible())?;
        params.check(Side::Hidden, self.n_hidden())?;
        let step = |theta: &mut [f64], delta: &[f64]| {
            for (t, d) in theta.iter_mut().zip(delta) {
                *t += learning_rate * d;
            }
        };
        step(params.weights_mut(), &self.weights);
        step(params.visible_bias_mut(), &self.visible_bias);
        step(params.hidden_bias_mut(), &self.hidden_bias);
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.visible_bias)
            .chain(&self.hidden_bias)
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Adds `sign · weight · [v ĥᵀ, v, ĥ]` with `ĥ = p(h | v)`.
    fn accumulate<U: Units + ?Sized>(&mut self, params: &RbmParams, v: &U, weight: f64) {
        let n2 = params.n_hidden();
        let h_mean: Vec<f64> = params
            .hidden_input_at(1.0, v)
            .into_iter()
            .map(crate::numeric::sigmoid)
            .collect();
        for i in 0..params.n_visible() {
            let x = v.value(i);
            if x != 0.0 {
                let wx = weight * x;
                self.visible_bias[i] += wx;
                let row = &mut self.weights[i * n2..(i + 1) * n2];
                for (g, h) in row.iter_mut().zip(&h_mean) {
                    *g += wx * h;
                }
            }
        }
        for (g, h) in self.hidden_bias.iter_mut().zip(&h_mean) {
            *g += weight * h;
        }
    }
}

fn check_batch<U: Units>(params: &RbmParams, batch: &[U]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    batch
        .iter()
        .try_for_each(|v| params.check(Side::Visible, v.len()))
}

/// `mean₊[v ĥᵀ] − mean₋[v ĥᵀ]` and likewise for the biases, with mean-field
/// hiddens `ĥ = p(h | v)` on both sides.
pub fn sml_grad<P: Units, N: Units>(
    params: &RbmParams,
    v_plus: &[P],
    v_minus: &[N],
) -> Result<GradientTriple> {
    check_batch(params, v_plus)?;
    check_batch(params, v_minus)?;
    let mut plus = GradientTriple::zeros(params.n_visible(), params.n_hidden());
    let mut minus = plus.clone();
    for v in v_plus {
        plus.accumulate(params, v, 1.0);
    }
    for v in v_minus {
        minus.accumulate(params, v, 1.0);
    }
    Ok(difference(plus, v_plus.len() as f64, minus, v_minus.len() as f64))
}

fn difference(plus: GradientTriple, n_plus: f64, minus: GradientTriple, n_minus: f64) -> GradientTriple {
    let diff = |a: Vec<f64>, b: Vec<f64>| -> Vec<f64> {
        a.into_iter().zip(b).map(|(p, m)| p / n_plus - m / n_minus).collect()
    };
    GradientTriple {
        weights: diff(plus.weights, minus.weights),
        visible_bias: diff(plus.visible_bias, minus.visible_bias),
        hidden_bias: diff(plus.hidden_bias, minus.hidden_bias),
    }
}

/// [`sml_grad`] with explicitly weighted samples on both sides. Weights are normalized per side.
pub fn sml_grad_weighted(
    params: &RbmParams,
    v_plus: &[(BinaryState, f64)],
    v_minus: &[(BinaryState, f64)],
) -> Result<GradientTriple> {
    let states = |s: &[(BinaryState, f64)]| s.iter().map(|(v, _)| v.clone()).collect::<Vec<_>>();
    check_batch(params, &states(v_plus))?;
    check_batch(params, &states(v_minus))?;
    let mut plus = GradientTriple::zeros(params.n_visible(), params.n_hidden());
    let mut minus = plus.clone();
    for (v, w) in v_plus {
        plus.accumulate(params, v, *w);
    }
    for (v, w) in v_minus {
        minus.accumulate(params, v, *w);
    }
    let total = |s: &[(BinaryState, f64)]| s.iter().map(|(_, w)| w).sum::<f64>();
    Ok(difference(plus, total(v_plus), minus, total(v_minus)))
}

/// Exact gradient of the mean data log-likelihood: the negative side is the
/// model's enumerated visible marginal.
pub fn exact_ml_gradient(params: &RbmParams, data: &[BinaryState]) -> Result<GradientTriple> {
    let plus: Vec<_> = data.iter().map(|v| (v.clone(), 1.0)).collect();
    let minus = params.exact_marginal_v()?;
    sml_grad_weighted(params, &plus, &minus)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub minibatch_size: usize,
    pub gibbs_steps_per_update: usize,
    pub total_updates: u64,
    pub seed: u64,
    pub eval_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            minibatch_size: 5,
            gibbs_steps_per_update: 1,
            total_updates: 50_000,
            seed: 0,
            eval_interval: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if self.minibatch_size == 0 {
            return Err(Error::config("train.minibatch_size", "must be at least 1"));
        }
        if self.gibbs_steps_per_update == 0 {
            return Err(Error::config("train.gibbs_steps_per_update", "must be at least 1"));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("train.eval_interval", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub enabled: bool,
    /// Number of most recent likelihood evaluations inspected.
    pub oscillation_window: usize,
    /// The detector fires once the window holds more decreases than this.
    pub oscillation_threshold: f64,
    /// Update budget per layer should the detector never fire; defaults to the joint budget.
    pub max_updates_per_layer: Option<u64>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            enabled: false,
            oscillation_window: 50,
            oscillation_threshold: 3.0,
            max_updates_per_layer: None,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.oscillation_window < 2 {
            return Err(Error::config("pretrain.oscillation_window", "must be at least 2"));
        }
        if self.oscillation_threshold.is_nan() || self.oscillation_threshold < 0.0 {
            return Err(Error::config("pretrain.oscillation_threshold", "must be non-negative"));
        }
        Ok(())
    }
}

/// Early stopping on oscillating training likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationDetector {
    window: usize,
    threshold: f64,
    history: Vec<f64>,
}

impl OscillationDetector {
    pub fn new(window: usize, threshold: f64) -> Self {
        OscillationDetector {
            window,
            threshold,
            history: Vec::new(),
        }
    }

    /// Records one evaluation and reports whether training should stop.
    pub fn observe(&mut self, value: f64) -> bool {
        self.history.push(value);
        let start = self.history.len().saturating_sub(self.window);
        let decreases = self.history[start..]
            .windows(2)
            .filter(|w| w[1] < w[0])
            .count();
        decreases as f64 > self.threshold
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }
}

/// How the positive phase of upper layers is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpPassMode {
    /// `hᵢ ~ pᵢ(h | input)`: binary samples from the aggregate posterior.
    #[default]
    Sampled,
    /// Conditional means propagated upwards.
    MeanField,
}

/// Positive-phase input of every layer: the data batch for the bottom layer,
/// then `hᵢ ~ pᵢ(h | vᵢ)` layer by layer. Draws are layer-major, then sample-major.
pub fn up_pass(layers: &[RbmParams], v_data: &[BinaryState], rng: &mut RngStream) -> Result<Vec<Vec<BinaryState>>> {
    crate::samplers::validate_stack(layers)?;
    v_data
        .iter()
        .try_for_each(|v| layers[0].check(Side::Visible, v.len()))?;
    let mut out = vec![v_data.to_vec()];
    for layer in &layers[..layers.len() - 1] {
        let below = out.last().unwrap();
        let above = below
            .iter()
            .map(|v| layer.sample_h_unchecked(1.0, v, rng))
            .collect();
        out.push(above);
    }
    Ok(out)
}

/// Mean-field variant of [`up_pass`]; consumes no randomness.
pub fn up_pass_mean_field(layers: &[RbmParams], v_data: &[BinaryState]) -> Result<Vec<Vec<UnitProbabilities>>> {
    crate::samplers::validate_stack(layers)?;
    let mut out: Vec<Vec<UnitProbabilities>> = vec![v_data
        .iter()
        .map(|v| {
            layers[0].check(Side::Visible, v.len())?;
            UnitProbabilities::new(v.bits().iter().map(|&b| b as f64).collect())
        })
        .collect::<Result<_>>()?];
    for layer in &layers[..layers.len() - 1] {
        let below = out.last().unwrap();
        let above = below
            .iter()
            .map(|v| layer.cond_h_given_v_at(1.0, v))
            .collect::<Result<_>>()?;
        out.push(above);
    }
    Ok(out)
}

/// One deep-tempering update.
///
/// 1. `gibbs_steps` rounds of [`DeepEnsemble::neg_swaps`], flipping the parity
///    flag after each;
/// 2. the positive phase from the up-pass (with `rng`, after the negative phase);
/// 3. a separate SML gradient and update `θᵢ ← θᵢ + lr·Δθᵢ` per layer.
pub fn dt_learn_step(
    ens: &mut DeepEnsemble,
    cfg: &TrainConfig,
    data_batch: &[BinaryState],
    rng: &mut RngStream,
    mode: UpPassMode,
) -> Result<()> {
    if data_batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut negatives = Vec::new();
    for _ in 0..cfg.gibbs_steps_per_update.max(1) {
        negatives = ens.neg_swaps(rng)?;
        ens.toggle_parity();
    }
    let grads = match mode {
        UpPassMode::Sampled => {
            let positives = up_pass(ens.layers(), data_batch, rng)?;
            layer_grads(ens.layers(), &positives, &negatives)?
        }
        UpPassMode::MeanField => {
            let positives = up_pass_mean_field(ens.layers(), data_batch)?;
            layer_grads(ens.layers(), &positives, &negatives)?
        }
    };
    for (layer, grad) in ens.layers_mut().iter_mut().zip(&grads) {
        grad.apply(layer, cfg.learning_rate)?;
    }
    Ok(())
}

fn layer_grads<P: Units>(
    layers: &[RbmParams],
    positives: &[Vec<P>],
    negatives: &[Vec<BinaryState>],
) -> Result<Vec<GradientTriple>> {
    layers
        .iter()
        .zip(positives)
        .zip(negatives)
        .map(|((layer, plus), minus)| sml_grad(layer, plus, minus))
        .collect()
}

/// Negative-phase sampler of a single-RBM trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NegativePhase {
    Sml(ChainBank),
    Pt(TemperedEnsemble),
    Cast(CastEnsemble),
}

impl NegativePhase {
    /// States the gradient's negative side is averaged over: the bank, the `β = 1`
    /// bank, or every coupled chain.
    pub fn samples(&self) -> Vec<BinaryState> {
        match self {
            NegativePhase::Sml(bank) => bank.states(),
            NegativePhase::Pt(ens) => ens.target_bank().states(),
            NegativePhase::Cast(ens) => ens.coupled_states(),
        }
    }
}

/// A single RBM trained by SML with one of three negative-phase samplers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmTrainer {
    pub params: RbmParams,
    pub negative: NegativePhase,
}

impl RbmTrainer {
    pub fn new(params: RbmParams, negative: NegativePhase) -> Self {
        RbmTrainer { params, negative }
    }

    /// `gibbs_steps` sampler iterations, then one gradient step on `data_batch`.
    pub fn step(
        &mut self,
        data_batch: &[BinaryState],
        learning_rate: f64,
        gibbs_steps: usize,
        rng: &mut RngStream,
    ) -> Result<()> {
        match &mut self.negative {
            NegativePhase::Sml(bank) => sml_step(&self.params, bank, gibbs_steps)?,
            NegativePhase::Pt(ens) => {
                for _ in 0..gibbs_steps {
                    ens.step(&self.params, rng)?;
                }
            }
            NegativePhase::Cast(ens) => {
                for _ in 0..gibbs_steps {
                    ens.step(&self.params, rng)?;
                }
            }
        }
        let grad = sml_grad(&self.params, data_batch, &self.negative.samples())?;
        grad.apply(&mut self.params, learning_rate)
    }
}

/// Outcome of pretraining one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainLayerReport {
    pub updates: u64,
    pub stopped_early: bool,
    pub likelihoods: Vec<f64>,
}

/// Greedy layer-wise SML pretraining of every layer but the top one.
///
/// Layer `ℓ` trains on up-passed data through the frozen layers below it, with
/// `minibatch_size` persistent chains from group `PRETRAIN_CHAIN_GROUP + ℓ`. Its
/// exact log-likelihood on the equally up-passed `train_eval` set is evaluated
/// every `eval_interval` updates and fed to the oscillation detector.
pub fn greedy_pretrain(
    layers: &mut [RbmParams],
    cfg: &TrainConfig,
    pcfg: &PretrainConfig,
    data: &mut dyn DataSource,
    train_eval: &[BinaryState],
    rng: &mut RngStream,
) -> Result<Vec<PretrainLayerReport>> {
    crate::samplers::validate_stack(layers)?;
    if !pcfg.enabled || layers.len() < 2 {
        return Ok(Vec::new());
    }
    cfg.validate()?;
    pcfg.validate()?;
    let budget = pcfg.max_updates_per_layer.unwrap_or(cfg.total_updates);
    let mut reports = Vec::new();
    for l in 0..layers.len() - 1 {
        let (below, rest) = layers.split_at_mut(l);
        let layer = &mut rest[0];
        let eval_set = lift(below, train_eval, rng)?;
        let mut bank = ChainBank::seeded(
            cfg.seed,
            PRETRAIN_CHAIN_GROUP + l as u32,
            cfg.minibatch_size,
            layer.n_visible(),
        );
        let mut detector = OscillationDetector::new(pcfg.oscillation_window, pcfg.oscillation_threshold);
        let mut updates = 0;
        let mut stopped_early = false;
        while updates < budget {
            let batch = lift(below, &data.next_batch(cfg.minibatch_size), rng)?;
            sml_step(layer, &mut bank, cfg.gibbs_steps_per_update)?;
            sml_grad(layer, &batch, &bank.states())?.apply(layer, cfg.learning_rate)?;
            updates += 1;
            if updates % cfg.eval_interval == 0 {
                let ll = crate::evaluation::exact_test_ll(layer, &eval_set)?;
                if detector.observe(ll) {
                    stopped_early = true;
                    break;
                }
            }
        }
        reports.push(PretrainLayerReport {
            updates,
            stopped_early,
            likelihoods: detector.history().to_vec(),
        });
    }
    Ok(reports)
}

/// Sampled up-pass of `v` through every layer in `layers`.
fn lift(layers: &[RbmParams], v: &[BinaryState], rng: &mut RngStream) -> Result<Vec<BinaryState>> {
    let mut current = v.to_vec();
    for layer in layers {
        current = current
            .iter()
            .map(|x| layer.sample_h(x, rng))
            .collect::<Result<_>>()?;
    }
    Ok(current)
}
