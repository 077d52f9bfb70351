//! The oracle and invariant suite behind `deeptemper verify`.
//!
//! Every check compares a sampler, gradient or bound against brute-force
//! enumeration on small models and reports the measured error next to its
//! tolerance.

use std::fmt;

use crate::evaluation::{dbn_exact_log_likelihood, dbn_lower_bound, dbn_lower_bound_terms, exact_test_ll};
use crate::numeric::log_sum_exp;
use crate::rbm::{BinaryState, RbmParams, DEFAULT_CAP_BITS};
use crate::rng::RngStream;
use crate::samplers::balance::swap_balance_violation;
use crate::samplers::{
    dt_swap_log_ratio, pt_swap_log_ratio, sml_step, uniform_betas, CastEnsemble, ChainBank, DeepEnsemble,
    GammaSchedule, TemperedEnsemble,
};
use crate::training::{exact_ml_gradient, NegativePhase, RbmTrainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub measured: f64,
    pub tolerance: f64,
    pub note: String,
}

impl CheckResult {
    /// Passes when `measured ≤ tolerance`.
    pub fn at_most(name: &str, measured: f64, tolerance: f64, note: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            status: if measured <= tolerance { Status::Pass } else { Status::Fail },
            measured,
            tolerance,
            note: note.into(),
        }
    }

    pub fn skipped(name: &str, note: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            status: Status::Skip,
            measured: f64::NAN,
            tolerance: f64::NAN,
            note: note.into(),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.status {
            Status::Skip => write!(f, "{} {} ({})", self.status, self.name, self.note),
            _ => write!(
                f,
                "{} {}: measured {:.3e}, tolerance {:.3e} ({})",
                self.status, self.name, self.measured, self.tolerance, self.note
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Largest layer sizes drawn for the joint-enumeration oracles.
    pub max_visible: usize,
    pub max_hidden: usize,
    /// Sampler iterations for the stationarity checks.
    pub iterations: usize,
    /// Flips the sign of the cross-model swap ratio, to show the balance check catches it.
    pub inject_dt_sign_flip: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 2024,
            max_visible: 8,
            max_hidden: 8,
            iterations: 1_000_000,
            inject_dt_sign_flip: false,
        }
    }
}

/// Bit budget of full joint enumeration.
pub const JOINT_CAP_BITS: usize = 20;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// `log Σ_h exp(-E(v, h))` for every `v`, by summing the joint.
fn joint_log_unnormalized(p: &RbmParams) -> Vec<f64> {
    let hs: Vec<_> = BinaryState::enumerate(p.n_hidden()).collect();
    BinaryState::enumerate(p.n_visible())
        .map(|v| {
            let terms: Vec<f64> = hs.iter().map(|h| -p.energy(&v, h).unwrap()).collect();
            log_sum_exp(&terms)
        })
        .collect()
}

/// Free energies on both sides, `log Z` and `log p(v)` against full joint
/// enumeration on `n_models` random layers with weights in `[-3, 3]`.
pub fn oracle_equivalence(opts: &VerifyOptions, n_models: usize) -> CheckResult {
    const NAME: &str = "free energies, log Z and log p(v) vs joint enumeration";
    if opts.max_visible + opts.max_hidden > JOINT_CAP_BITS {
        return CheckResult::skipped(
            NAME,
            format!(
                "{}+{} units exceed the 2^{JOINT_CAP_BITS} joint enumeration cap",
                opts.max_visible, opts.max_hidden
            ),
        );
    }
    let mut rng = RngStream::new(opts.seed, 1);
    let mut worst = 0.0f64;
    for _ in 0..n_models {
        let n1 = 1 + rng.index(opts.max_visible);
        let n2 = 1 + rng.index(opts.max_hidden);
        let p = RbmParams::random(n1, n2, 3.0, &mut rng);
        let by_v = joint_log_unnormalized(&p);
        let by_h = joint_log_unnormalized(&p.transpose());
        let log_z = log_sum_exp(&by_v);
        worst = worst.max(rel_err(p.exact_log_z().unwrap(), log_z));
        for (v, lv) in BinaryState::enumerate(n1).zip(&by_v) {
            worst = worst.max(rel_err(-p.free_energy_v(&v).unwrap(), *lv));
            worst = worst.max(rel_err(p.exact_log_prob_v(&v).unwrap(), lv - log_z));
        }
        for (h, lh) in BinaryState::enumerate(n2).zip(&by_h) {
            worst = worst.max(rel_err(-p.free_energy_h(&h).unwrap(), *lh));
        }
    }
    CheckResult::at_most(NAME, worst, 1e-9, format!("{n_models} models, relative error"))
}

fn table(t: Vec<(BinaryState, f64)>) -> (Vec<BinaryState>, Vec<f64>) {
    t.into_iter().unzip()
}

/// Detailed balance of the tempered swap kernel on 8-unit visible spaces.
pub fn balance_pt(opts: &VerifyOptions, n_models: usize) -> CheckResult {
    let mut rng = RngStream::new(opts.seed, 2);
    let mut worst = 0.0f64;
    for _ in 0..n_models {
        let p = RbmParams::random(8, 4, 1.5, &mut rng);
        let (b_lo, b_hi) = (1.0, rng.uniform());
        let (states, lo) = table(p.exact_marginal_v_at(b_lo).unwrap());
        let (_, hi) = table(p.exact_marginal_v_at(b_hi).unwrap());
        worst = worst.max(swap_balance_violation(&lo, &hi, &states, |x, y| {
            pt_swap_log_ratio(&p, b_lo, b_hi, x, y).unwrap()
        }));
    }
    CheckResult::at_most("detailed balance, tempered swaps", worst, 1e-12, format!("{n_models} models, 2^8 states"))
}

/// Detailed balance of the cross-model swap kernel on an 8-unit shared space.
pub fn balance_dt(opts: &VerifyOptions, n_models: usize) -> CheckResult {
    let mut rng = RngStream::new(opts.seed, 3);
    let sign = if opts.inject_dt_sign_flip { -1.0 } else { 1.0 };
    let mut worst = 0.0f64;
    for _ in 0..n_models {
        let lower = RbmParams::random(5, 8, 1.5, &mut rng);
        let upper = RbmParams::random(8, 4, 1.5, &mut rng);
        let (states, p) = table(lower.exact_marginal_h().unwrap());
        let (_, q) = table(upper.exact_marginal_v().unwrap());
        worst = worst.max(swap_balance_violation(&p, &q, &states, |x, y| {
            sign * dt_swap_log_ratio(&lower, &upper, x, y).unwrap()
        }));
    }
    let note = if opts.inject_dt_sign_flip {
        format!("{n_models} model pairs, 2^8 states, sign flip injected")
    } else {
        format!("{n_models} model pairs, 2^8 states")
    };
    CheckResult::at_most("detailed balance, cross-model swaps", worst, 1e-12, note)
}

/// Total variation between a histogram over visible indices and a marginal table.
pub fn total_variation(counts: &[u64], marginal: &[(BinaryState, f64)]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(marginal)
        .map(|(&c, (_, p))| (c as f64 / n as f64 - p).abs())
        .sum::<f64>()
        / 2.0
}

fn count(counts: &mut [u64], states: impl IntoIterator<Item = BinaryState>) {
    for s in states {
        counts[s.to_index() as usize] += 1;
    }
}

pub fn frozen_model(opts: &VerifyOptions, stream: u64) -> RbmParams {
    RbmParams::random(4, 4, 2.0, &mut RngStream::new(opts.seed, stream))
}

pub fn stationarity_sml(opts: &VerifyOptions) -> CheckResult {
    let p = frozen_model(opts, 10);
    let mut bank = ChainBank::seeded(opts.seed, 0, 1, 4);
    let mut counts = vec![0u64; 16];
    for _ in 0..opts.iterations {
        sml_step(&p, &mut bank, 1).unwrap();
        count(&mut counts, bank.states());
    }
    let tv = total_variation(&counts, &p.exact_marginal_v().unwrap());
    CheckResult::at_most("stationarity, SML chain", tv, 0.02, format!("{} steps, 4×4, TV", opts.iterations))
}

pub fn stationarity_pt(opts: &VerifyOptions) -> CheckResult {
    let p = frozen_model(opts, 11);
    let mut ens = TemperedEnsemble::seeded(opts.seed, uniform_betas(5), 1, 4, 10_000).unwrap();
    let mut rng = RngStream::new(opts.seed, 12);
    let mut counts = vec![0u64; 16];
    for _ in 0..opts.iterations {
        ens.step(&p, &mut rng).unwrap();
        count(&mut counts, ens.target_bank().states());
    }
    let tv = total_variation(&counts, &p.exact_marginal_v().unwrap());
    CheckResult::at_most("stationarity, PT (M=5) target chain", tv, 0.02, format!("{} iterations, TV", opts.iterations))
}

/// Runs CAST (M=5, X=10) on a frozen model; returns the coupled-chain TV and the
/// largest error of the adapted weights against tempered enumeration.
pub fn cast_frozen(opts: &VerifyOptions) -> (f64, f64) {
    let p = frozen_model(opts, 13);
    let betas = uniform_betas(5);
    let mut ens = CastEnsemble::seeded(opts.seed, betas.clone(), 1, 10, 4, GammaSchedule::for_levels(5), 10_000).unwrap();
    let mut rng = RngStream::new(opts.seed, 14);
    let mut counts = vec![0u64; 16];
    for _ in 0..opts.iterations {
        ens.step(&p, &mut rng).unwrap();
        count(&mut counts, ens.coupled_states());
    }
    let tv = total_variation(&counts, &p.exact_marginal_v().unwrap());
    let log_z: Vec<f64> = betas
        .iter()
        .map(|&b| p.exact_log_z_at(b, DEFAULT_CAP_BITS).unwrap())
        .collect();
    let weight_err = ens
        .log_weight_differences()
        .iter()
        .zip(&log_z)
        .map(|(g, lz)| (g - (log_z[0] - lz)).abs())
        .fold(0.0, f64::max);
    (tv, weight_err)
}

pub fn stationarity_dt(opts: &VerifyOptions) -> CheckResult {
    let mut r = RngStream::new(opts.seed, 15);
    let layers = vec![RbmParams::random(4, 4, 2.0, &mut r), RbmParams::random(4, 4, 2.0, &mut r)];
    let target = layers[0].exact_marginal_v().unwrap();
    let mut ens = DeepEnsemble::seeded(opts.seed, layers, 1, 10_000).unwrap();
    let mut rng = RngStream::new(opts.seed, 16);
    let mut counts = vec![0u64; 16];
    for _ in 0..opts.iterations {
        let neg = ens.neg_swaps(&mut rng).unwrap();
        ens.toggle_parity();
        count(&mut counts, neg[0].iter().cloned());
    }
    let tv = total_variation(&counts, &target);
    CheckResult::at_most("stationarity, DT (M=2) bottom layer", tv, 0.02, format!("{} iterations, TV", opts.iterations))
}

/// Exact-expectation gradient against central differences of the exact mean log-likelihood.
pub fn gradient_check(opts: &VerifyOptions, n_models: usize) -> CheckResult {
    let mut rng = RngStream::new(opts.seed, 17);
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..n_models {
        let p = RbmParams::random(4, 3, 1.0, &mut rng);
        let data: Vec<_> = (0..20).map(|_| BinaryState::random(4, &mut rng)).collect();
        let g = exact_ml_gradient(&p, &data).unwrap();
        let analytic: Vec<f64> = g.weights.iter().chain(&g.visible_bias).chain(&g.hidden_bias).copied().collect();
        for (k, a) in analytic.iter().enumerate() {
            let shifted = |d: f64| {
                let mut q = p.clone();
                match k {
                    k if k < 12 => q.weights_mut()[k] += d,
                    k if k < 16 => q.visible_bias_mut()[k - 12] += d,
                    k => q.hidden_bias_mut()[k - 16] += d,
                }
                exact_test_ll(&q, &data).unwrap()
            };
            let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            worst = worst.max((fd - a).abs() / a.abs().max(1e-3));
        }
    }
    CheckResult::at_most("gradient vs finite differences", worst, 1e-6, format!("{n_models} 4×3 models, all parameters"))
}

/// Single-level ensembles against a plain SML trainer; measured is the number of diverging trainers.
pub fn degeneracy(opts: &VerifyOptions, updates: usize) -> CheckResult {
    let seed = opts.seed;
    let k = 5;
    let mut r = RngStream::new(seed, 18);
    let init = RbmParams::initialize(6, 4, &mut r);
    let modes: Vec<_> = (0..3).map(|_| BinaryState::random(6, &mut r)).collect();
    let data = |rng: &mut RngStream| -> Vec<BinaryState> { (0..k).map(|_| modes[rng.index(3)].clone()).collect() };
    let mut sml = RbmTrainer::new(init.clone(), NegativePhase::Sml(ChainBank::seeded(seed, 0, k, 6)));
    let mut pt = RbmTrainer::new(
        init.clone(),
        NegativePhase::Pt(TemperedEnsemble::seeded(seed, vec![1.0], k, 6, 100).unwrap()),
    );
    let mut cast = RbmTrainer::new(
        init.clone(),
        NegativePhase::Cast(CastEnsemble::seeded(seed, vec![1.0], k, 1, 6, GammaSchedule::default(), 100).unwrap()),
    );
    let mut dt = DeepEnsemble::seeded(seed, vec![init], k, 100).unwrap();
    let cfg = crate::training::TrainConfig {
        learning_rate: 0.01,
        minibatch_size: k,
        gibbs_steps_per_update: 1,
        total_updates: updates as u64,
        seed,
        eval_interval: 1,
    };
    let mut d: Vec<RngStream> = (0..4).map(|_| RngStream::new(seed, 19)).collect();
    let mut s: Vec<RngStream> = (0..4).map(|_| RngStream::new(seed, 20)).collect();
    for _ in 0..updates {
        sml.step(&data(&mut d[0]), cfg.learning_rate, 1, &mut s[0]).unwrap();
        pt.step(&data(&mut d[1]), cfg.learning_rate, 1, &mut s[1]).unwrap();
        cast.step(&data(&mut d[2]), cfg.learning_rate, 1, &mut s[2]).unwrap();
        let batch = data(&mut d[3]);
        crate::training::dt_learn_step(&mut dt, &cfg, &batch, &mut s[3], Default::default()).unwrap();
    }
    let reference = (&sml.params, sml.negative.samples());
    let diverged = [
        (&pt.params, pt.negative.samples()) != reference,
        (&cast.params, cast.negative.samples()) != reference,
        (&dt.layers()[0], dt.visible_states(0)) != reference,
    ]
    .iter()
    .filter(|&&x| x)
    .count();
    CheckResult::at_most(
        "single-level PT, CAST and DT reproduce SML bitwise",
        diverged as f64,
        0.0,
        format!("{updates} updates, count of diverging trainers"),
    )
}

/// DBN bound below exact likelihood on random 2-layer stacks; returns the largest
/// violation `bound − exact` and the single-layer collapse error.
pub fn bound_checks(opts: &VerifyOptions, n_models: usize) -> (CheckResult, CheckResult) {
    let mut rng = RngStream::new(opts.seed, 21);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut collapse = 0.0f64;
    for _ in 0..n_models {
        let n1 = 2 + rng.index(4);
        let n2 = 2 + rng.index(3);
        let n3 = 1 + rng.index(4);
        let layers = vec![RbmParams::random(n1, n2, 2.0, &mut rng), RbmParams::random(n2, n3, 2.0, &mut rng)];
        let test: Vec<_> = BinaryState::enumerate(n1).collect();
        let bounds = dbn_lower_bound_terms(&layers, &test).unwrap();
        for (v, b) in test.iter().zip(bounds) {
            worst_gap = worst_gap.max(b - dbn_exact_log_likelihood(&layers, v).unwrap());
        }
        let single = dbn_lower_bound(&layers[..1], &test).unwrap();
        collapse = collapse.max((single - exact_test_ll(&layers[0], &test).unwrap()).abs());
    }
    (
        CheckResult::at_most("DBN bound ≤ exact DBN log-likelihood", worst_gap.max(0.0), 1e-9, format!("{n_models} stacks, largest bound − exact")),
        CheckResult::at_most("single-layer bound equals test log-likelihood", collapse, 1e-12, format!("{n_models} layers")),
    )
}

/// Every check at its default scale.
pub fn run_all(opts: &VerifyOptions) -> Vec<CheckResult> {
    let (cast_tv, cast_weights) = cast_frozen(opts);
    let (bound, collapse) = bound_checks(opts, 200);
    vec![
        oracle_equivalence(opts, 100),
        balance_pt(opts, 20),
        balance_dt(opts, 20),
        stationarity_sml(opts),
        stationarity_pt(opts),
        CheckResult::at_most("stationarity, CAST (M=5, X=10) coupled chains", cast_tv, 0.02, format!("{} iterations, TV", opts.iterations)),
        stationarity_dt(opts),
        gradient_check(opts, 10),
        degeneracy(opts, 10_000),
        bound,
        collapse,
        CheckResult::at_most(
            "CAST weights vs tempered log-partition differences",
            cast_weights,
            0.1,
            format!("{} iterations, nats", opts.iterations),
        ),
    ]
}
