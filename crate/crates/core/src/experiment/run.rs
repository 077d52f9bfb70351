//! One training cell: a method, a seed and a learning rate.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::dataset::{read_set_checked, write_set, ModesSpec, ModesStream};
use crate::error::{Error, Result};
use crate::evaluation::{dbn_lower_bound_auto, layer_test_lls, swap_report};
use crate::metrics::{truncate_metrics, MetricsRow, MetricsWriter};
use crate::rbm::{BinaryState, RbmParams};
use crate::rng::{streams, RngStream};
use crate::samplers::{CastEnsemble, ChainBank, DeepEnsemble, SwapStats, TemperedEnsemble};
use crate::training::{dt_learn_step, greedy_pretrain, NegativePhase, RbmTrainer, TrainConfig};

use super::checkpoint::{self, Checkpoint, ModelState, RunState};
use super::config::{ExperimentConfig, Method};

pub const TEST_SET_FILE: &str = "test_set.bmds";
pub const SPEC_FILE: &str = "modes_spec.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bmck";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub seed: u64,
    pub learning_rate: f64,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        format!("seed_{}_lr_{}", self.seed, self.learning_rate)
    }
}

/// Every (seed + offset, learning rate) pair, seed-major.
pub fn cells(cfg: &ExperimentConfig, seed_offset: u64) -> Vec<Cell> {
    cfg.seeds
        .iter()
        .flat_map(|&s| {
            cfg.learning_rates.iter().map(move |&lr| Cell {
                seed: s + seed_offset,
                learning_rate: lr,
            })
        })
        .collect()
}

pub fn cell_dir(root: &Path, method: Method, cell: &Cell) -> PathBuf {
    root.join(method.name()).join(cell.dir_name())
}

/// The dataset shared by every cell of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub spec: ModesSpec,
    pub test: Vec<BinaryState>,
}

/// Builds the spec and the fixed test set from the dataset seed alone.
pub fn build_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let spec = cfg.dataset.spec()?;
    let mut rng = RngStream::new(cfg.dataset.seed, streams::TEST_SET);
    let test = spec.sample(cfg.dataset.test_size, &mut rng);
    Ok(ExperimentData { spec, test })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_snapshot(dir: &Path, cfg: &ExperimentConfig, spec: &ModesSpec) -> Result<()> {
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml_string())?;
    let json = serde_json::to_string_pretty(spec).expect("spec serializes");
    write_text(&dir.join(SPEC_FILE), &json)
}

/// Writes the test set, the spec and the config snapshot under `root`. Rerunning
/// rewrites byte-identical files.
pub fn generate_data(cfg: &ExperimentConfig, root: &Path) -> Result<ExperimentData> {
    let data = build_data(cfg)?;
    ensure_dir(root)?;
    write_set(&root.join(TEST_SET_FILE), cfg.dataset.height, cfg.dataset.width, &data.test)?;
    write_snapshot(root, cfg, &data.spec)?;
    Ok(data)
}

/// Reads the persisted test set, generating it first when absent.
pub fn load_or_generate_data(cfg: &ExperimentConfig, root: &Path) -> Result<ExperimentData> {
    let path = root.join(TEST_SET_FILE);
    if !path.exists() {
        return generate_data(cfg, root);
    }
    let spec = cfg.dataset.spec()?;
    let set = read_set_checked(&path, cfg.dataset.height, cfg.dataset.width)?;
    Ok(ExperimentData {
        spec,
        test: set.samples,
    })
}

/// Fresh state of a cell. Layers are initialized bottom-up from the seed's
/// init stream; the sampler's chains follow the layouts documented on each
/// ensemble, so equivalent configurations share streams.
pub fn init_state(cfg: &ExperimentConfig, cell: &Cell, spec: &ModesSpec) -> Result<RunState> {
    let tcfg = cfg.train_config(cell.seed, cell.learning_rate);
    let mut init = RngStream::new(cell.seed, streams::INIT);
    let mut layers: Vec<RbmParams> = cfg
        .layer_sizes
        .windows(2)
        .map(|w| RbmParams::initialize(w[0], w[1], &mut init))
        .collect();
    let mut data = ModesStream::new(spec.clone(), RngStream::new(cell.seed, streams::DATA));
    let mut step_rng = RngStream::new(cell.seed, streams::STEP);
    let k = tcfg.minibatch_size;
    let n_visible = cfg.layer_sizes[0];
    let window = cfg.evaluation.swap_window;
    let mut pretrain_updates = Vec::new();
    let model = match cfg.method {
        Method::Sml => ModelState::Rbm(RbmTrainer::new(
            layers.remove(0),
            NegativePhase::Sml(ChainBank::seeded(cell.seed, 0, k, n_visible)),
        )),
        Method::Pt => {
            let betas = cfg.betas().expect("validated");
            ModelState::Rbm(RbmTrainer::new(
                layers.remove(0),
                NegativePhase::Pt(TemperedEnsemble::seeded(cell.seed, betas, k, n_visible, window)?),
            ))
        }
        Method::Cast => {
            let betas = cfg.betas().expect("validated");
            let ratio = cfg.cast.as_ref().expect("validated").ratio;
            let schedule = cfg.gamma_schedule().expect("validated");
            ModelState::Rbm(RbmTrainer::new(
                layers.remove(0),
                NegativePhase::Cast(CastEnsemble::seeded(
                    cell.seed, betas, k, ratio, n_visible, schedule, window,
                )?),
            ))
        }
        Method::Dt => {
            if cfg.pretrain.enabled {
                let mut eval_rng = RngStream::new(cell.seed, streams::TRAIN_EVAL_SET);
                let train_eval = spec.sample(cfg.dataset.train_eval_size, &mut eval_rng);
                let reports = greedy_pretrain(&mut layers, &tcfg, &cfg.pretrain, &mut data, &train_eval, &mut step_rng)?;
                pretrain_updates = reports.iter().map(|r| r.updates).collect();
            }
            let mut ens = DeepEnsemble::seeded(cell.seed, layers, k, window)?;
            ens.set_swaps_enabled(cfg.dt.as_ref().is_none_or(|d| d.swaps_enabled));
            ModelState::Deep(ens)
        }
    };
    Ok(RunState {
        iteration: 0,
        model,
        data,
        step_rng,
        elapsed_seconds: 0.0,
        pretrain_updates,
    })
}

/// One parameter update of whichever method the state holds.
pub fn advance(cfg: &ExperimentConfig, tcfg: &TrainConfig, state: &mut RunState) -> Result<()> {
    use crate::dataset::DataSource;
    let batch = state.data.next_batch(tcfg.minibatch_size);
    match &mut state.model {
        ModelState::Rbm(trainer) => trainer.step(
            &batch,
            tcfg.learning_rate,
            tcfg.gibbs_steps_per_update,
            &mut state.step_rng,
        )?,
        ModelState::Deep(ens) => {
            let mode = cfg.dt.as_ref().map(|d| d.up_pass).unwrap_or_default();
            dt_learn_step(ens, tcfg, &batch, &mut state.step_rng, mode)?
        }
    }
    state.iteration += 1;
    Ok(())
}

pub fn layers(model: &ModelState) -> Vec<RbmParams> {
    match model {
        ModelState::Rbm(t) => vec![t.params.clone()],
        ModelState::Deep(ens) => ens.layers().to_vec(),
    }
}

pub fn swap_stats(model: &ModelState) -> Option<&SwapStats> {
    match model {
        ModelState::Rbm(t) => match &t.negative {
            NegativePhase::Sml(_) => None,
            NegativePhase::Pt(e) => Some(e.swap_stats()),
            NegativePhase::Cast(e) => Some(e.swap_stats()),
        },
        ModelState::Deep(ens) => Some(ens.swap_stats()),
    }
}

/// Metrics rows of one evaluation, one per layer.
///
/// Layer `ℓ`'s bound is that of the DBN formed by layers `1..=ℓ`, so the first
/// row's bound is the RBM's exact test log-likelihood.
pub fn evaluate(
    cfg: &ExperimentConfig,
    state: &RunState,
    test: &[BinaryState],
    seed: u64,
    learning_rate: f64,
    seconds: f64,
) -> Result<Vec<MetricsRow>> {
    let layers = layers(&state.model);
    let lls = layer_test_lls(&layers, test)?;
    let rates = swap_stats(&state.model).map(swap_report).unwrap_or_default();
    let mut rng = RngStream::new(seed, streams::EVAL);
    let mut rows = Vec::with_capacity(layers.len());
    for (l, ll) in lls.iter().enumerate() {
        let bound = if l == 0 {
            *ll
        } else {
            Some(dbn_lower_bound_auto(&layers[..=l], test, cfg.evaluation.monte_carlo_bound, &mut rng)?.mean)
        };
        rows.push(MetricsRow {
            iteration: state.iteration,
            layer: l + 1,
            test_ll_nats: *ll,
            dbn_bound_nats: bound,
            swap_rates: rates.clone(),
            learning_rate,
            seconds,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell: Cell,
    pub dir: PathBuf,
    pub final_rows: Vec<MetricsRow>,
    pub resumed_from: Option<u64>,
}

/// Runs (or resumes) one cell to `total_updates`, evaluating and checkpointing
/// every `eval_interval` updates and once more at the end.
///
/// `stop_after` halts the loop early at the given iteration, leaving a
/// checkpoint to resume from.
pub fn run_cell(
    cfg: &ExperimentConfig,
    root: &Path,
    data: &ExperimentData,
    cell: &Cell,
    resume: bool,
    stop_after: Option<u64>,
) -> Result<CellOutcome> {
    if data.test.is_empty() {
        return Err(Error::config("dataset.test_size", "training needs a non-empty test set"));
    }
    let dir = cell_dir(root, cfg.method, cell);
    ensure_dir(&dir)?;
    let metrics_path = dir.join(METRICS_FILE);
    let ckpt_path = dir.join(CHECKPOINT_FILE);
    let tcfg = cfg.train_config(cell.seed, cell.learning_rate);
    let n_pairs = cfg.n_swap_pairs();

    let (mut state, resumed_from) = if resume && ckpt_path.exists() {
        let ck = checkpoint::load(&ckpt_path)?;
        if ck.method != cfg.method || ck.seed != cell.seed || ck.learning_rate != cell.learning_rate {
            return Err(Error::Format {
                path: ckpt_path.clone(),
                reason: "checkpoint belongs to a different cell".into(),
            });
        }
        if metrics_path.exists() {
            truncate_metrics(&metrics_path, ck.state.iteration)?;
        }
        let it = ck.state.iteration;
        (ck.state, Some(it))
    } else {
        if metrics_path.exists() {
            std::fs::remove_file(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
        }
        (init_state(cfg, cell, &data.spec)?, None)
    };
    write_snapshot(&dir, cfg, &data.spec)?;
    let mut writer = MetricsWriter::open(&metrics_path, n_pairs)?;
    let started = Instant::now();
    let base_seconds = state.elapsed_seconds;
    let clock = |started: &Instant| {
        if cfg.record_wall_clock {
            base_seconds + started.elapsed().as_secs_f64()
        } else {
            0.0
        }
    };

    let mut last_rows = Vec::new();
    let checkpoint_here = |state: &mut RunState, writer: &mut MetricsWriter| -> Result<Vec<MetricsRow>> {
        state.elapsed_seconds = clock(&started);
        let rows = evaluate(cfg, state, &data.test, cell.seed, cell.learning_rate, state.elapsed_seconds)?;
        rows.iter().try_for_each(|r| writer.write(r))?;
        checkpoint::save(
            &ckpt_path,
            &Checkpoint {
                method: cfg.method,
                seed: cell.seed,
                learning_rate: cell.learning_rate,
                state: state.clone(),
            },
        )?;
        Ok(rows)
    };

    if resumed_from.is_none() {
        last_rows = checkpoint_here(&mut state, &mut writer)?;
    }
    let total = tcfg.total_updates;
    while state.iteration < total {
        if stop_after.is_some_and(|s| state.iteration >= s) {
            break;
        }
        advance(cfg, &tcfg, &mut state)?;
        if state.iteration % tcfg.eval_interval == 0 || state.iteration == total {
            last_rows = checkpoint_here(&mut state, &mut writer)?;
        }
    }
    if last_rows.is_empty() {
        last_rows = evaluate(cfg, &state, &data.test, cell.seed, cell.learning_rate, state.elapsed_seconds)?;
    }
    Ok(CellOutcome {
        cell: *cell,
        dir,
        final_rows: last_rows,
        resumed_from,
    })
}

/// Re-scores a cell's checkpoint on the test set.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, path: &Path, test: &[BinaryState]) -> Result<Vec<MetricsRow>> {
    let ck = checkpoint::load(path)?;
    evaluate(cfg, &ck.state, test, ck.seed, ck.learning_rate, 0.0)
}
