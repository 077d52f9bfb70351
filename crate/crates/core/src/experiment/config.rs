//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{make_spec, ModesSpec};
use crate::error::{Error, Result};
use crate::samplers::{uniform_betas, validate_betas, GammaSchedule, DEFAULT_SWAP_WINDOW};
use crate::training::{PretrainConfig, TrainConfig, UpPassMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sml,
    Pt,
    Cast,
    Dt,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sml => "sml",
            Method::Pt => "pt",
            Method::Cast => "cast",
            Method::Dt => "dt",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub height: usize,
    pub width: usize,
    pub n_modes: usize,
    pub seed: u64,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// Held-out samples scored by the pretraining stopping rule.
    #[serde(default = "default_train_eval_size")]
    pub train_eval_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flip_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_weights: Option<Vec<f64>>,
}

fn default_test_size() -> usize {
    5000
}

fn default_train_eval_size() -> usize {
    1000
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            height: 8,
            width: 8,
            n_modes: 3,
            seed: 1234,
            test_size: default_test_size(),
            train_eval_size: default_train_eval_size(),
            flip_probs: None,
            mixture_weights: None,
        }
    }
}

impl DatasetSection {
    pub fn spec(&self) -> Result<ModesSpec> {
        let spec = make_spec(self.height, self.width, self.n_modes, self.seed)
            .map_err(|e| Error::config("dataset", e.to_string()))?;
        match (&self.flip_probs, &self.mixture_weights) {
            (None, None) => Ok(spec),
            (flips, weights) => {
                let flips = flips.clone().unwrap_or_else(|| spec.flip_probs.clone());
                let weights = weights.clone().unwrap_or_else(|| spec.mixture_weights.clone());
                spec.with_profile(flips, weights)
                    .map_err(|e| Error::config("dataset.flip_probs", e.to_string()))
            }
        }
    }
}

/// Schedule fields of [`TrainConfig`]; learning rate and seed come from the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub minibatch_size: usize,
    pub gibbs_steps_per_update: usize,
    pub total_updates: u64,
    pub eval_interval: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            minibatch_size: 5,
            gibbs_steps_per_update: 1,
            total_updates: 50_000,
            eval_interval: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PtSection {
    /// Number of temperatures, spaced uniformly on `[0, 1]`. Ignored when `betas` is given.
    #[serde(default = "default_pt_temperatures")]
    pub n_temperatures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
}

fn default_pt_temperatures() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CastSection {
    #[serde(default = "default_cast_temperatures")]
    pub n_temperatures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    /// Nominal chains per tempering chain (the `X` of `1:X`).
    pub ratio: usize,
    #[serde(default = "default_gamma0")]
    pub gamma0: f64,
    /// Decay scale of the weight step size; defaults to the number of temperatures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
}

fn default_cast_temperatures() -> usize {
    100
}

fn default_gamma0() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DtSection {
    #[serde(default)]
    pub up_pass: UpPassMode,
    #[serde(default = "default_true")]
    pub swaps_enabled: bool,
}

impl Default for DtSection {
    fn default() -> Self {
        DtSection {
            up_pass: UpPassMode::Sampled,
            swaps_enabled: true,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    /// Fall back to a Monte Carlo DBN bound when hidden layers are too wide to enumerate.
    #[serde(default)]
    pub monte_carlo_bound: bool,
    #[serde(default = "default_swap_window")]
    pub swap_window: u64,
}

fn default_swap_window() -> u64 {
    DEFAULT_SWAP_WINDOW
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            monte_carlo_bound: false,
            swap_window: DEFAULT_SWAP_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub learning_rates: Vec<f64>,
    /// Visible size followed by each layer's hidden size; `[64, 10]` is one RBM.
    pub layer_sizes: Vec<usize>,
    pub output_dir: PathBuf,
    /// When false the `seconds` column is 0, so reruns give byte-identical files.
    #[serde(default)]
    pub record_wall_clock: bool,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pt: Option<PtSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cast: Option<CastSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<DtSection>,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

impl ExperimentConfig {
    /// The desk-scale profile for `method`: 8×8 images, 3 modes, 10 hidden units
    /// per layer, minibatch 5, five seeds.
    pub fn desk(method: Method) -> Self {
        let layer_sizes = if method == Method::Dt {
            vec![64, 10, 10]
        } else {
            vec![64, 10]
        };
        ExperimentConfig {
            method,
            seeds: vec![0, 1, 2, 3, 4],
            learning_rates: vec![1e-3],
            layer_sizes,
            output_dir: PathBuf::from("runs"),
            record_wall_clock: false,
            dataset: DatasetSection::default(),
            train: TrainSection::default(),
            pretrain: PretrainConfig::default(),
            pt: (method == Method::Pt).then(|| PtSection {
                n_temperatures: default_pt_temperatures(),
                betas: None,
            }),
            cast: (method == Method::Cast).then(|| CastSection {
                n_temperatures: default_cast_temperatures(),
                betas: None,
                ratio: 10,
                gamma0: default_gamma0(),
                t0: None,
            }),
            dt: (method == Method::Dt).then(DtSection::default),
            evaluation: EvaluationSection::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<file>", e.to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<file>".to_string() } else { path };
            Error::config(field, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len().saturating_sub(1)
    }

    pub fn train_config(&self, seed: u64, learning_rate: f64) -> TrainConfig {
        TrainConfig {
            learning_rate,
            minibatch_size: self.train.minibatch_size,
            gibbs_steps_per_update: self.train.gibbs_steps_per_update,
            total_updates: self.train.total_updates,
            seed,
            eval_interval: self.train.eval_interval,
        }
    }

    /// Temperatures of the PT or CAST ensemble.
    pub fn betas(&self) -> Option<Vec<f64>> {
        match self.method {
            Method::Pt => self
                .pt
                .as_ref()
                .map(|s| s.betas.clone().unwrap_or_else(|| uniform_betas(s.n_temperatures))),
            Method::Cast => self
                .cast
                .as_ref()
                .map(|s| s.betas.clone().unwrap_or_else(|| uniform_betas(s.n_temperatures))),
            _ => None,
        }
    }

    pub fn gamma_schedule(&self) -> Option<GammaSchedule> {
        let cast = self.cast.as_ref()?;
        let m = self.betas()?.len();
        Some(GammaSchedule {
            gamma0: cast.gamma0,
            t0: cast.t0.unwrap_or(m as f64),
        })
    }

    /// Number of swap-rate columns in the metrics file.
    pub fn n_swap_pairs(&self) -> usize {
        match self.method {
            Method::Sml => 0,
            Method::Dt => self.n_layers() - 1,
            Method::Pt | Method::Cast => self.betas().map_or(0, |b| b.len() - 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.learning_rates.is_empty() {
            return Err(Error::config("learning_rates", "at least one learning rate is required"));
        }
        for (k, lr) in self.learning_rates.iter().enumerate() {
            if !(*lr >= 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("learning_rates[{k}]"), "must be finite and non-negative"));
            }
        }
        if self.layer_sizes.len() < 2 {
            return Err(Error::config("layer_sizes", "need a visible size and at least one hidden size"));
        }
        if let Some(k) = self.layer_sizes.iter().position(|&n| n == 0) {
            return Err(Error::config(format!("layer_sizes[{k}]"), "must be positive"));
        }
        let n_pixels = self.dataset.height * self.dataset.width;
        if self.layer_sizes[0] != n_pixels {
            return Err(Error::config(
                "layer_sizes[0]",
                format!("visible size must equal dataset.height × dataset.width = {n_pixels}"),
            ));
        }
        if self.method != Method::Dt && self.layer_sizes.len() != 2 {
            return Err(Error::config("layer_sizes", format!("method {} trains a single RBM", self.method)));
        }
        self.dataset.spec()?;
        let t = &self.train;
        if t.minibatch_size == 0 {
            return Err(Error::config("train.minibatch_size", "must be at least 1"));
        }
        if t.gibbs_steps_per_update == 0 {
            return Err(Error::config("train.gibbs_steps_per_update", "must be at least 1"));
        }
        if t.eval_interval == 0 {
            return Err(Error::config("train.eval_interval", "must be at least 1"));
        }
        self.pretrain.validate()?;
        if self.pretrain.enabled {
            if self.method != Method::Dt {
                return Err(Error::config("pretrain.enabled", "pretraining applies to method dt only"));
            }
            if self.dataset.train_eval_size == 0 {
                return Err(Error::config("dataset.train_eval_size", "must be at least 1 when pretraining"));
            }
        }
        let sections = [
            ("pt", self.pt.is_some(), Method::Pt),
            ("cast", self.cast.is_some(), Method::Cast),
            ("dt", self.dt.is_some(), Method::Dt),
        ];
        if let Some((name, ..)) = sections.iter().find(|(_, present, owner)| *present && self.method != *owner) {
            return Err(Error::config(*name, format!("section not allowed for method {}", self.method)));
        }
        if let Some((name, ..)) = sections
            .iter()
            .find(|(_, present, owner)| !present && self.method == *owner && *owner != Method::Dt)
        {
            return Err(Error::config(*name, format!("section required for method {}", self.method)));
        }
        if let Some(pt) = &self.pt {
            if pt.betas.is_none() && pt.n_temperatures == 0 {
                return Err(Error::config("pt.n_temperatures", "must be at least 1"));
            }
            if let Some(b) = &pt.betas {
                validate_betas(b).map_err(|e| Error::config("pt.betas", e.to_string()))?;
            }
        }
        if let Some(cast) = &self.cast {
            if cast.betas.is_none() && cast.n_temperatures == 0 {
                return Err(Error::config("cast.n_temperatures", "must be at least 1"));
            }
            if let Some(b) = &cast.betas {
                validate_betas(b).map_err(|e| Error::config("cast.betas", e.to_string()))?;
            }
            if cast.ratio == 0 {
                return Err(Error::config("cast.ratio", "must be at least 1"));
            }
            if cast.gamma0.is_nan() || cast.gamma0 <= 0.0 {
                return Err(Error::config("cast.gamma0", "must be positive"));
            }
            if cast.t0.is_some_and(|t| t.is_nan() || t <= 0.0) {
                return Err(Error::config("cast.t0", "must be positive"));
            }
        }
        if self.evaluation.swap_window == 0 {
            return Err(Error::config("evaluation.swap_window", "must be at least 1"));
        }
        Ok(())
    }
}
