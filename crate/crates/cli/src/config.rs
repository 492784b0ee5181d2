//! Experiment configuration files.
//!
//! A config is a JSON object with a `schema_version` field. Unknown keys are
//! rejected; every error names the offending field and, where it can be
//! located, its line in the file.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use pulab::baselines::{DganOptions, NaiveOptions};
use pulab::data::GaussianComponent;
use pulab::gan::{TrainConfig, DEFAULT_BATCH, DEFAULT_FD_SAMPLES, DEFAULT_HIDDEN, DEFAULT_LATENT_DIM, DEFAULT_REINIT_PERIOD};
use pulab::nn::{AdamConfig, NetworkSpec, DEFAULT_DROPOUT};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ObserverGan,
    Dgan,
    NaivePu,
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ObserverGan => "observer_gan",
            Method::Dgan => "dgan",
            Method::NaivePu => "naive_pu",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    TwoMoons {
        /// Pool size before the split.
        n: usize,
        noise: f64,
    },
    GaussianMixture {
        components: Vec<GaussianComponent>,
    },
    /// IDX image and label files. Relative paths resolve against the
    /// config file's directory.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        downscale: Option<usize>,
        #[serde(default = "even_digits")]
        positive_digits: Vec<u8>,
    },
}

fn even_digits() -> Vec<u8> {
    vec![0, 2, 4, 6, 8]
}

impl DatasetConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetConfig::TwoMoons { .. } => "two_moons",
            DatasetConfig::GaussianMixture { .. } => "gaussian_mixture",
            DatasetConfig::Idx { .. } => "idx",
        }
    }
}

/// Training hyperparameters shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_k: usize,
    pub latent_dim: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub reinit_period: usize,
    pub eval_every: usize,
    pub fd_samples: usize,
    /// Hidden widths of every network.
    pub hidden: Vec<usize>,
    /// Dropout rate before the classifier heads; `null` disables it.
    pub dropout: Option<f64>,
    /// Sigmoid on the generator output, for data in `[0, 1]`.
    pub sigmoid_output: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 500,
            batch_k: DEFAULT_BATCH,
            latent_dim: DEFAULT_LATENT_DIM,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            reinit_period: DEFAULT_REINIT_PERIOD,
            eval_every: 1,
            fd_samples: DEFAULT_FD_SAMPLES,
            hidden: DEFAULT_HIDDEN.to_vec(),
            dropout: Some(DEFAULT_DROPOUT),
            sigmoid_output: false,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, dim: usize, seed: u64) -> pulab::Result<TrainConfig> {
        let classifier = NetworkSpec::classifier(dim, &self.hidden, self.dropout)?;
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_k: self.batch_k,
            latent_dim: self.latent_dim,
            adam: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                ..AdamConfig::default()
            },
            reinit_period: self.reinit_period,
            seed,
            eval_every: self.eval_every,
            fd_samples: self.fd_samples,
            generator: NetworkSpec::generator(self.latent_dim, &self.hidden, dim, self.sigmoid_output)?,
            discriminator: classifier.clone(),
            observer: classifier,
        };
        cfg.validate(dim)?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Row label in comparison tables.
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetConfig,
    pub alpha: f64,
    pub n_p: usize,
    pub n_u: usize,
    pub n_test: usize,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub dgan: DganOptions,
    #[serde(default)]
    pub naive: NaiveOptions,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Rows written by each generator sample dump.
    #[serde(default = "default_dump_rows")]
    pub dump_rows: usize,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_dump_rows() -> usize {
    256
}

/// A parsed config together with the directory relative paths resolve from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

fn line_of(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

fn invalid(text: &str, field: &str, msg: impl fmt::Display) -> anyhow::Error {
    let key = field.rsplit('.').next().and_then(|k| k.split('[').next()).unwrap_or(field);
    match line_of(text, key) {
        Some(line) => anyhow::anyhow!("{field}: {msg} (line {line})"),
        None => anyhow::anyhow!("{field}: {msg}"),
    }
}

/// Parses and validates config text. `origin` only labels error messages.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            anyhow::anyhow!("{origin}: {inner}")
        } else {
            anyhow::anyhow!("{origin}: {path}: {inner}")
        }
    })?;
    validate(&cfg, text).with_context(|| format!("invalid config {origin}"))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let config = parse_config(&text, &path.display().to_string())?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, base_dir })
}

fn validate(cfg: &ExperimentConfig, text: &str) -> Result<()> {
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(invalid(
            text,
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", cfg.schema_version),
        ));
    }
    if cfg.methods.is_empty() {
        return Err(invalid(text, "methods", "at least one method is required"));
    }
    for (i, m) in cfg.methods.iter().enumerate() {
        if cfg.methods[..i].contains(m) {
            return Err(invalid(text, &format!("methods[{i}]"), format!("`{m}` listed twice")));
        }
    }
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(invalid(text, "alpha", format!("{} is outside [0, 1]", cfg.alpha)));
    }
    for (field, v) in [("n_p", cfg.n_p), ("n_u", cfg.n_u)] {
        if v == 0 {
            return Err(invalid(text, field, "must be positive"));
        }
    }
    if cfg.n_test == 0 || cfg.n_test % 2 != 0 {
        return Err(invalid(text, "n_test", "must be a positive even number"));
    }
    match &cfg.dataset {
        DatasetConfig::TwoMoons { n, noise } => {
            if *n < 2 {
                return Err(invalid(text, "dataset.n", "two moons needs at least 2 points"));
            }
            if !(noise.is_finite() && *noise >= 0.0) {
                return Err(invalid(text, "dataset.noise", "must be a finite value >= 0"));
            }
        }
        DatasetConfig::GaussianMixture { components } => {
            if components.is_empty() {
                return Err(invalid(text, "dataset.components", "at least one component is required"));
            }
        }
        DatasetConfig::Idx { downscale, .. } => {
            if *downscale == Some(0) {
                return Err(invalid(text, "dataset.downscale", "must be positive"));
            }
        }
    }
    let t = &cfg.train;
    for (field, v) in [
        ("train.epochs", t.epochs),
        ("train.batch_k", t.batch_k),
        ("train.latent_dim", t.latent_dim),
        ("train.eval_every", t.eval_every),
    ] {
        if v == 0 {
            return Err(invalid(text, field, "must be positive"));
        }
    }
    if !(t.lr > 0.0 && t.lr.is_finite()) {
        return Err(invalid(text, "train.lr", "must be positive"));
    }
    for (field, b) in [("train.beta1", t.beta1), ("train.beta2", t.beta2)] {
        if !(0.0..1.0).contains(&b) {
            return Err(invalid(text, field, "must lie in [0, 1)"));
        }
    }
    if t.fd_samples == 1 {
        return Err(invalid(text, "train.fd_samples", "must be 0 or at least 2"));
    }
    if t.hidden.is_empty() || t.hidden.contains(&0) {
        return Err(invalid(text, "train.hidden", "needs at least one layer, all widths positive"));
    }
    if let Some(p) = t.dropout {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid(text, "train.dropout", "rate must lie in [0, 1)"));
        }
    }
    if !(0.0..=1.0).contains(&cfg.dgan.positive_share) {
        return Err(invalid(text, "dgan.positive_share", "must lie in [0, 1]"));
    }
    if let Some(c) = cfg.dgan.checkpoints.iter().find(|&&c| c == 0 || c > t.epochs) {
        return Err(invalid(
            text,
            "dgan.checkpoints",
            format!("checkpoint {c} outside 1..={}", t.epochs),
        ));
    }
    if let Some(w) = cfg.naive.positive_weight {
        if !(w > 0.0 && w.is_finite()) {
            return Err(invalid(text, "naive.positive_weight", "must be positive"));
        }
    }
    Ok(())
}

/// Pretty JSON that parses back to an equal config.
pub fn to_json(cfg: &ExperimentConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(cfg)?)
}
