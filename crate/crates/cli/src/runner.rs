//! Builds datasets from a config and runs the requested methods.

use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{anyhow, Context, Result};

use pulab::baselines::{train_dgan_with_hooks, train_naive_pu_with_hooks, train_supervised_oracle_with_hooks};
use pulab::data::{load_idx, make_gaussian_mixture, make_pu_split, make_two_moons, IdxOptions, LabeledPool, PuDataset};
use pulab::gan::{sample_latent, train_with_hooks, NoHooks, ObserverGan, ReferenceFits, TrainConfig};
use pulab::seed::stream;

use crate::config::{to_json, DatasetConfig, ExperimentConfig, LoadedConfig, Method};
use crate::report::{comparison_table, write_json, write_matrix_csv, ComparisonRow, MethodSummary, MetricsSink};

/// Environment variable that overrides the config's output directory.
pub const OUT_DIR_ENV: &str = "PULAB_OUT_DIR";

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Experiment {
    /// `out` and `seed` take precedence over the config values. A relative
    /// output directory from the config resolves against the config's
    /// directory.
    pub fn new(loaded: LoadedConfig, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        let LoadedConfig { mut config, base_dir } = loaded;
        if let Some(s) = seed {
            config.seed = s;
        }
        let out_dir = out.unwrap_or_else(|| base_dir.join(&config.out_dir));
        config.out_dir = out_dir.clone();
        Self {
            config,
            base_dir,
            out_dir,
        }
    }

    pub fn pool(&self) -> Result<LabeledPool> {
        let mut rng = stream(self.config.seed, "pool");
        let pool = match &self.config.dataset {
            DatasetConfig::TwoMoons { n, noise } => make_two_moons(*n, *noise, &mut rng)?,
            DatasetConfig::GaussianMixture { components } => make_gaussian_mixture(components, &mut rng)?,
            DatasetConfig::Idx {
                images,
                labels,
                downscale,
                positive_digits,
            } => {
                let opts = IdxOptions {
                    downscale: *downscale,
                    positive_digits: positive_digits.clone(),
                };
                load_idx(&self.base_dir.join(images), &self.base_dir.join(labels), &opts)?
            }
        };
        Ok(pool)
    }

    pub fn dataset(&self) -> Result<PuDataset> {
        let c = &self.config;
        let pool = self.pool()?;
        make_pu_split(&pool, c.alpha, c.n_p, c.n_u, c.n_test, &mut stream(c.seed, "split"))
            .context("splitting the dataset")
    }

    pub fn train_config(&self, dim: usize) -> Result<TrainConfig> {
        Ok(self.config.train.to_train_config(dim, self.config.seed)?)
    }

    pub fn method_dir(&self, m: Method) -> PathBuf {
        self.out_dir.join(m.name())
    }

    fn prepare_dirs(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        let cfg_path = self.out_dir.join("config.json");
        std::fs::write(&cfg_path, to_json(&self.config)? + "\n").with_context(|| format!("writing {}", cfg_path.display()))?;
        for &m in &self.config.methods {
            let d = self.method_dir(m);
            std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(())
    }

    /// Trains every method, in parallel, and writes their outputs.
    pub fn run(&self) -> Result<Vec<MethodSummary>> {
        let data = self.dataset()?;
        let cfg = self.train_config(data.dim())?;
        self.prepare_dirs()?;
        let results: Vec<Result<MethodSummary>> = thread::scope(|s| {
            let handles: Vec<_> = self
                .config
                .methods
                .iter()
                .map(|&m| {
                    let (data, cfg) = (&data, &cfg);
                    s.spawn(move || self.run_method(m, data, cfg).with_context(|| format!("method {m}")))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(anyhow!("training thread panicked"))))
                .collect()
        });
        let mut summaries = Vec::new();
        let mut failures = Vec::new();
        for r in results {
            match r {
                Ok(s) => summaries.push(s),
                Err(e) => failures.push(format!("{e:#}")),
            }
        }
        if failures.is_empty() {
            Ok(summaries)
        } else {
            Err(anyhow!("{}", failures.join("; ")))
        }
    }

    fn run_method(&self, m: Method, data: &PuDataset, cfg: &TrainConfig) -> Result<MethodSummary> {
        let dir = self.method_dir(m);
        let stage1 = (m == Method::Dgan).then(|| (dir.join("stage1_metrics.csv"), cfg.epochs));
        let mut sink = MetricsSink::new(dir.join("metrics.csv"), stage1)?;
        let trained = match m {
            Method::ObserverGan => train_with_hooks(cfg, data, &mut sink).map(|out| {
                let summary = MethodSummary::from_history(m.name(), &out.history);
                (summary, Some(out.state))
            }),
            Method::Dgan => train_dgan_with_hooks(data, cfg, &self.config.dgan, &mut sink)
                .map(|r| (MethodSummary::from_history(m.name(), r.classifier_history()), None)),
            Method::NaivePu => train_naive_pu_with_hooks(data, cfg, &self.config.naive, &mut sink)
                .map(|r| (MethodSummary::from_history(m.name(), &r.history), None)),
            Method::Oracle => train_supervised_oracle_with_hooks(data, cfg, &mut sink)
                .map(|r| (MethodSummary::from_history(m.name(), &r.history), None)),
        };
        let written = sink.finish();
        let (summary, state) = trained?;
        written?;
        if let Some(state) = state {
            dump_samples(&state, self.config.dump_rows, &dir)?;
        }
        write_json(&dir.join("summary.json"), &summary)?;
        Ok(summary)
    }

    /// Runs every method and writes `compare.txt` and `compare.json`.
    pub fn compare(&self) -> Result<(String, ComparisonRow)> {
        if self.config.methods.len() < 2 {
            return Err(anyhow!("compare needs at least two methods, config lists {}", self.config.methods.len()));
        }
        let methods = self.run()?;
        let row = ComparisonRow {
            dataset: self.config.name.clone(),
            methods,
        };
        let table = comparison_table(std::slice::from_ref(&row));
        let txt = self.out_dir.join("compare.txt");
        std::fs::write(&txt, &table).with_context(|| format!("writing {}", txt.display()))?;
        write_json(&self.out_dir.join("compare.json"), &[&row])?;
        Ok((table, row))
    }

    /// Trains the Observer-GAN for `epoch` epochs and dumps generator
    /// samples. Returns the samples path.
    pub fn dump(&self, epoch: usize) -> Result<PathBuf> {
        let data = self.dataset()?;
        let cfg = TrainConfig {
            epochs: epoch,
            ..self.train_config(data.dim())?
        };
        let fits = if cfg.fd_samples > 0 {
            Some(ReferenceFits::new(data.training_view())?)
        } else {
            None
        };
        let mut state = ObserverGan::new(cfg, data.dim())?;
        for _ in 0..epoch {
            state.next_epoch(&data, fits.as_ref(), &mut NoHooks)?;
        }
        let dir = self.method_dir(Method::ObserverGan);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        dump_samples(&state, self.config.dump_rows, &dir)
    }
}

pub fn samples_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("samples_epoch_{epoch}.csv"))
}

pub fn latent_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("latent_epoch_{epoch}.csv"))
}

/// Writes `n` eval-mode generator outputs and the latent rows behind them.
/// The latent draw depends only on the seed, so dumps at different epochs
/// share their inputs.
pub fn dump_samples(state: &ObserverGan, n: usize, dir: &Path) -> Result<PathBuf> {
    let (latent, dim) = (state.cfg.latent_dim, state.cfg.generator.out_dim());
    let (z, x) = if n == 0 {
        (Vec::new(), Vec::new())
    } else {
        let z = sample_latent(n, latent, &mut stream(state.cfg.seed, "dump.latent"))?;
        let x = state.generate(&z)?;
        (z.to_rows(), x.to_rows())
    };
    let epoch = state.epoch();
    let path = samples_path(dir, epoch);
    write_matrix_csv(&latent_path(dir, epoch), "z", latent, &z)?;
    write_matrix_csv(&path, "x", dim, &x)?;
    Ok(path)
}
