//! Comparison methods built from the same networks and evaluation code as
//! the observer trainer.
//!
//! - two-stage D-GAN: a GAN whose discriminator treats unlabeled data as one
//!   class and positives plus generated samples as the other, followed by a
//!   classifier trained on positives against generated pseudo-negatives;
//! - naive PU: every unlabeled row is taken as negative;
//! - supervised reference: the true classes of the unlabeled rows are used.
//!
//! Classifiers follow the observer's polarity: the output is the probability
//! of the negative class, so positives get target 0.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledPool, PuDataset};
use crate::error::{spec_err, Error, Result};
use crate::gan::{sample_latent, test_accuracy, NoHooks, ReferenceFits, TrainConfig, TrainHooks};
use crate::metrics::{fit_gaussian, frechet_distance, MetricsRecord};
use crate::nn::{forward, init_params, predict, Graph, Mode, NetworkSpec, ParamStore, Tracking, Var};
use crate::seed::stream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DganOptions {
    /// Classifier epochs after the GAN stage.
    pub stage2_epochs: usize,
    /// Weight of the positive term inside the "class 0" half of the
    /// stage-1 discriminator loss; generated samples get the rest.
    pub positive_share: f64,
    /// Stage-1 epochs after which the generator is snapshotted. The
    /// pseudo-negative pool is split evenly across the snapshots; an empty
    /// list uses the final generator.
    pub checkpoints: Vec<usize>,
}

impl Default for DganOptions {
    fn default() -> Self {
        Self {
            stage2_epochs: 100,
            positive_share: 0.5,
            checkpoints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NaiveOptions {
    /// Per-sample loss weight of labeled positives; `None` weighs all rows
    /// equally.
    #[serde(default)]
    pub positive_weight: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub method: String,
    pub history: Vec<MetricsRecord>,
    /// Number of leading history rows that belong to a first stage
    /// (only non-zero for D-GAN).
    pub stage1_len: usize,
    pub spec: NetworkSpec,
    pub params: ParamStore,
}

impl BaselineResult {
    /// Rows of the final classifier's training.
    pub fn classifier_history(&self) -> &[MetricsRecord] {
        &self.history[self.stage1_len..]
    }
}

/// Supervised training of `spec` on rows of `x` with `{0, 1}` targets.
///
/// Each epoch shuffles all rows and runs `rows / k` minibatches. The mean
/// loss is reported in the `loss_ob` column; test accuracy is recorded every
/// `cfg.eval_every` epochs.
#[allow(clippy::too_many_arguments)]
pub fn train_classifier(
    spec: &NetworkSpec,
    x: &Tensor,
    targets: &[f64],
    weights: Option<&[f64]>,
    cfg: &TrainConfig,
    epochs: usize,
    seed_label: &str,
    test: &LabeledPool,
    hooks: &mut dyn TrainHooks,
) -> Result<(ParamStore, Vec<MetricsRecord>)> {
    spec.validate_classifier()?;
    let n = x.rows();
    if targets.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(spec_err("targets and weights must have one entry per row"));
    }
    let k = cfg.batch_k;
    let batches = n / k;
    if batches == 0 {
        return Err(spec_err(format!("{n} rows do not fill one batch of {k}")));
    }
    let seed = cfg.seed;
    let mut params = init_params(spec, &mut stream(seed, &format!("{seed_label}.init")))?;
    let mut shuffle_rng = stream(seed, &format!("{seed_label}.shuffle"));
    let mut dropout_rng = stream(seed, &format!("{seed_label}.dropout"));
    let mut history = Vec::with_capacity(epochs);
    let mut perm: Vec<usize> = (0..n).collect();
    for epoch in 0..epochs {
        perm.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for b in 0..batches {
            let idx = &perm[b * k..(b + 1) * k];
            let xb = x.select_rows(idx)?;
            let tb: Vec<f64> = idx.iter().map(|&i| targets[i]).collect();
            let mut g = Graph::new();
            let xv = g.constant(xb);
            let out = forward(&mut g, spec, &mut params, xv, Mode::Train, Tracking::Trainable, &mut dropout_rng)
                .map_err(|e| diverged(e, epoch, b))?;
            let loss = match weights {
                Some(w) => {
                    let wb: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
                    g.bce_weighted(out, &tb, &wb)?
                }
                None => g.bce(out, &tb)?,
            };
            let l = g.scalar(loss);
            if !l.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("classifier loss is {l}"),
                });
            }
            total += l;
            let grads = g.backward(loss)?;
            params.load_grads(&grads)?;
            params.adam_step(&cfg.adam)?;
        }
        let mut rec = MetricsRecord {
            loss_ob: Some(total / batches as f64),
            ..MetricsRecord::empty(epoch)
        };
        if (epoch + 1) % cfg.eval_every == 0 {
            rec.test_accuracy = Some(test_accuracy(spec, &params, test)?);
        }
        hooks.on_epoch(&rec);
        history.push(rec);
    }
    Ok((params, history))
}

fn diverged(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric { location } => Error::Diverged {
            epoch,
            batch,
            detail: format!("non-finite value in {location}"),
        },
        other => other,
    }
}

/// Trains a positive-versus-negative classifier from positives and
/// negatives only.
pub fn train_pn_classifier(
    x_pos: &Tensor,
    x_neg: &Tensor,
    cfg: &TrainConfig,
    epochs: usize,
    seed_label: &str,
    test: &LabeledPool,
    hooks: &mut dyn TrainHooks,
) -> Result<(ParamStore, Vec<MetricsRecord>)> {
    let x = x_pos.vstack(x_neg)?;
    let mut targets = vec![0.0; x_pos.rows()];
    targets.resize(x.rows(), 1.0);
    train_classifier(&cfg.observer, &x, &targets, None, cfg, epochs, seed_label, test, hooks)
}

/// Unlabeled rows are treated as negatives.
pub fn train_naive_pu(data: &PuDataset, cfg: &TrainConfig, opts: &NaiveOptions) -> Result<BaselineResult> {
    train_naive_pu_with_hooks(data, cfg, opts, &mut NoHooks)
}

pub fn train_naive_pu_with_hooks(
    data: &PuDataset,
    cfg: &TrainConfig,
    opts: &NaiveOptions,
    hooks: &mut dyn TrainHooks,
) -> Result<BaselineResult> {
    cfg.validate(data.dim())?;
    let view = data.training_view();
    let x = view.x_p.vstack(view.x_u)?;
    let n_p = view.x_p.rows();
    let mut targets = vec![0.0; n_p];
    targets.resize(x.rows(), 1.0);
    let weights = match opts.positive_weight {
        Some(w) if !(w > 0.0 && w.is_finite()) => {
            return Err(spec_err(format!("positive_weight must be positive, got {w}")))
        }
        Some(w) => {
            let mut v = vec![w; n_p];
            v.resize(x.rows(), 1.0);
            Some(v)
        }
        None => None,
    };
    let (params, history) = train_classifier(
        &cfg.observer,
        &x,
        &targets,
        weights.as_deref(),
        cfg,
        cfg.epochs,
        "classifier",
        &data.test,
        hooks,
    )?;
    Ok(BaselineResult {
        method: "naive_pu".into(),
        history,
        stage1_len: 0,
        spec: cfg.observer.clone(),
        params,
    })
}

/// Upper reference trained on the true classes of every training row.
pub fn train_supervised_oracle(data: &PuDataset, cfg: &TrainConfig) -> Result<BaselineResult> {
    train_supervised_oracle_with_hooks(data, cfg, &mut NoHooks)
}

pub fn train_supervised_oracle_with_hooks(
    data: &PuDataset,
    cfg: &TrainConfig,
    hooks: &mut dyn TrainHooks,
) -> Result<BaselineResult> {
    cfg.validate(data.dim())?;
    let x = data.x_p.vstack(&data.x_u)?;
    let mut targets = vec![0.0; data.x_p.rows()];
    targets.extend(data.hidden_u_labels().iter().map(|l| l.negative_target()));
    let (params, history) = train_classifier(
        &cfg.observer,
        &x,
        &targets,
        None,
        cfg,
        cfg.epochs,
        "classifier",
        &data.test,
        hooks,
    )?;
    Ok(BaselineResult {
        method: "oracle".into(),
        history,
        stage1_len: 0,
        spec: cfg.observer.clone(),
        params,
    })
}

/// Stage-1 discriminator loss
/// `E[H(d_u, 1)] + s E[H(d_p, 0)] + (1 - s) E[H(d_fake, 0)]`.
pub fn dgan_loss_d(g: &mut Graph, d_u: Var, d_p: Var, d_fake: Var, s: f64) -> Result<Var> {
    let ones = vec![1.0; g.value(d_u).len()];
    let lu = g.bce(d_u, &ones)?;
    let zeros = vec![0.0; g.value(d_p).len()];
    let lp = g.bce(d_p, &zeros)?;
    let zeros = vec![0.0; g.value(d_fake).len()];
    let lf = g.bce(d_fake, &zeros)?;
    let lp = g.scale(lp, s)?;
    let lf = g.scale(lf, 1.0 - s)?;
    let rest = g.add(lp, lf)?;
    g.add(lu, rest)
}

pub fn train_dgan(data: &PuDataset, cfg: &TrainConfig, opts: &DganOptions) -> Result<BaselineResult> {
    train_dgan_with_hooks(data, cfg, opts, &mut NoHooks)
}

/// Two-stage D-GAN.
///
/// Stage 1 trains the generator against a discriminator with loss
/// `E[H(D(x_U), 1)] + s E[H(D(x_P), 0)] + (1 - s) E[H(D(G(z)), 0)]`
/// (`s` = `positive_share`), the generator minimizing `E[H(D(G(z)), 1)]`.
/// Stage 2 draws `|x_P|` pseudo-negatives once and fits a fresh classifier
/// on `x_P` against them.
pub fn train_dgan_with_hooks(
    data: &PuDataset,
    cfg: &TrainConfig,
    opts: &DganOptions,
    hooks: &mut dyn TrainHooks,
) -> Result<BaselineResult> {
    cfg.validate(data.dim())?;
    let s = opts.positive_share;
    if !(0.0..=1.0).contains(&s) {
        return Err(spec_err(format!("positive_share {s} outside [0, 1]")));
    }
    if let Some(&c) = opts.checkpoints.iter().find(|&&c| c == 0 || c > cfg.epochs) {
        return Err(spec_err(format!(
            "checkpoint {c} outside 1..={} stage-1 epochs",
            cfg.epochs
        )));
    }
    let view = data.training_view();
    let k = cfg.batch_k;
    let batches = view.x_u.rows().min(view.x_p.rows()) / k;
    if batches == 0 {
        return Err(spec_err(format!("pools do not fill one batch of {k}")));
    }
    let seed = cfg.seed;
    let mut gen = init_params(&cfg.generator, &mut stream(seed, "dgan.generator.init"))?;
    let mut disc = init_params(&cfg.discriminator, &mut stream(seed, "dgan.discriminator.init"))?;
    let mut shuffle_rng = stream(seed, "dgan.shuffle");
    let mut latent_rng = stream(seed, "dgan.latent");
    let mut dropout_rng = stream(seed, "dgan.dropout");
    let fd_bank = if cfg.fd_samples > 0 {
        Some(sample_latent(cfg.fd_samples, cfg.latent_dim, &mut stream(seed, "dgan.fd.latent"))?)
    } else {
        None
    };
    let fits = fd_bank.as_ref().map(|_| ReferenceFits::new(view)).transpose()?;
    let mut snapshots = Vec::new();
    let mut history = Vec::with_capacity(cfg.epochs + opts.stage2_epochs);
    let mut perm_u: Vec<usize> = (0..view.x_u.rows()).collect();
    let mut perm_p: Vec<usize> = (0..view.x_p.rows()).collect();
    let (dspec, gspec) = (&cfg.discriminator, &cfg.generator);

    for epoch in 0..cfg.epochs {
        perm_u.shuffle(&mut shuffle_rng);
        perm_p.shuffle(&mut shuffle_rng);
        let (mut sum_d, mut sum_g) = (0.0, 0.0);
        for b in 0..batches {
            let xu = view.x_u.select_rows(&perm_u[b * k..(b + 1) * k])?;
            let xp = view.x_p.select_rows(&perm_p[b * k..(b + 1) * k])?;
            let z = sample_latent(k, cfg.latent_dim, &mut latent_rng)?;

            let mut gg = Graph::new();
            let zv = gg.constant(z);
            let xz = forward(&mut gg, gspec, &mut gen, zv, Mode::Train, Tracking::Trainable, &mut dropout_rng)
                .map_err(|e| diverged(e, epoch, b))?;
            let x_z = gg.value(xz).clone();

            let mut g = Graph::new();
            let vars = [g.constant(xu), g.constant(xp), g.constant(x_z)];
            let mut outs = Vec::with_capacity(3);
            for v in vars {
                outs.push(
                    forward(&mut g, dspec, &mut disc, v, Mode::Train, Tracking::Trainable, &mut dropout_rng)
                        .map_err(|e| diverged(e, epoch, b))?,
                );
            }
            let ld = dgan_loss_d(&mut g, outs[0], outs[1], outs[2], s)?;
            let ld_v = g.scalar(ld);
            let grads = g.backward(ld)?;
            disc.load_grads(&grads)?;
            disc.adam_step(&cfg.adam)?;

            let df = forward(&mut gg, dspec, &mut disc, xz, Mode::Train, Tracking::Frozen, &mut dropout_rng)
                .map_err(|e| diverged(e, epoch, b))?;
            let lg = gg.bce(df, &vec![1.0; k])?;
            let lg_v = gg.scalar(lg);
            if !(ld_v.is_finite() && lg_v.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("loss_d {ld_v}, loss_g {lg_v}"),
                });
            }
            let grads = gg.backward(lg)?;
            gen.load_grads(&grads)?;
            gen.adam_step(&cfg.adam)?;
            sum_d += ld_v;
            sum_g += lg_v;
        }
        let mut rec = MetricsRecord {
            loss_d: Some(sum_d / batches as f64),
            loss_g: Some(sum_g / batches as f64),
            ..MetricsRecord::empty(epoch)
        };
        if let (Some(bank), Some(fits)) = (&fd_bank, &fits) {
            if (epoch + 1) % cfg.eval_every == 0 {
                let gfit = fit_gaussian(&predict(gspec, &gen, bank)?)?;
                rec.fd_gen_unlabeled = Some(frechet_distance(&gfit, &fits.unlabeled)?);
                rec.fd_gen_positive = Some(frechet_distance(&gfit, &fits.positive)?);
            }
        }
        if opts.checkpoints.contains(&(epoch + 1)) {
            snapshots.push(gen.clone());
        }
        hooks.on_epoch(&rec);
        history.push(rec);
    }

    if snapshots.is_empty() {
        snapshots.push(gen);
    }
    let n_neg = view.x_p.rows();
    let mut neg_rng = stream(seed, "dgan.negatives");
    let mut parts = Vec::new();
    for (i, snap) in snapshots.iter().enumerate() {
        let share = n_neg / snapshots.len() + usize::from(i < n_neg % snapshots.len());
        if share > 0 {
            let z = sample_latent(share, cfg.latent_dim, &mut neg_rng)?;
            parts.push(predict(gspec, snap, &z)?);
        }
    }
    let mut negatives = parts.remove(0);
    for p in &parts {
        negatives = negatives.vstack(p)?;
    }
    let stage1_len = history.len();
    let (params, stage2) =
        train_pn_classifier(view.x_p, &negatives, cfg, opts.stage2_epochs, "dgan.classifier", &data.test, hooks)?;
    history.extend(stage2);
    Ok(BaselineResult {
        method: "dgan".into(),
        history,
        stage1_len,
        spec: cfg.observer.clone(),
        params,
    })
}

/// Mean of the last `n` test accuracies of the final classifier.
pub fn final_accuracy(result: &BaselineResult, n: usize) -> Option<f64> {
    let accs: Vec<f64> = result
        .classifier_history()
        .iter()
        .rev()
        .filter_map(|r| r.test_accuracy)
        .take(n)
        .collect();
    (accs.len() == n && n > 0).then(|| accs.iter().sum::<f64>() / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gaussian_mixture, make_pu_split, make_two_moons, GaussianComponent, Label};
    use crate::nn::BCE_EPS;
    use crate::seed::SeededRng;
    use rand::SeedableRng;

    fn cfg(epochs: usize) -> TrainConfig {
        let mut c = TrainConfig::for_dim(2).unwrap();
        c.epochs = epochs;
        c.adam.lr = 1e-3;
        c.batch_k = 32;
        c.latent_dim = 8;
        c.fd_samples = 64;
        c.generator = NetworkSpec::generator(8, &[16], 2, false).unwrap();
        c.discriminator = NetworkSpec::classifier(2, &[16], Some(0.5)).unwrap();
        c.observer = NetworkSpec::classifier(2, &[16, 16], Some(0.5)).unwrap();
        c
    }

    fn blobs(alpha: f64, sep: f64, seed: u64) -> PuDataset {
        let comp = |x: f64, label| GaussianComponent {
            mean: vec![x, 0.0],
            cov: vec![1.0, 0.0, 0.0, 1.0],
            count: 1000,
            label,
        };
        let pool = make_gaussian_mixture(
            &[comp(-sep / 2.0, Label::Positive), comp(sep / 2.0, Label::Negative)],
            &mut SeededRng::seed_from_u64(seed),
        )
        .unwrap();
        make_pu_split(&pool, alpha, 256, 256, 400, &mut SeededRng::seed_from_u64(seed + 7)).unwrap()
    }

    #[test]
    fn perfect_stage1_discriminator_has_no_loss() {
        let mut g = Graph::new();
        let c = |g: &mut Graph, v: f64| g.constant(Tensor::filled(vec![4, 1], v));
        let (u, p, f) = (c(&mut g, 1.0 - BCE_EPS), c(&mut g, BCE_EPS), c(&mut g, BCE_EPS));
        let l = dgan_loss_d(&mut g, u, p, f, 0.5).unwrap();
        assert!(g.scalar(l) < 1e-6);
        let h = c(&mut g, 0.5);
        let l = dgan_loss_d(&mut g, h, h, h, 0.5).unwrap();
        assert!((g.scalar(l) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn dgan_is_deterministic_and_beats_chance() {
        let ds = blobs(0.5, 8.0, 1);
        let opts = DganOptions {
            stage2_epochs: 20,
            checkpoints: vec![20, 40],
            ..DganOptions::default()
        };
        let a = train_dgan(&ds, &cfg(40), &opts).unwrap();
        let b = train_dgan(&ds, &cfg(40), &opts).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.stage1_len, 40);
        assert_eq!(a.history.len(), 60);
        assert!(a.history[..40].iter().all(|r| r.test_accuracy.is_none() && r.loss_d.is_some()));
        let acc = final_accuracy(&a, 5).unwrap();
        assert!(acc > 0.5, "stage-2 accuracy {acc}");
        assert_eq!(ds.hidden_label_reads(), 0);
    }

    #[test]
    fn dgan_rejects_bad_checkpoints() {
        let ds = blobs(0.5, 8.0, 1);
        let opts = DganOptions {
            checkpoints: vec![0],
            ..DganOptions::default()
        };
        assert!(train_dgan(&ds, &cfg(3), &opts).is_err());
    }

    #[test]
    fn naive_equals_supervised_without_hidden_positives() {
        let ds = blobs(0.0, 3.0, 2);
        let n = train_naive_pu(&ds, &cfg(10), &NaiveOptions::default()).unwrap();
        assert_eq!(ds.hidden_label_reads(), 0);
        let o = train_supervised_oracle(&ds, &cfg(10)).unwrap();
        assert_eq!(ds.hidden_label_reads(), 1);
        assert_eq!(n.history, o.history);
        assert_eq!(n.params, o.params);
    }

    #[test]
    fn naive_is_at_chance_when_unlabeled_is_all_positive() {
        // With identical class distributions any boundary is arbitrary, so
        // chance level holds on average over seeds rather than per run.
        // Per-run spread is about 0.27, so 0.15 is roughly 2.5 standard errors.
        let accs: Vec<f64> = (0..20)
            .map(|seed| {
                let ds = blobs(1.0, 3.0, 100 + seed);
                let mut c = cfg(20);
                c.seed = seed;
                final_accuracy(&train_naive_pu(&ds, &c, &NaiveOptions::default()).unwrap(), 5).unwrap()
            })
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.5).abs() < 0.15, "mean accuracy {mean} over {accs:?}");
    }

    #[test]
    fn oracle_separates_distant_blobs() {
        let ds = blobs(0.5, 10.0, 4);
        let r = train_supervised_oracle(&ds, &cfg(20)).unwrap();
        assert!(final_accuracy(&r, 1).unwrap() >= 0.99);
        let again = train_supervised_oracle(&ds, &cfg(20)).unwrap();
        assert_eq!(r.history, again.history);
    }

    #[test]
    fn naive_trails_oracle_on_moons() {
        let pool = make_two_moons(3000, 0.1, &mut SeededRng::seed_from_u64(5)).unwrap();
        let ds = make_pu_split(&pool, 0.5, 500, 1000, 400, &mut SeededRng::seed_from_u64(6)).unwrap();
        let mut c = cfg(60);
        c.observer = NetworkSpec::classifier(2, &[64, 64], Some(0.5)).unwrap();
        let naive = final_accuracy(&train_naive_pu(&ds, &c, &NaiveOptions::default()).unwrap(), 10).unwrap();
        let oracle = final_accuracy(&train_supervised_oracle(&ds, &c).unwrap(), 10).unwrap();
        assert!(oracle - naive > 0.05, "naive {naive}, oracle {oracle}");
    }

    #[test]
    fn positive_weight_changes_the_fit() {
        let ds = blobs(0.5, 3.0, 8);
        let plain = train_naive_pu(&ds, &cfg(3), &NaiveOptions::default()).unwrap();
        let weighted = train_naive_pu(&ds, &cfg(3), &NaiveOptions { positive_weight: Some(2.0) }).unwrap();
        assert_ne!(plain.params, weighted.params);
        assert!(train_naive_pu(&ds, &cfg(3), &NaiveOptions { positive_weight: Some(0.0) }).is_err());
    }
}
