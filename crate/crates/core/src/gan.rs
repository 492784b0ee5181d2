//! Three-network PU trainer: a generator G, a discriminator D that separates
//! unlabeled data from generated samples, and an observer Ob that separates
//! labeled positives from generated samples.
//!
//! Per minibatch one latent batch `z` is drawn and `x_z = G(z)` computed
//! once. D is then updated on
//! `L_D = E[H(D(x_U), 1)] + E[H(D(x_z), 0)]`, Ob on
//! `L_Ob = E[H(Ob(x_P), 0)] + E[H(Ob(x_z), 1)]`, and finally G on
//! `L_G = E[H(D(x_z), 1)] + E[H(Ob(x_z), 1)]` with the freshly updated D and
//! Ob held fixed. The observer is reset to a fresh draw every
//! `reinit_period` epochs and doubles as the final classifier: its output is
//! the probability that a sample is negative.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Label, LabeledPool, PuDataset, TrainingView};
use crate::error::{spec_err, Error, Result};
use crate::metrics::{self, fit_gaussian, frechet_distance, GaussianFit, MetricsRecord};
use crate::nn::{
    forward, init_params, predict, reinit, AdamConfig, Graph, Mode, NetworkSpec, ParamStore,
    Tracking, Var,
};
use crate::seed::{stream, SeededRng};
use crate::tensor::Tensor;

pub const DEFAULT_LATENT_DIM: usize = 100;
pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_REINIT_PERIOD: usize = 100;
pub const DEFAULT_FD_SAMPLES: usize = 512;
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_k: usize,
    pub latent_dim: usize,
    pub adam: AdamConfig,
    /// Observer reset period in epochs; 0 never resets.
    pub reinit_period: usize,
    pub seed: u64,
    /// Evaluate after every `eval_every`-th epoch.
    pub eval_every: usize,
    /// Generated samples per Fréchet distance estimate; 0 skips the estimate.
    pub fd_samples: usize,
    pub generator: NetworkSpec,
    pub discriminator: NetworkSpec,
    pub observer: NetworkSpec,
}

impl TrainConfig {
    /// Default hyperparameters and `dim`-dimensional dense architectures:
    /// two hidden layers of 64 units in every network.
    pub fn for_dim(dim: usize) -> Result<Self> {
        let latent_dim = DEFAULT_LATENT_DIM;
        Ok(Self {
            epochs: 500,
            batch_k: DEFAULT_BATCH,
            latent_dim,
            adam: AdamConfig::default(),
            reinit_period: DEFAULT_REINIT_PERIOD,
            seed: 0,
            eval_every: 1,
            fd_samples: DEFAULT_FD_SAMPLES,
            generator: NetworkSpec::generator(latent_dim, &DEFAULT_HIDDEN, dim, false)?,
            discriminator: NetworkSpec::classifier(dim, &DEFAULT_HIDDEN, Some(crate::nn::DEFAULT_DROPOUT))?,
            observer: NetworkSpec::classifier(dim, &DEFAULT_HIDDEN, Some(crate::nn::DEFAULT_DROPOUT))?,
        })
    }

    pub fn validate(&self, data_dim: usize) -> Result<()> {
        if self.batch_k == 0 || self.latent_dim == 0 || self.eval_every == 0 {
            return Err(spec_err("batch_k, latent_dim and eval_every must be at least 1"));
        }
        if self.fd_samples == 1 {
            return Err(spec_err("fd_samples must be 0 or at least 2"));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(spec_err(format!("invalid Adam settings {a:?}")));
        }
        self.generator.validate()?;
        self.discriminator.validate_classifier()?;
        self.observer.validate_classifier()?;
        if self.generator.in_dim() != self.latent_dim {
            return Err(spec_err(format!(
                "generator takes {} inputs but latent_dim is {}",
                self.generator.in_dim(),
                self.latent_dim
            )));
        }
        for (name, d) in [
            ("generator output", self.generator.out_dim()),
            ("discriminator input", self.discriminator.in_dim()),
            ("observer input", self.observer.in_dim()),
        ] {
            if d != data_dim {
                return Err(spec_err(format!("{name} is {d}-dimensional, data is {data_dim}")));
            }
        }
        Ok(())
    }
}

/// Which network a parameter update touched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Discriminator,
    Observer,
    Generator,
}

/// Observation points inside training. All methods default to no-ops.
pub trait TrainHooks {
    fn on_update(&mut self, _epoch: usize, _batch: usize, _role: Role) {}
    fn on_reinit(&mut self, _epoch: usize) {}
    fn on_epoch(&mut self, _record: &MetricsRecord) {}
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

fn pair_loss(g: &mut Graph, a: Var, ta: f64, b: Var, tb: f64) -> Result<Var> {
    let (sa, sb) = (g.value(a).shape().to_vec(), g.value(b).shape().to_vec());
    if sa != sb {
        return Err(spec_err(format!("loss terms have shapes {sa:?} and {sb:?}")));
    }
    let n = g.value(a).len();
    let la = g.bce(a, &vec![ta; n])?;
    let lb = g.bce(b, &vec![tb; n])?;
    g.add(la, lb)
}

/// `E[H(d_real, 1)] + E[H(d_fake, 0)]`.
pub fn loss_d(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    pair_loss(g, d_real, 1.0, d_fake, 0.0)
}

/// `E[H(ob_pos, 0)] + E[H(ob_fake, 1)]`.
pub fn loss_ob(g: &mut Graph, ob_pos: Var, ob_fake: Var) -> Result<Var> {
    pair_loss(g, ob_pos, 0.0, ob_fake, 1.0)
}

/// `E[H(d_fake, 1)] + E[H(ob_fake, 1)]`.
pub fn loss_g(g: &mut Graph, d_fake: Var, ob_fake: Var) -> Result<Var> {
    pair_loss(g, d_fake, 1.0, ob_fake, 1.0)
}

/// Eval-mode scores (probability of negative) and the labels they imply.
pub fn classify(spec: &NetworkSpec, params: &ParamStore, x: &Tensor) -> Result<(Vec<Label>, Vec<f64>)> {
    let scores = predict(spec, params, x)?.into_data();
    let labels = scores
        .iter()
        .map(|&s| metrics::predict_label(s, metrics::DEFAULT_THRESHOLD))
        .collect();
    Ok((labels, scores))
}

/// Accuracy of a classifier on a labeled pool under [`classify`].
pub fn test_accuracy(spec: &NetworkSpec, params: &ParamStore, pool: &LabeledPool) -> Result<f64> {
    let (_, scores) = classify(spec, params, &pool.features)?;
    metrics::accuracy(&scores, &pool.labels, metrics::DEFAULT_THRESHOLD)
}

/// Losses of one minibatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub loss_d: f64,
    pub loss_ob: f64,
    pub loss_g: f64,
}

/// Training state: the three networks, their random streams and the epoch
/// counter.
#[derive(Debug, Clone)]
pub struct ObserverGan {
    pub cfg: TrainConfig,
    pub generator: ParamStore,
    pub discriminator: ParamStore,
    pub observer: ParamStore,
    epoch: usize,
    shuffle_rng: SeededRng,
    latent_rng: SeededRng,
    dropout_rng: SeededRng,
    reinit_rng: SeededRng,
    fd_bank: Option<Tensor>,
}

/// Gaussian fits of the training pools, reused by every FD estimate.
#[derive(Debug, Clone)]
pub struct ReferenceFits {
    pub unlabeled: GaussianFit,
    pub positive: GaussianFit,
}

impl ReferenceFits {
    pub fn new(view: TrainingView<'_>) -> Result<Self> {
        Ok(Self {
            unlabeled: fit_gaussian(view.x_u)?,
            positive: fit_gaussian(view.x_p)?,
        })
    }
}

/// Draws a `(n, dim)` standard normal matrix.
pub fn sample_latent<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Result<Tensor> {
    let data = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![n, dim], data)
}

impl ObserverGan {
    pub fn new(cfg: TrainConfig, data_dim: usize) -> Result<Self> {
        cfg.validate(data_dim)?;
        let seed = cfg.seed;
        let generator = init_params(&cfg.generator, &mut stream(seed, "generator.init"))?;
        let discriminator = init_params(&cfg.discriminator, &mut stream(seed, "discriminator.init"))?;
        let observer = init_params(&cfg.observer, &mut stream(seed, "observer.init"))?;
        let fd_bank = if cfg.fd_samples > 0 {
            Some(sample_latent(cfg.fd_samples, cfg.latent_dim, &mut stream(seed, "fd.latent"))?)
        } else {
            None
        };
        Ok(Self {
            generator,
            discriminator,
            observer,
            epoch: 0,
            shuffle_rng: stream(seed, "shuffle"),
            latent_rng: stream(seed, "latent"),
            dropout_rng: stream(seed, "dropout"),
            reinit_rng: stream(seed, "observer.reinit"),
            fd_bank,
            cfg,
        })
    }

    /// Index of the next epoch to run.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn batches_per_epoch(&self, view: TrainingView<'_>) -> usize {
        view.x_u.rows().min(view.x_p.rows()) / self.cfg.batch_k
    }

    pub fn sample_latent(&mut self, n: usize) -> Result<Tensor> {
        sample_latent(n, self.cfg.latent_dim, &mut self.latent_rng)
    }

    /// Eval-mode generator output.
    pub fn generate(&self, z: &Tensor) -> Result<Tensor> {
        predict(&self.cfg.generator, &self.generator, z)
    }

    /// Train-mode generator pass; the returned graph keeps G's parameters
    /// trainable so [`Self::extend_loss_g`] can continue on it.
    pub fn generator_graph(&mut self, z: &Tensor) -> Result<(Graph, Var)> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let xz = forward(
            &mut g,
            &self.cfg.generator,
            &mut self.generator,
            zv,
            Mode::Train,
            Tracking::Trainable,
            &mut self.dropout_rng,
        )?;
        Ok((g, xz))
    }

    /// `L_D` on a fresh graph with `x_z` entering as data.
    pub fn loss_d_graph(&mut self, x_u: &Tensor, x_z: &Tensor) -> Result<(Graph, Var)> {
        let spec = &self.cfg.discriminator;
        let mut g = Graph::new();
        let (real, fake) = (g.constant(x_u.clone()), g.constant(x_z.clone()));
        let rng = &mut self.dropout_rng;
        let dr = forward(&mut g, spec, &mut self.discriminator, real, Mode::Train, Tracking::Trainable, rng)?;
        let df = forward(&mut g, spec, &mut self.discriminator, fake, Mode::Train, Tracking::Trainable, rng)?;
        let loss = loss_d(&mut g, dr, df)?;
        Ok((g, loss))
    }

    /// `L_Ob` on a fresh graph with `x_z` entering as data.
    pub fn loss_ob_graph(&mut self, x_p: &Tensor, x_z: &Tensor) -> Result<(Graph, Var)> {
        let spec = &self.cfg.observer;
        let mut g = Graph::new();
        let (pos, fake) = (g.constant(x_p.clone()), g.constant(x_z.clone()));
        let rng = &mut self.dropout_rng;
        let op = forward(&mut g, spec, &mut self.observer, pos, Mode::Train, Tracking::Trainable, rng)?;
        let of = forward(&mut g, spec, &mut self.observer, fake, Mode::Train, Tracking::Trainable, rng)?;
        let loss = loss_ob(&mut g, op, of)?;
        Ok((g, loss))
    }

    /// Appends `L_G` to a generator graph, with D and Ob bound as constants.
    pub fn extend_loss_g(&mut self, g: &mut Graph, xz: Var) -> Result<Var> {
        let rng = &mut self.dropout_rng;
        let df = forward(g, &self.cfg.discriminator, &mut self.discriminator, xz, Mode::Train, Tracking::Frozen, rng)?;
        let of = forward(g, &self.cfg.observer, &mut self.observer, xz, Mode::Train, Tracking::Frozen, rng)?;
        loss_g(g, df, of)
    }

    /// One D, Ob, G update sequence on the given minibatch.
    pub fn train_step(
        &mut self,
        x_u: &Tensor,
        x_p: &Tensor,
        z: &Tensor,
        batch: usize,
        hooks: &mut dyn TrainHooks,
    ) -> Result<StepLosses> {
        let epoch = self.epoch;
        let diverged = |e: Error| match e {
            Error::Numeric { location } => Error::Diverged {
                epoch,
                batch,
                detail: format!("non-finite value in {location}"),
            },
            other => other,
        };
        let check = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Diverged {
                    epoch,
                    batch,
                    detail: format!("{name} is {v}"),
                })
            }
        };
        let adam = self.cfg.adam;

        let (mut gg, xz) = self.generator_graph(z).map_err(diverged)?;
        let x_z = gg.value(xz).clone();

        let (mut g, l) = self.loss_d_graph(x_u, &x_z).map_err(diverged)?;
        let ld = check("loss_d", g.scalar(l))?;
        let grads = g.backward(l)?;
        self.discriminator.load_grads(&grads)?;
        self.discriminator.adam_step(&adam)?;
        hooks.on_update(epoch, batch, Role::Discriminator);

        let (mut g, l) = self.loss_ob_graph(x_p, &x_z).map_err(diverged)?;
        let lob = check("loss_ob", g.scalar(l))?;
        let grads = g.backward(l)?;
        self.observer.load_grads(&grads)?;
        self.observer.adam_step(&adam)?;
        hooks.on_update(epoch, batch, Role::Observer);

        let l = self.extend_loss_g(&mut gg, xz).map_err(diverged)?;
        let lg = check("loss_g", gg.scalar(l))?;
        let grads = gg.backward(l)?;
        self.generator.load_grads(&grads)?;
        self.generator.adam_step(&adam)?;
        hooks.on_update(epoch, batch, Role::Generator);

        Ok(StepLosses {
            loss_d: ld,
            loss_ob: lob,
            loss_g: lg,
        })
    }

    /// One pass over `min(|x_u|, |x_p|) / k` minibatches with fresh
    /// shuffles of both pools. Returns a record holding mean losses; the
    /// epoch counter is not advanced.
    pub fn train_epoch(&mut self, view: TrainingView<'_>, hooks: &mut dyn TrainHooks) -> Result<MetricsRecord> {
        let k = self.cfg.batch_k;
        let batches = self.batches_per_epoch(view);
        if batches == 0 {
            return Err(spec_err(format!(
                "pools of {} unlabeled and {} positive rows do not fill one batch of {k}",
                view.x_u.rows(),
                view.x_p.rows()
            )));
        }
        let mut perm_u: Vec<usize> = (0..view.x_u.rows()).collect();
        let mut perm_p: Vec<usize> = (0..view.x_p.rows()).collect();
        perm_u.shuffle(&mut self.shuffle_rng);
        perm_p.shuffle(&mut self.shuffle_rng);
        let mut sums = [0.0; 3];
        for b in 0..batches {
            let xu = view.x_u.select_rows(&perm_u[b * k..(b + 1) * k])?;
            let xp = view.x_p.select_rows(&perm_p[b * k..(b + 1) * k])?;
            let z = self.sample_latent(k)?;
            let s = self.train_step(&xu, &xp, &z, b, hooks)?;
            sums[0] += s.loss_d;
            sums[1] += s.loss_g;
            sums[2] += s.loss_ob;
        }
        let n = batches as f64;
        Ok(MetricsRecord {
            loss_d: Some(sums[0] / n),
            loss_g: Some(sums[1] / n),
            loss_ob: Some(sums[2] / n),
            ..MetricsRecord::empty(self.epoch)
        })
    }

    /// Whether the observer is reset at the start of `epoch`.
    pub fn reinit_due(&self, epoch: usize) -> bool {
        let p = self.cfg.reinit_period;
        p > 0 && epoch > 0 && epoch % p == 0
    }

    /// Runs the next epoch: optional observer reset, the minibatch pass and,
    /// when due, evaluation on the test pool and FD against the training pools.
    pub fn next_epoch(
        &mut self,
        data: &PuDataset,
        fits: Option<&ReferenceFits>,
        hooks: &mut dyn TrainHooks,
    ) -> Result<MetricsRecord> {
        let epoch = self.epoch;
        if self.reinit_due(epoch) {
            reinit(&self.cfg.observer, &mut self.observer, &mut self.reinit_rng)?;
            hooks.on_reinit(epoch);
        }
        let mut rec = self.train_epoch(data.training_view(), hooks)?;
        if (epoch + 1) % self.cfg.eval_every == 0 {
            rec.test_accuracy = Some(test_accuracy(&self.cfg.observer, &self.observer, &data.test)?);
            if let (Some(bank), Some(fits)) = (&self.fd_bank, fits) {
                let gen = fit_gaussian(&self.generate(bank)?)?;
                rec.fd_gen_unlabeled = Some(frechet_distance(&gen, &fits.unlabeled)?);
                rec.fd_gen_positive = Some(frechet_distance(&gen, &fits.positive)?);
            }
        }
        self.epoch += 1;
        hooks.on_epoch(&rec);
        Ok(rec)
    }

    /// Eval-mode observer scores and labels for `x`.
    pub fn classify(&self, x: &Tensor) -> Result<(Vec<Label>, Vec<f64>)> {
        classify(&self.cfg.observer, &self.observer, x)
    }
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<MetricsRecord>,
    pub state: ObserverGan,
}

impl TrainOutcome {
    pub fn observer(&self) -> &ParamStore {
        &self.state.observer
    }
}

pub fn train(cfg: &TrainConfig, data: &PuDataset) -> Result<TrainOutcome> {
    train_with_hooks(cfg, data, &mut NoHooks)
}

pub fn train_with_hooks(cfg: &TrainConfig, data: &PuDataset, hooks: &mut dyn TrainHooks) -> Result<TrainOutcome> {
    let mut state = ObserverGan::new(cfg.clone(), data.dim())?;
    let fits = if cfg.fd_samples > 0 {
        Some(ReferenceFits::new(data.training_view())?)
    } else {
        None
    };
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        history.push(state.next_epoch(data, fits.as_ref(), hooks)?);
    }
    Ok(TrainOutcome { history, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gaussian_mixture, make_pu_split, GaussianComponent};
    use crate::nn::{Layer, BCE_EPS};
    use crate::seed::SeededRng;
    use rand::SeedableRng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn col(g: &mut Graph, v: &[f64]) -> Var {
        g.constant(Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap())
    }

    fn eval2(f: fn(&mut Graph, Var, Var) -> Result<Var>, a: &[f64], b: &[f64]) -> f64 {
        let mut g = Graph::new();
        let (x, y) = (col(&mut g, a), col(&mut g, b));
        let l = f(&mut g, x, y).unwrap();
        g.scalar(l)
    }

    #[test]
    fn loss_reference_values() {
        let hi = 1.0 - BCE_EPS;
        assert!(eval2(loss_d, &[hi; 3], &[BCE_EPS; 3]) < 1e-6);
        assert!((eval2(loss_d, &[0.5; 4], &[0.5; 4]) - 2.0 * LN2).abs() < 1e-12);
        let want = 0.5 * (-(0.8f64.ln()) - 0.6f64.ln()) + 0.5 * (-(0.7f64.ln()) - 0.9f64.ln());
        assert!((eval2(loss_d, &[0.8, 0.6], &[0.3, 0.1]) - want).abs() < 1e-12);
        assert!((want - 0.598).abs() < 5e-4);

        assert!(eval2(loss_ob, &[BCE_EPS], &[hi]) < 1e-6);
        assert!((eval2(loss_ob, &[0.5], &[0.5]) - 2.0 * LN2).abs() < 1e-12);
        assert!((eval2(loss_ob, &[0.2], &[0.7]) - 0.580).abs() < 5e-4);

        assert!(eval2(loss_g, &[hi], &[hi]) < 1e-6);
        assert!((eval2(loss_g, &[0.5; 2], &[0.5; 2]) - 2.0 * LN2).abs() < 1e-12);
        assert!((eval2(loss_g, &[0.4], &[0.9]) - 1.022).abs() < 5e-4);
    }

    #[test]
    fn loss_shape_mismatch() {
        let mut g = Graph::new();
        let (a, b) = (col(&mut g, &[0.5, 0.5]), col(&mut g, &[0.5]));
        assert!(matches!(loss_d(&mut g, a, b), Err(Error::Spec(_))));
    }

    fn tiny_cfg(dim: usize) -> TrainConfig {
        let mut cfg = TrainConfig::for_dim(dim).unwrap();
        cfg.latent_dim = 4;
        cfg.batch_k = 16;
        cfg.fd_samples = 32;
        cfg.generator = NetworkSpec::generator(4, &[8], dim, false).unwrap();
        cfg.discriminator = NetworkSpec::classifier(dim, &[8], Some(0.5)).unwrap();
        cfg.observer = NetworkSpec::classifier(dim, &[8], Some(0.5)).unwrap();
        cfg
    }

    fn tiny_data(seed: u64) -> PuDataset {
        let comps = [
            GaussianComponent {
                mean: vec![-2.0, 0.0],
                cov: vec![0.3, 0.0, 0.0, 0.3],
                count: 200,
                label: Label::Positive,
            },
            GaussianComponent {
                mean: vec![2.0, 0.0],
                cov: vec![0.3, 0.0, 0.0, 0.3],
                count: 200,
                label: Label::Negative,
            },
        ];
        let pool = make_gaussian_mixture(&comps, &mut SeededRng::seed_from_u64(seed)).unwrap();
        make_pu_split(&pool, 0.5, 32, 32, 40, &mut SeededRng::seed_from_u64(seed + 1)).unwrap()
    }

    fn batch(data: &Tensor, k: usize) -> Tensor {
        data.select_rows(&(0..k).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn loss_g_is_sum_of_bce_terms() {
        let ds = tiny_data(0);
        let mut s = ObserverGan::new(tiny_cfg(2), 2).unwrap();
        let z = s.sample_latent(16).unwrap();
        let (mut g, xz) = s.generator_graph(&z).unwrap();
        let l = s.extend_loss_g(&mut g, xz).unwrap();
        let total = g.scalar(l);
        // recompute both terms from the graph's recorded outputs
        let mut g2 = Graph::new();
        let x = g2.constant(g.value(xz).clone());
        let mut d = s.discriminator.clone();
        let mut o = s.observer.clone();
        let mut rng = SeededRng::seed_from_u64(0);
        let dv = forward(&mut g2, &s.cfg.discriminator, &mut d, x, Mode::Eval, Tracking::Frozen, &mut rng).unwrap();
        let ov = forward(&mut g2, &s.cfg.observer, &mut o, x, Mode::Eval, Tracking::Frozen, &mut rng).unwrap();
        let n = g2.value(dv).len();
        let t1 = g2.bce(dv, &vec![1.0; n]).unwrap();
        let t2 = g2.bce(ov, &vec![1.0; n]).unwrap();
        let sum = g2.scalar(t1) + g2.scalar(t2);
        let both = loss_g(&mut g2, dv, ov).unwrap();
        assert!((g2.scalar(both) - sum).abs() < 1e-12);
        assert!(total.is_finite());
        let _ = ds;
    }

    #[test]
    fn frozen_stores_get_zero_gradients() {
        let ds = tiny_data(1);
        let mut s = ObserverGan::new(tiny_cfg(2), 2).unwrap();
        let z = s.sample_latent(16).unwrap();
        let (mut gg, xz) = s.generator_graph(&z).unwrap();
        let x_z = gg.value(xz).clone();
        let (xu, xp) = (batch(&ds.x_u, 16), batch(&ds.x_p, 16));
        let ids = (s.generator.id(), s.discriminator.id(), s.observer.id());

        let (mut g, l) = s.loss_d_graph(&xu, &x_z).unwrap();
        let gr = g.backward(l).unwrap();
        assert!(gr.touches(ids.1));
        assert!(!gr.touches(ids.0) && !gr.touches(ids.2));

        let (mut g, l) = s.loss_ob_graph(&xp, &x_z).unwrap();
        let gr = g.backward(l).unwrap();
        assert!(gr.touches(ids.2));
        assert!(!gr.touches(ids.0) && !gr.touches(ids.1));

        let l = s.extend_loss_g(&mut gg, xz).unwrap();
        let gr = gg.backward(l).unwrap();
        assert!(gr.touches(ids.0));
        let mut d = s.discriminator.clone();
        d.load_grads(&gr).unwrap();
        assert_eq!(d.max_abs_grad(), Some(0.0));
        let mut o = s.observer.clone();
        o.load_grads(&gr).unwrap();
        assert_eq!(o.max_abs_grad(), Some(0.0));
    }

    #[test]
    fn discriminator_descends_on_separable_batch() {
        let mut cfg = tiny_cfg(2);
        cfg.adam.lr = 1e-2;
        cfg.discriminator = NetworkSpec::classifier(2, &[8], None).unwrap();
        let mut s = ObserverGan::new(cfg, 2).unwrap();
        let real = Tensor::from_rows(&vec![vec![3.0, 3.0]; 8]).unwrap();
        let fake = Tensor::from_rows(&vec![vec![-3.0, -3.0]; 8]).unwrap();
        let (g_before, o_before) = (s.generator.clone(), s.observer.clone());
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let (mut g, l) = s.loss_d_graph(&real, &fake).unwrap();
            let v = g.scalar(l);
            assert!(v < prev, "{v} >= {prev}");
            prev = v;
            let gr = g.backward(l).unwrap();
            s.discriminator.load_grads(&gr).unwrap();
            s.discriminator.adam_step(&s.cfg.adam.clone()).unwrap();
        }
        assert_eq!(s.generator, g_before);
        assert_eq!(s.observer, o_before);
    }

    #[test]
    fn observer_separates_distant_fakes_quickly() {
        let ds = tiny_data(2);
        let mut cfg = TrainConfig::for_dim(2).unwrap();
        cfg.adam.lr = 1e-3;
        let mut s = ObserverGan::new(cfg, 2).unwrap();
        let fake = Tensor::from_rows(&vec![vec![20.0, 20.0]; 16]).unwrap();
        let xp = batch(&ds.x_p, 16);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let (mut g, l) = s.loss_ob_graph(&xp, &fake).unwrap();
            last = g.scalar(l);
            let gr = g.backward(l).unwrap();
            s.observer.load_grads(&gr).unwrap();
            s.observer.adam_step(&s.cfg.adam.clone()).unwrap();
        }
        assert!(last < 0.1, "loss_ob {last}");
    }

    #[derive(Default)]
    struct Log {
        updates: Vec<(usize, usize, Role)>,
        reinits: Vec<usize>,
        epochs: usize,
    }

    impl TrainHooks for Log {
        fn on_update(&mut self, e: usize, b: usize, r: Role) {
            self.updates.push((e, b, r));
        }
        fn on_reinit(&mut self, e: usize) {
            self.reinits.push(e);
        }
        fn on_epoch(&mut self, _: &MetricsRecord) {
            self.epochs += 1;
        }
    }

    #[test]
    fn update_order_and_reinit_schedule() {
        let ds = tiny_data(3);
        let mut cfg = tiny_cfg(2);
        cfg.epochs = 250;
        cfg.eval_every = 50;
        cfg.fd_samples = 0;
        let mut log = Log::default();
        let out = train_with_hooks(&cfg, &ds, &mut log).unwrap();
        assert_eq!(out.history.len(), 250);
        assert_eq!(log.epochs, 250);
        assert_eq!(log.reinits, vec![100, 200]);
        // 32 rows, batch 16: two minibatches per epoch
        assert_eq!(log.updates.len(), 250 * 2 * 3);
        for (i, chunk) in log.updates.chunks(3).enumerate() {
            let (e, b) = (i / 2, i % 2);
            assert_eq!(
                chunk,
                &[(e, b, Role::Discriminator), (e, b, Role::Observer), (e, b, Role::Generator)]
            );
        }
        assert!(out.history[49].test_accuracy.is_some());
        assert!(out.history[48].test_accuracy.is_none());

        cfg.reinit_period = 0;
        cfg.epochs = 120;
        let mut log = Log::default();
        train_with_hooks(&cfg, &ds, &mut log).unwrap();
        assert!(log.reinits.is_empty());
    }

    #[test]
    fn reinit_matches_fresh_draw() {
        let ds = tiny_data(4);
        let mut cfg = tiny_cfg(2);
        cfg.reinit_period = 3;
        cfg.epochs = 3;
        let mut s = ObserverGan::new(cfg.clone(), 2).unwrap();
        let fits = ReferenceFits::new(ds.training_view()).unwrap();
        for _ in 0..3 {
            s.next_epoch(&ds, Some(&fits), &mut NoHooks).unwrap();
        }
        let fresh = init_params(&cfg.observer, &mut stream(cfg.seed, "observer.reinit")).unwrap();
        let mut probe = s.clone();
        reinit(&cfg.observer, &mut probe.observer, &mut stream(cfg.seed, "observer.reinit")).unwrap();
        assert_eq!(probe.observer, fresh);
        assert_ne!(s.observer, fresh);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = tiny_data(5);
        let mut cfg = tiny_cfg(2);
        cfg.epochs = 5;
        let a = train(&cfg, &ds).unwrap();
        let b = train(&cfg, &ds).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.state.observer, b.state.observer);
        assert_eq!(ds.hidden_label_reads(), 0);
        cfg.seed = 1;
        let c = train(&cfg, &ds).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn too_small_pool_is_rejected() {
        let ds = tiny_data(6);
        let mut cfg = tiny_cfg(2);
        cfg.batch_k = 64;
        cfg.epochs = 1;
        assert!(matches!(train(&cfg, &ds), Err(Error::Spec(_))));
        let mut cfg = tiny_cfg(2);
        cfg.latent_dim = 5;
        assert!(ObserverGan::new(cfg, 2).is_err());
    }

    #[test]
    fn constant_observer_ties_to_negative() {
        let spec = NetworkSpec::new(vec![Layer::dense(2, 1), Layer::Sigmoid]).unwrap();
        let mut p = init_params(&spec, &mut SeededRng::seed_from_u64(0)).unwrap();
        p.get_mut("dense0.weight").unwrap().value.data_mut().fill(0.0);
        let x = Tensor::from_rows(&[vec![1.0, -4.0], vec![0.0, 9.0]]).unwrap();
        let (labels, scores) = classify(&spec, &p, &x).unwrap();
        assert_eq!(scores, vec![0.5, 0.5]);
        assert_eq!(labels, vec![Label::Negative; 2]);
    }

    #[test]
    fn hand_built_observer_recovers_rule() {
        // score = sigmoid(-10 x0): positive exactly when x0 > 0
        let spec = NetworkSpec::new(vec![Layer::dense(2, 1), Layer::Sigmoid]).unwrap();
        let mut p = init_params(&spec, &mut SeededRng::seed_from_u64(0)).unwrap();
        p.get_mut("dense0.weight").unwrap().value.data_mut().copy_from_slice(&[-10.0, 0.0]);
        let mut rows = Vec::new();
        for i in -10..=10 {
            for j in -10..=10 {
                rows.push(vec![f64::from(i) * 0.3, f64::from(j) * 0.3]);
            }
        }
        let (labels, scores) = classify(&spec, &p, &Tensor::from_rows(&rows).unwrap()).unwrap();
        for ((r, l), s) in rows.iter().zip(&labels).zip(&scores) {
            let want = if r[0] > 0.0 { Label::Positive } else { Label::Negative };
            assert_eq!(*l, want, "{r:?}");
            assert!(*s > 0.0 && *s < 1.0);
        }
    }

    #[test]
    fn shape_mismatch_in_classify() {
        let spec = NetworkSpec::classifier(2, &[4], None).unwrap();
        let p = init_params(&spec, &mut SeededRng::seed_from_u64(0)).unwrap();
        assert!(classify(&spec, &p, &Tensor::zeros(vec![3, 5])).is_err());
    }
}
