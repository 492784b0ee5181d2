//! Parameter storage, initialization and the Adam optimizer.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::graph::Gradients;
use super::spec::{Layer, NetworkSpec};
use super::spectral;

static NEXT_STORE: AtomicU64 = AtomicU64::new(1);

/// Identity shared by a store and its clones, used to route gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StoreId(u64);

impl StoreId {
    fn fresh() -> Self {
        StoreId(NEXT_STORE.fetch_add(1, Ordering::Relaxed))
    }
}

/// Power-iteration state of a spectrally normalized weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    /// Unit-norm estimate of the top left singular vector (length `in_dim`).
    pub u: Vec<f64>,
    /// Spectral norm estimate from the most recent power-iteration step.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
    pub sn: Option<SpectralState>,
}

impl Param {
    fn new(name: String, value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name,
            adam_m: Tensor::zeros(shape.clone()),
            adam_v: Tensor::zeros(shape),
            value,
            step_count: 0,
            sn: None,
        }
    }
}

/// Running estimates kept by a normalization layer for eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Named parameters of one network plus their optimizer state.
#[derive(Debug, Clone)]
pub struct ParamStore {
    id: StoreId,
    params: Vec<Param>,
    running: BTreeMap<String, RunningStats>,
}

/// Bit-level equality of values and optimizer state; the routing id is ignored.
impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.running == other.running
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub(crate) fn weight_name(prefix: &str) -> String {
    format!("{prefix}.weight")
}
pub(crate) fn bias_name(prefix: &str) -> String {
    format!("{prefix}.bias")
}
pub(crate) fn gamma_name(prefix: &str) -> String {
    format!("{prefix}.gamma")
}
pub(crate) fn beta_name(prefix: &str) -> String {
    format!("{prefix}.beta")
}

/// Draws fresh parameters for `spec`.
///
/// Dense weights feeding a ReLU-family activation use He-uniform bounds
/// `sqrt(6 / fan_in)`, all others Xavier-uniform `sqrt(6 / (fan_in + fan_out))`.
/// Biases and normalization offsets start at zero, normalization scales at one.
/// The random stream is consumed layer by layer: weight entries in row-major
/// order, then the spectral vector when the layer is normalized.
pub fn init_params<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<ParamStore> {
    spec.validate()?;
    let mut params = Vec::new();
    let mut running = BTreeMap::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        let prefix = spec.param_prefix(i);
        match *layer {
            Layer::Dense {
                in_dim,
                out_dim,
                spectral_norm,
                bias,
            } => {
                let limit = if spec.feeds_rectifier(i) {
                    (6.0 / in_dim as f64).sqrt()
                } else {
                    (6.0 / (in_dim + out_dim) as f64).sqrt()
                };
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                let w: Vec<f64> = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
                let w = Tensor::new(vec![in_dim, out_dim], w)?;
                let mut wp = Param::new(weight_name(&prefix), w);
                if spectral_norm {
                    let u = random_unit(in_dim, rng);
                    let sigma = spectral::estimate_sigma(&wp.value, &u);
                    wp.sn = Some(SpectralState { u, sigma });
                }
                params.push(wp);
                if bias {
                    params.push(Param::new(bias_name(&prefix), Tensor::zeros(vec![out_dim])));
                }
            }
            Layer::Normalize => {
                let m = spec.width_at(i);
                params.push(Param::new(gamma_name(&prefix), Tensor::filled(vec![m], 1.0)));
                params.push(Param::new(beta_name(&prefix), Tensor::zeros(vec![m])));
                running.insert(
                    prefix,
                    RunningStats {
                        mean: vec![0.0; m],
                        var: vec![1.0; m],
                    },
                );
            }
            _ => {}
        }
    }
    Ok(ParamStore {
        id: StoreId::fresh(),
        params,
        running,
    })
}

/// Redraws every value exactly as [`init_params`] would from the current
/// state of `rng`, and clears optimizer state. The store keeps its identity.
pub fn reinit<R: Rng + ?Sized>(spec: &NetworkSpec, params: &mut ParamStore, rng: &mut R) -> Result<()> {
    let fresh = init_params(spec, rng)?;
    params.params = fresh.params;
    params.running = fresh.running;
    Ok(())
}

fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl ParamStore {
    pub fn id(&self) -> StoreId {
        self.id
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub(crate) fn require(&self, name: &str) -> Result<&Param> {
        self.get(name)
            .ok_or_else(|| Error::Spec(format!("parameter store has no `{name}`; was it built from this spec?")))
    }

    /// Running statistics of the normalization layer with this prefix.
    pub fn running(&self, prefix: &str) -> Option<&RunningStats> {
        self.running.get(prefix)
    }

    pub(crate) fn running_mut(&mut self, prefix: &str) -> Option<&mut RunningStats> {
        self.running.get_mut(prefix)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies this store's gradients out of `grads`. Parameters the loss did
    /// not reach get an all-zero gradient.
    pub fn load_grads(&mut self, grads: &Gradients) -> Result<()> {
        let id = self.id;
        for p in &mut self.params {
            let g = grads
                .param(id, &p.name)
                .map_or_else(|| vec![0.0; p.value.len()], <[f64]>::to_vec);
            p.value.set_grad(g)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            let n = p.value.len();
            p.value.set_grad(vec![0.0; n]).expect("length matches");
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.value.take_grad();
        }
    }

    /// Largest absolute gradient entry, `None` if any gradient is missing.
    pub fn max_abs_grad(&self) -> Option<f64> {
        self.params.iter().try_fold(0.0_f64, |acc, p| {
            p.value
                .grad()
                .map(|g| g.iter().fold(acc, |a, v| a.max(v.abs())))
        })
    }

    /// One bias-corrected Adam update of every parameter; consumes the
    /// gradients loaded by [`ParamStore::load_grads`].
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.value.grad().is_none()) {
            return Err(Error::Usage(format!(
                "adam step without a gradient for `{}`",
                p.name
            )));
        }
        for p in &mut self.params {
            let g = p.value.take_grad().expect("checked above");
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let m = p.adam_m.data_mut();
            let v = p.adam_v.data_mut();
            let w = p.value.data_mut();
            for i in 0..g.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
