use rand::{Rng, RngCore};

use crate::error::{spec_err, Error, Result};
use crate::tensor::Tensor;

use super::graph::{Graph, NormStats, Var};
use super::params::{beta_name, bias_name, gamma_name, weight_name, ParamStore};
use super::spec::{Layer, NetworkSpec};
use super::spectral;

pub const NORM_EPS: f64 = 1e-5;
/// Weight of the old value when folding batch statistics into running ones.
pub const NORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch statistics, one power-iteration step per
    /// spectrally normalized layer.
    Train,
    /// Dropout is the identity; stored running statistics and spectral
    /// estimates are used and nothing is mutated.
    Eval,
}

/// Whether a network's parameters receive gradients in this pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tracking {
    Trainable,
    Frozen,
}

enum Pending {
    Spectral { name: String, u: Vec<f64>, sigma: f64 },
    Running { prefix: String, mean: Vec<f64>, var: Vec<f64> },
}

/// Runs `spec` on `input`, recording the computation in `graph`.
///
/// In [`Mode::Train`] the store's spectral vectors and running statistics
/// are advanced and `rng` supplies dropout masks.
pub fn forward<R: Rng + ?Sized>(
    graph: &mut Graph,
    spec: &NetworkSpec,
    params: &mut ParamStore,
    input: Var,
    mode: Mode,
    tracking: Tracking,
    rng: &mut R,
) -> Result<Var> {
    let mut pending = Vec::new();
    let mut rng_core = RngAdapter(rng);
    let out = run(graph, spec, params, input, mode, tracking, &mut rng_core, &mut pending)?;
    for p in pending {
        match p {
            Pending::Spectral { name, u, sigma } => {
                let sn = params
                    .get_mut(&name)
                    .and_then(|p| p.sn.as_mut())
                    .expect("spectral state exists for normalized layer");
                sn.u = u;
                sn.sigma = sigma;
            }
            Pending::Running { prefix, mean, var } => {
                let rs = params.running_mut(&prefix).expect("running stats exist");
                for (r, b) in rs.mean.iter_mut().zip(&mean) {
                    *r = NORM_MOMENTUM * *r + (1.0 - NORM_MOMENTUM) * b;
                }
                for (r, b) in rs.var.iter_mut().zip(&var) {
                    *r = NORM_MOMENTUM * *r + (1.0 - NORM_MOMENTUM) * b;
                }
            }
        }
    }
    Ok(out)
}

/// Eval-mode pass that leaves `params` untouched.
pub fn forward_eval(
    graph: &mut Graph,
    spec: &NetworkSpec,
    params: &ParamStore,
    input: Var,
    tracking: Tracking,
) -> Result<Var> {
    let mut pending = Vec::new();
    let mut no_rng = NoRng;
    let out = run(graph, spec, params, input, Mode::Eval, tracking, &mut no_rng, &mut pending)?;
    debug_assert!(pending.is_empty());
    Ok(out)
}

/// Eval-mode outputs for a batch without keeping a graph around.
pub fn predict(spec: &NetworkSpec, params: &ParamStore, batch: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(batch.clone());
    let y = forward_eval(&mut g, spec, params, x, Tracking::Frozen)?;
    Ok(g.value(y).clone())
}

struct RngAdapter<'a, R: ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for RngAdapter<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

struct NoRng;

impl RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval mode draws no random numbers")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("eval mode draws no random numbers")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("eval mode draws no random numbers")
    }
}

fn bind(graph: &mut Graph, params: &ParamStore, name: &str, tracking: Tracking) -> Result<Var> {
    let p = params.require(name)?;
    Ok(match tracking {
        Tracking::Trainable => graph.param(params.id(), name, p.value.clone()),
        Tracking::Frozen => graph.constant(p.value.clone()),
    })
}

#[allow(clippy::too_many_arguments)]
fn run(
    graph: &mut Graph,
    spec: &NetworkSpec,
    params: &ParamStore,
    input: Var,
    mode: Mode,
    tracking: Tracking,
    rng: &mut dyn RngCore,
    pending: &mut Vec<Pending>,
) -> Result<Var> {
    let shape = graph.value(input).shape().to_vec();
    if shape.len() != 2 || shape[1] != spec.in_dim() {
        return Err(spec_err(format!(
            "network expects a (k, {}) batch, got {shape:?}",
            spec.in_dim()
        )));
    }
    let mut h = input;
    for (i, layer) in spec.layers.iter().enumerate() {
        let prefix = spec.param_prefix(i);
        h = match *layer {
            Layer::Dense {
                spectral_norm, bias, ..
            } => {
                let wname = weight_name(&prefix);
                let mut w = bind(graph, params, &wname, tracking)?;
                if spectral_norm {
                    let p = params.require(&wname)?;
                    let sn = p
                        .sn
                        .as_ref()
                        .ok_or_else(|| spec_err(format!("`{wname}` has no spectral state")))?;
                    let sigma = match mode {
                        Mode::Train => {
                            let mut u = sn.u.clone();
                            let sigma = spectral::power_step(&p.value, &mut u)?;
                            pending.push(Pending::Spectral {
                                name: wname.clone(),
                                u,
                                sigma,
                            });
                            sigma
                        }
                        Mode::Eval => sn.sigma,
                    };
                    w = graph.scale(w, 1.0 / sigma)?;
                }
                let mut y = graph.matmul(h, w)?;
                if bias {
                    let b = bind(graph, params, &bias_name(&prefix), tracking)?;
                    y = graph.add_bias(y, b)?;
                }
                y
            }
            Layer::Relu => graph.relu(h)?,
            Layer::LeakyRelu { slope } => graph.leaky_relu(h, slope)?,
            Layer::Sigmoid => graph.sigmoid(h)?,
            Layer::Dropout { rate } => match mode {
                Mode::Eval => h,
                Mode::Train => {
                    let keep = 1.0 - rate;
                    let n = graph.value(h).len();
                    let mask = (0..n)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    graph.mask(h, mask)?
                }
            },
            Layer::Normalize => {
                let gamma = bind(graph, params, &gamma_name(&prefix), tracking)?;
                let beta = bind(graph, params, &beta_name(&prefix), tracking)?;
                match mode {
                    Mode::Train => {
                        let (y, stats) =
                            graph.batch_norm(h, gamma, beta, NormStats::Batch { eps: NORM_EPS })?;
                        let stats = stats.expect("batch statistics are reported");
                        pending.push(Pending::Running {
                            prefix: prefix.clone(),
                            mean: stats.mean,
                            var: stats.var,
                        });
                        y
                    }
                    Mode::Eval => {
                        let rs = params
                            .running(&prefix)
                            .ok_or_else(|| spec_err(format!("`{prefix}` has no running statistics")))?;
                        graph
                            .batch_norm(
                                h,
                                gamma,
                                beta,
                                NormStats::Fixed {
                                    mean: &rs.mean,
                                    var: &rs.var,
                                    eps: NORM_EPS,
                                },
                            )?
                            .0
                    }
                }
            }
        };
        if !graph.value(h).is_finite() {
            return Err(Error::Numeric {
                location: format!("layer {i} ({})", layer.kind()),
            });
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_half() {
        let spec = NetworkSpec::classifier(3, &[4, 4], Some(0.5)).unwrap();
        let mut p = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for q in p.params_mut() {
            q.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap();
        let y = predict(&spec, &p, &x).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn eval_dropout_is_identity() {
        let with = NetworkSpec::classifier(2, &[5], Some(0.5)).unwrap();
        let without = NetworkSpec::classifier(2, &[5], None).unwrap();
        let p = init_params(&with, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -0.1], vec![1.0, 2.0]]).unwrap();
        assert_eq!(predict(&with, &p, &x).unwrap(), predict(&without, &p, &x).unwrap());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let spec = NetworkSpec::classifier(2, &[3], None).unwrap();
        let p = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = Tensor::zeros(vec![4, 3]);
        assert!(matches!(predict(&spec, &p, &x), Err(Error::Spec(_))));
    }

    #[test]
    fn non_finite_names_layer() {
        let spec = NetworkSpec::new(vec![Layer::dense(1, 1), Layer::Relu]).unwrap();
        let mut p = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        p.get_mut("dense0.weight").unwrap().value.data_mut()[0] = f64::MAX;
        let x = Tensor::new(vec![1, 1], vec![10.0]).unwrap();
        let err = predict(&spec, &p, &x).unwrap_err();
        match err {
            Error::Numeric { location } => assert!(location.contains("layer 0"), "{location}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn train_mode_updates_state_eval_does_not() {
        let spec = NetworkSpec::new(vec![
            Layer::dense_sn(2, 3),
            Layer::Normalize,
            Layer::Relu,
            Layer::dense(3, 1),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = init_params(&spec, &mut rng).unwrap();
        let before = p.clone();
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 3.0]]).unwrap();

        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        forward_eval(&mut g, &spec, &p, xv, Tracking::Frozen).unwrap();
        assert_eq!(p, before);

        let mut g = Graph::new();
        let xv = g.constant(x);
        forward(&mut g, &spec, &mut p, xv, Mode::Train, Tracking::Trainable, &mut rng).unwrap();
        assert_ne!(p.running("norm0"), before.running("norm0"));
        assert_ne!(
            p.get("dense0.weight").unwrap().sn,
            before.get("dense0.weight").unwrap().sn
        );
    }

    #[test]
    fn matches_straight_line_reimplementation() {
        // 3-layer net evaluated by hand-written loops, no graph involved.
        let spec = NetworkSpec::new(vec![
            Layer::dense(3, 5),
            Layer::LeakyRelu { slope: 0.2 },
            Layer::dense(5, 4),
            Layer::Relu,
            Layer::dense(4, 1),
            Layer::Sigmoid,
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = init_params(&spec, &mut rng).unwrap();
        for q in p.params_mut() {
            for (k, v) in q.value.data_mut().iter_mut().enumerate() {
                *v += 0.01 * (k as f64).cos();
            }
        }
        let rows = vec![
            vec![0.2, -1.3, 0.7],
            vec![1.5, 0.1, -0.4],
            vec![-0.9, 0.8, 2.2],
            vec![0.0, 0.0, 0.0],
        ];
        let x = Tensor::from_rows(&rows).unwrap();
        let got = predict(&spec, &p, &x).unwrap();

        let dense = |x: &[f64], w: &Tensor, b: &Tensor| -> Vec<f64> {
            let (i, o) = (w.rows(), w.cols());
            (0..o)
                .map(|j| (0..i).map(|k| x[k] * w.data()[k * o + j]).sum::<f64>() + b.data()[j])
                .collect()
        };
        let v = |n: &str| &p.get(n).unwrap().value;
        for (r, row) in rows.iter().enumerate() {
            let h1: Vec<f64> = dense(row, v("dense0.weight"), v("dense0.bias"))
                .into_iter()
                .map(|z| if z > 0.0 { z } else { 0.2 * z })
                .collect();
            let h2: Vec<f64> = dense(&h1, v("dense1.weight"), v("dense1.bias"))
                .into_iter()
                .map(|z| z.max(0.0))
                .collect();
            let z = dense(&h2, v("dense2.weight"), v("dense2.bias"))[0];
            let expect = 1.0 / (1.0 + (-z).exp());
            assert!((got.data()[r] - expect).abs() < 1e-12);
        }
    }
}
