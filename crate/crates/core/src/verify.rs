//! Finite-difference verification of every layer kind under the three
//! adversarial losses.
//!
//! Each case compares back-propagated gradients of the updated network
//! against central differences. Spectral normalization is checked in eval
//! mode, where the cached spectral estimate is a constant; dropout and batch
//! statistics are checked in train mode with the dropout masks replayed from
//! a fixed seed on every evaluation.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::gan::{loss_d, loss_g, loss_ob};
use crate::nn::{forward, grad_check, init_params, Graph, Layer, Mode, NetworkSpec, ParamStore, Tracking};
use crate::seed::{stream, SeededRng};
use crate::tensor::Tensor;

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

const DIM: usize = 3;
const LATENT: usize = 3;
const HIDDEN: usize = 4;
const BATCH: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCase {
    pub name: String,
    pub max_rel_error: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE
    }
}

fn dense(i: usize, o: usize, sn: bool, bias: bool) -> Layer {
    Layer::Dense {
        in_dim: i,
        out_dim: o,
        spectral_norm: sn,
        bias,
    }
}

fn classifier(spectral: bool) -> Result<NetworkSpec> {
    NetworkSpec::new(vec![
        dense(DIM, HIDDEN, spectral, true),
        Layer::LeakyRelu { slope: 0.2 },
        dense(HIDDEN, HIDDEN, spectral, true),
        Layer::Relu,
        Layer::Dropout { rate: 0.5 },
        dense(HIDDEN, 1, false, true),
        Layer::Sigmoid,
    ])
}

fn generator(sigmoid_output: bool) -> Result<NetworkSpec> {
    let mut layers = vec![
        dense(LATENT, HIDDEN, false, false),
        Layer::Normalize,
        Layer::Relu,
        dense(HIDDEN, HIDDEN, false, false),
        Layer::Normalize,
        Layer::LeakyRelu { slope: 0.2 },
        dense(HIDDEN, DIM, false, true),
    ];
    if sigmoid_output {
        layers.push(Layer::Sigmoid);
    }
    NetworkSpec::new(layers)
}

fn normal(rows: usize, cols: usize, rng: &mut SeededRng) -> Result<Tensor> {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data)
}

/// Moves every value off its initial point so biases, normalization
/// offsets and running statistics are generic.
fn jitter(params: &mut ParamStore, rng: &mut SeededRng) {
    for p in params.params_mut() {
        for v in p.value.data_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for i in 0..8 {
        if let Some(rs) = params.running_mut(&format!("norm{i}")) {
            for m in &mut rs.mean {
                *m = 0.5 * rng.sample::<f64, _>(StandardNormal);
            }
            for v in &mut rs.var {
                *v = rng.random_range(0.5..2.0);
            }
        }
    }
}

struct Nets {
    g: (NetworkSpec, ParamStore),
    d: (NetworkSpec, ParamStore),
    ob: (NetworkSpec, ParamStore),
}

fn nets(mode: Mode, rng: &mut SeededRng) -> Result<Nets> {
    let (gs, cs) = match mode {
        Mode::Eval => (generator(false)?, classifier(true)?),
        Mode::Train => (generator(true)?, classifier(false)?),
    };
    let mut g = init_params(&gs, rng)?;
    let mut d = init_params(&cs, rng)?;
    let mut ob = init_params(&cs, rng)?;
    jitter(&mut g, rng);
    jitter(&mut d, rng);
    jitter(&mut ob, rng);
    Ok(Nets {
        g: (gs, g),
        d: (cs.clone(), d),
        ob: (cs, ob),
    })
}

/// Runs every case. Deterministic in `seed`.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    for (mode, tag) in [(Mode::Eval, "eval: spectral norm, running stats"), (Mode::Train, "train: dropout, batch stats, sigmoid output")] {
        let mut rng = stream(seed, &format!("gradcheck.{tag}"));
        let Nets { g, d, ob } = nets(mode, &mut rng)?;
        let x_u = normal(BATCH, DIM, &mut rng)?;
        let x_p = normal(BATCH, DIM, &mut rng)?;
        let z = normal(BATCH, LATENT, &mut rng)?;
        let mask_seed: u64 = rng.random();
        let x_z = {
            let mut gr = Graph::new();
            let zv = gr.constant(z.clone());
            let mut gp = g.1.clone();
            let xz = forward(&mut gr, &g.0, &mut gp, zv, mode, Tracking::Frozen, &mut SeededRng::seed_from_u64(mask_seed))?;
            gr.value(xz).clone()
        };

        let (dspec, mut dp) = d.clone();
        let err = grad_check(&mut dp, GRAD_STEP, |gr, p| {
            let mut m = SeededRng::seed_from_u64(mask_seed);
            let (a, b) = (gr.constant(x_u.clone()), gr.constant(x_z.clone()));
            let ra = forward(gr, &dspec, p, a, mode, Tracking::Trainable, &mut m)?;
            let rb = forward(gr, &dspec, p, b, mode, Tracking::Trainable, &mut m)?;
            loss_d(gr, ra, rb)
        })?;
        out.push(GradCase {
            name: format!("L_D wrt discriminator ({tag})"),
            max_rel_error: err,
        });

        let (ospec, mut op) = ob.clone();
        let err = grad_check(&mut op, GRAD_STEP, |gr, p| {
            let mut m = SeededRng::seed_from_u64(mask_seed);
            let (a, b) = (gr.constant(x_p.clone()), gr.constant(x_z.clone()));
            let ra = forward(gr, &ospec, p, a, mode, Tracking::Trainable, &mut m)?;
            let rb = forward(gr, &ospec, p, b, mode, Tracking::Trainable, &mut m)?;
            loss_ob(gr, ra, rb)
        })?;
        out.push(GradCase {
            name: format!("L_Ob wrt observer ({tag})"),
            max_rel_error: err,
        });

        let (gspec, mut gp) = g;
        let (mut dfix, mut ofix) = (d.1, ob.1);
        let err = grad_check(&mut gp, GRAD_STEP, |gr, p| {
            let mut m = SeededRng::seed_from_u64(mask_seed);
            let zv = gr.constant(z.clone());
            let xz = forward(gr, &gspec, p, zv, mode, Tracking::Trainable, &mut m)?;
            let df = forward(gr, &d.0, &mut dfix, xz, mode, Tracking::Frozen, &mut m)?;
            let of = forward(gr, &ob.0, &mut ofix, xz, mode, Tracking::Frozen, &mut m)?;
            loss_g(gr, df, of)
        })?;
        out.push(GradCase {
            name: format!("L_G wrt generator ({tag})"),
            max_rel_error: err,
        });
    }
    Ok(out)
}
