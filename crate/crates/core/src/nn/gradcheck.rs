use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::params::ParamStore;

/// Compares back-propagated gradients of `params` against central finite
/// differences with step `h`.
///
/// `build` must rebuild the loss from scratch on the supplied graph and be
/// deterministic: it is evaluated twice at the base point and the two values
/// must agree bit for bit. Returns the largest
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)` over all entries.
pub fn grad_check<F>(params: &mut ParamStore, h: f64, mut build: F) -> Result<f64>
where
    F: FnMut(&mut Graph, &mut ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    let base = g.scalar(loss);
    let grads = g.backward(loss)?;
    let id = params.id();
    let analytic: Vec<Vec<f64>> = params
        .params()
        .iter()
        .map(|p| {
            grads
                .param(id, &p.name)
                .map_or_else(|| vec![0.0; p.value.len()], <[f64]>::to_vec)
        })
        .collect();

    let mut eval = |params: &mut ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, params)?;
        Ok(g.scalar(loss))
    };

    let again = eval(params)?;
    if again.to_bits() != base.to_bits() {
        return Err(Error::Usage(format!(
            "loss builder is not deterministic ({base} then {again})"
        )));
    }

    let mut worst = 0.0_f64;
    for (pi, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = params.params()[pi].value.data()[j];
            params.params_mut()[pi].value.data_mut()[j] = orig + h;
            let up = eval(params)?;
            params.params_mut()[pi].value.data_mut()[j] = orig - h;
            let down = eval(params)?;
            params.params_mut()[pi].value.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward_eval, init_params, Layer, NetworkSpec, Tracking};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_model_with_bce() {
        let spec = NetworkSpec::new(vec![Layer::dense(3, 1), Layer::Sigmoid]).unwrap();
        let mut p = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let x = Tensor::from_rows(&[
            vec![0.5, -1.0, 2.0],
            vec![1.5, 0.3, -0.7],
            vec![-0.2, 0.9, 0.1],
        ])
        .unwrap();
        let err = grad_check(&mut p, 1e-5, |g, p| {
            let xv = g.constant(x.clone());
            let y = forward_eval(g, &spec, p, xv, Tracking::Trainable)?;
            g.bce(y, &[1.0, 0.0, 1.0])
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let spec = NetworkSpec::new(vec![Layer::dense(2, 2)]).unwrap();
        let mut p = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let err = grad_check(&mut p, 1e-5, |g, _| {
            let c = g.constant(Tensor::scalar(0.7));
            g.bce(c, &[1.0])
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn three_layer_leaky_net() {
        let spec = NetworkSpec::new(vec![
            Layer::dense(4, 6),
            Layer::LeakyRelu { slope: 0.2 },
            Layer::dense(6, 5),
            Layer::LeakyRelu { slope: 0.2 },
            Layer::dense(5, 1),
            Layer::Sigmoid,
        ])
        .unwrap();
        let mut p = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let err = grad_check(&mut p, 1e-5, |g, p| {
            let xv = g.constant(x.clone());
            let y = forward_eval(g, &spec, p, xv, Tracking::Trainable)?;
            g.bce(y, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0])
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn non_deterministic_builder_rejected() {
        let spec = NetworkSpec::new(vec![Layer::dense(1, 1)]).unwrap();
        let mut p = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut calls = 0.0;
        let res = grad_check(&mut p, 1e-5, |g, _| {
            calls += 0.1;
            let c = g.constant(Tensor::scalar(0.3 + calls));
            g.bce(c, &[1.0])
        });
        assert!(matches!(res, Err(Error::Usage(_))));
    }
}
