//! Spectral normalization of dense weights by power iteration.
//!
//! A weight `W` of shape `(in, out)` is divided by an estimate of its largest
//! singular value. The estimate comes from a persistent left vector `u`
//! (length `in`): `v = normalize(W^T u)`, `u <- normalize(W v)`,
//! `sigma = |W v|`.

use crate::error::{spec_err, Result};
use crate::tensor::Tensor;

/// Lower bound applied to every spectral norm estimate.
pub const SIGMA_FLOOR: f64 = 1e-12;

fn wt_u(w: &Tensor, u: &[f64]) -> Vec<f64> {
    let (r, c) = (w.rows(), w.cols());
    let d = w.data();
    let mut v = vec![0.0; c];
    for i in 0..r {
        let row = &d[i * c..(i + 1) * c];
        for (acc, x) in v.iter_mut().zip(row) {
            *acc += u[i] * x;
        }
    }
    v
}

fn w_v(w: &Tensor, v: &[f64]) -> Vec<f64> {
    let c = w.cols();
    w.data()
        .chunks(c)
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check(w: &Tensor, u: &[f64]) -> Result<()> {
    if w.shape().len() != 2 {
        return Err(spec_err("spectral normalization needs a matrix"));
    }
    if u.len() != w.rows() {
        return Err(spec_err(format!(
            "power-iteration vector has length {} for a {}-row matrix",
            u.len(),
            w.rows()
        )));
    }
    Ok(())
}

/// Spectral norm estimate implied by `u` without advancing it: `|W^T u|`.
pub fn estimate_sigma(w: &Tensor, u: &[f64]) -> f64 {
    norm(&wt_u(w, u)).max(SIGMA_FLOOR)
}

/// Advances `u` by one power-iteration step and returns the new estimate.
///
/// For a zero matrix `u` is left untouched and the floor is returned.
pub fn power_step(w: &Tensor, u: &mut [f64]) -> Result<f64> {
    check(w, u)?;
    let mut v = wt_u(w, u);
    let nv = norm(&v);
    if nv <= SIGMA_FLOOR {
        return Ok(SIGMA_FLOOR);
    }
    v.iter_mut().for_each(|x| *x /= nv);
    let wv = w_v(w, &v);
    let sigma = norm(&wv);
    if sigma <= SIGMA_FLOOR {
        return Ok(SIGMA_FLOOR);
    }
    for (ui, x) in u.iter_mut().zip(&wv) {
        *ui = x / sigma;
    }
    Ok(sigma)
}

/// Runs `iters` power-iteration steps; returns the final estimate.
pub fn power_iteration(w: &Tensor, u: &mut [f64], iters: usize) -> Result<f64> {
    check(w, u)?;
    let mut sigma = estimate_sigma(w, u);
    for _ in 0..iters {
        sigma = power_step(w, u)?;
    }
    Ok(sigma)
}

/// `W / sigma` after one power-iteration step on `u`. The returned sigma is
/// meant to be treated as a constant by differentiation.
pub fn spectral_normalize(w: &Tensor, u: &mut [f64]) -> Result<(Tensor, f64)> {
    let sigma = power_step(w, u)?;
    let data = w.data().iter().map(|x| x / sigma).collect();
    Ok((Tensor::new(w.shape().to_vec(), data)?, sigma))
}
