use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Label, LabeledPool};
use crate::error::{spec_err, Result};
use crate::tensor::Tensor;

/// Two interleaved half circles in the plane.
///
/// Positives lie on the upper unit half circle centred at the origin,
/// negatives on the lower one centred at `(1, 0.5)`. Angles are drawn
/// uniformly, then each coordinate gets independent Gaussian noise. An odd
/// `n` is rounded down to `n / 2` points per class. Rows alternate
/// positive, negative.
pub fn make_two_moons<R: Rng + ?Sized>(n: usize, noise: f64, rng: &mut R) -> Result<LabeledPool> {
    if n < 2 {
        return Err(spec_err(format!("two moons needs n >= 2, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(spec_err(format!("noise must be a finite std-dev >= 0, got {noise}")));
    }
    let per_class = n / 2;
    let mut data = Vec::with_capacity(per_class * 4);
    let mut labels = Vec::with_capacity(per_class * 2);
    for _ in 0..per_class {
        let t: f64 = rng.random_range(0.0..=std::f64::consts::PI);
        data.extend([t.cos(), t.sin()]);
        labels.push(Label::Positive);
        let t: f64 = rng.random_range(0.0..=std::f64::consts::PI);
        data.extend([1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(Label::Negative);
    }
    if noise > 0.0 {
        for v in &mut data {
            let e: f64 = rng.sample(StandardNormal);
            *v += noise * e;
        }
    }
    LabeledPool::new(Tensor::new(vec![per_class * 2, 2], data)?, labels)
}

/// One Gaussian blob of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    /// Row-major `d x d` covariance; must be symmetric PSD.
    pub cov: Vec<f64>,
    pub count: usize,
    pub label: Label,
}

/// Samples each component in turn; rows are grouped by component.
pub fn make_gaussian_mixture<R: Rng + ?Sized>(
    components: &[GaussianComponent],
    rng: &mut R,
) -> Result<LabeledPool> {
    let d = components
        .first()
        .map(|c| c.mean.len())
        .ok_or_else(|| spec_err("mixture needs at least one component"))?;
    if d == 0 {
        return Err(spec_err("mixture dimension must be positive"));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (ci, c) in components.iter().enumerate() {
        if c.mean.len() != d || c.cov.len() != d * d {
            return Err(spec_err(format!(
                "component {ci}: expected mean of length {d} and {d}x{d} covariance"
            )));
        }
        let factor = psd_factor(&c.cov, d).map_err(|e| spec_err(format!("component {ci}: {e}")))?;
        let mut z = vec![0.0; d];
        for _ in 0..c.count {
            for zi in &mut z {
                *zi = rng.sample(StandardNormal);
            }
            for i in 0..d {
                let shift: f64 = (0..d).map(|j| factor[(i, j)] * z[j]).sum();
                data.push(c.mean[i] + shift);
            }
            labels.push(c.label);
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(spec_err("mixture has zero samples"));
    }
    LabeledPool::new(Tensor::new(vec![n, d], data)?, labels)
}

/// `V sqrt(L)` with `cov = V L V^T`, so `factor * z` has covariance `cov`.
fn psd_factor(cov: &[f64], d: usize) -> std::result::Result<DMatrix<f64>, String> {
    let m = DMatrix::from_row_slice(d, d, cov);
    if m.iter().any(|v| !v.is_finite()) {
        return Err("covariance has non-finite entries".into());
    }
    let scale = m.amax().max(1.0);
    if (&m - m.transpose()).amax() > 1e-12 * scale {
        return Err("covariance is not symmetric".into());
    }
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(format!("covariance is not positive semidefinite (eigenvalue {min:e})"));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeededRng;
    use rand::SeedableRng;

    #[test]
    fn noiseless_moons_lie_on_circles() {
        let mut rng = SeededRng::seed_from_u64(1);
        let pool = make_two_moons(200, 0.0, &mut rng).unwrap();
        assert_eq!(pool.count(Label::Positive), 100);
        for i in 0..pool.len() {
            let r = pool.features.row(i);
            let (cx, cy) = match pool.labels[i] {
                Label::Positive => (0.0, 0.0),
                Label::Negative => (1.0, 0.5),
            };
            let radius = ((r[0] - cx).powi(2) + (r[1] - cy).powi(2)).sqrt();
            assert!((radius - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_n_rounds_down() {
        let mut rng = SeededRng::seed_from_u64(1);
        assert_eq!(make_two_moons(7, 0.1, &mut rng).unwrap().len(), 6);
        assert!(make_two_moons(1, 0.1, &mut rng).is_err());
        assert!(make_two_moons(4, -1.0, &mut rng).is_err());
    }

    #[test]
    fn moons_deterministic() {
        let a = make_two_moons(50, 0.1, &mut SeededRng::seed_from_u64(3)).unwrap();
        let b = make_two_moons(50, 0.1, &mut SeededRng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_covariance_gives_the_mean() {
        let comp = GaussianComponent {
            mean: vec![1.5, -2.0],
            cov: vec![0.0; 4],
            count: 10,
            label: Label::Negative,
        };
        let pool = make_gaussian_mixture(&[comp], &mut SeededRng::seed_from_u64(0)).unwrap();
        for i in 0..10 {
            assert_eq!(pool.features.row(i), &[1.5, -2.0]);
        }
    }

    #[test]
    fn rejects_non_psd() {
        let comp = GaussianComponent {
            mean: vec![0.0, 0.0],
            cov: vec![1.0, 2.0, 2.0, 1.0],
            count: 1,
            label: Label::Positive,
        };
        assert!(make_gaussian_mixture(&[comp], &mut SeededRng::seed_from_u64(0)).is_err());
    }
}
