//! Evaluation: accuracy, Fréchet distance between Gaussian fits of sample
//! sets, per-epoch records and last-N summaries.
//!
//! The Fréchet distance here is computed on raw feature vectors, not on
//! embeddings from a pretrained network, and is reported as an "FD score".

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{spec_err, Result};
use crate::tensor::Tensor;

/// Threshold separating positive from negative scores.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Scores are probabilities of the NEGATIVE class: a sample is called
/// positive iff its score is strictly below the threshold, so a score equal
/// to the threshold is negative.
pub fn predict_label(score: f64, threshold: f64) -> Label {
    if score < threshold {
        Label::Positive
    } else {
        Label::Negative
    }
}

pub fn accuracy(scores: &[f64], labels: &[Label], threshold: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(spec_err("accuracy of an empty set"));
    }
    if scores.len() != labels.len() {
        return Err(spec_err(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| predict_label(s, threshold) == l)
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Mean and covariance of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Sample mean and unbiased, symmetrized sample covariance of the rows of `x`.
pub fn fit_gaussian(x: &Tensor) -> Result<GaussianFit> {
    let (n, d) = (x.rows(), x.cols());
    if x.shape().len() != 2 || n < 2 {
        return Err(spec_err(format!(
            "a Gaussian fit needs at least two rows, got shape {:?}",
            x.shape()
        )));
    }
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        for (j, v) in x.row(i).iter().enumerate() {
            mean[j] += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for (j, v) in x.row(i).iter().enumerate() {
            centered[j] = v - mean[j];
        }
        for a in 0..d {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            for b in a..d {
                cov[(a, b)] += ca * centered[b];
            }
        }
    }
    cov /= (n - 1) as f64;
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    Ok(GaussianFit { mean, cov })
}

/// Ridge added to a covariance whose smallest eigenvalue is below
/// [`RIDGE_TRIGGER`].
pub const RIDGE: f64 = 1e-6;
pub const RIDGE_TRIGGER: f64 = 1e-10;

fn regularized(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let min = SymmetricEigen::new(cov.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min < RIDGE_TRIGGER {
        cov + DMatrix::identity(cov.nrows(), cov.ncols()) * RIDGE
    } else {
        cov.clone()
    }
}

/// Square root of a symmetric PSD matrix; negative eigenvalues clamp to 0.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`.
///
/// The trace of the cross term is taken as the trace of the square root of
/// the symmetric PSD matrix `S_a^{1/2} S_b S_a^{1/2}`, which has the same
/// eigenvalues as `S_a S_b`. Near-singular covariances get a small ridge
/// before any square root; round-off below zero is clamped.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    let d = a.mean.len();
    if b.mean.len() != d || a.cov.nrows() != d || b.cov.nrows() != d {
        return Err(spec_err(format!(
            "Fréchet distance between {d}- and {}-dimensional fits",
            b.mean.len()
        )));
    }
    let sa = regularized(&a.cov);
    let sb = regularized(&b.cov);
    let ra = psd_sqrt(&sa);
    let mut inner = &ra * &sb * &ra;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let fd = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    Ok(fd.max(0.0))
}

/// Convenience: fit both sample sets, then compare.
pub fn frechet_distance_samples(a: &Tensor, b: &Tensor) -> Result<f64> {
    frechet_distance(&fit_gaussian(a)?, &fit_gaussian(b)?)
}

/// One row of training history.
///
/// Losses that a method does not have (for example the discriminator loss
/// of a plain classifier) are `None`; evaluation columns are `None` on
/// epochs that were not evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub loss_d: Option<f64>,
    pub loss_g: Option<f64>,
    pub loss_ob: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub fd_gen_unlabeled: Option<f64>,
    pub fd_gen_positive: Option<f64>,
}

impl MetricsRecord {
    pub fn empty(epoch: usize) -> Self {
        Self {
            epoch,
            loss_d: None,
            loss_g: None,
            loss_ob: None,
            test_accuracy: None,
            fd_gen_unlabeled: None,
            fd_gen_positive: None,
        }
    }
}

/// Mean and population standard deviation of an accuracy window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingSummary {
    pub last_n: usize,
    pub mean: f64,
    pub std: f64,
}

impl RollingSummary {
    /// Percent with one decimal, `mean ± std`.
    pub fn to_percent_string(&self) -> String {
        format!("{:.1} ± {:.1}", 100.0 * self.mean, 100.0 * self.std)
    }
}

/// Summary of test accuracy over the final `last_n` evaluated records.
pub fn rolling_summary(history: &[MetricsRecord], last_n: usize) -> Result<RollingSummary> {
    if last_n == 0 {
        return Err(spec_err("rolling summary over zero epochs"));
    }
    let accs: Vec<f64> = history
        .iter()
        .rev()
        .filter_map(|r| r.test_accuracy)
        .take(last_n)
        .collect();
    if accs.len() < last_n {
        return Err(spec_err(format!(
            "history has {} evaluated epochs, need {last_n}",
            accs.len()
        )));
    }
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    Ok(RollingSummary {
        last_n,
        mean,
        std: var.sqrt(),
    })
}
