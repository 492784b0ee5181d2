use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Label, LabeledPool};
use crate::error::{spec_err, Result};
use crate::tensor::Tensor;

/// Number of positives placed in an unlabeled set of size `n_u`:
/// `alpha * n_u` rounded half to even.
pub fn positives_in_unlabeled(alpha: f64, n_u: usize) -> usize {
    (alpha * n_u as f64).round_ties_even() as usize
}

/// Source-pool row indices behind each part of a split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitProvenance {
    pub positive: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub test: Vec<usize>,
}

/// Labeled positives, an unlabeled mixture and a balanced test set.
///
/// The true classes of the unlabeled rows are kept private: trainers get a
/// [`TrainingView`], and every read through
/// [`PuDataset::hidden_u_labels`] is counted.
#[derive(Debug)]
pub struct PuDataset {
    pub x_p: Tensor,
    pub x_u: Tensor,
    pub alpha: f64,
    pub test: LabeledPool,
    hidden_u_labels: Vec<Label>,
    provenance: SplitProvenance,
    hidden_reads: AtomicUsize,
}

impl Clone for PuDataset {
    fn clone(&self) -> Self {
        Self {
            x_p: self.x_p.clone(),
            x_u: self.x_u.clone(),
            alpha: self.alpha,
            test: self.test.clone(),
            hidden_u_labels: self.hidden_u_labels.clone(),
            provenance: self.provenance.clone(),
            hidden_reads: AtomicUsize::new(0),
        }
    }
}

/// What a PU learner is allowed to see.
#[derive(Debug, Clone, Copy)]
pub struct TrainingView<'a> {
    pub x_p: &'a Tensor,
    pub x_u: &'a Tensor,
}

impl PuDataset {
    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            x_p: &self.x_p,
            x_u: &self.x_u,
        }
    }

    pub fn dim(&self) -> usize {
        self.x_p.cols()
    }

    /// True classes of `x_u`. Reserved for the supervised reference.
    pub fn hidden_u_labels(&self) -> &[Label] {
        self.hidden_reads.fetch_add(1, Ordering::Relaxed);
        &self.hidden_u_labels
    }

    /// How many times [`Self::hidden_u_labels`] has been called on this value.
    pub fn hidden_label_reads(&self) -> usize {
        self.hidden_reads.load(Ordering::Relaxed)
    }

    pub fn provenance(&self) -> &SplitProvenance {
        &self.provenance
    }
}

/// Draws a SCAR split from `pool`.
///
/// Positives and negatives are each shuffled once. `x_p` takes the first
/// `n_p` shuffled positives, the unlabeled set the next
/// `round(alpha * n_u)` positives plus `n_u - round(alpha * n_u)`
/// negatives, and the test set `n_test / 2` of each class from what is
/// left, so all three parts are disjoint. The unlabeled and test rows are
/// shuffled afterwards.
pub fn make_pu_split<R: Rng + ?Sized>(
    pool: &LabeledPool,
    alpha: f64,
    n_p: usize,
    n_u: usize,
    n_test: usize,
    rng: &mut R,
) -> Result<PuDataset> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(spec_err(format!("alpha {alpha} outside [0, 1]")));
    }
    if n_p == 0 || n_u == 0 {
        return Err(spec_err("n_p and n_u must be positive"));
    }
    if n_test == 0 || n_test % 2 != 0 {
        return Err(spec_err(format!(
            "n_test must be a positive even number for a balanced test set, got {n_test}"
        )));
    }
    let u_pos = positives_in_unlabeled(alpha, n_u);
    let u_neg = n_u - u_pos;
    let half = n_test / 2;
    let mut pos = pool.indices_of(Label::Positive);
    let mut neg = pool.indices_of(Label::Negative);
    let need_pos = n_p + u_pos + half;
    let need_neg = u_neg + half;
    if pos.len() < need_pos || neg.len() < need_neg {
        return Err(spec_err(format!(
            "pool has {} positives and {} negatives; split needs {need_pos} and {need_neg}",
            pos.len(),
            neg.len()
        )));
    }
    pos.shuffle(rng);
    neg.shuffle(rng);

    let p_idx = pos[..n_p].to_vec();
    let mut u_idx: Vec<usize> = pos[n_p..n_p + u_pos]
        .iter()
        .chain(&neg[..u_neg])
        .copied()
        .collect();
    u_idx.shuffle(rng);
    let mut t_idx: Vec<usize> = pos[n_p + u_pos..need_pos]
        .iter()
        .chain(&neg[u_neg..need_neg])
        .copied()
        .collect();
    t_idx.shuffle(rng);

    let x_p = pool.features.select_rows(&p_idx)?;
    let x_u = pool.features.select_rows(&u_idx)?;
    let hidden_u_labels = u_idx.iter().map(|&i| pool.labels[i]).collect();
    let test = LabeledPool::new(
        pool.features.select_rows(&t_idx)?,
        t_idx.iter().map(|&i| pool.labels[i]).collect(),
    )?;
    Ok(PuDataset {
        x_p,
        x_u,
        alpha,
        test,
        hidden_u_labels,
        provenance: SplitProvenance {
            positive: p_idx,
            unlabeled: u_idx,
            test: t_idx,
        },
        hidden_reads: AtomicUsize::new(0),
    })
}
