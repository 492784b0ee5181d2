//! Datasets and the positive/unlabeled split.

mod idx;
mod split;
mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{spec_err, Result};
use crate::tensor::Tensor;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx, IdxOptions};
pub use split::{make_pu_split, positives_in_unlabeled, PuDataset, SplitProvenance, TrainingView};
pub use synthetic::{make_gaussian_mixture, make_two_moons, GaussianComponent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    /// Target used when this label is the class a classifier scores against:
    /// 1 for negative, 0 for positive.
    pub fn negative_target(self) -> f64 {
        match self {
            Label::Positive => 0.0,
            Label::Negative => 1.0,
        }
    }
}

/// Feature rows with their true classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    pub features: Tensor,
    pub labels: Vec<Label>,
}

impl LabeledPool {
    pub fn new(features: Tensor, labels: Vec<Label>) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(spec_err(format!(
                "pool features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        if features.rows() != labels.len() {
            return Err(spec_err(format!(
                "{} feature rows for {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn indices_of(&self, label: Label) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }
}
