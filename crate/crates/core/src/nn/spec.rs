use serde::{Deserialize, Serialize};

use crate::error::{spec_err, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_DROPOUT: f64 = 0.5;

fn yes() -> bool {
    true
}

/// One entry of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    /// Affine map `x W + b` with `W` of shape `(in_dim, out_dim)`.
    Dense {
        in_dim: usize,
        out_dim: usize,
        #[serde(default)]
        spectral_norm: bool,
        #[serde(default = "yes")]
        bias: bool,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Sigmoid,
    Dropout {
        rate: f64,
    },
    /// Feature-wise batch normalization with a learned scale and shift.
    Normalize,
}

impl Layer {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        Layer::Dense {
            in_dim,
            out_dim,
            spectral_norm: false,
            bias: true,
        }
    }

    pub fn dense_sn(in_dim: usize, out_dim: usize) -> Self {
        Layer::Dense {
            in_dim,
            out_dim,
            spectral_norm: true,
            bias: true,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Relu => "relu",
            Layer::LeakyRelu { .. } => "leaky_relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Dropout { .. } => "dropout",
            Layer::Normalize => "normalize",
        }
    }
}

/// Declarative layer list shared by the generator and the classifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let spec = Self { layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut width: Option<usize> = None;
        let mut seen_dense = false;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Dense { in_dim, out_dim, .. } => {
                    if in_dim == 0 || out_dim == 0 {
                        return Err(spec_err(format!("layer {i}: dense dims must be positive")));
                    }
                    if let Some(w) = width {
                        if w != in_dim {
                            return Err(spec_err(format!(
                                "layer {i}: dense expects {in_dim} inputs but previous dense emits {w}"
                            )));
                        }
                    }
                    width = Some(out_dim);
                    seen_dense = true;
                }
                Layer::LeakyRelu { slope } if !slope.is_finite() => {
                    return Err(spec_err(format!("layer {i}: leaky slope must be finite")));
                }
                Layer::Dropout { rate } if !(rate > 0.0 && rate < 1.0) => {
                    return Err(spec_err(format!(
                        "layer {i}: dropout rate {rate} outside (0, 1)"
                    )));
                }
                _ => {}
            }
        }
        if !seen_dense {
            return Err(spec_err("network needs at least one dense layer"));
        }
        Ok(())
    }

    /// Checks the extra constraint on classifiers: a single sigmoid output.
    pub fn validate_classifier(&self) -> Result<()> {
        self.validate()?;
        if self.layers.last() != Some(&Layer::Sigmoid) {
            return Err(spec_err("classifier must end with a sigmoid layer"));
        }
        if self.out_dim() != 1 {
            return Err(spec_err(format!(
                "classifier must emit one score, got {}",
                self.out_dim()
            )));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::Dense { in_dim, .. } => Some(*in_dim),
                _ => None,
            })
            .expect("validated spec has a dense layer")
    }

    pub fn out_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Dense { out_dim, .. } => Some(*out_dim),
                _ => None,
            })
            .expect("validated spec has a dense layer")
    }

    /// Feature width flowing into layer `idx`.
    pub(crate) fn width_at(&self, idx: usize) -> usize {
        self.layers[..idx]
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Dense { out_dim, .. } => Some(*out_dim),
                _ => None,
            })
            .unwrap_or_else(|| self.in_dim())
    }

    /// Parameter-name prefix of layer `idx`: `dense{n}` or `norm{n}`, where
    /// `n` counts earlier layers of the same kind. Activations and dropout do
    /// not shift the numbering.
    pub fn param_prefix(&self, idx: usize) -> String {
        let same = |l: &Layer| std::mem::discriminant(l) == std::mem::discriminant(&self.layers[idx]);
        let n = self.layers[..idx].iter().filter(|l| same(l)).count();
        match self.layers[idx] {
            Layer::Normalize => format!("norm{n}"),
            _ => format!("dense{n}"),
        }
    }

    /// Whether the dense layer at `idx` feeds a rectifier, looking through
    /// normalization and dropout.
    pub(crate) fn feeds_rectifier(&self, idx: usize) -> bool {
        for l in &self.layers[idx + 1..] {
            match l {
                Layer::Relu | Layer::LeakyRelu { .. } => return true,
                Layer::Normalize | Layer::Dropout { .. } => continue,
                _ => return false,
            }
        }
        false
    }

    /// Spectrally normalized classifier: `Dense(SN) -> LeakyReLU` for each
    /// hidden width, dropout, then a plain `Dense -> Sigmoid` head.
    pub fn classifier(in_dim: usize, hidden: &[usize], dropout: Option<f64>) -> Result<Self> {
        let mut layers = Vec::new();
        let mut prev = in_dim;
        for &h in hidden {
            layers.push(Layer::dense_sn(prev, h));
            layers.push(Layer::LeakyRelu {
                slope: DEFAULT_LEAKY_SLOPE,
            });
            prev = h;
        }
        if let Some(rate) = dropout {
            layers.push(Layer::Dropout { rate });
        }
        layers.push(Layer::dense(prev, 1));
        layers.push(Layer::Sigmoid);
        let spec = Self { layers };
        spec.validate_classifier()?;
        Ok(spec)
    }

    /// `Dense -> Normalize -> ReLU` blocks followed by a dense output layer,
    /// optionally squashed by a sigmoid (for pixel intensities).
    ///
    /// Dense layers feeding a normalization carry no bias: the shift is
    /// absorbed by the normalization's own offset.
    pub fn generator(
        latent_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        sigmoid_output: bool,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut prev = latent_dim;
        for &h in hidden {
            layers.push(Layer::Dense {
                in_dim: prev,
                out_dim: h,
                spectral_norm: false,
                bias: false,
            });
            layers.push(Layer::Normalize);
            layers.push(Layer::Relu);
            prev = h;
        }
        layers.push(Layer::dense(prev, out_dim));
        if sigmoid_output {
            layers.push(Layer::Sigmoid);
        }
        Self::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_dim_mismatch() {
        let err = NetworkSpec::new(vec![Layer::dense(2, 3), Layer::Relu, Layer::dense(4, 1)]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_no_dense() {
        assert!(NetworkSpec::new(vec![Layer::Relu]).is_err());
    }

    #[test]
    fn rejects_bad_dropout() {
        for rate in [0.0, 1.0, -0.1, f64::NAN] {
            let s = NetworkSpec::new(vec![Layer::dense(2, 2), Layer::Dropout { rate }]);
            assert!(s.is_err(), "rate {rate}");
        }
    }

    #[test]
    fn classifier_needs_sigmoid_head() {
        let s = NetworkSpec::new(vec![Layer::dense(2, 1)]).unwrap();
        assert!(s.validate_classifier().is_err());
        let c = NetworkSpec::classifier(2, &[64, 64], Some(0.5)).unwrap();
        assert_eq!(c.in_dim(), 2);
        assert_eq!(c.out_dim(), 1);
    }

    #[test]
    fn json_round_trip() {
        let g = NetworkSpec::generator(100, &[64, 64], 2, false).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        let back: NetworkSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(g, back);
        let parsed: NetworkSpec = serde_json::from_str(
            r#"{"layers":[{"layer":"dense","in_dim":2,"out_dim":1,"spectral_norm":true},{"layer":"sigmoid"}]}"#,
        )
        .unwrap();
        parsed.validate_classifier().unwrap();
    }

    #[test]
    fn rectifier_lookahead() {
        let g = NetworkSpec::generator(4, &[8], 2, false).unwrap();
        assert!(g.feeds_rectifier(0));
        assert!(!g.feeds_rectifier(3));
    }
}
