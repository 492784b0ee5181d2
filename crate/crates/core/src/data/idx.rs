//! IDX image/label files (the MNIST container format).
//!
//! Images: big-endian `u32` magic `0x00000803`, then image count, rows and
//! columns, then one unsigned byte per pixel. Labels: magic `0x00000801`,
//! the count, then one byte per label.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Label, LabeledPool};
use crate::error::{spec_err, Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxOptions {
    /// Side length after block averaging; must divide both image sides.
    #[serde(default)]
    pub downscale: Option<usize>,
    /// Digits mapped to the positive class.
    #[serde(default = "even_digits")]
    pub positive_digits: Vec<u8>,
}

fn even_digits() -> Vec<u8> {
    vec![0, 2, 4, 6, 8]
}

impl Default for IdxOptions {
    fn default() -> Self {
        Self {
            downscale: None,
            positive_digits: even_digits(),
        }
    }
}

pub fn load_idx(images_path: &Path, labels_path: &Path, opts: &IdxOptions) -> Result<LabeledPool> {
    let read = |p: &Path| {
        std::fs::read(p).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let images = read(images_path)?;
    let labels = read(labels_path)?;
    parse_idx(&images, images_path, &labels, labels_path, opts)
}

struct Reader<'a> {
    bytes: &'a [u8],
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, offset: usize, detail: impl Into<String>) -> Error {
        Error::Ingest {
            path: self.path.to_path_buf(),
            offset,
            detail: detail.into(),
        }
    }

    fn u32_at(&self, offset: usize, what: &str) -> Result<u32> {
        let b = self
            .bytes
            .get(offset..offset + 4)
            .ok_or_else(|| self.fail(self.bytes.len(), format!("file truncated while reading {what}")))?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn expect_magic(&self, magic: u32) -> Result<()> {
        let got = self.u32_at(0, "magic number")?;
        if got != magic {
            return Err(self.fail(0, format!("bad magic number {got:#010x}, expected {magic:#010x}")));
        }
        Ok(())
    }

    fn positive_u32(&self, offset: usize, what: &str) -> Result<usize> {
        let v = self.u32_at(offset, what)?;
        if v == 0 {
            return Err(self.fail(offset, format!("{what} is zero")));
        }
        Ok(v as usize)
    }

    fn body(&self, start: usize, len: usize) -> Result<&[u8]> {
        let end = start + len;
        if self.bytes.len() < end {
            return Err(self.fail(
                self.bytes.len(),
                format!("file truncated: expected {end} bytes, found {}", self.bytes.len()),
            ));
        }
        if self.bytes.len() > end {
            return Err(self.fail(end, format!("{} trailing bytes", self.bytes.len() - end)));
        }
        Ok(&self.bytes[start..end])
    }
}

/// Parses in-memory IDX contents. Paths are only used in error messages.
pub fn parse_idx(
    images: &[u8],
    images_path: &Path,
    labels: &[u8],
    labels_path: &Path,
    opts: &IdxOptions,
) -> Result<LabeledPool> {
    let img = Reader {
        bytes: images,
        path: images_path,
    };
    img.expect_magic(IMAGES_MAGIC)?;
    let n = img.positive_u32(4, "image count")?;
    let rows = img.positive_u32(8, "row count")?;
    let cols = img.positive_u32(12, "column count")?;
    let pixels = img.body(16, n * rows * cols)?;

    let lab = Reader {
        bytes: labels,
        path: labels_path,
    };
    lab.expect_magic(LABELS_MAGIC)?;
    let m = lab.u32_at(4, "label count")? as usize;
    if m != n {
        return Err(lab.fail(4, format!("label count {m} does not match image count {n}")));
    }
    let digits = lab.body(8, n)?;

    let (out_r, out_c) = match opts.downscale {
        None => (rows, cols),
        Some(s) if s > 0 && rows % s == 0 && cols % s == 0 => (s, s),
        Some(s) => {
            return Err(spec_err(format!(
                "downscale side {s} does not divide image size {rows}x{cols}"
            )))
        }
    };
    let (br, bc) = (rows / out_r, cols / out_c);
    let norm = 255.0 * (br * bc) as f64;
    let mut data = vec![0.0; n * out_r * out_c];
    for (img_px, out) in pixels
        .chunks_exact(rows * cols)
        .zip(data.chunks_exact_mut(out_r * out_c))
    {
        for r in 0..rows {
            let orow = (r / br) * out_c;
            for c in 0..cols {
                out[orow + c / bc] += f64::from(img_px[r * cols + c]);
            }
        }
        for v in out.iter_mut() {
            *v /= norm;
        }
    }
    let labels = digits
        .iter()
        .map(|d| {
            if opts.positive_digits.contains(d) {
                Label::Positive
            } else {
                Label::Negative
            }
        })
        .collect();
    LabeledPool::new(Tensor::new(vec![n, out_r * out_c], data)?, labels)
}

/// Serializes images in IDX form; `pixels` holds `n * rows * cols` bytes.
pub fn encode_idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, n, rows, cols] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
