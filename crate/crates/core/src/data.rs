//! IDX datasets, dynamic binarization, synthetic bars-and-stripes and
//! seeded splits.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// One flattened image per row, values in [0,1].
    pub images: Array2<f64>,
    pub labels: Option<Vec<u8>>,
    pub rows: usize,
    pub cols: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.images.nrows() == 0
    }

    /// Rows `idx` in order, labels included.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select(ndarray::Axis(0), idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            rows: self.rows,
            cols: self.cols,
        }
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// Parses an IDX image file: `(count, rows, cols, raw bytes)`. The payload
/// length is checked against the header before anything is copied.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("bad IDX image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "IDX image payload has {} bytes, header promises {expected}",
            payload.len()
        )));
    }
    Ok((n, rows, cols, payload))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::Format(format!("IDX label payload has {} bytes, header promises {n}", payload.len())));
    }
    Ok(payload)
}

/// Loads images (scaled to [0,1]) and optional labels. With `expect_side`,
/// images must be `side × side`.
pub fn load_idx(images: &Path, labels: Option<&Path>, expect_side: Option<usize>) -> Result<Dataset> {
    let bytes = std::fs::read(images)?;
    let (n, rows, cols, payload) = parse_idx_images(&bytes)?;
    if let Some(side) = expect_side {
        if rows != side || cols != side {
            return Err(Error::Format(format!("expected {side}×{side} images, found {rows}×{cols}")));
        }
    }
    let labels = match labels {
        Some(p) => {
            let lb = std::fs::read(p)?;
            let l = parse_idx_labels(&lb)?;
            if l.len() != n {
                return Err(Error::Format(format!("{n} images but {} labels", l.len())));
            }
            Some(l.to_vec())
        }
        None => None,
    };
    let images = Array2::from_shape_fn((n, rows * cols), |(i, j)| f64::from(payload[i * rows * cols + j]) / 255.0);
    Ok(Dataset { images, labels, rows, cols })
}

/// Pixels are rounded to bytes.
pub fn write_idx_images(path: &Path, images: &Array2<f64>, rows: usize, cols: usize) -> Result<()> {
    if images.ncols() != rows * cols {
        return Err(Error::Shape(format!("{} pixels per image, expected {rows}×{cols}", images.ncols())));
    }
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IDX_IMAGES_MAGIC, images.nrows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    std::fs::write(path, out)?;
    Ok(())
}

/// Independent Bernoulli draw per pixel with the pixel value as probability.
pub fn dynamic_binarize<R: Rng + ?Sized>(x: &Array2<f64>, rng: &mut R) -> Result<Array2<f64>> {
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("pixel values must lie in [0,1]".into()));
    }
    Ok(x.mapv(|p| f64::from(rng.random::<f64>() < p)))
}

/// Bars-and-stripes images of `side × side` pixels with labels (0 = rows
/// constant, 1 = columns constant).
///
/// Each example picks an orientation by a fair coin and then switches each
/// row (or column) on independently. The all-off and all-on images are
/// produced by both orientations, so `2·2^side` generator outcomes map to
/// `2·2^side - 2` distinct images; they keep the label of their generator.
pub fn synth_bars_stripes_labeled<R: Rng + ?Sized>(side: usize, n: usize, rng: &mut R) -> Result<(Array2<f64>, Vec<u8>)> {
    if side < 2 {
        return Err(Error::InvalidArgument(format!("side must be at least 2, got {side}")));
    }
    let mut x = Array2::zeros((n, side * side));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let columns = rng.random::<bool>();
        let on: Vec<bool> = (0..side).map(|_| rng.random()).collect();
        for r in 0..side {
            for c in 0..side {
                let lit = if columns { on[c] } else { on[r] };
                x[[i, r * side + c]] = f64::from(lit);
            }
        }
        labels.push(u8::from(columns));
    }
    Ok((x, labels))
}

pub fn synth_bars_stripes<R: Rng + ?Sized>(side: usize, n: usize, rng: &mut R) -> Result<Array2<f64>> {
    Ok(synth_bars_stripes_labeled(side, n, rng)?.0)
}

/// Disjoint index sets, reproducible from the seed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub total: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitManifest {
    /// Shuffles `0..total` and cuts off `n_val` then `n_test` indices; the
    /// rest is training data.
    pub fn new(total: usize, n_val: usize, n_test: usize, seed: u64) -> Result<Self> {
        if n_val + n_test > total {
            return Err(Error::InvalidArgument(format!("{n_val} + {n_test} held-out examples exceed {total}")));
        }
        let mut idx: Vec<usize> = (0..total).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let val = idx[..n_val].to_vec();
        let test = idx[n_val..n_val + n_test].to_vec();
        let train = idx[n_val + n_test..].to_vec();
        Ok(SplitManifest { seed, total, train, val, test })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: SplitManifest = serde_json::from_str(s)?;
        let mut seen = vec![false; m.total];
        for &i in m.train.iter().chain(&m.val).chain(&m.test) {
            if i >= m.total || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Format(format!("split index {i} repeated or out of range")));
            }
        }
        Ok(m)
    }
}
