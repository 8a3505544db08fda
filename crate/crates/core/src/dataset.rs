//! Labeled image datasets: IDX files and a synthetic two-class generator.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Images with class labels; all images share one shape and live in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    /// Dataset from parts, validating shape agreement, value range, label
    /// range and non-emptiness.
    pub fn new(images: Vec<Tensor>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Parameter("dataset must hold at least one sample".into()));
        }
        if images.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} images against {} labels",
                images.len(),
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(Error::Parameter(format!("need at least 2 classes, got {classes}")));
        }
        let shape = images[0].shape().to_vec();
        for (i, img) in images.iter().enumerate() {
            if img.shape() != shape {
                return Err(Error::Dimension(format!(
                    "image {i} has shape {:?}, expected {:?}",
                    img.shape(),
                    shape
                )));
            }
            if img.data().iter().any(|v| *v < 0.0 || *v > 1.0) {
                return Err(Error::Parameter(format!("image {i} has values outside [0, 1]")));
            }
        }
        if let Some((i, bad)) = labels.iter().enumerate().find(|(_, l)| **l >= classes) {
            return Err(Error::Parameter(format!(
                "label {bad} at index {i} exceeds {classes} classes"
            )));
        }
        Ok(Self { images, labels, classes })
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.images.len()
    }

    /// True when the dataset holds no samples (never true for valid sets).
    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Elements per image.
    pub fn input_dim(&self) -> usize {
        self.images[0].len()
    }
}

/// Load an IDX image/label file pair (the classic big-endian format: magic,
/// counts, extents, then raw `u8` payload).  Pixels map to `[0, 1]` via
/// division by 255; the class count is the largest label plus one.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = std::fs::read(images_path)?;
    let lbl_bytes = std::fs::read(labels_path)?;

    let mut ir = IdxReader { bytes: &img_bytes, pos: 0, what: "image file" };
    if ir.u32()? != IDX_IMAGE_MAGIC {
        return Err(Error::Format("bad IDX image magic".into()));
    }
    let count = ir.u32()? as usize;
    let rows = ir.u32()? as usize;
    let cols = ir.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format("zero image extent in IDX header".into()));
    }
    let pixels = ir.take(count * rows * cols)?;
    ir.expect_end()?;

    let mut lr = IdxReader { bytes: &lbl_bytes, pos: 0, what: "label file" };
    if lr.u32()? != IDX_LABEL_MAGIC {
        return Err(Error::Format("bad IDX label magic".into()));
    }
    let label_count = lr.u32()? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "IDX pair mismatch: {count} images against {label_count} labels"
        )));
    }
    let raw_labels = lr.take(count)?;
    lr.expect_end()?;

    let mut images = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * rows * cols;
        let data: Vec<f64> = pixels[start..start + rows * cols]
            .iter()
            .map(|p| *p as f64 / 255.0)
            .collect();
        images.push(Tensor::from_parts(vec![rows, cols], data));
    }
    let labels: Vec<usize> = raw_labels.iter().map(|l| *l as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(images, labels, classes)
}

struct IdxReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> IdxReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!("truncated IDX {}", self.what)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes in IDX {}",
                self.bytes.len() - self.pos,
                self.what
            )));
        }
        Ok(())
    }
}

/// Two-class synthetic set of `side x side` ramp images: class 0 brightens
/// left to right, class 1 top to bottom, both under clamped Gaussian pixel
/// noise (std 0.05).  Sample `k` draws from its own stream `seed ^ k`, so
/// any subset is reproducible independently of the rest.
pub fn synth_dataset(n: usize, side: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Parameter(format!("need at least 2 samples, got {n}")));
    }
    if side < 8 {
        return Err(Error::Parameter(format!("side must be at least 8, got {side}")));
    }
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for k in 0..n {
        let class = k % 2;
        let mut rng = SplitMix64::new(seed ^ k as u64);
        let mut data = Vec::with_capacity(side * side);
        for r in 0..side {
            for c in 0..side {
                let ramp = if class == 0 { c } else { r } as f64 / (side - 1) as f64;
                data.push((ramp + rng.normal_with(0.0, 0.05)).clamp(0.0, 1.0));
            }
        }
        images.push(Tensor::from_parts(vec![side, side], data));
        labels.push(class);
    }
    Dataset::new(images, labels, 2)
}
