//! Non-adversarial corruptions used as contrast cases for the detector.
//!
//! Each corruption perturbs an image with a magnitude directly comparable to
//! an attack budget: uniform noise matches an l-inf budget, the Gaussian
//! perturbation is rescaled to an exact l2 radius, and the remaining kinds
//! cover common benign distortions.

use crate::error::{Error, Result};
use crate::jpeg::{image_dims, jpeg_roundtrip};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// A corruption family with its magnitude parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorruptionKind {
    /// Elementwise uniform noise in `[-eps, eps]`.
    UniformLinf { eps: f64 },
    /// Gaussian direction rescaled to exact l2 norm `rho`.
    GaussianL2 { rho: f64 },
    /// Each element independently forced to 0 or 1 with probability `p`.
    SaltPepper { p: f64 },
    /// Separable Gaussian blur with standard deviation `sigma` (in pixels).
    GaussianBlur { sigma: f64 },
    /// Lossy JPEG round trip at the given quality.
    Jpeg { quality: u8 },
    /// Elementwise Laplace noise with the given scale.
    Laplacian { scale: f64 },
}

impl CorruptionKind {
    /// Short stable name for reports.
    pub fn name(&self) -> &'static str {
        match self {
            CorruptionKind::UniformLinf { .. } => "uniform_linf",
            CorruptionKind::GaussianL2 { .. } => "gaussian_l2",
            CorruptionKind::SaltPepper { .. } => "salt_pepper",
            CorruptionKind::GaussianBlur { .. } => "gaussian_blur",
            CorruptionKind::Jpeg { .. } => "jpeg",
            CorruptionKind::Laplacian { .. } => "laplacian",
        }
    }

    /// Magnitude parameter as a number, for reports.
    pub fn parameter(&self) -> f64 {
        match self {
            CorruptionKind::UniformLinf { eps } => *eps,
            CorruptionKind::GaussianL2 { rho } => *rho,
            CorruptionKind::SaltPepper { p } => *p,
            CorruptionKind::GaussianBlur { sigma } => *sigma,
            CorruptionKind::Jpeg { quality } => *quality as f64,
            CorruptionKind::Laplacian { scale } => *scale,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            CorruptionKind::UniformLinf { eps } => eps.is_finite() && *eps >= 0.0,
            CorruptionKind::GaussianL2 { rho } => rho.is_finite() && *rho >= 0.0,
            CorruptionKind::SaltPepper { p } => p.is_finite() && (0.0..=1.0).contains(p),
            CorruptionKind::GaussianBlur { sigma } => sigma.is_finite() && *sigma > 0.0,
            CorruptionKind::Jpeg { quality } => (1..=100).contains(quality),
            CorruptionKind::Laplacian { scale } => scale.is_finite() && *scale >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid corruption magnitude: {self:?}")))
        }
    }
}

/// A corruption plus the seed that makes it reproducible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub seed: u64,
}

/// Apply the corruption to an image in `[0, 1]`; the output stays in range
/// and keeps the input shape.
pub fn corrupt(x: &Tensor, spec: &CorruptionSpec) -> Result<Tensor> {
    spec.kind.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    match spec.kind {
        CorruptionKind::UniformLinf { eps } => {
            let data = x.data().iter().map(|v| v + rng.uniform(-eps, eps)).collect();
            Ok(Tensor::from_parts(x.shape().to_vec(), data).clamp01())
        }
        CorruptionKind::GaussianL2 { rho } => {
            let mut delta: Vec<f64> = (0..x.len()).map(|_| rng.normal()).collect();
            let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && rho > 0.0 {
                for d in &mut delta {
                    *d *= rho / norm;
                }
            } else {
                delta.iter_mut().for_each(|d| *d = 0.0);
            }
            let data = x.data().iter().zip(&delta).map(|(v, d)| v + d).collect();
            Ok(Tensor::from_parts(x.shape().to_vec(), data).clamp01())
        }
        CorruptionKind::SaltPepper { p } => {
            let data = x
                .data()
                .iter()
                .map(|v| {
                    if rng.next_f64() < p {
                        if rng.next_f64() < 0.5 {
                            0.0
                        } else {
                            1.0
                        }
                    } else {
                        *v
                    }
                })
                .collect();
            Ok(Tensor::from_parts(x.shape().to_vec(), data))
        }
        CorruptionKind::GaussianBlur { sigma } => gaussian_blur(x, sigma),
        CorruptionKind::Jpeg { quality } => jpeg_roundtrip(x, quality),
        CorruptionKind::Laplacian { scale } => {
            let data = x.data().iter().map(|v| v + rng.laplace(scale)).collect();
            Ok(Tensor::from_parts(x.shape().to_vec(), data).clamp01())
        }
    }
}

/// Separable Gaussian blur with edge replication; kernel radius `ceil(3
/// sigma)`, weights normalized to sum 1 so flat regions are fixpoints.
fn gaussian_blur(x: &Tensor, sigma: f64) -> Result<Tensor> {
    let (h, w, c) = image_dims(x)?;
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for k in -radius..=radius {
        kernel.push((-(k as f64) * (k as f64) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for v in &mut kernel {
        *v /= sum;
    }

    let data = x.data();
    let idx = |r: usize, col: usize, ch: usize| (r * w + col) * c + ch;
    // Horizontal pass.
    let mut tmp = vec![0.0; data.len()];
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let s = (col as i64 + ki as i64 - radius).clamp(0, w as i64 - 1) as usize;
                    acc += kv * data[idx(r, s, ch)];
                }
                tmp[idx(r, col, ch)] = acc;
            }
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; data.len()];
    for r in 0..h {
        for col in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let s = (r as i64 + ki as i64 - radius).clamp(0, h as i64 - 1) as usize;
                    acc += kv * tmp[idx(s, col, ch)];
                }
                out[idx(r, col, ch)] = acc;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out).clamp01())
}
