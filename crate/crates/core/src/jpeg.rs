//! Lossy JPEG round trip without entropy coding.
//!
//! The pipeline keeps everything the decoder would undo anyway out of the
//! picture (no zigzag, no Huffman stage) and applies exactly the lossy steps:
//! scale to `[0, 255]`, BT.601 color transform for three-channel images
//! (full range, no subsampling), edge-replicated padding to 8x8 blocks,
//! level shift, orthonormal 2D DCT, quantization against quality-scaled
//! Annex K tables with half-away-from-zero rounding, and the inverse chain.
//!
//! [`SteJpeg`] exposes the same forward plus a straight-through backward:
//! the transpose of the linear chain with rounding and clamping treated as
//! identity, which composes to (approximately) the identity map.

use once_cell::sync::Lazy;

use crate::error::{Error, Result};
use crate::grad::DifferentiableTransform;
use crate::tensor::Tensor;

#[rustfmt::skip]
const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16,  24,  40,  51,  61,
    12, 12, 14, 19,  26,  58,  60,  55,
    14, 13, 16, 24,  40,  57,  69,  56,
    14, 17, 22, 29,  51,  87,  80,  62,
    18, 22, 37, 56,  68, 109, 103,  77,
    24, 35, 55, 64,  81, 104, 113,  92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103,  99,
];

#[rustfmt::skip]
const CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

/// Quality-scaled quantization tables; every divisor is in `[1, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTables {
    pub luma: [u8; 64],
    pub chroma: [u8; 64],
}

/// Tables for a quality setting in `[1, 100]` under the standard scaling:
/// `scale = 5000 / q` below 50, else `200 - 2q`, with each base entry mapped
/// through `clamp(floor((entry * scale + 50) / 100), 1, 255)`.
pub fn quality_tables(quality: u8) -> Result<QuantTables> {
    if quality == 0 || quality > 100 {
        return Err(Error::Parameter(format!(
            "jpeg quality must be in [1, 100], got {quality}"
        )));
    }
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let scale_one = |base: &[u16; 64]| {
        let mut out = [0u8; 64];
        for (o, b) in out.iter_mut().zip(base) {
            let v = (*b as u32 * scale + 50) / 100;
            *o = v.clamp(1, 255) as u8;
        }
        out
    };
    Ok(QuantTables { luma: scale_one(&LUMA_BASE), chroma: scale_one(&CHROMA_BASE) })
}

/// Orthonormal 8-point DCT-II basis: `BASIS[k][n] = c_k cos(pi (2n+1) k / 16)`.
static BASIS: Lazy<[[f64; 8]; 8]> = Lazy::new(|| {
    let mut d = [[0.0; 8]; 8];
    for (k, row) in d.iter_mut().enumerate() {
        let ck = if k == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
        for (n, v) in row.iter_mut().enumerate() {
            *v = ck * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
        }
    }
    d
});

/// BT.601 full-range color matrices: forward RGB -> YCbCr coefficients and
/// the numerically inverted matrix, so the pure color round trip is exact to
/// f64 roundoff.
static COLOR: Lazy<([[f64; 3]; 3], [[f64; 3]; 3])> = Lazy::new(|| {
    let (kr, kg, kb) = (0.299, 0.587, 0.114);
    let m = [
        [kr, kg, kb],
        [-kr / (2.0 * (1.0 - kb)), -kg / (2.0 * (1.0 - kb)), 0.5],
        [0.5, -kg / (2.0 * (1.0 - kr)), -kb / (2.0 * (1.0 - kr))],
    ];
    (m, invert3(&m))
});

const COLOR_OFFSET: [f64; 3] = [0.0, 128.0, 128.0];

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let c = |r1: usize, c1: usize, r2: usize, c2: usize| m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
    [
        [c(1, 1, 2, 2) / det, -c(0, 1, 2, 2) / det, c(0, 1, 1, 2) / det],
        [-c(1, 0, 2, 2) / det, c(0, 0, 2, 2) / det, -c(0, 0, 1, 2) / det],
        [c(1, 0, 2, 1) / det, -c(0, 0, 2, 1) / det, c(0, 0, 1, 1) / det],
    ]
}

/// (height, width, channels) of an image tensor; accepts `[H, W]`,
/// `[H, W, 1]` and `[H, W, 3]`.
pub(crate) fn image_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [h, w] => Ok((h, w, 1)),
        [h, w, c] if c == 1 || c == 3 => Ok((h, w, c)),
        ref s => Err(Error::Dimension(format!(
            "expected an [H, W] or [H, W, C] image with 1 or 3 channels, got {s:?}"
        ))),
    }
}

fn check_unit_range(x: &Tensor) -> Result<()> {
    if let Some(bad) = x.data().iter().find(|v| **v < 0.0 || **v > 1.0) {
        return Err(Error::Parameter(format!(
            "pixel values must lie in [0, 1], got {bad}"
        )));
    }
    Ok(())
}

/// Lossy JPEG round trip at the given quality; output keeps the input shape
/// with values clamped into `[0, 1]`.
pub fn jpeg_roundtrip(x: &Tensor, quality: u8) -> Result<Tensor> {
    let tables = quality_tables(quality)?;
    let (h, w, c) = image_dims(x)?;
    check_unit_range(x)?;

    let mut planes = split_planes(x, h, w, c);
    let (fwd, inv) = &*COLOR;
    if c == 3 {
        color_transform(&mut planes, fwd, true);
    }
    for (ch, plane) in planes.iter_mut().enumerate() {
        let table = if c == 3 && ch > 0 { &tables.chroma } else { &tables.luma };
        *plane = code_plane(plane, h, w, table);
    }
    if c == 3 {
        color_transform(&mut planes, inv, false);
    }
    Ok(merge_planes(&planes, x.shape(), h, w, c).clamp01())
}

fn split_planes(x: &Tensor, h: usize, w: usize, c: usize) -> Vec<Vec<f64>> {
    let data = x.data();
    (0..c)
        .map(|ch| (0..h * w).map(|i| data[i * c + ch] * 255.0).collect())
        .collect()
}

fn merge_planes(planes: &[Vec<f64>], shape: &[usize], h: usize, w: usize, c: usize) -> Tensor {
    let mut data = vec![0.0; h * w * c];
    for (ch, plane) in planes.iter().enumerate() {
        for (i, v) in plane.iter().enumerate() {
            data[i * c + ch] = v / 255.0;
        }
    }
    Tensor::from_parts(shape.to_vec(), data)
}

/// Per-pixel 3x3 transform over the channel planes; `offset` applies the
/// YCbCr shift forward (add after) or inverse (subtract before).
fn color_transform(planes: &mut [Vec<f64>], m: &[[f64; 3]; 3], forward: bool) {
    let n = planes[0].len();
    for i in 0..n {
        let mut v = [planes[0][i], planes[1][i], planes[2][i]];
        if !forward {
            for (x, off) in v.iter_mut().zip(&COLOR_OFFSET) {
                *x -= off;
            }
        }
        let mut out = [0.0; 3];
        for (o, row) in out.iter_mut().zip(m) {
            *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
        }
        if forward {
            for (x, off) in out.iter_mut().zip(&COLOR_OFFSET) {
                *x += off;
            }
        }
        for (ch, val) in out.iter().enumerate() {
            planes[ch][i] = *val;
        }
    }
}

fn padded_extent(n: usize) -> usize {
    n.div_ceil(8) * 8
}

fn pad_plane(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (hp, wp) = (padded_extent(h), padded_extent(w));
    let mut out = vec![0.0; hp * wp];
    for r in 0..hp {
        let sr = r.min(h - 1);
        for c in 0..wp {
            let sc = c.min(w - 1);
            out[r * wp + c] = plane[sr * w + sc];
        }
    }
    (out, hp, wp)
}

/// Level shift, blockwise DCT, quantize/dequantize, inverse DCT, unshift.
fn code_plane(plane: &[f64], h: usize, w: usize, table: &[u8; 64]) -> Vec<f64> {
    let (mut padded, hp, wp) = pad_plane(plane, h, w);
    for v in &mut padded {
        *v -= 128.0;
    }
    let mut block = [0.0; 64];
    for by in 0..hp / 8 {
        for bx in 0..wp / 8 {
            gather_block(&padded, wp, by, bx, &mut block);
            let mut coefs = dct8x8(&block);
            for (v, t) in coefs.iter_mut().zip(table) {
                let t = *t as f64;
                *v = (*v / t).round() * t;
            }
            block = idct8x8(&coefs);
            scatter_block(&mut padded, wp, by, bx, &block);
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = padded[r * wp + c] + 128.0;
        }
    }
    out
}

fn gather_block(plane: &[f64], wp: usize, by: usize, bx: usize, block: &mut [f64; 64]) {
    for r in 0..8 {
        let src = (by * 8 + r) * wp + bx * 8;
        block[r * 8..r * 8 + 8].copy_from_slice(&plane[src..src + 8]);
    }
}

fn scatter_block(plane: &mut [f64], wp: usize, by: usize, bx: usize, block: &[f64; 64]) {
    for r in 0..8 {
        let dst = (by * 8 + r) * wp + bx * 8;
        plane[dst..dst + 8].copy_from_slice(&block[r * 8..r * 8 + 8]);
    }
}

/// 2D DCT `B = D A D^T` via a row pass then a column pass.
fn dct8x8(a: &[f64; 64]) -> [f64; 64] {
    separable_transform(a, false)
}

/// 2D inverse DCT `A = D^T B D`.
fn idct8x8(b: &[f64; 64]) -> [f64; 64] {
    separable_transform(b, true)
}

fn separable_transform(a: &[f64; 64], inverse: bool) -> [f64; 64] {
    let d = &*BASIS;
    let mut tmp = [0.0; 64];
    for r in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for c in 0..8 {
                let coef = if inverse { d[c][v] } else { d[v][c] };
                acc += a[r * 8 + c] * coef;
            }
            tmp[r * 8 + v] = acc;
        }
    }
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for r in 0..8 {
                let coef = if inverse { d[r][u] } else { d[u][r] };
                acc += coef * tmp[r * 8 + v];
            }
            out[u * 8 + v] = acc;
        }
    }
    out
}

/// JPEG round trip with a straight-through backward map.
#[derive(Debug, Clone, Copy)]
pub struct SteJpeg {
    quality: u8,
}

impl SteJpeg {
    /// Validates the quality once; the forward equals [`jpeg_roundtrip`].
    pub fn new(quality: u8) -> Result<Self> {
        quality_tables(quality)?;
        Ok(Self { quality })
    }

    /// Configured quality setting.
    pub fn quality(&self) -> u8 {
        self.quality
    }
}

impl DifferentiableTransform for SteJpeg {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        jpeg_roundtrip(x, self.quality)
    }

    /// Transpose of the linear chain with round/clamp as identity: scale,
    /// color transpose, gradient folding of the edge padding, transposed
    /// DCT pair with the quantization divisors cancelling, inverse color
    /// transpose, unscale.
    fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let tables = quality_tables(self.quality)?;
        let (h, w, c) = image_dims(x)?;
        if grad_out.len() != x.len() {
            return Err(Error::Dimension(format!(
                "gradient has {} elements, image has {}",
                grad_out.len(),
                x.len()
            )));
        }
        let (fwd, inv) = &*COLOR;

        // Backward of the final /255: scale gradients down.
        let mut planes: Vec<Vec<f64>> = (0..c)
            .map(|ch| (0..h * w).map(|i| grad_out.data()[i * c + ch] / 255.0).collect())
            .collect();
        // Backward of the inverse color map: multiply by its transpose
        // (offsets vanish in the backward pass).
        if c == 3 {
            color_transpose(&mut planes, inv);
        }
        for (ch, plane) in planes.iter_mut().enumerate() {
            let table = if c == 3 && ch > 0 { &tables.chroma } else { &tables.luma };
            *plane = code_plane_transpose(plane, h, w, table);
        }
        if c == 3 {
            color_transpose(&mut planes, fwd);
        }
        // Backward of the initial *255.
        let mut data = vec![0.0; h * w * c];
        for (ch, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                data[i * c + ch] = v * 255.0;
            }
        }
        Ok(Tensor::from_parts(x.shape().to_vec(), data))
    }
}

fn color_transpose(planes: &mut [Vec<f64>], m: &[[f64; 3]; 3]) {
    let n = planes[0].len();
    for i in 0..n {
        let v = [planes[0][i], planes[1][i], planes[2][i]];
        for ch in 0..3 {
            planes[ch][i] = m[0][ch] * v[0] + m[1][ch] * v[1] + m[2][ch] * v[2];
        }
    }
}

/// Transpose of [`code_plane`]: zero-pad (crop transpose), transposed DCT
/// chain per block, then fold the padding back (each source pixel collects
/// the gradient of every position that replicated it).
fn code_plane_transpose(grad: &[f64], h: usize, w: usize, table: &[u8; 64]) -> Vec<f64> {
    let (hp, wp) = (padded_extent(h), padded_extent(w));
    let mut padded = vec![0.0; hp * wp];
    for r in 0..h {
        for c in 0..w {
            padded[r * wp + c] = grad[r * w + c];
        }
    }
    let mut block = [0.0; 64];
    for by in 0..hp / 8 {
        for bx in 0..wp / 8 {
            gather_block(&padded, wp, by, bx, &mut block);
            // Transpose of A = D^T B D is G -> D G D^T, i.e. the forward DCT.
            let mut coefs = dct8x8(&block);
            for (v, t) in coefs.iter_mut().zip(table) {
                let t = *t as f64;
                *v = (*v * t) / t;
            }
            block = idct8x8(&coefs);
            scatter_block(&mut padded, wp, by, bx, &block);
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..hp {
        let sr = r.min(h - 1);
        for c in 0..wp {
            let sc = c.min(w - 1);
            out[sr * w + sc] += padded[r * wp + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn textured_image(h: usize, w: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        let data: Vec<f64> = (0..h * w * c)
            .map(|i| {
                let base = 0.5 + 0.3 * ((i as f64) * 0.7).sin();
                (base + rng.uniform(-0.15, 0.15)).clamp(0.0, 1.0)
            })
            .collect();
        let shape = if c == 1 { vec![h, w] } else { vec![h, w, c] };
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn quality_50_keeps_base_tables() {
        let t = quality_tables(50).unwrap();
        for (a, b) in t.luma.iter().zip(&LUMA_BASE) {
            assert_eq!(*a as u16, *b);
        }
        for (a, b) in t.chroma.iter().zip(&CHROMA_BASE) {
            assert_eq!(*a as u16, *b);
        }
    }

    #[test]
    fn quality_extremes_saturate() {
        let top = quality_tables(100).unwrap();
        assert!(top.luma.iter().all(|v| *v == 1));
        assert!(top.chroma.iter().all(|v| *v == 1));
        let bottom = quality_tables(1).unwrap();
        assert!(bottom.luma.iter().all(|v| *v == 255));
        assert!(bottom.chroma.iter().all(|v| *v == 255));
    }

    #[test]
    fn quality_scaling_is_monotone() {
        for (lo, hi) in [(5, 20), (20, 50), (50, 75), (75, 95)] {
            let a = quality_tables(lo).unwrap();
            let b = quality_tables(hi).unwrap();
            for (x, y) in a.luma.iter().zip(&b.luma) {
                assert!(x >= y, "q{lo} entry {x} < q{hi} entry {y}");
            }
        }
    }

    #[test]
    fn quality_range_is_enforced() {
        assert!(quality_tables(0).is_err());
        assert!(quality_tables(101).is_err());
        assert!(SteJpeg::new(0).is_err());
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let d = &*BASIS;
        for a in 0..8 {
            for b in 0..8 {
                let dot: f64 = (0..8).map(|n| d[a][n] * d[b][n]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dct_roundtrip_is_near_exact() {
        let mut rng = SplitMix64::new(3);
        let mut block = [0.0; 64];
        for v in &mut block {
            *v = rng.uniform(-128.0, 128.0);
        }
        let back = idct8x8(&dct8x8(&block));
        for (a, b) in block.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn color_matrices_invert_exactly() {
        let (m, inv) = &*COLOR;
        for r in 0..3 {
            for c in 0..3 {
                let dot: f64 = (0..3).map(|k| m[r][k] * inv[k][c]).sum();
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-14);
            }
        }
        // Round trip of a pixel through both maps.
        let rgb = [0.3 * 255.0, 0.6 * 255.0, 0.9 * 255.0];
        let mut planes = vec![vec![rgb[0]], vec![rgb[1]], vec![rgb[2]]];
        color_transform(&mut planes, m, true);
        color_transform(&mut planes, inv, false);
        for (p, want) in planes.iter().zip(&rgb) {
            assert!((p[0] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn mid_gray_is_a_fixpoint() {
        let g = 128.0 / 255.0;
        let gray = Tensor::new(vec![16, 16], vec![g; 256]).unwrap();
        let out = jpeg_roundtrip(&gray, 50).unwrap();
        // A constant block has zero AC and zero (shifted) DC energy, so the
        // quantizer outputs exact zeros and the chain returns the input.
        assert_eq!(out.data(), gray.data());

        let color = Tensor::new(vec![8, 8, 3], vec![g; 192]).unwrap();
        let out = jpeg_roundtrip(&color, 75).unwrap();
        for v in out.data() {
            assert!((v - g).abs() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_is_lossy_but_bounded() {
        let img = textured_image(16, 16, 1, 11);
        let out = jpeg_roundtrip(&img, 50).unwrap();
        assert_ne!(out.data(), img.data());
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(img.l2_distance(&out).unwrap() > 0.0);
    }

    #[test]
    fn higher_quality_means_lower_distortion() {
        let img = textured_image(24, 24, 1, 13);
        let err90 = img.l2_distance(&jpeg_roundtrip(&img, 90).unwrap()).unwrap();
        let err10 = img.l2_distance(&jpeg_roundtrip(&img, 10).unwrap()).unwrap();
        assert!(err90 < err10, "q90 err {err90} vs q10 err {err10}");

        let color = textured_image(16, 16, 3, 17);
        let err90 = color.l2_distance(&jpeg_roundtrip(&color, 90).unwrap()).unwrap();
        let err10 = color.l2_distance(&jpeg_roundtrip(&color, 10).unwrap()).unwrap();
        assert!(err90 < err10);
    }

    #[test]
    fn non_multiple_of_eight_shapes_work() {
        for (h, w, c) in [(10, 13, 1), (9, 8, 3), (7, 7, 1)] {
            let img = textured_image(h, w, c, (h * 31 + w) as u64);
            let out = jpeg_roundtrip(&img, 60).unwrap();
            assert_eq!(out.shape(), img.shape());
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rejects_bad_shapes_and_ranges() {
        let t = Tensor::from_vec(vec![0.5; 12]).unwrap();
        assert!(jpeg_roundtrip(&t, 50).is_err());
        let t = Tensor::new(vec![2, 2, 2], vec![0.5; 8]).unwrap();
        assert!(jpeg_roundtrip(&t, 50).is_err());
        let t = Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.5, 1.5]).unwrap();
        assert!(jpeg_roundtrip(&t, 50).is_err());
    }

    #[test]
    fn ste_forward_equals_roundtrip() {
        let img = textured_image(16, 16, 3, 19);
        let ste = SteJpeg::new(65).unwrap();
        let a = ste.forward(&img).unwrap();
        let b = jpeg_roundtrip(&img, 65).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn ste_backward_is_identity_without_padding() {
        // Aligned dims: the transposed chain is orthonormal end to end.
        let img = textured_image(16, 16, 1, 23);
        let ste = SteJpeg::new(50).unwrap();
        let mut rng = SplitMix64::new(29);
        let g = Tensor::new(vec![16, 16], (0..256).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let back = ste.backward(&img, &g).unwrap();
        let diff = back.sub(&g).unwrap().l2_norm();
        assert!(diff <= 1e-9 * g.l2_norm(), "residual {diff}");

        let color = textured_image(8, 8, 3, 31);
        let g3 = Tensor::new(vec![8, 8, 3], (0..192).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let back = SteJpeg::new(75).unwrap().backward(&color, &g3).unwrap();
        assert!(back.sub(&g3).unwrap().l2_norm() <= 1e-9 * g3.l2_norm());
    }

    #[test]
    fn ste_backward_stays_identity_under_padding() {
        // 4x4 pads to 8x8. The adjoint zero-extends the upstream gradient
        // (crop transpose), runs the transposed per-block chain, then folds
        // replicated positions back onto their sources; because cropping a
        // padded image recovers the original exactly, the net effect must
        // still be the identity, with no mass leaking in from the padding.
        let img = textured_image(4, 4, 1, 37);
        let ste = SteJpeg::new(50).unwrap();
        let mut rng = SplitMix64::new(59);
        let g = Tensor::new(vec![4, 4], (0..16).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let back = ste.backward(&img, &g).unwrap();
        let diff = back.sub(&g).unwrap().l2_norm();
        assert!(diff <= 1e-9 * g.l2_norm(), "residual {diff}");
        let total: f64 = back.data().iter().sum();
        let expected: f64 = g.data().iter().sum();
        assert!((total - expected).abs() < 1e-9, "mass {total} vs {expected}");
    }

    #[test]
    fn ste_gradient_aligns_with_true_finite_differences() {
        // Directional central differences of a fixed linear functional of
        // the codec output, with steps wide enough to cross several rounding
        // boundaries per probe, against the same directional derivatives
        // predicted by the straight-through gradient.
        let img = textured_image(8, 8, 1, 41);
        let ste = SteJpeg::new(50).unwrap();
        let mut rng = SplitMix64::new(43);
        let w: Vec<f64> = (0..64).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let f = |x: &Tensor| -> f64 {
            let y = jpeg_roundtrip(x, 50).unwrap();
            y.data().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let grad_w = Tensor::new(vec![8, 8], w.clone()).unwrap();
        let ste_grad = ste.backward(&img, &grad_w).unwrap();
        let h = 48.0 / 255.0;
        let mut measured = Vec::new();
        let mut predicted = Vec::new();
        for _ in 0..32 {
            let dir: Vec<f64> =
                (0..64).map(|_| if rng.uniform(0.0, 1.0) < 0.5 { -1.0 } else { 1.0 }).collect();
            let shift = |sign: f64| -> Tensor {
                let data = img
                    .data()
                    .iter()
                    .zip(&dir)
                    .map(|(v, d)| (v + sign * h * d).clamp(0.0, 1.0))
                    .collect();
                Tensor::new(vec![8, 8], data).unwrap()
            };
            let (plus, minus) = (shift(1.0), shift(-1.0));
            measured.push(f(&plus) - f(&minus));
            // The clamp can shorten a step, so predict from the actual one.
            let step: f64 = (0..64)
                .map(|i| ste_grad.data()[i] * (plus.data()[i] - minus.data()[i]))
                .sum();
            predicted.push(step);
        }
        let dot: f64 = measured.iter().zip(&predicted).map(|(a, b)| a * b).sum();
        let na = measured.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = predicted.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cosine = dot / (na * nb);
        assert!(cosine > 0.9, "cosine {cosine}");
    }
}
