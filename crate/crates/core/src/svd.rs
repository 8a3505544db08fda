//! Thin singular value decomposition via one-sided Jacobi rotations.
//!
//! Sized for layer matrices (up to a few hundred rows): cyclic sweeps
//! orthogonalize column pairs in a fixed order, which makes the result
//! deterministic down to the bit.  High relative accuracy on small singular
//! values is the property the spectral machinery depends on.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Relative off-diagonal threshold below which a column pair counts as
/// orthogonal.
const JACOBI_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 60;

/// Thin SVD `W = U diag(sigma) V^T` with `r = min(rows, cols)` columns in
/// `U` (rows x r) and `V` (cols x r); `sigma` is non-negative and descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub sigma: Vec<f64>,
    pub u: Matrix,
    pub v: Matrix,
}

impl Svd {
    /// Largest singular value.
    pub fn sigma_max(&self) -> f64 {
        self.sigma[0]
    }

    /// Smallest singular value.
    pub fn sigma_min(&self) -> f64 {
        *self.sigma.last().unwrap()
    }

    /// Left singular vector `k` (column of `U`).
    pub fn left(&self, k: usize) -> Vec<f64> {
        (0..self.u.rows()).map(|r| self.u.get(r, k)).collect()
    }

    /// Right singular vector `k` (column of `V`).
    pub fn right(&self, k: usize) -> Vec<f64> {
        (0..self.v.rows()).map(|r| self.v.get(r, k)).collect()
    }
}

/// Thin SVD of `w`.  Wide matrices are handled by decomposing the transpose
/// and swapping the singular vector sets.
pub fn svd(w: &Matrix) -> Result<Svd> {
    let transposed = w.rows() < w.cols();
    let work = if transposed { w.transpose() } else { w.clone() };
    let (sigma, u_tall, v_small) = one_sided_jacobi(&work)?;
    let (u, v) = if transposed { (v_small, u_tall) } else { (u_tall, v_small) };
    let mut out = Svd { sigma, u, v };
    apply_sign_convention(&mut out);
    Ok(out)
}

/// Jacobi SVD of a tall-or-square matrix `a` (rows >= cols).
/// Returns (sigma descending, U rows x n, V n x n).
fn one_sided_jacobi(a: &Matrix) -> Result<(Vec<f64>, Matrix, Matrix)> {
    let m = a.rows();
    let n = a.cols();
    debug_assert!(m >= n);

    // Column-major copies: cols[j] is the j-th column of the working matrix.
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.get(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (app, aqq, apq) = column_moments(&cols[p], &cols[q]);
                if apq.abs() <= JACOBI_TOL * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric("jacobi svd did not converge".into()));
    }

    let mut norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();

    // Descending order, index as tiebreak for determinism.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let mut u = Matrix::zeros(m, n);
    let mut vmat = Matrix::zeros(n, n);
    let mut sigma = vec![0.0; n];
    let mut filled: Vec<Vec<f64>> = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        sigma[k] = norms[j];
        let uk: Vec<f64> = if norms[j] > 0.0 {
            cols[j].iter().map(|x| x / norms[j]).collect()
        } else {
            orthonormal_fill(m, &filled)
        };
        for (r, val) in uk.iter().enumerate() {
            u.set(r, k, *val);
        }
        filled.push(uk);
        for r in 0..n {
            vmat.set(r, k, v[j][r]);
        }
    }
    norms.clear();
    Ok((sigma, u, vmat))
}

fn column_moments(p: &[f64], q: &[f64]) -> (f64, f64, f64) {
    let mut app = 0.0;
    let mut aqq = 0.0;
    let mut apq = 0.0;
    for (a, b) in p.iter().zip(q) {
        app += a * a;
        aqq += b * b;
        apq += a * b;
    }
    (app, aqq, apq)
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// First standard basis vector orthogonal to everything in `existing`,
/// Gram-Schmidt orthonormalized.  Completes U when a singular value is
/// exactly zero.
fn orthonormal_fill(m: usize, existing: &[Vec<f64>]) -> Vec<f64> {
    for seed in 0..m {
        let mut cand = vec![0.0; m];
        cand[seed] = 1.0;
        for e in existing {
            let dot: f64 = cand.iter().zip(e).map(|(a, b)| a * b).sum();
            for (c, ev) in cand.iter_mut().zip(e) {
                *c -= dot * ev;
            }
        }
        let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for c in &mut cand {
                *c /= norm;
            }
            return cand;
        }
    }
    unreachable!("fewer than m orthonormal vectors always leave a completion");
}

/// Make the first nonzero component of each right singular vector positive,
/// flipping the paired left vector to preserve the product.
fn apply_sign_convention(out: &mut Svd) {
    let r = out.sigma.len();
    for k in 0..r {
        let mut flip = false;
        for row in 0..out.v.rows() {
            let val = out.v.get(row, k);
            if val != 0.0 {
                flip = val < 0.0;
                break;
            }
        }
        if flip {
            for row in 0..out.v.rows() {
                out.v.set(row, k, -out.v.get(row, k));
            }
            for row in 0..out.u.rows() {
                out.u.set(row, k, -out.u.get(row, k));
            }
        }
    }
}
