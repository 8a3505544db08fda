//! Spectral certification and regularization.
//!
//! A layer whose activation expands distances by at least `L` and whose
//! weight matrix maps no direction below `sigma` cannot shrink the distance
//! between two forward passes by more than the factor `L * sigma`.
//! Chaining the factors of layers `2..n` gives a network level lower bound
//! `d_n >= beta * d_1`.  The per-layer `sigma` is the smallest singular
//! value for square or tall weight matrices; a matrix wider than tall has a
//! null space, so its only certifiable map bound is 0 and it contributes a
//! zero factor.  This module certifies the factors, checks the bound on
//! concrete input pairs, and provides the log-barrier penalty that keeps
//! the smallest singular value away from zero during training.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::Network;
use crate::svd::svd;
use crate::tensor::Tensor;

/// Relative slack for bound checks on concrete pairs.
const BOUND_SLACK: f64 = 1e-9;

/// Relative gap under which the two smallest singular values count as tied.
const DEGENERACY_TOL: f64 = 1e-9;

/// Spectral summary of one layer.
#[derive(Debug, Clone)]
pub struct LayerSpectrum {
    /// 1-based layer index.
    pub layer: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Distance expansion lower bound of the activation (`alpha` for leaky
    /// relu, 1 for identity).
    pub expansion: f64,
    /// Certified lower bound of the linear map: `sigma_min` for square or
    /// tall weights, 0 for a wider-than-tall matrix (its null space voids
    /// any bound).
    pub map_bound: f64,
    /// True when the smallest singular value is (numerically) repeated; the
    /// penalty gradient then picks the last singular pair under the fixed
    /// sign convention.
    pub sigma_min_degenerate: bool,
    /// Product of `expansion * map_bound` over layers `2..=layer`.
    pub cum_beta: f64,
}

/// Whole-network spectral certificate.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub layers: Vec<LayerSpectrum>,
    /// `prod_{i=2..n} expansion_i * map_bound_i`.
    pub beta: f64,
    /// All activations have a positive expansion bound.
    pub activations_invertible: bool,
    /// `beta > 1`: every perturbation reaching layer 1 grows by layer `n`.
    pub amplifying: bool,
}

/// Lower bound of `|W x| / |x|` over nonzero `x`.
fn map_lower_bound(rows: usize, cols: usize, sigma_min: f64) -> f64 {
    if rows < cols {
        0.0
    } else {
        sigma_min
    }
}

/// Outcome of checking the layer bounds on a concrete input pair.
#[derive(Debug, Clone)]
pub struct BoundCheck {
    /// Layer impacts `d_1 .. d_n`.
    pub impacts: Vec<f64>,
    /// Certified chain factor for layers `2..n`.
    pub beta: f64,
    /// Every per-layer bound and the chained bound hold (within slack).
    pub holds: bool,
    /// `d_1 = 0`: the pair never separates, the bounds hold vacuously.
    pub degenerate: bool,
}

/// Product of per-layer factors; the empty product (a single-layer chain has
/// no interior layers) is 1.
pub fn beta_product(factors: &[f64]) -> f64 {
    factors.iter().product()
}

/// Log-barrier spectral penalty `-lambda * sum_{i=2..n} ln sigma_min(W_i)`
/// and its per-layer weight gradients (layer 1's gradient is zero).
///
/// The gradient of `sigma_min` with respect to its matrix is the outer
/// product of the associated singular pair, so each interior layer
/// contributes `-(lambda / sigma_min) * u_min v_min^T`.
pub fn spectral_penalty(net: &Network, lambda: f64) -> Result<(f64, Vec<Matrix>)> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Parameter(format!(
            "penalty weight must be finite and non-negative, got {lambda}"
        )));
    }
    let zeros: Vec<Matrix> = net
        .layers()
        .iter()
        .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
        .collect();
    if lambda == 0.0 {
        return Ok((0.0, zeros));
    }
    let mut grads = zeros;
    let mut penalty = 0.0;
    for (idx, layer) in net.layers().iter().enumerate().skip(1) {
        let s = svd(&layer.weight)?;
        let sigma_min = s.sigma_min();
        if sigma_min <= 0.0 {
            return Err(Error::SingularWeight { layer: idx + 1, epoch: None });
        }
        penalty -= lambda * sigma_min.ln();
        let k = s.sigma.len() - 1;
        let u = s.left(k);
        let v = s.right(k);
        let coeff = -lambda / sigma_min;
        let g = &mut grads[idx];
        for (r, uv) in u.iter().enumerate() {
            for (c, vv) in v.iter().enumerate() {
                g.set(r, c, coeff * uv * vv);
            }
        }
    }
    Ok((penalty, grads))
}

/// Certify the spectral factors of every layer and the chained bound factor.
pub fn certify(net: &Network) -> Result<SpectralReport> {
    let mut layers = Vec::with_capacity(net.depth());
    let mut cum = 1.0;
    let mut factors = Vec::new();
    for (idx, layer) in net.layers().iter().enumerate() {
        let s = svd(&layer.weight)?;
        let r = s.sigma.len();
        let degenerate = r >= 2 && (s.sigma[r - 2] - s.sigma[r - 1]).abs() <= DEGENERACY_TOL * s.sigma_max().max(1e-300);
        let expansion = layer.activation.expansion_lower_bound();
        let map_bound = map_lower_bound(layer.out_dim(), layer.in_dim(), s.sigma_min());
        if idx >= 1 {
            factors.push(expansion * map_bound);
            cum *= expansion * map_bound;
        }
        layers.push(LayerSpectrum {
            layer: idx + 1,
            sigma_min: s.sigma_min(),
            sigma_max: s.sigma_max(),
            expansion,
            map_bound,
            sigma_min_degenerate: degenerate,
            cum_beta: cum,
        });
    }
    let beta = beta_product(&factors);
    let activations_invertible = layers.iter().all(|l| l.expansion > 0.0);
    Ok(SpectralReport { layers, beta, activations_invertible, amplifying: beta > 1.0 })
}

/// Measure the layer impacts of the pair `(x, x_adv)` and check the
/// per-layer and chained lower bounds against the certified factors.
pub fn verify_bound(net: &Network, x: &Tensor, x_adv: &Tensor) -> Result<BoundCheck> {
    if x.len() != x_adv.len() {
        return Err(Error::Dimension(format!(
            "input pair sizes differ: {} vs {}",
            x.len(),
            x_adv.len()
        )));
    }
    let (_, trace) = net.forward_with_trace(x)?;
    let (_, trace_adv) = net.forward_with_trace(x_adv)?;
    let n = net.depth();
    let mut impacts = Vec::with_capacity(n);
    for i in 1..=n {
        let d: f64 = trace
            .layer(i)
            .iter()
            .zip(trace_adv.layer(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        impacts.push(d);
    }

    let mut beta = 1.0;
    let mut holds = true;
    for (idx, layer) in net.layers().iter().enumerate().skip(1) {
        let s = svd(&layer.weight)?;
        let factor = layer.activation.expansion_lower_bound()
            * map_lower_bound(layer.out_dim(), layer.in_dim(), s.sigma_min());
        beta *= factor;
        let bound = factor * impacts[idx - 1];
        if impacts[idx] < bound * (1.0 - BOUND_SLACK) {
            holds = false;
        }
    }
    if impacts[n - 1] < beta * impacts[0] * (1.0 - BOUND_SLACK) {
        holds = false;
    }
    let degenerate = impacts[0] == 0.0;
    Ok(BoundCheck { impacts, beta, holds, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Activation, Layer, LayerSpec};
    use crate::rng::SplitMix64;

    fn diag_layer(values: &[f64], activation: Activation) -> Layer {
        let n = values.len();
        let mut w = Matrix::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            w.set(i, i, *v);
        }
        Layer::new(w, vec![0.0; n], activation).unwrap()
    }

    fn random_net(rng: &mut SplitMix64, dims: &[usize], alpha: f64) -> Network {
        let specs: Vec<LayerSpec> = dims[1..]
            .iter()
            .enumerate()
            .map(|(i, &d)| LayerSpec {
                out_dim: d,
                activation: if i + 2 == dims.len() {
                    Activation::Identity
                } else {
                    Activation::LeakyRelu { alpha }
                },
            })
            .collect();
        Network::init(dims[0], &specs, rng.next_u64()).unwrap()
    }

    #[test]
    fn empty_factor_list_gives_unit_beta() {
        assert_eq!(beta_product(&[]), 1.0);
        assert_eq!(beta_product(&[2.0, 0.5, 3.0]), 3.0);
    }

    #[test]
    fn penalty_matches_hand_value_on_diagonal_layer() {
        let net = Network::new(vec![
            diag_layer(&[1.0, 1.0], Activation::LeakyRelu { alpha: 0.01 }),
            diag_layer(&[2.0, 2.0], Activation::Identity),
        ])
        .unwrap();
        let (p, grads) = spectral_penalty(&net, 0.5).unwrap();
        assert!((p - (-0.5 * 2.0f64.ln())).abs() < 1e-15);
        // Layer 1 carries no penalty gradient.
        assert!(grads[0].data().iter().all(|v| *v == 0.0));
        // diag(2, 2): tied singular values, last pair is (e2, e2), so the
        // gradient is -(0.5 / 2) on the bottom-right entry.
        assert_eq!(grads[1].get(0, 0), 0.0);
        assert!((grads[1].get(1, 1) - (-0.25)).abs() < 1e-14);
    }

    #[test]
    fn log_sigma_min_gradient_matches_hand_value() {
        // d ln(sigma_min)/dW for diag(3, 2) is e2 e2^T / 2; with lambda = 1
        // the penalty gradient is the negative of that.
        let net = Network::new(vec![
            diag_layer(&[1.0, 1.0], Activation::Identity),
            diag_layer(&[3.0, 2.0], Activation::Identity),
        ])
        .unwrap();
        let (_, grads) = spectral_penalty(&net, 1.0).unwrap();
        assert_eq!(grads[1].get(0, 0), 0.0);
        assert_eq!(grads[1].get(0, 1), 0.0);
        assert_eq!(grads[1].get(1, 0), 0.0);
        assert!((grads[1].get(1, 1) - (-0.5)).abs() < 1e-14);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(61);
        for trial in 0..10 {
            let net = random_net(&mut rng, &[4, 4, 3, 2], 0.1);
            let lambda = 0.3;
            let (_, grads) = spectral_penalty(&net, lambda).unwrap();
            let h = 1e-6;
            for li in 1..net.depth() {
                let (rows, cols) = (net.layers()[li].out_dim(), net.layers()[li].in_dim());
                for r in 0..rows {
                    for c in 0..cols {
                        let mut plus = net.clone();
                        let v = plus.layers_mut()[li].weight.get(r, c);
                        plus.layers_mut()[li].weight.set(r, c, v + h);
                        let mut minus = net.clone();
                        minus.layers_mut()[li].weight.set(r, c, v - h);
                        let (fp, _) = spectral_penalty(&plus, lambda).unwrap();
                        let (fm, _) = spectral_penalty(&minus, lambda).unwrap();
                        let fd = (fp - fm) / (2.0 * h);
                        let an = grads[li].get(r, c);
                        assert!(
                            (fd - an).abs() <= 1e-5 * fd.abs().max(1e-2),
                            "trial {trial} W[{li}][{r},{c}]: fd {fd} vs analytic {an}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn zero_lambda_short_circuits() {
        // Even a singular interior layer is fine when the penalty is off.
        let net = Network::new(vec![
            diag_layer(&[1.0, 1.0], Activation::Identity),
            Layer::new(
                Matrix::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap(),
                vec![0.0; 2],
                Activation::Identity,
            )
            .unwrap(),
        ])
        .unwrap();
        let (p, grads) = spectral_penalty(&net, 0.0).unwrap();
        assert_eq!(p, 0.0);
        assert!(grads.iter().all(|g| g.data().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn singular_interior_layer_is_reported_with_its_index() {
        let net = Network::new(vec![
            diag_layer(&[1.0, 1.0], Activation::Identity),
            Layer::new(
                Matrix::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap(),
                vec![0.0; 2],
                Activation::Identity,
            )
            .unwrap(),
        ])
        .unwrap();
        match spectral_penalty(&net, 0.1) {
            Err(Error::SingularWeight { layer, epoch }) => {
                assert_eq!(layer, 2);
                assert_eq!(epoch, None);
            }
            other => panic!("expected singular weight error, got {other:?}"),
        }
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let net = Network::new(vec![
            diag_layer(&[1.0], Activation::Identity),
            diag_layer(&[1.0], Activation::Identity),
        ])
        .unwrap();
        assert!(spectral_penalty(&net, -0.1).is_err());
    }

    #[test]
    fn certify_reports_factors_and_verdict() {
        let net = Network::new(vec![
            diag_layer(&[1.0, 1.0], Activation::LeakyRelu { alpha: 0.01 }),
            diag_layer(&[2.0, 4.0], Activation::LeakyRelu { alpha: 0.5 }),
            diag_layer(&[5.0, 3.0], Activation::Identity),
        ])
        .unwrap();
        let report = certify(&net).unwrap();
        assert_eq!(report.layers.len(), 3);
        assert_eq!(report.layers[0].cum_beta, 1.0);
        assert!((report.layers[1].cum_beta - 1.0).abs() < 1e-12); // 0.5 * 2
        assert!((report.layers[2].cum_beta - 3.0).abs() < 1e-12); // * 1 * 3
        assert!((report.beta - 3.0).abs() < 1e-12);
        assert!(report.amplifying);
        assert!(report.activations_invertible);
        assert!(!report.layers[1].sigma_min_degenerate);
        // Square layers certify their full singular value.
        assert!(report.layers.iter().all(|l| l.map_bound == l.sigma_min));
        // Recompute beta from the reported entries: identical to 1e-12 rel.
        let recomputed: f64 = report.layers[1..]
            .iter()
            .map(|l| l.expansion * l.map_bound)
            .product();
        assert!((recomputed - report.beta).abs() <= 1e-12 * report.beta.abs());
    }

    #[test]
    fn compressing_layer_certifies_a_zero_factor() {
        // A 3 -> 2 interior layer has a null space: its singular values are
        // positive, but no map lower bound above 0 exists, so the certified
        // chain factor collapses to 0 and the bound holds vacuously.
        let specs = [
            LayerSpec { out_dim: 3, activation: Activation::LeakyRelu { alpha: 0.1 } },
            LayerSpec { out_dim: 2, activation: Activation::LeakyRelu { alpha: 0.1 } },
            LayerSpec { out_dim: 2, activation: Activation::Identity },
        ];
        let net = Network::init(3, &specs, 9).unwrap();
        let report = certify(&net).unwrap();
        assert!(report.layers[1].sigma_min > 0.0);
        assert_eq!(report.layers[1].map_bound, 0.0);
        assert_eq!(report.beta, 0.0);
        assert!(!report.amplifying);
        let x = Tensor::from_vec(vec![0.2, 0.5, 0.8]).unwrap();
        let x_adv = Tensor::from_vec(vec![0.25, 0.45, 0.85]).unwrap();
        let check = verify_bound(&net, &x, &x_adv).unwrap();
        assert_eq!(check.beta, 0.0);
        assert!(check.holds);
    }

    #[test]
    fn certify_flags_tied_smallest_singular_values() {
        let net = Network::new(vec![
            diag_layer(&[1.0, 1.0], Activation::Identity),
            diag_layer(&[2.0, 2.0], Activation::Identity),
        ])
        .unwrap();
        let report = certify(&net).unwrap();
        assert!(report.layers[1].sigma_min_degenerate);
        assert!(report.layers[0].sigma_min_degenerate); // identity weights tie too
    }

    #[test]
    fn verify_bound_matches_hand_example() {
        // Identity first layer, diag(2, 3) second, both leaky with 0.01.
        let net = Network::new(vec![
            diag_layer(&[1.0, 1.0], Activation::LeakyRelu { alpha: 0.01 }),
            diag_layer(&[2.0, 3.0], Activation::LeakyRelu { alpha: 0.01 }),
        ])
        .unwrap();
        let x = Tensor::from_vec(vec![0.5, 0.5]).unwrap();
        let x_adv = Tensor::from_vec(vec![0.4, 0.6]).unwrap();
        let check = verify_bound(&net, &x, &x_adv).unwrap();
        assert!((check.impacts[0] - 0.1 * 2.0f64.sqrt()).abs() < 1e-15);
        assert!((check.impacts[1] - 0.13f64.sqrt()).abs() < 1e-15);
        assert!((check.beta - 0.02).abs() < 1e-15);
        assert!(check.holds);
        assert!(!check.degenerate);
        let ratio = check.impacts[1] / check.impacts[0];
        assert!((ratio - 2.5495097567963922).abs() < 1e-12);
    }

    #[test]
    fn identical_pair_is_degenerate_and_holds() {
        let mut rng = SplitMix64::new(71);
        let net = random_net(&mut rng, &[4, 3, 2], 0.1);
        let x = Tensor::from_vec(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let check = verify_bound(&net, &x, &x.clone()).unwrap();
        assert!(check.degenerate);
        assert!(check.holds);
        assert!(check.impacts.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn bounds_hold_on_random_nets_and_pairs() {
        let mut rng = SplitMix64::new(83);
        for _ in 0..50 {
            let depth = 2 + rng.below(3) as usize;
            let mut dims = vec![2 + rng.below(6) as usize];
            for _ in 0..depth {
                dims.push(2 + rng.below(6) as usize);
            }
            let alpha = if rng.next_f64() < 0.5 { 0.01 } else { 0.1 };
            let net = random_net(&mut rng, &dims, alpha);
            let x = Tensor::from_vec((0..dims[0]).map(|_| rng.uniform(0.0, 1.0)).collect()).unwrap();
            let mut x_adv = x.clone();
            for v in x_adv.data_mut() {
                *v += rng.uniform(-0.1, 0.1);
            }
            let check = verify_bound(&net, &x, &x_adv).unwrap();
            assert!(check.holds, "bound failed: impacts {:?} beta {}", check.impacts, check.beta);
        }
    }
}
