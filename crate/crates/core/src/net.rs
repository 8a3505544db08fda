//! Fully connected layered networks and the forward pass.
//!
//! A network is a chain of affine layers, each followed by an elementwise
//! activation.  The forward pass records every post-activation vector so that
//! downstream code can measure how a perturbation moves each layer's output.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Elementwise activation applied after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// Pass-through: `f(u) = u`.
    Identity,
    /// Leaky rectifier: `f(u) = u` for `u >= 0`, `alpha * u` otherwise.
    LeakyRelu { alpha: f64 },
}

impl Activation {
    /// Apply the activation to one value.
    pub fn apply(&self, u: f64) -> f64 {
        match self {
            Activation::Identity => u,
            Activation::LeakyRelu { alpha } => {
                if u >= 0.0 {
                    u
                } else {
                    alpha * u
                }
            }
        }
    }

    /// Derivative at a point, recovered from the post-activation value.
    /// Both activations preserve sign, so the sign of the output determines
    /// the active branch; the derivative at zero is taken as 1.
    pub fn derivative_from_output(&self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu { alpha } => {
                if z >= 0.0 {
                    1.0
                } else {
                    *alpha
                }
            }
        }
    }

    /// Largest `L` with `|f(a) - f(b)| >= L |a - b|` for all `a, b`:
    /// 1 for the identity, `alpha` for the leaky rectifier.
    pub fn expansion_lower_bound(&self) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu { alpha } => *alpha,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Activation::LeakyRelu { alpha } = self {
            if !alpha.is_finite() || *alpha <= 0.0 {
                return Err(Error::Parameter(format!(
                    "leaky relu slope must be finite and positive, got {alpha}"
                )));
            }
        }
        Ok(())
    }
}

/// Leaky rectifier applied elementwise to a tensor; `alpha` must be positive.
pub fn leaky_relu(x: &Tensor, alpha: f64) -> Result<Tensor> {
    let act = Activation::LeakyRelu { alpha };
    act.validate()?;
    Ok(x.map(|v| act.apply(v)))
}

/// Architecture of one layer: output width and activation.  The input width
/// is implied by the previous layer (or the data) when specs are chained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub out_dim: usize,
    pub activation: Activation,
}

/// One affine layer with its activation.
#[derive(Debug, Clone)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    /// Layer from parts; the bias length must match the weight's row count.
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Dimension(format!(
                "bias length {} does not match {} output rows",
                bias.len(),
                weight.rows()
            )));
        }
        if let Some(bad) = bias.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite bias entry {bad}")));
        }
        activation.validate()?;
        Ok(Self { weight, bias, activation })
    }

    /// Input width.
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Output width.
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Post-activation outputs `z_1 .. z_n` recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    layers: Vec<Vec<f64>>,
}

impl ActivationTrace {
    /// Output of layer `i`, 1-based to match the layer numbering.
    pub fn layer(&self, i: usize) -> &[f64] {
        &self.layers[i - 1]
    }

    /// Number of recorded layers.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

/// A chain of at least two layers with matching widths.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    /// Network from explicit layers; requires depth >= 2 and chained widths.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Dimension(format!(
                "network needs at least 2 layers, got {}",
                layers.len()
            )));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Dimension(format!(
                    "layer widths do not chain: {} then {}",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialized network: weights uniform in the Glorot range,
    /// biases zero.  Equal seeds give identical networks.
    pub fn init(in_dim: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if in_dim == 0 {
            return Err(Error::Dimension("input width must be positive".into()));
        }
        let mut rng = SplitMix64::new(seed);
        let mut layers = Vec::with_capacity(specs.len());
        let mut prev = in_dim;
        for spec in specs {
            if spec.out_dim == 0 {
                return Err(Error::Dimension("layer width must be positive".into()));
            }
            let limit = (6.0 / (prev + spec.out_dim) as f64).sqrt();
            let data: Vec<f64> = (0..spec.out_dim * prev)
                .map(|_| rng.uniform(-limit, limit))
                .collect();
            let weight = Matrix::new(spec.out_dim, prev, data)?;
            layers.push(Layer::new(weight, vec![0.0; spec.out_dim], spec.activation)?);
            prev = spec.out_dim;
        }
        Self::new(layers)
    }

    /// Layers in forward order.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable layer access for optimizers.
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Number of layers.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Expected input element count.
    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Output element count (class count for classifiers).
    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Forward pass recording every post-activation vector.  The input may
    /// have any shape; its element count must equal the input width.
    pub fn forward_with_trace(&self, x: &Tensor) -> Result<(Tensor, ActivationTrace)> {
        if x.len() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "input has {} elements, network expects {}",
                x.len(),
                self.in_dim()
            )));
        }
        let mut z: Vec<f64> = x.data().to_vec();
        let mut recorded = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut pre = layer.weight.matvec(&z)?;
            for (p, b) in pre.iter_mut().zip(&layer.bias) {
                *p += b;
            }
            for p in pre.iter_mut() {
                *p = layer.activation.apply(*p);
            }
            z = pre;
            recorded.push(z.clone());
        }
        let out = Tensor::from_parts(vec![z.len()], z);
        Ok((out, ActivationTrace { layers: recorded }))
    }

    /// Forward pass returning only the output tensor.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_trace(x)?.0)
    }

    /// Predicted class: argmax of the output.
    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }
}

/// Numerically stable softmax of a logit slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layer_example() -> Network {
        // Hand-built 2-2-2 net used by several hand-computed oracles.
        let w1 = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let w2 = Matrix::new(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        let l1 = Layer::new(w1, vec![0.0, 0.0], Activation::LeakyRelu { alpha: 0.01 }).unwrap();
        let l2 = Layer::new(w2, vec![0.0, 0.0], Activation::Identity).unwrap();
        Network::new(vec![l1, l2]).unwrap()
    }

    #[test]
    fn leaky_relu_rejects_bad_alpha() {
        let x = Tensor::from_vec(vec![1.0, -1.0]).unwrap();
        assert!(leaky_relu(&x, 0.0).is_err());
        assert!(leaky_relu(&x, -0.5).is_err());
        let y = leaky_relu(&x, 0.1).unwrap();
        assert_eq!(y.data(), &[1.0, -0.1]);
    }

    #[test]
    fn network_requires_two_layers_and_chained_dims() {
        let w = Matrix::identity(2);
        let l = Layer::new(w.clone(), vec![0.0; 2], Activation::Identity).unwrap();
        assert!(Network::new(vec![l.clone()]).is_err());
        let w3 = Matrix::zeros(3, 3);
        let l3 = Layer::new(w3, vec![0.0; 3], Activation::Identity).unwrap();
        assert!(Network::new(vec![l.clone(), l3]).is_err());
        assert!(Network::new(vec![l.clone(), l]).is_ok());
    }

    #[test]
    fn forward_trace_matches_hand_computation() {
        let net = two_layer_example();
        let x = Tensor::from_vec(vec![0.5, -0.5]).unwrap();
        let (out, trace) = net.forward_with_trace(&x).unwrap();
        // Layer 1: leaky relu of (0.5, -0.5) with alpha 0.01.
        assert_eq!(trace.layer(1), &[0.5, -0.005]);
        // Layer 2: diag(2, 3) applied to the above.
        assert_eq!(trace.layer(2), &[1.0, -0.015]);
        assert_eq!(out.data(), trace.layer(2));
        assert_eq!(trace.depth(), 2);
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let net = two_layer_example();
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(net.forward(&x).is_err());
    }

    #[test]
    fn forward_accepts_any_shape_of_matching_len() {
        let net = two_layer_example();
        let flat = Tensor::from_vec(vec![0.5, -0.5]).unwrap();
        let square = flat.reshaped(vec![2, 1]).unwrap();
        assert_eq!(net.forward(&flat).unwrap(), net.forward(&square).unwrap());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let specs = [
            LayerSpec { out_dim: 4, activation: Activation::LeakyRelu { alpha: 0.01 } },
            LayerSpec { out_dim: 2, activation: Activation::Identity },
        ];
        let a = Network::init(6, &specs, 11).unwrap();
        let b = Network::init(6, &specs, 11).unwrap();
        let c = Network::init(6, &specs, 12).unwrap();
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            assert_eq!(la.weight.data(), lb.weight.data());
        }
        assert_ne!(a.layers()[0].weight.data(), c.layers()[0].weight.data());
    }

    #[test]
    fn forward_determinism_over_random_nets() {
        let mut rng = SplitMix64::new(314);
        for _ in 0..100 {
            let in_dim = 1 + rng.below(8) as usize;
            let hidden = 1 + rng.below(8) as usize;
            let specs = [
                LayerSpec { out_dim: hidden, activation: Activation::LeakyRelu { alpha: 0.1 } },
                LayerSpec { out_dim: 3, activation: Activation::Identity },
            ];
            let net = Network::init(in_dim, &specs, rng.next_u64()).unwrap();
            let x = Tensor::from_vec((0..in_dim).map(|i| (i as f64).sin()).collect()).unwrap();
            let y1 = net.forward(&x).unwrap();
            let y2 = net.forward(&x).unwrap();
            assert_eq!(y1.data(), y2.data());
        }
    }

    #[test]
    fn softmax_sums_to_one_and_is_stable() {
        let p = softmax(&[1000.0, 1000.0, 999.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[2]);
        assert!((p[0] - p[1]).abs() < 1e-15);
    }
}
