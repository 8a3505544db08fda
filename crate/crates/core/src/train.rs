//! Mini-batch training with an optional spectral log-barrier.
//!
//! Default mode minimizes plain cross-entropy.  Amplified mode adds
//! `-lambda * sum ln sigma_min(W_i)` over the interior layers, which holds
//! every smallest singular value away from zero and thereby keeps the
//! certified amplification factor positive while the classifier fits.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grad::{param_gradients, GradientBundle, Objective};
use crate::matrix::Matrix;
use crate::net::{Activation, Network};
use crate::rng::SplitMix64;
use crate::spectral::{certify, spectral_penalty};
use crate::tensor::Tensor;

/// Training objective family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainMode {
    /// Cross-entropy only; requires `lambda = 0`.
    Default,
    /// Cross-entropy plus the spectral barrier; requires `lambda > 0` and
    /// leaky-relu hidden activations.
    Amplified,
}

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Default,
            lambda: 0.0,
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Check ranges and the mode/lambda contract.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Parameter(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Parameter(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        match self.mode {
            TrainMode::Default if self.lambda != 0.0 => Err(Error::Parameter(
                "default mode trains without the barrier; lambda must be 0".into(),
            )),
            TrainMode::Amplified if self.lambda == 0.0 => Err(Error::Parameter(
                "amplified mode needs lambda > 0".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean batch loss over the epoch (cross-entropy plus barrier).
    pub loss: f64,
    /// Accuracy over the full training set at epoch end.
    pub accuracy: f64,
    /// Smallest interior-layer `sigma_min` at epoch end.
    pub min_sigma_min: f64,
}

/// Train a copy of `net` on `data`; returns the trained network and the
/// per-epoch history.  Bit-reproducible for equal inputs and seeds.
pub fn train(net: &Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Network, Vec<EpochStats>)> {
    cfg.validate()?;
    if data.input_dim() != net.in_dim() {
        return Err(Error::Dimension(format!(
            "data has {} elements per image, network expects {}",
            data.input_dim(),
            net.in_dim()
        )));
    }
    if data.classes != net.out_dim() {
        return Err(Error::Dimension(format!(
            "data has {} classes, network outputs {}",
            data.classes,
            net.out_dim()
        )));
    }
    if cfg.mode == TrainMode::Amplified {
        let hidden_ok = net.layers()[..net.depth() - 1]
            .iter()
            .all(|l| matches!(l.activation, Activation::LeakyRelu { .. }));
        if !hidden_ok {
            return Err(Error::Parameter(
                "amplified mode needs leaky-relu hidden activations".into(),
            ));
        }
    }

    let mut net = net.clone();
    let mut opt = Optimizer::new(&net, cfg.optimizer);
    let mut shuffle_rng = SplitMix64::new(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<Tensor> = chunk.iter().map(|&i| data.images[i].clone()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let (ce, mut grads) = param_gradients(&net, &inputs, &labels, &Objective::CrossEntropy)?;
            let mut batch_loss = ce;
            if cfg.mode == TrainMode::Amplified {
                let (penalty, pgrads) = spectral_penalty(&net, cfg.lambda).map_err(|e| match e {
                    Error::SingularWeight { layer, .. } => {
                        Error::SingularWeight { layer, epoch: Some(epoch) }
                    }
                    other => other,
                })?;
                batch_loss += penalty;
                for (g, p) in grads.weights.iter_mut().zip(&pgrads) {
                    for (gv, pv) in g.data_mut().iter_mut().zip(p.data()) {
                        *gv += pv;
                    }
                }
            }
            opt.step(&mut net, &grads, cfg.learning_rate);
            loss_sum += batch_loss;
            batches += 1;
        }

        let accuracy = evaluate_accuracy(&net, data)?;
        let report = certify(&net)?;
        let min_sigma_min = report.layers[1..]
            .iter()
            .map(|l| l.sigma_min)
            .fold(f64::INFINITY, f64::min);
        history.push(EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            accuracy,
            min_sigma_min,
        });
    }
    Ok((net, history))
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn evaluate_accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for (img, label) in data.images.iter().zip(&data.labels) {
        if net.predict(img)? == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Optimizer {
    kind: OptimizerKind,
    m_w: Vec<Matrix>,
    v_w: Vec<Matrix>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
    t: i32,
}

impl Optimizer {
    fn new(net: &Network, kind: OptimizerKind) -> Self {
        let zeros_w: Vec<Matrix> = net
            .layers()
            .iter()
            .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
            .collect();
        let zeros_b: Vec<Vec<f64>> = net.layers().iter().map(|l| vec![0.0; l.out_dim()]).collect();
        Self { kind, m_w: zeros_w.clone(), v_w: zeros_w, m_b: zeros_b.clone(), v_b: zeros_b, t: 0 }
    }

    fn step(&mut self, net: &mut Network, grads: &GradientBundle, lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (layer, gw) in net.layers_mut().iter_mut().zip(&grads.weights) {
                    for (w, g) in layer.weight.data_mut().iter_mut().zip(gw.data()) {
                        *w -= lr * g;
                    }
                }
                for (layer, gb) in net.layers_mut().iter_mut().zip(&grads.biases) {
                    for (b, g) in layer.bias.iter_mut().zip(gb) {
                        *b -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(self.t);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t);
                for (i, layer) in net.layers_mut().iter_mut().enumerate() {
                    adam_update(layer.weight.data_mut(), grads.weights[i].data(), self.m_w[i].data_mut(), self.v_w[i].data_mut(), lr, c1, c2);
                    adam_update(&mut layer.bias, &grads.biases[i], &mut self.m_b[i], &mut self.v_b[i], lr, c1, c2);
                }
            }
        }
    }
}

fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, c1: f64, c2: f64) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}
