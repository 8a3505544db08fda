//! Reverse-mode gradients for the objectives the attacks and the trainer
//! optimize.
//!
//! The backward pass walks the layer chain once per network branch.  An
//! objective may route a second branch through a sanitizer (any
//! [`DifferentiableTransform`]); gradients from that branch flow back through
//! the transform's own backward map and are added to the main branch's input
//! gradient.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{softmax, ActivationTrace, Network};
use crate::tensor::Tensor;

/// Denominator guard for layer-impact ratios inside differentiable
/// objectives.
pub const RATIO_GUARD: f64 = 1e-12;

/// An input transform with a vector-Jacobian product, so objectives can be
/// differentiated through it.
pub trait DifferentiableTransform {
    /// Forward application; the output must keep the input's element count.
    fn forward(&self, x: &Tensor) -> Result<Tensor>;

    /// Vector-Jacobian product: pull `grad_out` (shaped like the output)
    /// back to the input of the transform evaluated at `x`.
    fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor>;
}

/// The identity transform; useful as a degenerate sanitizer.
#[derive(Debug, Clone, Copy)]
pub struct IdentityTransform;

impl DifferentiableTransform for IdentityTransform {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }

    fn backward(&self, _x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        Ok(grad_out.clone())
    }
}

/// Differentiable objective evaluated at an input/label pair.
///
/// Layer indices are 1-based; `first_layer`/`last_layer` select which layer
/// impacts form the amplification ratio.
pub enum Objective<'a> {
    /// Softmax cross-entropy of the logits against the label.
    CrossEntropy,
    /// Cross-entropy of the logits of the sanitized input; the label still
    /// applies, the gradient flows through the transform.
    SanitizedCrossEntropy { transform: &'a dyn DifferentiableTransform },
    /// Amplification ratio `d_last / max(d_first, RATIO_GUARD)` where
    /// `d_i` is the layer-`i` output distance between the raw input and its
    /// sanitized counterpart.  Ignores the label.
    AmplificationRatio {
        transform: &'a dyn DifferentiableTransform,
        first_layer: usize,
        last_layer: usize,
    },
    /// Cross-entropy minus `lambda` times the amplification ratio; the
    /// objective a detector-aware attacker ascends.
    Composite {
        lambda: f64,
        transform: &'a dyn DifferentiableTransform,
        first_layer: usize,
        last_layer: usize,
    },
}

/// Per-layer parameter gradients, aligned with the network's layers.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientBundle {
    fn zeros_like(net: &Network) -> Self {
        let weights = net
            .layers()
            .iter()
            .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
            .collect();
        let biases = net.layers().iter().map(|l| vec![0.0; l.out_dim()]).collect();
        Self { weights, biases }
    }
}

/// Objective value at `x`.
pub fn objective_value(net: &Network, x: &Tensor, label: usize, obj: &Objective) -> Result<f64> {
    match obj {
        Objective::CrossEntropy => {
            let (logits, _) = net.forward_with_trace(x)?;
            cross_entropy(logits.data(), label, net.out_dim())
        }
        Objective::SanitizedCrossEntropy { transform } => {
            let sanitized = transform.forward(x)?;
            let (logits, _) = net.forward_with_trace(&sanitized)?;
            cross_entropy(logits.data(), label, net.out_dim())
        }
        Objective::AmplificationRatio { transform, first_layer, last_layer } => {
            let parts = ratio_parts(net, x, *transform, *first_layer, *last_layer)?;
            Ok(parts.ratio)
        }
        Objective::Composite { lambda, transform, first_layer, last_layer } => {
            let ce = objective_value(net, x, label, &Objective::CrossEntropy)?;
            let parts = ratio_parts(net, x, *transform, *first_layer, *last_layer)?;
            Ok(ce - lambda * parts.ratio)
        }
    }
}

/// Gradient of the objective with respect to the input, shaped like `x`.
pub fn input_gradient(net: &Network, x: &Tensor, label: usize, obj: &Objective) -> Result<Tensor> {
    let n = net.depth();
    match obj {
        Objective::CrossEntropy => {
            let (logits, trace) = net.forward_with_trace(x)?;
            let cot = ce_logit_cotangent(logits.data(), label, net.out_dim())?;
            let mut inject = vec![None; n];
            inject[n - 1] = Some(cot);
            let g = backprop_input(net, &trace, &inject)?;
            Ok(Tensor::from_parts(x.shape().to_vec(), g))
        }
        Objective::SanitizedCrossEntropy { transform } => {
            let sanitized = transform.forward(x)?;
            let (logits, trace) = net.forward_with_trace(&sanitized)?;
            let cot = ce_logit_cotangent(logits.data(), label, net.out_dim())?;
            let mut inject = vec![None; n];
            inject[n - 1] = Some(cot);
            let g = backprop_input(net, &trace, &inject)?;
            let g = Tensor::from_parts(sanitized.shape().to_vec(), g);
            let pulled = transform.backward(x, &g)?;
            pulled.reshaped(x.shape().to_vec())
        }
        Objective::AmplificationRatio { transform, first_layer, last_layer } => {
            ratio_gradient(net, x, *transform, *first_layer, *last_layer, 1.0, None, label)
        }
        Objective::Composite { lambda, transform, first_layer, last_layer } => {
            ratio_gradient(net, x, *transform, *first_layer, *last_layer, -*lambda, Some(1.0), label)
        }
    }
}

/// Mean cross-entropy and its parameter gradients over a batch.  Only plain
/// cross-entropy supports parameter gradients; objectives routed through a
/// sanitizer stop at the input.
pub fn param_gradients(
    net: &Network,
    inputs: &[Tensor],
    labels: &[usize],
    obj: &Objective,
) -> Result<(f64, GradientBundle)> {
    if !matches!(obj, Objective::CrossEntropy) {
        return Err(Error::UnsupportedLoss(
            "parameter gradients are only defined for plain cross-entropy".into(),
        ));
    }
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "batch of {} inputs against {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let n = net.depth();
    let mut total = GradientBundle::zeros_like(net);
    let mut loss_sum = 0.0;
    for (x, &label) in inputs.iter().zip(labels) {
        let (logits, trace) = net.forward_with_trace(x)?;
        loss_sum += cross_entropy(logits.data(), label, net.out_dim())?;
        let cot = ce_logit_cotangent(logits.data(), label, net.out_dim())?;
        let mut inject = vec![None; n];
        inject[n - 1] = Some(cot);
        accumulate_param_grads(net, x, &trace, &inject, &mut total)?;
    }
    let scale = 1.0 / inputs.len() as f64;
    for w in &mut total.weights {
        for v in w.data_mut() {
            *v *= scale;
        }
    }
    for b in &mut total.biases {
        for v in b {
            *v *= scale;
        }
    }
    Ok((loss_sum * scale, total))
}

/// Stable softmax cross-entropy of a logit slice.
pub fn cross_entropy(logits: &[f64], label: usize, classes: usize) -> Result<f64> {
    if label >= classes || logits.len() != classes {
        return Err(Error::Parameter(format!(
            "label {label} outside {classes} classes"
        )));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let lse = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    Ok(lse - logits[label])
}

fn ce_logit_cotangent(logits: &[f64], label: usize, classes: usize) -> Result<Vec<f64>> {
    if label >= classes {
        return Err(Error::Parameter(format!(
            "label {label} outside {classes} classes"
        )));
    }
    let mut cot = softmax(logits);
    cot[label] -= 1.0;
    Ok(cot)
}

/// Pull cotangents injected at layer outputs back to the input.
/// `inject[i]` attaches to the output of layer `i + 1`.
fn backprop_input(
    net: &Network,
    trace: &ActivationTrace,
    inject: &[Option<Vec<f64>>],
) -> Result<Vec<f64>> {
    let n = net.depth();
    debug_assert_eq!(inject.len(), n);
    let mut cot: Vec<f64> = inject[n - 1].clone().unwrap_or_else(|| vec![0.0; net.out_dim()]);
    for i in (0..n).rev() {
        let layer = &net.layers()[i];
        let z = trace.layer(i + 1);
        let mut pre = vec![0.0; z.len()];
        for ((p, c), zv) in pre.iter_mut().zip(&cot).zip(z) {
            *p = c * layer.activation.derivative_from_output(*zv);
        }
        let mut back = layer.weight.matvec_t(&pre)?;
        if i > 0 {
            if let Some(extra) = &inject[i - 1] {
                for (b, e) in back.iter_mut().zip(extra) {
                    *b += e;
                }
            }
        }
        cot = back;
    }
    Ok(cot)
}

/// Accumulate parameter gradients for one sample into `total`.
fn accumulate_param_grads(
    net: &Network,
    x: &Tensor,
    trace: &ActivationTrace,
    inject: &[Option<Vec<f64>>],
    total: &mut GradientBundle,
) -> Result<()> {
    let n = net.depth();
    let mut cot: Vec<f64> = inject[n - 1].clone().unwrap_or_else(|| vec![0.0; net.out_dim()]);
    for i in (0..n).rev() {
        let layer = &net.layers()[i];
        let z = trace.layer(i + 1);
        let mut pre = vec![0.0; z.len()];
        for ((p, c), zv) in pre.iter_mut().zip(&cot).zip(z) {
            *p = c * layer.activation.derivative_from_output(*zv);
        }
        let prev: &[f64] = if i == 0 { x.data() } else { trace.layer(i) };
        {
            let w = &mut total.weights[i];
            let cols = w.cols();
            let wd = w.data_mut();
            for (r, pr) in pre.iter().enumerate() {
                if *pr == 0.0 {
                    continue;
                }
                let row = &mut wd[r * cols..(r + 1) * cols];
                for (t, pv) in row.iter_mut().zip(prev) {
                    *t += pr * pv;
                }
            }
        }
        for (t, pr) in total.biases[i].iter_mut().zip(&pre) {
            *t += pr;
        }
        let mut back = layer.weight.matvec_t(&pre)?;
        if i > 0 {
            if let Some(extra) = &inject[i - 1] {
                for (b, e) in back.iter_mut().zip(extra) {
                    *b += e;
                }
            }
        }
        cot = back;
    }
    Ok(())
}

struct RatioParts {
    ratio: f64,
    trace_raw: ActivationTrace,
    trace_san: ActivationTrace,
    sanitized: Tensor,
    d_first: f64,
    d_last: f64,
}

fn ratio_parts(
    net: &Network,
    x: &Tensor,
    transform: &dyn DifferentiableTransform,
    first: usize,
    last: usize,
) -> Result<RatioParts> {
    let n = net.depth();
    if first == 0 || first >= last || last > n {
        return Err(Error::Parameter(format!(
            "ratio layers must satisfy 1 <= first < last <= {n}, got {first} and {last}"
        )));
    }
    let sanitized = transform.forward(x)?;
    if sanitized.len() != x.len() {
        return Err(Error::Dimension(
            "sanitizer changed the input's element count".into(),
        ));
    }
    let (_, trace_raw) = net.forward_with_trace(x)?;
    let (_, trace_san) = net.forward_with_trace(&sanitized)?;
    let d_first = slice_distance(trace_raw.layer(first), trace_san.layer(first));
    let d_last = slice_distance(trace_raw.layer(last), trace_san.layer(last));
    let ratio = d_last / d_first.max(RATIO_GUARD);
    Ok(RatioParts { ratio, trace_raw, trace_san, sanitized, d_first, d_last })
}

fn slice_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Gradient of `ce_weight * CE(x) + ratio_weight * ratio(x)` with respect to
/// the input.  `ce_weight = None` drops the cross-entropy term.
fn ratio_gradient(
    net: &Network,
    x: &Tensor,
    transform: &dyn DifferentiableTransform,
    first: usize,
    last: usize,
    ratio_weight: f64,
    ce_weight: Option<f64>,
    label: usize,
) -> Result<Tensor> {
    let n = net.depth();
    let parts = ratio_parts(net, x, transform, first, last)?;
    let denom = parts.d_first.max(RATIO_GUARD);

    // d(ratio)/d(z_last diff direction) and the matching first-layer term.
    // At a zero distance the norm has no gradient; the subgradient 0 is used.
    let mut inject_raw: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut inject_san: Vec<Option<Vec<f64>>> = vec![None; n];

    let add_pair = |idx: usize, coeff: f64, a: &[f64], b: &[f64], raw: &mut Vec<Option<Vec<f64>>>, san: &mut Vec<Option<Vec<f64>>>| {
        if coeff == 0.0 {
            return;
        }
        let grad: Vec<f64> = a.iter().zip(b).map(|(x, y)| coeff * (x - y)).collect();
        match &mut raw[idx - 1] {
            Some(existing) => {
                for (e, g) in existing.iter_mut().zip(&grad) {
                    *e += g;
                }
            }
            slot => *slot = Some(grad.clone()),
        }
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        match &mut san[idx - 1] {
            Some(existing) => {
                for (e, g) in existing.iter_mut().zip(&neg) {
                    *e += g;
                }
            }
            slot => *slot = Some(neg),
        }
    };

    // Numerator: d(d_last)/dz = (z_raw - z_san) / d_last.
    if parts.d_last > 0.0 {
        let coeff = ratio_weight / (denom * parts.d_last);
        add_pair(
            last,
            coeff,
            parts.trace_raw.layer(last),
            parts.trace_san.layer(last),
            &mut inject_raw,
            &mut inject_san,
        );
    }
    // Denominator: active only when d_first exceeds the guard.
    if parts.d_first > RATIO_GUARD && parts.d_first > 0.0 {
        let coeff = -ratio_weight * parts.d_last / (denom * denom * parts.d_first);
        add_pair(
            first,
            coeff,
            parts.trace_raw.layer(first),
            parts.trace_san.layer(first),
            &mut inject_raw,
            &mut inject_san,
        );
    }

    if let Some(w) = ce_weight {
        let logits = parts.trace_raw.layer(n);
        let mut cot = ce_logit_cotangent(logits, label, net.out_dim())?;
        for c in &mut cot {
            *c *= w;
        }
        match &mut inject_raw[n - 1] {
            Some(existing) => {
                for (e, g) in existing.iter_mut().zip(&cot) {
                    *e += g;
                }
            }
            slot => *slot = Some(cot),
        }
    }

    let g_raw = backprop_input(net, &parts.trace_raw, &inject_raw)?;
    let mut grad = Tensor::from_parts(x.shape().to_vec(), g_raw);
    if inject_san.iter().any(|s| s.is_some()) {
        let g_san = backprop_input(net, &parts.trace_san, &inject_san)?;
        let g_san = Tensor::from_parts(parts.sanitized.shape().to_vec(), g_san);
        let pulled = transform.backward(x, &g_san)?;
        grad = grad.add(&pulled.reshaped(x.shape().to_vec())?)?;
    }
    Ok(grad)
}
