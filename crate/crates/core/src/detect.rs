//! Amplification measurement and detection.
//!
//! Per-layer impact distances between two inputs, the net amplification
//! ratio of an attack, the sanitization-based detector score (last-layer
//! impact over first-layer impact after a JPEG round trip), threshold
//! calibration, AUROC, and a prediction-change baseline detector.

use crate::error::{Error, Result};
use crate::jpeg::jpeg_roundtrip;
use crate::net::Network;
use crate::rng::SplitMix64;
use crate::spectral::certify;
use crate::tensor::Tensor;

/// How the detector picks its sanitization quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualityMode {
    /// Always the same quality.
    Fixed(u8),
    /// Uniform draw from the inclusive range, seeded per call.
    Randomized { lo: u8, hi: u8 },
}

impl QualityMode {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = match *self {
            QualityMode::Fixed(q) => (q, q),
            QualityMode::Randomized { lo, hi } => (lo, hi),
        };
        if lo == 0 || hi > 100 || lo > hi {
            return Err(Error::Parameter(format!(
                "quality must satisfy 1 <= lo <= hi <= 100, got [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    /// Resolve the quality for one scoring call.
    fn draw(&self, rng: &mut SplitMix64) -> u8 {
        match *self {
            QualityMode::Fixed(q) => q,
            QualityMode::Randomized { lo, hi } => rng.int_in(lo as u64, hi as u64) as u8,
        }
    }
}

/// Detector settings: sanitization quality, the impact-ratio layer pair,
/// the decision threshold and the seed for quality draws.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub quality: QualityMode,
    /// Denominator layer of the ratio (1-based).
    pub first_layer: usize,
    /// Numerator layer of the ratio (1-based).
    pub last_layer: usize,
    /// Scores strictly above this flag the input as adversarial.
    pub threshold: f64,
    pub seed: u64,
}

impl DetectorConfig {
    /// Defaults for a network of the given depth: fixed quality 75, ratio
    /// over the full layer range, threshold 1 (flag anything amplifying).
    pub fn for_depth(depth: usize) -> Self {
        DetectorConfig {
            quality: QualityMode::Fixed(75),
            first_layer: 1,
            last_layer: depth,
            threshold: 1.0,
            seed: 0,
        }
    }

    /// Same config with a different quality-draw seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Check the quality mode, layer pair and threshold against a network.
    pub fn validate_for(&self, net: &Network) -> Result<()> {
        self.quality.validate()?;
        if self.first_layer == 0 || self.first_layer >= self.last_layer || self.last_layer > net.depth() {
            return Err(Error::Parameter(format!(
                "ratio layers must satisfy 1 <= first < last <= {}, got {} and {}",
                net.depth(),
                self.first_layer,
                self.last_layer
            )));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Parameter("threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Impacts of one attacked input: per-layer distances, their end-to-end
/// ratio, and the certified lower bound it is compared against.
#[derive(Debug, Clone)]
pub struct AmplificationReport {
    /// d_1 .. d_n, the l2 distances of layer outputs.
    pub impacts: Vec<f64>,
    /// d_n / d_1, or 0 when the first-layer impact vanishes.
    pub ratio: f64,
    /// Product of certified per-layer expansion factors for layers 2..n.
    pub beta_certified: f64,
    /// True when d_1 = 0 and the ratio convention kicked in.
    pub degenerate: bool,
}

/// Per-layer l2 distances d_1..d_n between the traced activations of two
/// inputs.
pub fn layer_impacts(net: &Network, x: &Tensor, x_prime: &Tensor) -> Result<Vec<f64>> {
    let (_, trace_a) = net.forward_with_trace(x)?;
    let (_, trace_b) = net.forward_with_trace(x_prime)?;
    let mut impacts = Vec::with_capacity(net.depth());
    for i in 1..=net.depth() {
        let a = trace_a.layer(i);
        let b = trace_b.layer(i);
        let sq: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        impacts.push(sq.sqrt());
    }
    Ok(impacts)
}

/// Craft an adversarial input with `attack` and measure how its
/// perturbation amplifies through the layers.
pub fn net_amplification<A>(net: &Network, x: &Tensor, label: usize, attack: A) -> Result<AmplificationReport>
where
    A: FnOnce(&Network, &Tensor, usize) -> Result<Tensor>,
{
    let x_adv = attack(net, x, label)?;
    let impacts = layer_impacts(net, x, &x_adv)?;
    let d_first = impacts[0];
    let d_last = impacts[impacts.len() - 1];
    let (ratio, degenerate) = if d_first > 0.0 { (d_last / d_first, false) } else { (0.0, true) };
    let beta_certified = certify(net)?.beta;
    Ok(AmplificationReport { impacts, ratio, beta_certified, degenerate })
}

/// Detector score of one input: sanitize with a JPEG round trip, then take
/// the configured impact ratio.  Also reports whether the degenerate d=0
/// convention applied.
pub fn jad_score_flagged(net: &Network, x: &Tensor, dcfg: &DetectorConfig) -> Result<(f64, bool)> {
    dcfg.validate_for(net)?;
    let mut rng = SplitMix64::new(dcfg.seed);
    let quality = dcfg.quality.draw(&mut rng);
    let x_san = jpeg_roundtrip(x, quality)?;
    let impacts = layer_impacts(net, x, &x_san)?;
    let d_first = impacts[dcfg.first_layer - 1];
    let d_last = impacts[dcfg.last_layer - 1];
    if d_first > 0.0 {
        Ok((d_last / d_first, false))
    } else {
        Ok((0.0, true))
    }
}

/// Detector score without the degenerate flag.
pub fn jad_score(net: &Network, x: &Tensor, dcfg: &DetectorConfig) -> Result<f64> {
    jad_score_flagged(net, x, dcfg).map(|(score, _)| score)
}

/// Smallest calibration score with at least a `1 - target_fpr` fraction of
/// scores at or below it; classifying "adversarial iff score > tau" then
/// has false-positive rate at most `target_fpr` on the calibration set.
pub fn calibrate_threshold(clean_scores: &[f64], target_fpr: f64) -> Result<f64> {
    if clean_scores.is_empty() {
        return Err(Error::Parameter("threshold calibration needs at least one score".into()));
    }
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::Parameter(format!(
            "target false-positive rate must lie in (0, 1), got {target_fpr}"
        )));
    }
    if clean_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Parameter("scores must be finite".into()));
    }
    let mut sorted = clean_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Higher interpolation; the epsilon absorbs upward float noise in the
    // product so exact multiples stay exact.
    let k = ((1.0 - target_fpr) * n as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[k.min(n) - 1])
}

/// Probability that a random positive score exceeds a random negative one,
/// with ties counted half.  Average-rank implementation of the
/// Mann-Whitney statistic.
pub fn auroc(neg_scores: &[f64], pos_scores: &[f64]) -> Result<f64> {
    if neg_scores.is_empty() || pos_scores.is_empty() {
        return Err(Error::Parameter("AUROC needs scores on both sides".into()));
    }
    if neg_scores.iter().chain(pos_scores).any(|s| !s.is_finite()) {
        return Err(Error::Parameter("scores must be finite".into()));
    }
    let mut all: Vec<(f64, bool)> = neg_scores
        .iter()
        .map(|&s| (s, false))
        .chain(pos_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 .. j averaged across the tie group.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let positives_in_group = all[i..j].iter().filter(|(_, is_pos)| *is_pos).count();
        pos_rank_sum += avg_rank * positives_in_group as f64;
        i = j;
    }
    let n = neg_scores.len() as f64;
    let m = pos_scores.len() as f64;
    Ok((pos_rank_sum - m * (m + 1.0) / 2.0) / (n * m))
}

/// Baseline detector: flag the input if a JPEG round trip at quality `q`
/// changes the predicted class.
pub fn prediction_change_detector(net: &Network, x: &Tensor, q: u8) -> Result<bool> {
    let before = net.predict(x)?;
    let after = net.predict(&jpeg_roundtrip(x, q)?)?;
    Ok(before != after)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::net::{Activation, Layer, LayerSpec, Network};

    /// Two-layer net: identity weights then diag(2, 3), both leaky(0.01).
    fn hand_net() -> Network {
        let leaky = Activation::LeakyRelu { alpha: 0.01 };
        let l1 = Layer::new(Matrix::identity(2), vec![0.0, 0.0], leaky).unwrap();
        let w2 = Matrix::new(2, 2, vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        let l2 = Layer::new(w2, vec![0.0, 0.0], leaky).unwrap();
        Network::new(vec![l1, l2]).unwrap()
    }

    fn image_net(seed: u64) -> Network {
        let specs = [
            LayerSpec { out_dim: 10, activation: Activation::LeakyRelu { alpha: 0.01 } },
            LayerSpec { out_dim: 2, activation: Activation::Identity },
        ];
        Network::init(64, &specs, seed).unwrap()
    }

    fn image(seed: u64) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        Tensor::new(vec![8, 8], (0..64).map(|_| rng.uniform(0.1, 0.9)).collect()).unwrap()
    }

    #[test]
    fn impacts_vanish_for_identical_inputs() {
        let net = image_net(1);
        let x = image(2);
        let d = layer_impacts(&net, &x, &x).unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
    }

    #[test]
    fn impacts_match_the_hand_example() {
        let net = hand_net();
        let x = Tensor::new(vec![2], vec![0.5, 0.5]).unwrap();
        let x_prime = Tensor::new(vec![2], vec![0.6, 0.4]).unwrap();
        let d = layer_impacts(&net, &x, &x_prime).unwrap();
        assert!((d[0] - 0.1f64 * 2.0f64.sqrt()).abs() < 1e-12);
        assert!((d[1] - 0.13f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identity_attack_is_degenerate() {
        let net = image_net(3);
        let x = image(4);
        let report = net_amplification(&net, &x, 0, |_, x, _| Ok(x.clone())).unwrap();
        assert!(report.degenerate);
        assert_eq!(report.ratio, 0.0);
        assert!(report.impacts.iter().all(|&d| d == 0.0));
        // The certificate is a property of the network alone and must come
        // through unchanged even when the measurement degenerates.
        assert_eq!(report.beta_certified, certify(&net).unwrap().beta);
    }

    #[test]
    fn config_validation_rejects_bad_layer_pairs_and_qualities() {
        let net = image_net(5);
        let mut dcfg = DetectorConfig::for_depth(net.depth());
        assert!(dcfg.validate_for(&net).is_ok());
        dcfg.first_layer = 2;
        dcfg.last_layer = 2;
        assert!(dcfg.validate_for(&net).is_err());
        dcfg = DetectorConfig::for_depth(3);
        assert!(dcfg.validate_for(&net).is_err(), "last layer beyond depth");
        dcfg = DetectorConfig::for_depth(net.depth());
        dcfg.quality = QualityMode::Randomized { lo: 50, hi: 40 };
        assert!(dcfg.validate_for(&net).is_err());
        dcfg.quality = QualityMode::Fixed(0);
        assert!(dcfg.validate_for(&net).is_err());
    }

    #[test]
    fn flat_midgray_input_scores_zero_and_degenerate() {
        let net = image_net(6);
        let gray = Tensor::new(vec![8, 8], vec![128.0 / 255.0; 64]).unwrap();
        let dcfg = DetectorConfig::for_depth(net.depth());
        let (score, degenerate) = jad_score_flagged(&net, &gray, &dcfg).unwrap();
        assert_eq!(score, 0.0);
        assert!(degenerate);
    }

    #[test]
    fn scores_are_deterministic_and_fixed_equals_collapsed_range() {
        let net = image_net(7);
        let x = image(8);
        let mut dcfg = DetectorConfig::for_depth(net.depth());
        dcfg.quality = QualityMode::Randomized { lo: 30, hi: 80 };
        dcfg.seed = 11;
        let a = jad_score(&net, &x, &dcfg).unwrap();
        let b = jad_score(&net, &x, &dcfg).unwrap();
        assert_eq!(a, b);
        let mut fixed = dcfg.clone();
        fixed.quality = QualityMode::Fixed(64);
        let mut collapsed = dcfg.clone();
        collapsed.quality = QualityMode::Randomized { lo: 64, hi: 64 };
        assert_eq!(
            jad_score(&net, &x, &fixed).unwrap(),
            jad_score(&net, &x, &collapsed).unwrap()
        );
    }

    #[test]
    fn score_is_invariant_under_uniform_activation_scaling() {
        // Doubling layer-1 weights and every bias doubles all activations
        // exactly (leaky ReLU is positively homogeneous), so both impact
        // distances double and the ratio is unchanged bit-for-bit.
        let net = image_net(9);
        let x = image(10);
        let mut scaled_layers = Vec::new();
        for (idx, layer) in net.layers().iter().enumerate() {
            let mut w = layer.weight.clone();
            if idx == 0 {
                for v in w.data_mut() {
                    *v *= 2.0;
                }
            }
            let bias: Vec<f64> = layer.bias.iter().map(|b| b * 2.0).collect();
            scaled_layers.push(Layer::new(w, bias, layer.activation).unwrap());
        }
        let scaled = Network::new(scaled_layers).unwrap();
        let dcfg = DetectorConfig::for_depth(net.depth());
        assert_eq!(
            jad_score(&net, &x, &dcfg).unwrap(),
            jad_score(&scaled, &x, &dcfg).unwrap()
        );
    }

    #[test]
    fn threshold_matches_the_quantile_oracle() {
        let scores: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let tau = calibrate_threshold(&scores, 0.05).unwrap();
        assert_eq!(tau, 95.0);
        let above = scores.iter().filter(|&&s| s > tau).count();
        assert_eq!(above, 5);
    }

    #[test]
    fn threshold_on_equal_scores_flags_nothing() {
        let scores = vec![0.7; 9];
        let tau = calibrate_threshold(&scores, 0.1).unwrap();
        assert_eq!(tau, 0.7);
        assert_eq!(scores.iter().filter(|&&s| s > tau).count(), 0);
    }

    #[test]
    fn threshold_respects_the_target_rate_on_random_sets() {
        let mut rng = SplitMix64::new(12);
        for trial in 0..50 {
            let n = 1 + (rng.below(40) as usize);
            let scores: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 5.0)).collect();
            let fpr = rng.uniform(0.01, 0.99);
            let tau = calibrate_threshold(&scores, fpr).unwrap();
            let achieved = scores.iter().filter(|&&s| s > tau).count() as f64 / n as f64;
            assert!(achieved <= fpr + 1e-12, "trial {trial}: {achieved} > {fpr}");
        }
    }

    #[test]
    fn threshold_rejects_empty_and_out_of_range() {
        assert!(calibrate_threshold(&[], 0.05).is_err());
        assert!(calibrate_threshold(&[1.0], 0.0).is_err());
        assert!(calibrate_threshold(&[1.0], 1.0).is_err());
    }

    #[test]
    fn auroc_matches_hand_oracle() {
        let value = auroc(&[0.1, 0.4], &[0.3, 0.9]).unwrap();
        assert!((value - 0.75).abs() < 1e-15);
    }

    #[test]
    fn auroc_extremes() {
        assert_eq!(auroc(&[0.0, 0.1], &[0.5, 0.9]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.9], &[0.0, 0.1]).unwrap(), 0.0);
        let same = [0.2, 0.2, 0.7];
        assert!((auroc(&same, &same).unwrap() - 0.5).abs() < 1e-15);
    }

    /// O(n*m) pair count, the definition the rank version must reproduce.
    fn auroc_brute(neg: &[f64], pos: &[f64]) -> f64 {
        let mut total = 0.0;
        for &p in pos {
            for &q in neg {
                if p > q {
                    total += 1.0;
                } else if p == q {
                    total += 0.5;
                }
            }
        }
        total / (neg.len() * pos.len()) as f64
    }

    #[test]
    fn auroc_rank_form_equals_brute_force_with_ties() {
        let mut rng = SplitMix64::new(13);
        for trial in 0..200 {
            let n = 1 + (rng.below(50) as usize);
            let m = 1 + (rng.below(50) as usize);
            // Coarse grid forces ties.
            let neg: Vec<f64> = (0..n).map(|_| rng.below(8) as f64 / 4.0).collect();
            let pos: Vec<f64> = (0..m).map(|_| rng.below(8) as f64 / 4.0 + 0.25).collect();
            let fast = auroc(&neg, &pos).unwrap();
            let slow = auroc_brute(&neg, &pos);
            assert!((fast - slow).abs() < 1e-12, "trial {trial}: {fast} vs {slow}");
            let reversed = auroc(&pos, &neg).unwrap();
            assert!((fast + reversed - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn auroc_rejects_empty_sides() {
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[1.0], &[]).is_err());
    }

    #[test]
    fn prediction_change_is_quiet_on_midgray_and_deterministic() {
        let net = image_net(14);
        let gray = Tensor::new(vec![8, 8], vec![128.0 / 255.0; 64]).unwrap();
        assert!(!prediction_change_detector(&net, &gray, 75).unwrap());
        let x = image(15);
        let a = prediction_change_detector(&net, &x, 40).unwrap();
        let b = prediction_change_detector(&net, &x, 40).unwrap();
        assert_eq!(a, b);
    }
}
