//! Detector-aware attacks.
//!
//! Two adaptive strategies against a sanitization-based detector: averaging
//! gradients over random sanitization qualities (expectation over
//! transformations), and directly penalizing the detector's amplification
//! ratio in the attack objective.  Both run signed-step ascent inside an
//! l-inf ball, sharing the projection helpers with plain PGD so that the
//! degenerate settings reduce to PGD bit-for-bit.

use crate::attack::{linf_random_init, linf_step_project, AttackConfig, NormKind};
use crate::detect::{DetectorConfig, QualityMode};
use crate::error::{Error, Result};
use crate::grad::{input_gradient, Objective};
use crate::jpeg::SteJpeg;
use crate::net::Network;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Adaptive strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptiveMode {
    /// Expectation over transformations: average straight-through gradients
    /// over qualities drawn from the configured range.
    Eot,
    /// Composite objective: cross-entropy minus `lambda` times the
    /// detector's amplification ratio at a fixed crafting quality.
    Classical,
}

/// Configuration shared by both adaptive strategies.
#[derive(Debug, Clone)]
pub struct AdaptiveConfig {
    pub mode: AdaptiveMode,
    /// Budget, step schedule, iteration count and seed; the norm must be
    /// l-inf.
    pub base: AttackConfig,
    /// Quality samples per step (EOT only).
    pub trials: usize,
    /// Robust-gradient weight (EOT, in `[0, 1]`) or ratio penalty weight
    /// (classical, any non-negative value).
    pub lambda: f64,
    /// Inclusive quality range the EOT variant draws from.
    pub quality_range: (u8, u8),
}

impl AdaptiveConfig {
    /// Check ranges, the norm restriction and the mode contract.
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.base.norm != NormKind::Linf {
            return Err(Error::Parameter("adaptive attacks run under the l-inf budget".into()));
        }
        let (lo, hi) = self.quality_range;
        if lo == 0 || hi > 100 || lo > hi {
            return Err(Error::Parameter(format!(
                "quality range must satisfy 1 <= lo <= hi <= 100, got [{lo}, {hi}]"
            )));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Parameter(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if self.mode == AdaptiveMode::Eot {
            if self.lambda > 1.0 {
                return Err(Error::Parameter(format!(
                    "EOT lambda must lie in [0, 1], got {}",
                    self.lambda
                )));
            }
            if self.trials == 0 {
                return Err(Error::Parameter("EOT needs at least one quality sample".into()));
            }
        }
        Ok(())
    }
}

/// Adversarial input plus the exact number of backward passes spent.
#[derive(Debug, Clone)]
pub struct AdaptiveResult {
    pub adversarial: Tensor,
    pub gradient_evals: usize,
}

/// Expectation-over-transformations ascent: each step combines the plain
/// cross-entropy gradient with the mean straight-through gradient over
/// `trials` random qualities, weighted by `lambda`.  With `lambda = 0` the
/// quality draws are skipped and the trajectory equals randomly started PGD
/// bit-for-bit.
pub fn eot_attack(net: &Network, x: &Tensor, label: usize, cfg: &AdaptiveConfig) -> Result<AdaptiveResult> {
    cfg.validate()?;
    let (lo, hi) = cfg.quality_range;
    let mut rng = SplitMix64::new(cfg.base.seed);
    let mut x_adv = linf_random_init(x, cfg.base.eps, &mut rng);
    let mut evals = 0usize;
    for _ in 0..cfg.base.steps {
        let mut total = input_gradient(net, &x_adv, label, &Objective::CrossEntropy)?;
        evals += 1;
        if cfg.lambda > 0.0 {
            let mut robust = Tensor::zeros(x.shape().to_vec());
            for _ in 0..cfg.trials {
                let q = rng.int_in(lo as u64, hi as u64) as u8;
                let ste = SteJpeg::new(q)?;
                let g = input_gradient(
                    net,
                    &x_adv,
                    label,
                    &Objective::SanitizedCrossEntropy { transform: &ste },
                )?;
                evals += 1;
                robust = robust.add(&g)?;
            }
            robust = robust.scale(cfg.lambda / cfg.trials as f64);
            total = total.add(&robust)?;
        }
        x_adv = linf_step_project(&x_adv, &total, x, cfg.base.step, cfg.base.eps);
    }
    Ok(AdaptiveResult { adversarial: x_adv, gradient_evals: evals })
}

/// Composite-objective ascent on cross-entropy minus `lambda` times the
/// detector's impact ratio, differentiated through the straight-through
/// JPEG at the detector's quality (which must be fixed: an attacker needs
/// a stable surrogate).  With `lambda = 0` the trajectory equals PGD with
/// the same start bit-for-bit.
pub fn classical_attack(
    net: &Network,
    x: &Tensor,
    label: usize,
    cfg: &AdaptiveConfig,
    det: &DetectorConfig,
) -> Result<AdaptiveResult> {
    cfg.validate()?;
    det.validate_for(net)?;
    let quality = match det.quality {
        QualityMode::Fixed(q) => q,
        QualityMode::Randomized { .. } => {
            return Err(Error::Parameter(
                "the composite objective needs a fixed sanitization quality".into(),
            ))
        }
    };
    let ste = SteJpeg::new(quality)?;
    let obj = Objective::Composite {
        lambda: cfg.lambda,
        transform: &ste,
        first_layer: det.first_layer,
        last_layer: det.last_layer,
    };
    let mut rng = SplitMix64::new(cfg.base.seed);
    let mut x_adv = if cfg.base.rand_init {
        linf_random_init(x, cfg.base.eps, &mut rng)
    } else {
        x.clone()
    };
    let mut evals = 0usize;
    for _ in 0..cfg.base.steps {
        let grad = input_gradient(net, &x_adv, label, &obj)?;
        evals += 1;
        x_adv = linf_step_project(&x_adv, &grad, x, cfg.base.step, cfg.base.eps);
    }
    Ok(AdaptiveResult { adversarial: x_adv, gradient_evals: evals })
}
