//! Evaluation harness and CSV artifacts.
//!
//! Crafts attacks over a dataset, scores clean and adversarial sides with
//! the detector, aggregates AUROC / attack-success / amplification
//! statistics, runs the matched-magnitude corruption study, and renders
//! every report as CSV.  Per-sample randomness is derived from the
//! experiment seed by XOR-ing a purpose tag and the sample index, so runs
//! are bit-reproducible no matter how work is scheduled.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::attack::{attack_success, run_attack, AttackConfig};
use crate::corrupt::{corrupt, CorruptionKind, CorruptionSpec};
use crate::dataset::Dataset;
use crate::detect::{auroc, calibrate_threshold, jad_score_flagged, layer_impacts, DetectorConfig};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::rng::stream;
use crate::spectral::SpectralReport;
use crate::tensor::Tensor;
use crate::train::EpochStats;

/// Closure that crafts an adversarial example from a per-sample seed.
pub type CraftFn = Box<dyn Fn(&Network, &Tensor, usize, u64) -> Result<Tensor> + Send + Sync>;

/// One attack under evaluation: a report name, budget metadata and the
/// crafting closure.
pub struct AttackEntry {
    pub name: String,
    pub norm: String,
    pub eps: f64,
    craft: CraftFn,
}

impl AttackEntry {
    /// Entry from an arbitrary crafting closure.
    pub fn new(
        name: impl Into<String>,
        norm: impl Into<String>,
        eps: f64,
        craft: impl Fn(&Network, &Tensor, usize, u64) -> Result<Tensor> + Send + Sync + 'static,
    ) -> Self {
        AttackEntry { name: name.into(), norm: norm.into(), eps, craft: Box::new(craft) }
    }

    /// Entry for a static attack; the per-sample seed replaces the config's.
    pub fn standard(cfg: &AttackConfig) -> Self {
        let name = format!("{}_{}", cfg.kind.name(), cfg.norm.name());
        let template = cfg.clone();
        Self::new(name, cfg.norm.name(), cfg.eps, move |net, x, label, seed| {
            let mut c = template.clone();
            c.seed = seed;
            run_attack(net, x, label, &c)
        })
    }

    /// Craft one adversarial example.
    pub fn craft(&self, net: &Network, x: &Tensor, label: usize, seed: u64) -> Result<Tensor> {
        (self.craft)(net, x, label, seed)
    }
}

/// Aggregate detector metrics for one attack.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub attack: String,
    pub norm: String,
    pub eps: f64,
    /// Clean evaluation samples scored.
    pub n_clean: usize,
    /// Successful adversarial examples scored.
    pub n_adv: usize,
    /// Fraction of evaluation samples whose prediction the attack flipped.
    pub asr: f64,
    /// Absent when no attack succeeded.
    pub auroc: Option<f64>,
    /// Fraction of successful adversarials whose end-to-end impact ratio
    /// against the clean input exceeds 1.
    pub amp_success_rate: Option<f64>,
    /// Mean detector score of the clean side.
    pub mean_amp_clean: f64,
    /// Mean detector score of the successful adversarials.
    pub mean_amp_adv: Option<f64>,
    /// Clean scores above the calibrated threshold.
    pub fpr_at_tau: f64,
    /// Adversarial scores above the calibrated threshold.
    pub tpr_at_tau: Option<f64>,
}

/// One detector score in the per-sample log.
#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub sample_id: usize,
    /// "clean" or "adv".
    pub label: &'static str,
    /// Attack name, or "none" for the clean side.
    pub attack: String,
    pub jad_score: f64,
    pub degenerate: bool,
}

/// Everything one experiment produced: the calibrated threshold, one report
/// per attack, and the per-sample score log.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub tau: f64,
    pub reports: Vec<EvalReport>,
    pub scores: Vec<ScoreRow>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn frac_above(values: &[f64], tau: f64) -> f64 {
    values.iter().filter(|&&v| v > tau).count() as f64 / values.len() as f64
}

/// End-to-end impact ratio between two inputs, 0 when the first-layer
/// impact vanishes.
fn end_to_end_ratio(net: &Network, x: &Tensor, x_prime: &Tensor) -> Result<f64> {
    let d = layer_impacts(net, x, x_prime)?;
    Ok(if d[0] > 0.0 { d[d.len() - 1] / d[0] } else { 0.0 })
}

struct AdvOutcome {
    sample_id: usize,
    success: bool,
    score: f64,
    degenerate: bool,
    amp_ratio: f64,
}

/// Evaluate every attack against the detector.
///
/// Even-indexed samples calibrate the threshold at `target_fpr`; odd-indexed
/// samples are the evaluation set.  Per sample `k`, attacks are seeded with
/// `seed ^ ATTACK_TAG ^ k` and quality draws with `seed ^ DETECT_TAG ^ k`.
/// Only adversarials that flip the prediction are scored, per the
/// evaluation protocol; an attack with no successes gets a report row with
/// its detector statistics absent.
pub fn run_experiment(
    net: &Network,
    data: &Dataset,
    attacks: &[AttackEntry],
    dcfg: &DetectorConfig,
    target_fpr: f64,
    seed: u64,
) -> Result<ExperimentOutcome> {
    dcfg.validate_for(net)?;
    if data.len() < 2 {
        return Err(Error::Parameter(
            "experiments need at least two samples (calibration and evaluation split)".into(),
        ));
    }
    let calibration: Vec<usize> = (0..data.len()).step_by(2).collect();
    let evaluation: Vec<usize> = (1..data.len()).step_by(2).collect();

    let clean_score = |k: usize| -> Result<(f64, bool)> {
        let cfg = dcfg.clone().with_seed(seed ^ stream::DETECT ^ k as u64);
        jad_score_flagged(net, &data.images[k], &cfg)
    };

    let calibration_scores: Vec<f64> = calibration
        .par_iter()
        .map(|&k| clean_score(k).map(|(s, _)| s))
        .collect::<Result<_>>()?;
    let tau = calibrate_threshold(&calibration_scores, target_fpr)?;

    let clean_flagged: Vec<(f64, bool)> =
        evaluation.par_iter().map(|&k| clean_score(k)).collect::<Result<_>>()?;
    let neg: Vec<f64> = clean_flagged.iter().map(|&(s, _)| s).collect();
    let mean_amp_clean = mean(&neg);
    let fpr_at_tau = frac_above(&neg, tau);

    let mut scores: Vec<ScoreRow> = evaluation
        .iter()
        .zip(&clean_flagged)
        .map(|(&k, &(score, degenerate))| ScoreRow {
            sample_id: k,
            label: "clean",
            attack: "none".into(),
            jad_score: score,
            degenerate,
        })
        .collect();

    let mut reports = Vec::with_capacity(attacks.len());
    for entry in attacks {
        let outcomes: Vec<AdvOutcome> = evaluation
            .par_iter()
            .map(|&k| -> Result<AdvOutcome> {
                let x = &data.images[k];
                let x_adv = entry.craft(net, x, data.labels[k], seed ^ stream::ATTACK ^ k as u64)?;
                if !attack_success(net, x, &x_adv)? {
                    return Ok(AdvOutcome {
                        sample_id: k,
                        success: false,
                        score: 0.0,
                        degenerate: false,
                        amp_ratio: 0.0,
                    });
                }
                let cfg = dcfg.clone().with_seed(seed ^ stream::DETECT ^ k as u64);
                let (score, degenerate) = jad_score_flagged(net, &x_adv, &cfg)?;
                let amp_ratio = end_to_end_ratio(net, x, &x_adv)?;
                Ok(AdvOutcome { sample_id: k, success: true, score, degenerate, amp_ratio })
            })
            .collect::<Result<_>>()?;

        let successes: Vec<&AdvOutcome> = outcomes.iter().filter(|o| o.success).collect();
        let n_adv = successes.len();
        let asr = n_adv as f64 / evaluation.len() as f64;
        let pos: Vec<f64> = successes.iter().map(|o| o.score).collect();
        let (auroc_value, amp_success_rate, mean_amp_adv, tpr_at_tau) = if n_adv > 0 {
            (
                Some(auroc(&neg, &pos)?),
                Some(successes.iter().filter(|o| o.amp_ratio > 1.0).count() as f64 / n_adv as f64),
                Some(mean(&pos)),
                Some(frac_above(&pos, tau)),
            )
        } else {
            (None, None, None, None)
        };
        for o in &successes {
            scores.push(ScoreRow {
                sample_id: o.sample_id,
                label: "adv",
                attack: entry.name.clone(),
                jad_score: o.score,
                degenerate: o.degenerate,
            });
        }
        reports.push(EvalReport {
            attack: entry.name.clone(),
            norm: entry.norm.clone(),
            eps: entry.eps,
            n_clean: evaluation.len(),
            n_adv,
            asr,
            auroc: auroc_value,
            amp_success_rate,
            mean_amp_clean,
            mean_amp_adv,
            fpr_at_tau,
            tpr_at_tau,
        });
    }
    Ok(ExperimentOutcome { tau, reports, scores })
}

/// Shortest round-trip decimal form, stable across runs.
fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl ExperimentOutcome {
    /// Render the per-attack report table.
    pub fn results_csv(&self) -> String {
        let mut out = String::from(
            "attack,norm,eps,n_clean,n_adv,asr,auroc,amp_success_rate,mean_amp_clean,mean_amp_adv,fpr_at_tau,tpr_at_tau\n",
        );
        for r in &self.reports {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.attack,
                r.norm,
                num(r.eps),
                r.n_clean,
                r.n_adv,
                num(r.asr),
                opt_num(r.auroc),
                opt_num(r.amp_success_rate),
                num(r.mean_amp_clean),
                opt_num(r.mean_amp_adv),
                num(r.fpr_at_tau),
                opt_num(r.tpr_at_tau),
            )
            .expect("writing to a String cannot fail");
        }
        out
    }

    /// Render the per-sample score log.
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("sample_id,label,attack,jad_score,degenerate\n");
        for s in &self.scores {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.sample_id,
                s.label,
                s.attack,
                num(s.jad_score),
                s.degenerate
            )
            .expect("writing to a String cannot fail");
        }
        out
    }

    /// Write `results.csv` and `scores.csv` under `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("results.csv"), self.results_csv())?;
        fs::write(dir.join("scores.csv"), self.scores_csv())?;
        Ok(())
    }
}

/// One row of the corruption study: how often a perturbation source
/// amplified end to end, and the mean ratio.
#[derive(Debug, Clone)]
pub struct CorruptionRow {
    pub source: String,
    /// The source's magnitude (budget, probability, std dev or quality).
    pub parameter: f64,
    /// Samples behind the statistics (successes only for the attack row).
    pub n: usize,
    pub frac_amplifying: f64,
    pub mean_ratio: f64,
}

/// Compare the reference attack's amplification signature against
/// non-adversarial corruptions on the same samples.  The attack row keeps
/// only prediction-flipping outputs; corruption rows use every sample.
pub fn corruption_study(
    net: &Network,
    data: &Dataset,
    kinds: &[CorruptionKind],
    reference: &AttackConfig,
    seed: u64,
) -> Result<Vec<CorruptionRow>> {
    reference.validate()?;
    if data.is_empty() {
        return Err(Error::Parameter("corruption study needs samples".into()));
    }
    let mut rows = Vec::with_capacity(kinds.len() + 1);

    let attack_ratios: Vec<Option<f64>> = (0..data.len())
        .into_par_iter()
        .map(|k| -> Result<Option<f64>> {
            let x = &data.images[k];
            let mut cfg = reference.clone();
            cfg.seed = seed ^ stream::ATTACK ^ k as u64;
            let x_adv = run_attack(net, x, data.labels[k], &cfg)?;
            if attack_success(net, x, &x_adv)? {
                Ok(Some(end_to_end_ratio(net, x, &x_adv)?))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = attack_ratios.into_iter().flatten().collect();
    rows.push(CorruptionRow {
        source: format!("{}_{}", reference.kind.name(), reference.norm.name()),
        parameter: reference.eps,
        n: kept.len(),
        frac_amplifying: if kept.is_empty() { 0.0 } else { frac_above(&kept, 1.0) },
        mean_ratio: if kept.is_empty() { 0.0 } else { mean(&kept) },
    });

    for kind in kinds {
        let ratios: Vec<f64> = (0..data.len())
            .into_par_iter()
            .map(|k| -> Result<f64> {
                let x = &data.images[k];
                let spec = CorruptionSpec { kind: *kind, seed: seed ^ stream::ATTACK ^ k as u64 };
                let x_noisy = corrupt(x, &spec)?;
                end_to_end_ratio(net, x, &x_noisy)
            })
            .collect::<Result<_>>()?;
        rows.push(CorruptionRow {
            source: kind.name().to_string(),
            parameter: kind.parameter(),
            n: ratios.len(),
            frac_amplifying: frac_above(&ratios, 1.0),
            mean_ratio: mean(&ratios),
        });
    }
    Ok(rows)
}

/// Render the corruption-study table.
pub fn corruption_csv(rows: &[CorruptionRow]) -> String {
    let mut out = String::from("source,parameter,n,frac_amplifying,mean_ratio\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.source,
            num(r.parameter),
            r.n,
            num(r.frac_amplifying),
            num(r.mean_ratio)
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Render the per-epoch training log.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loss,accuracy,min_sigma_min\n");
    for h in history {
        writeln!(out, "{},{},{},{}", h.epoch, num(h.loss), num(h.accuracy), num(h.min_sigma_min))
            .expect("writing to a String cannot fail");
    }
    out
}

/// Render the per-layer spectral report.
pub fn spectral_csv(report: &SpectralReport) -> String {
    let mut out = String::from("layer,sigma_min,sigma_max,L_f,cum_beta\n");
    for l in &report.layers {
        writeln!(
            out,
            "{},{},{},{},{}",
            l.layer,
            num(l.sigma_min),
            num(l.sigma_max),
            num(l.expansion),
            num(l.cum_beta)
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// One row of the per-sample attack log.
#[derive(Debug, Clone)]
pub struct AttackRow {
    pub sample: usize,
    pub success: bool,
    pub linf: f64,
    pub l2: f64,
    pub steps_used: usize,
}

/// Render the per-sample attack log.
pub fn attacks_csv(rows: &[AttackRow]) -> String {
    let mut out = String::from("sample,success,linf,l2,steps_used\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.sample, r.success, num(r.linf), num(r.l2), r.steps_used)
            .expect("writing to a String cannot fail");
    }
    out
}
