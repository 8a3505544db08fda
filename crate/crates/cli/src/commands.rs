//! The seven pipeline commands behind the `jad` binary.
//!
//! Every command loads its inputs from the run configuration, computes,
//! then writes fixed-name artifacts under `out.dir` and a short summary to
//! stdout.  All randomness flows from the `seed` key: training uses the
//! seed itself, the attack on sample `k` uses `seed ^ (0x41 << 32) ^ k`,
//! detector quality draws for sample `k` use `seed ^ (0x44 << 32) ^ k`,
//! and the held-out synthetic evaluation set is drawn from
//! `seed ^ (0x45 << 32)`.  Identical configurations therefore byte-identical
//! artifacts, regardless of `--threads`.

use std::fs;
use std::fmt::Write as _;
use std::path::PathBuf;

use rayon::prelude::*;

use jad_core::harness::{attacks_csv, corruption_csv, history_csv, spectral_csv};
use jad_core::rng::stream;
use jad_core::{
    attack_success, certify, classical_attack, eot_attack, load_idx, net_amplification,
    run_attack, run_experiment, synth_dataset, Activation, AdaptiveConfig, AdaptiveMode,
    AttackEntry, AttackKind, AttackRow, CorruptionKind, Dataset, DetectorConfig, Error,
    ExperimentOutcome, LayerSpec, Network, OptimizerKind, QualityMode, Result, TrainConfig,
};

use crate::config::{DataSource, RunConfig};

/// Train a network on the configured data; writes `checkpoint.jadn` and
/// `history.csv`.
pub fn train(cfg: &RunConfig) -> Result<()> {
    let data = train_data(cfg)?;
    let dims = &cfg.model_dims;
    let last = *dims.last().expect("validated non-empty");
    if last != data.classes {
        return Err(Error::Config(format!(
            "model.dims ends in {last} but the data has {} classes",
            data.classes
        )));
    }
    let specs: Vec<LayerSpec> = dims
        .iter()
        .enumerate()
        .map(|(i, &out_dim)| LayerSpec {
            out_dim,
            activation: if i + 1 == dims.len() {
                Activation::Identity
            } else {
                Activation::LeakyRelu { alpha: cfg.model_alpha }
            },
        })
        .collect();
    let net = Network::init(data.input_dim(), &specs, cfg.seed)?;
    let tcfg = TrainConfig {
        mode: cfg.train_mode,
        lambda: cfg.train_lambda,
        epochs: cfg.train_epochs,
        batch_size: cfg.train_batch,
        learning_rate: cfg.train_lr,
        optimizer: OptimizerKind::Adam,
        seed: cfg.seed,
    };
    let (trained, history) = jad_core::train(&net, &data, &tcfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let ckpt = checkpoint_path(cfg);
    jad_core::checkpoint::save(&trained, &ckpt)?;
    let hist_path = write_artifact(cfg, "history.csv", &history_csv(&history))?;
    let end = history.last().expect("at least one epoch");
    println!(
        "trained {}-layer network on {} samples for {} epochs",
        trained.depth(),
        data.len(),
        cfg.train_epochs
    );
    println!(
        "final loss {}, accuracy {}, min sigma_min {}",
        num(end.loss),
        num(end.accuracy),
        num(end.min_sigma_min)
    );
    println!("wrote {}", ckpt.display());
    println!("wrote {}", hist_path.display());
    Ok(())
}

/// Certify the trained checkpoint's spectral bound; writes `spectral.csv`
/// and prints the beta verdict.
pub fn certify_cmd(cfg: &RunConfig) -> Result<()> {
    let net = load_checkpoint(cfg)?;
    let report = certify(&net)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let path = write_artifact(cfg, "spectral.csv", &spectral_csv(&report))?;
    println!("certified beta {} over {} layers", num(report.beta), report.layers.len());
    println!(
        "verdict: {}",
        if report.amplifying { "amplifying" } else { "not amplifying" }
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// Attack every evaluation sample; writes `attacks.csv` and the crafted
/// inputs as `adversarial.f64` (flat little-endian f64, sample-major).
pub fn attack(cfg: &RunConfig) -> Result<()> {
    let net = load_checkpoint(cfg)?;
    let data = eval_data(cfg)?;
    let acfg = cfg.attack_config(cfg.scalar_eps()?);
    acfg.validate()?;
    let per_sample: Vec<(AttackRow, Vec<f64>)> = (0..data.len())
        .into_par_iter()
        .map(|k| {
            let x = &data.images[k];
            let mut c = acfg.clone();
            c.seed = cfg.seed ^ stream::ATTACK ^ k as u64;
            let x_adv = run_attack(&net, x, data.labels[k], &c)?;
            let row = AttackRow {
                sample: k,
                success: attack_success(&net, x, &x_adv)?,
                linf: x.linf_distance(&x_adv)?,
                l2: x.l2_distance(&x_adv)?,
                steps_used: if acfg.kind == AttackKind::Fgsm { 1 } else { acfg.steps },
            };
            Ok((row, x_adv.data().to_vec()))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(per_sample.len());
    let mut bytes = Vec::with_capacity(per_sample.len() * data.input_dim() * 8);
    for (row, values) in &per_sample {
        rows.push(row.clone());
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let csv_path = write_artifact(cfg, "attacks.csv", &attacks_csv(&rows))?;
    let bin_path = cfg.out_dir.join("adversarial.f64");
    fs::write(&bin_path, &bytes)?;
    let successes = rows.iter().filter(|r| r.success).count();
    println!(
        "attacked {} samples with {}_{}: {} successes",
        data.len(),
        acfg.kind.name(),
        acfg.norm.name(),
        successes
    );
    println!("wrote {}", csv_path.display());
    println!(
        "wrote {} ({} x {} little-endian f64)",
        bin_path.display(),
        data.len(),
        data.input_dim()
    );
    Ok(())
}

/// Measure per-sample amplification of the configured attack; writes
/// `amp.csv`.
pub fn amp(cfg: &RunConfig) -> Result<()> {
    let net = load_checkpoint(cfg)?;
    let data = eval_data(cfg)?;
    let acfg = cfg.attack_config(cfg.scalar_eps()?);
    acfg.validate()?;
    struct AmpRow {
        sample: usize,
        d_first: f64,
        d_last: f64,
        ratio: f64,
        degenerate: bool,
    }
    let rows: Vec<AmpRow> = (0..data.len())
        .into_par_iter()
        .map(|k| {
            let mut c = acfg.clone();
            c.seed = cfg.seed ^ stream::ATTACK ^ k as u64;
            let report = net_amplification(&net, &data.images[k], data.labels[k], |n, x, l| {
                run_attack(n, x, l, &c)
            })?;
            Ok(AmpRow {
                sample: k,
                d_first: report.impacts[0],
                d_last: *report.impacts.last().expect("traced layers"),
                ratio: report.ratio,
                degenerate: report.degenerate,
            })
        })
        .collect::<Result<_>>()?;
    let mut csv = String::from("sample,d_first,d_last,ratio,degenerate\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{}",
            r.sample,
            num(r.d_first),
            num(r.d_last),
            num(r.ratio),
            r.degenerate
        )
        .expect("writing to a String cannot fail");
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let path = write_artifact(cfg, "amp.csv", &csv)?;
    let sound: Vec<f64> =
        rows.iter().filter(|r| !r.degenerate).map(|r| r.ratio).collect();
    let amplifying = rows.iter().filter(|r| r.ratio > 1.0).count();
    println!(
        "measured {} samples: {} degenerate, {} amplifying",
        rows.len(),
        rows.len() - sound.len(),
        amplifying
    );
    if sound.is_empty() {
        println!("mean ratio n/a");
    } else {
        println!("mean ratio {}", num(sound.iter().sum::<f64>() / sound.len() as f64));
    }
    println!("certified beta {}", num(certify(&net)?.beta));
    println!("wrote {}", path.display());
    Ok(())
}

/// Calibrate the detector and evaluate it against the configured attack;
/// writes `results.csv` and `scores.csv`.
pub fn eval(cfg: &RunConfig) -> Result<()> {
    let net = load_checkpoint(cfg)?;
    let data = eval_data(cfg)?;
    let dcfg = detector_config(cfg, &net)?;
    let acfg = cfg.attack_config(cfg.scalar_eps()?);
    acfg.validate()?;
    let entries = [AttackEntry::standard(&acfg)];
    let outcome = run_experiment(&net, &data, &entries, &dcfg, cfg.detect_target_fpr, cfg.seed)?;
    fs::create_dir_all(&cfg.out_dir)?;
    outcome.write_csvs(&cfg.out_dir)?;
    print_reports(&outcome);
    println!("wrote {}", cfg.out_dir.join("results.csv").display());
    println!("wrote {}", cfg.out_dir.join("scores.csv").display());
    Ok(())
}

/// Sweep the adaptive attack over every configured epsilon, lambda and
/// trial-count combination; writes `adaptive_results.csv`.
pub fn adaptive(cfg: &RunConfig) -> Result<()> {
    let net = load_checkpoint(cfg)?;
    let data = eval_data(cfg)?;
    let dcfg = detector_config(cfg, &net)?;
    if cfg.adaptive_mode == AdaptiveMode::Classical && cfg.detect_randomize {
        return Err(Error::Config(
            "adaptive.mode = classical requires detect.randomize = false".into(),
        ));
    }
    // The classical objective has no quality draws, so its sweep collapses
    // the T axis; the CSV reports 0 draws for those rows.
    let trials: &[usize] =
        if cfg.adaptive_mode == AdaptiveMode::Classical { &[1] } else { &cfg.adaptive_t };
    let mode_name = match cfg.adaptive_mode {
        AdaptiveMode::Eot => "eot",
        AdaptiveMode::Classical => "classical",
    };
    let mut csv = String::from("mode,eps,lambda,trials,asr,auroc,grad_evals\n");
    let mut summaries = Vec::new();
    for &eps in &cfg.attack_eps {
        for &lambda in &cfg.adaptive_lambda {
            for &t in trials {
                let mut base = cfg.attack_config(eps);
                base.kind = AttackKind::Pgd;
                base.norm = jad_core::NormKind::Linf;
                base.step = eps / 10.0;
                base.rand_init = true;
                let cell = AdaptiveConfig {
                    mode: cfg.adaptive_mode,
                    base,
                    trials: t,
                    lambda,
                    quality_range: (cfg.adaptive_q_lo, cfg.adaptive_q_hi),
                };
                cell.validate()?;
                let entry_cfg = cell.clone();
                let entry_det = dcfg.clone();
                let entry = AttackEntry::new("adaptive", "linf", eps, move |n, x, l, seed| {
                    let mut c = entry_cfg.clone();
                    c.base.seed = seed;
                    let result = match c.mode {
                        AdaptiveMode::Eot => eot_attack(n, x, l, &c)?,
                        AdaptiveMode::Classical => classical_attack(n, x, l, &c, &entry_det)?,
                    };
                    Ok(result.adversarial)
                });
                let outcome = run_experiment(
                    &net,
                    &data,
                    std::slice::from_ref(&entry),
                    &dcfg,
                    cfg.detect_target_fpr,
                    cfg.seed,
                )?;
                let report = &outcome.reports[0];
                let (draws, evals) = match cfg.adaptive_mode {
                    AdaptiveMode::Classical => (0, cfg.attack_steps),
                    AdaptiveMode::Eot if lambda == 0.0 => (t, cfg.attack_steps),
                    AdaptiveMode::Eot => (t, cfg.attack_steps * (1 + t)),
                };
                let auroc_cell = report.auroc.map(num).unwrap_or_default();
                writeln!(
                    csv,
                    "{mode_name},{},{},{draws},{},{auroc_cell},{evals}",
                    num(eps),
                    num(lambda),
                    num(report.asr)
                )
                .expect("writing to a String cannot fail");
                summaries.push(format!(
                    "eps {} lambda {} trials {draws}: asr {} auroc {} grad_evals {evals}",
                    num(eps),
                    num(lambda),
                    num(report.asr),
                    report.auroc.map(num).unwrap_or_else(|| "n/a".into()),
                ));
            }
        }
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let path = write_artifact(cfg, "adaptive_results.csv", &csv)?;
    println!("{mode_name} sweep over {} cells", summaries.len());
    for line in summaries {
        println!("{line}");
    }
    println!("wrote {}", path.display());
    Ok(())
}

/// Compare the reference attack's amplification signature against benign
/// corruptions; writes `corruptions.csv`.
pub fn corrupt_study(cfg: &RunConfig) -> Result<()> {
    let net = load_checkpoint(cfg)?;
    let data = eval_data(cfg)?;
    let eps = cfg.scalar_eps()?;
    let acfg = cfg.attack_config(eps);
    acfg.validate()?;
    // The Gaussian l2 budget matches the l2 norm of a saturated l-inf
    // perturbation, eps * sqrt(dim); the remaining magnitudes are fixed
    // desk-scale defaults.
    let kinds = [
        CorruptionKind::UniformLinf { eps },
        CorruptionKind::GaussianL2 { rho: eps * (data.input_dim() as f64).sqrt() },
        CorruptionKind::SaltPepper { p: 0.05 },
        CorruptionKind::GaussianBlur { sigma: 1.0 },
        CorruptionKind::Jpeg { quality: cfg.detect_q },
        CorruptionKind::Laplacian { scale: eps },
    ];
    let rows = jad_core::corruption_study(&net, &data, &kinds, &acfg, cfg.seed)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let path = write_artifact(cfg, "corruptions.csv", &corruption_csv(&rows))?;
    for r in &rows {
        println!(
            "{} parameter {}: n {} frac_amplifying {} mean_ratio {}",
            r.source,
            num(r.parameter),
            r.n,
            num(r.frac_amplifying),
            num(r.mean_ratio)
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

/// Dataset used for training: the root seed drives synthesis.
fn train_data(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.source {
        DataSource::Synth => synth_dataset(cfg.data_n, cfg.data_side, cfg.seed),
        DataSource::Idx { images, labels } => load_idx(images, labels),
    }
}

/// Dataset used by every measurement command: synthetic data comes from a
/// held-out stream so it never overlaps the training draw; IDX users point
/// `data.paths` at their test split.
fn eval_data(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.source {
        DataSource::Synth => synth_dataset(cfg.data_n, cfg.data_side, cfg.seed ^ stream::EVAL),
        DataSource::Idx { images, labels } => load_idx(images, labels),
    }
}

/// Detector settings derived from the `detect.*` keys, ranging over the
/// full layer stack.
fn detector_config(cfg: &RunConfig, net: &Network) -> Result<DetectorConfig> {
    let quality = if cfg.detect_randomize {
        QualityMode::Randomized { lo: cfg.detect_q_lo, hi: cfg.detect_q_hi }
    } else {
        QualityMode::Fixed(cfg.detect_q)
    };
    let dcfg = DetectorConfig { quality, ..DetectorConfig::for_depth(net.depth()) }
        .with_seed(cfg.seed);
    dcfg.validate_for(net)?;
    Ok(dcfg)
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("checkpoint.jadn")
}

/// Load the checkpoint written by `train`, with a pointed message when it
/// is missing.
fn load_checkpoint(cfg: &RunConfig) -> Result<Network> {
    let path = checkpoint_path(cfg);
    if !path.exists() {
        return Err(Error::Config(format!(
            "no checkpoint at {}; run the train command first",
            path.display()
        )));
    }
    jad_core::checkpoint::load(&path)
}

fn write_artifact(cfg: &RunConfig, name: &str, text: &str) -> Result<PathBuf> {
    let path = cfg.out_dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

fn print_reports(outcome: &ExperimentOutcome) {
    println!("calibrated tau {}", num(outcome.tau));
    for r in &outcome.reports {
        println!(
            "{}: n_adv {} asr {} auroc {} tpr {} fpr {}",
            r.attack,
            r.n_adv,
            num(r.asr),
            r.auroc.map(num).unwrap_or_else(|| "n/a".into()),
            r.tpr_at_tau.map(num).unwrap_or_else(|| "n/a".into()),
            num(r.fpr_at_tau)
        );
    }
}

/// Shortest round-trip decimal rendering, shared by every report.
fn num(v: f64) -> String {
    format!("{v}")
}
