//! Flat key=value run configuration.
//!
//! One `key = value` pair per line; `#` starts a comment (full-line or
//! trailing); blank lines are ignored.  Unknown keys are rejected and every
//! value is parsed and range-checked at load, before any compute starts.
//!
//! Documented keys and defaults:
//!
//! | key               | default     | meaning                                        |
//! |-------------------|-------------|------------------------------------------------|
//! | data.source       | synth       | `synth` or `idx`                               |
//! | data.paths        | (none)      | `images,labels` IDX file pair (idx only)       |
//! | data.n            | 256         | synthetic sample count                         |
//! | data.side         | 16          | synthetic image side length                    |
//! | model.dims        | 128,64,2    | per-layer output dims, input dim from the data |
//! | model.alpha       | 0.01        | LeakyReLU slope of the hidden layers           |
//! | train.mode        | amplified   | `default` or `amplified`                       |
//! | train.lambda      | mode-based  | penalty weight (0 default mode, 0.01 amplified)|
//! | train.lr          | 0.01        | Adam learning rate                             |
//! | train.epochs      | 20          | training epochs                                |
//! | train.batch       | 32          | minibatch size                                 |
//! | attack.kind       | pgd         | `fgsm`, `bim` or `pgd`                         |
//! | attack.norm       | linf        | `linf` or `l2`                                 |
//! | attack.eps        | 0.03137...  | budget; comma list sweeps `adaptive` (8/255)   |
//! | attack.step       | eps/4       | per-step size for the static attacks           |
//! | attack.steps      | 10          | iteration count (FGSM always uses one)         |
//! | adaptive.T        | 1           | EOT quality draws per step; comma list sweeps  |
//! | adaptive.lambda   | 0.5         | adaptive weight; comma list sweeps             |
//! | adaptive.q_lo     | 30          | EOT quality range, lower inclusive bound       |
//! | adaptive.q_hi     | 80          | EOT quality range, upper inclusive bound       |
//! | adaptive.mode     | eot         | `eot` or `classical`                           |
//! | detect.q          | 75          | fixed detector sanitization quality            |
//! | detect.q_lo       | 30          | randomized detector quality, lower bound       |
//! | detect.q_hi       | 80          | randomized detector quality, upper bound       |
//! | detect.randomize  | false       | draw the detector quality per scoring call     |
//! | detect.target_fpr | 0.05        | calibration false-positive target              |
//! | seed              | 0           | root seed for every derived stream             |
//! | out.dir           | (required)  | artifact directory, created if missing         |

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use jad_core::{AdaptiveMode, AttackConfig, AttackKind, Error, NormKind, Result, TrainMode};

/// Where the dataset comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// Deterministic synthetic two-class images.
    Synth,
    /// An IDX image/label file pair on disk.
    Idx { images: PathBuf, labels: PathBuf },
}

/// Fully parsed and range-checked run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub source: DataSource,
    pub data_n: usize,
    pub data_side: usize,
    /// Output dimension of every layer, in order; the input dimension
    /// comes from the data.
    pub model_dims: Vec<usize>,
    pub model_alpha: f64,
    pub train_mode: TrainMode,
    /// Resolved penalty weight: explicit value, else 0 for default mode
    /// and 0.01 for amplified mode.
    pub train_lambda: f64,
    pub train_lr: f64,
    pub train_epochs: usize,
    pub train_batch: usize,
    pub attack_kind: AttackKind,
    pub attack_norm: NormKind,
    /// One budget per sweep cell; single-valued for every command except
    /// `adaptive`.
    pub attack_eps: Vec<f64>,
    /// Explicit step size, or `None` for the eps/4 default.
    pub attack_step: Option<f64>,
    pub attack_steps: usize,
    pub adaptive_t: Vec<usize>,
    pub adaptive_lambda: Vec<f64>,
    pub adaptive_q_lo: u8,
    pub adaptive_q_hi: u8,
    pub adaptive_mode: AdaptiveMode,
    pub detect_q: u8,
    pub detect_q_lo: u8,
    pub detect_q_hi: u8,
    pub detect_randomize: bool,
    pub detect_target_fpr: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// Parse and validate the configuration file at `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    /// Parse and validate configuration text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Builder::default();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", idx + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || value.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: empty key or value in {raw:?}",
                    idx + 1
                )));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", idx + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.finish()
    }

    /// The single attack budget, for commands that do not sweep.
    pub fn scalar_eps(&self) -> Result<f64> {
        if self.attack_eps.len() != 1 {
            return Err(Error::Config(format!(
                "attack.eps must be a single value for this command, got {} values",
                self.attack_eps.len()
            )));
        }
        Ok(self.attack_eps[0])
    }

    /// Static attack configuration at the given budget, without a seed
    /// (callers derive per-sample seeds).
    pub fn attack_config(&self, eps: f64) -> AttackConfig {
        AttackConfig {
            kind: self.attack_kind,
            norm: self.attack_norm,
            eps,
            step: self.attack_step.unwrap_or(eps / 4.0),
            steps: self.attack_steps,
            rand_init: self.attack_kind == AttackKind::Pgd,
            seed: self.seed,
        }
    }
}

/// Raw options collected during parsing, resolved by `finish`.
#[derive(Default)]
struct Builder {
    source: Option<String>,
    paths: Option<(PathBuf, PathBuf)>,
    data_n: Option<usize>,
    data_side: Option<usize>,
    model_dims: Option<Vec<usize>>,
    model_alpha: Option<f64>,
    train_mode: Option<TrainMode>,
    train_lambda: Option<f64>,
    train_lr: Option<f64>,
    train_epochs: Option<usize>,
    train_batch: Option<usize>,
    attack_kind: Option<AttackKind>,
    attack_norm: Option<NormKind>,
    attack_eps: Option<Vec<f64>>,
    attack_step: Option<f64>,
    attack_steps: Option<usize>,
    adaptive_t: Option<Vec<usize>>,
    adaptive_lambda: Option<Vec<f64>>,
    adaptive_q_lo: Option<u8>,
    adaptive_q_hi: Option<u8>,
    adaptive_mode: Option<AdaptiveMode>,
    detect_q: Option<u8>,
    detect_q_lo: Option<u8>,
    detect_q_hi: Option<u8>,
    detect_randomize: Option<bool>,
    detect_target_fpr: Option<f64>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
}

impl Builder {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.source" => {
                if value != "synth" && value != "idx" {
                    return Err(bad(key, value, "synth or idx"));
                }
                self.source = Some(value.to_string());
            }
            "data.paths" => {
                let (images, labels) = value
                    .split_once(',')
                    .ok_or_else(|| bad(key, value, "two comma-separated paths"))?;
                let (images, labels) = (images.trim(), labels.trim());
                if images.is_empty() || labels.is_empty() {
                    return Err(bad(key, value, "two comma-separated paths"));
                }
                self.paths = Some((PathBuf::from(images), PathBuf::from(labels)));
            }
            "data.n" => self.data_n = Some(positive_usize(key, value)?),
            "data.side" => {
                let side = positive_usize(key, value)?;
                if side < 8 {
                    return Err(bad(key, value, "a side length of at least 8"));
                }
                self.data_side = Some(side);
            }
            "model.dims" => {
                let dims = value
                    .split(',')
                    .map(|p| positive_usize(key, p.trim()))
                    .collect::<Result<Vec<_>>>()?;
                self.model_dims = Some(dims);
            }
            "model.alpha" => {
                let a = finite_f64(key, value)?;
                if a <= 0.0 || a >= 1.0 {
                    return Err(bad(key, value, "a slope in (0, 1)"));
                }
                self.model_alpha = Some(a);
            }
            "train.mode" => {
                self.train_mode = Some(match value {
                    "default" => TrainMode::Default,
                    "amplified" => TrainMode::Amplified,
                    _ => return Err(bad(key, value, "default or amplified")),
                });
            }
            "train.lambda" => {
                let l = finite_f64(key, value)?;
                if l < 0.0 {
                    return Err(bad(key, value, "a non-negative weight"));
                }
                self.train_lambda = Some(l);
            }
            "train.lr" => {
                let lr = finite_f64(key, value)?;
                if lr <= 0.0 {
                    return Err(bad(key, value, "a positive learning rate"));
                }
                self.train_lr = Some(lr);
            }
            "train.epochs" => self.train_epochs = Some(positive_usize(key, value)?),
            "train.batch" => self.train_batch = Some(positive_usize(key, value)?),
            "attack.kind" => {
                self.attack_kind = Some(match value {
                    "fgsm" => AttackKind::Fgsm,
                    "bim" => AttackKind::Bim,
                    "pgd" => AttackKind::Pgd,
                    _ => return Err(bad(key, value, "fgsm, bim or pgd")),
                });
            }
            "attack.norm" => {
                self.attack_norm = Some(match value {
                    "linf" => NormKind::Linf,
                    "l2" => NormKind::L2,
                    _ => return Err(bad(key, value, "linf or l2")),
                });
            }
            "attack.eps" => {
                let eps = value
                    .split(',')
                    .map(|p| {
                        let e = finite_f64(key, p.trim())?;
                        if e <= 0.0 || e > 1.0 {
                            return Err(bad(key, p.trim(), "a budget in (0, 1]"));
                        }
                        Ok(e)
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.attack_eps = Some(eps);
            }
            "attack.step" => {
                let s = finite_f64(key, value)?;
                if s <= 0.0 {
                    return Err(bad(key, value, "a positive step size"));
                }
                self.attack_step = Some(s);
            }
            "attack.steps" => self.attack_steps = Some(positive_usize(key, value)?),
            "adaptive.T" => {
                let t = value
                    .split(',')
                    .map(|p| positive_usize(key, p.trim()))
                    .collect::<Result<Vec<_>>>()?;
                self.adaptive_t = Some(t);
            }
            "adaptive.lambda" => {
                let l = value
                    .split(',')
                    .map(|p| {
                        let l = finite_f64(key, p.trim())?;
                        if l < 0.0 {
                            return Err(bad(key, p.trim(), "a non-negative weight"));
                        }
                        Ok(l)
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.adaptive_lambda = Some(l);
            }
            "adaptive.q_lo" => self.adaptive_q_lo = Some(quality(key, value)?),
            "adaptive.q_hi" => self.adaptive_q_hi = Some(quality(key, value)?),
            "adaptive.mode" => {
                self.adaptive_mode = Some(match value {
                    "eot" => AdaptiveMode::Eot,
                    "classical" => AdaptiveMode::Classical,
                    _ => return Err(bad(key, value, "eot or classical")),
                });
            }
            "detect.q" => self.detect_q = Some(quality(key, value)?),
            "detect.q_lo" => self.detect_q_lo = Some(quality(key, value)?),
            "detect.q_hi" => self.detect_q_hi = Some(quality(key, value)?),
            "detect.randomize" => {
                self.detect_randomize = Some(match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(bad(key, value, "true or false")),
                });
            }
            "detect.target_fpr" => {
                let f = finite_f64(key, value)?;
                if f <= 0.0 || f >= 1.0 {
                    return Err(bad(key, value, "a rate in (0, 1)"));
                }
                self.detect_target_fpr = Some(f);
            }
            "seed" => {
                self.seed = Some(
                    value.parse::<u64>().map_err(|_| bad(key, value, "an unsigned integer"))?,
                );
            }
            "out.dir" => self.out_dir = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    fn finish(self) -> Result<RunConfig> {
        let source = match self.source.as_deref().unwrap_or("synth") {
            "idx" => {
                let (images, labels) = self.paths.ok_or_else(|| {
                    Error::Config("data.source = idx requires data.paths".into())
                })?;
                DataSource::Idx { images, labels }
            }
            _ => {
                if self.paths.is_some() {
                    return Err(Error::Config(
                        "data.paths only applies to data.source = idx".into(),
                    ));
                }
                DataSource::Synth
            }
        };
        let train_mode = self.train_mode.unwrap_or(TrainMode::Amplified);
        let train_lambda = self.train_lambda.unwrap_or(match train_mode {
            TrainMode::Default => 0.0,
            TrainMode::Amplified => 1e-2,
        });
        match train_mode {
            TrainMode::Default if train_lambda != 0.0 => {
                return Err(Error::Config(
                    "train.mode = default requires train.lambda = 0".into(),
                ));
            }
            TrainMode::Amplified if train_lambda <= 0.0 => {
                return Err(Error::Config(
                    "train.mode = amplified requires train.lambda > 0".into(),
                ));
            }
            _ => {}
        }
        let model_dims = self.model_dims.unwrap_or_else(|| vec![128, 64, 2]);
        if model_dims.len() < 2 {
            return Err(Error::Config(format!(
                "model.dims needs at least two layers, got {}",
                model_dims.len()
            )));
        }
        let adaptive_q_lo = self.adaptive_q_lo.unwrap_or(30);
        let adaptive_q_hi = self.adaptive_q_hi.unwrap_or(80);
        if adaptive_q_lo > adaptive_q_hi {
            return Err(Error::Config(format!(
                "adaptive.q_lo ({adaptive_q_lo}) must not exceed adaptive.q_hi ({adaptive_q_hi})"
            )));
        }
        let detect_q_lo = self.detect_q_lo.unwrap_or(30);
        let detect_q_hi = self.detect_q_hi.unwrap_or(80);
        if detect_q_lo > detect_q_hi {
            return Err(Error::Config(format!(
                "detect.q_lo ({detect_q_lo}) must not exceed detect.q_hi ({detect_q_hi})"
            )));
        }
        let out_dir = self
            .out_dir
            .ok_or_else(|| Error::Config("out.dir is required".into()))?;
        Ok(RunConfig {
            source,
            data_n: self.data_n.unwrap_or(256),
            data_side: self.data_side.unwrap_or(16),
            model_dims,
            model_alpha: self.model_alpha.unwrap_or(0.01),
            train_mode,
            train_lambda,
            train_lr: self.train_lr.unwrap_or(1e-2),
            train_epochs: self.train_epochs.unwrap_or(20),
            train_batch: self.train_batch.unwrap_or(32),
            attack_kind: self.attack_kind.unwrap_or(AttackKind::Pgd),
            attack_norm: self.attack_norm.unwrap_or(NormKind::Linf),
            attack_eps: self.attack_eps.unwrap_or_else(|| vec![8.0 / 255.0]),
            attack_step: self.attack_step,
            attack_steps: self.attack_steps.unwrap_or(10),
            adaptive_t: self.adaptive_t.unwrap_or_else(|| vec![1]),
            adaptive_lambda: self.adaptive_lambda.unwrap_or_else(|| vec![0.5]),
            adaptive_q_lo,
            adaptive_q_hi,
            adaptive_mode: self.adaptive_mode.unwrap_or(AdaptiveMode::Eot),
            detect_q: self.detect_q.unwrap_or(75),
            detect_q_lo,
            detect_q_hi,
            detect_randomize: self.detect_randomize.unwrap_or(false),
            detect_target_fpr: self.detect_target_fpr.unwrap_or(0.05),
            seed: self.seed.unwrap_or(0),
            out_dir,
        })
    }
}

fn bad(key: &str, value: &str, expected: &str) -> Error {
    Error::Config(format!("{key}: expected {expected}, got {value:?}"))
}

fn positive_usize(key: &str, value: &str) -> Result<usize> {
    match value.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(bad(key, value, "a positive integer")),
    }
}

fn finite_f64(key: &str, value: &str) -> Result<f64> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(bad(key, value, "a finite number")),
    }
}

fn quality(key: &str, value: &str) -> Result<u8> {
    match value.parse::<u8>() {
        Ok(v) if (1..=100).contains(&v) => Ok(v),
        _ => Err(bad(key, value, "a JPEG quality in 1..=100")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        "out.dir = runs/a\n"
    }

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let cfg = RunConfig::parse(minimal()).unwrap();
        assert_eq!(cfg.source, DataSource::Synth);
        assert_eq!(cfg.data_n, 256);
        assert_eq!(cfg.data_side, 16);
        assert_eq!(cfg.model_dims, vec![128, 64, 2]);
        assert_eq!(cfg.model_alpha, 0.01);
        assert_eq!(cfg.train_mode, TrainMode::Amplified);
        assert_eq!(cfg.train_lambda, 1e-2);
        assert_eq!(cfg.attack_kind, AttackKind::Pgd);
        assert_eq!(cfg.attack_eps, vec![8.0 / 255.0]);
        assert_eq!(cfg.adaptive_t, vec![1]);
        assert_eq!(cfg.adaptive_lambda, vec![0.5]);
        assert_eq!(cfg.detect_q, 75);
        assert!(!cfg.detect_randomize);
        assert_eq!(cfg.detect_target_fpr, 0.05);
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.out_dir, PathBuf::from("runs/a"));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse(
            "# full-line comment\n\nseed = 7 # trailing comment\nout.dir = x\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::parse("out.dir = x\ndata.count = 5\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("unknown key data.count"));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = RunConfig::parse("seed = 1\nseed = 2\nout.dir = x\n").unwrap_err();
        assert!(err.to_string().contains("duplicate key seed"));
    }

    #[test]
    fn missing_out_dir_is_rejected() {
        let err = RunConfig::parse("seed = 1\n").unwrap_err();
        assert!(err.to_string().contains("out.dir is required"));
    }

    #[test]
    fn line_without_equals_is_rejected() {
        let err = RunConfig::parse("seed 1\nout.dir = x\n").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn comma_lists_parse_for_sweep_keys() {
        let cfg = RunConfig::parse(
            "attack.eps = 0.01, 0.02,0.04\nadaptive.lambda = 0,0.5,1\nadaptive.T = 1,5,10\nout.dir = x\n",
        )
        .unwrap();
        assert_eq!(cfg.attack_eps, vec![0.01, 0.02, 0.04]);
        assert_eq!(cfg.adaptive_lambda, vec![0.0, 0.5, 1.0]);
        assert_eq!(cfg.adaptive_t, vec![1, 5, 10]);
        assert!(cfg.scalar_eps().is_err());
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        for text in [
            "data.n = 0\nout.dir = x\n",
            "data.side = 4\nout.dir = x\n",
            "model.alpha = 1.5\nout.dir = x\n",
            "model.dims = 8\nout.dir = x\n",
            "attack.eps = 0\nout.dir = x\n",
            "attack.eps = 1.5\nout.dir = x\n",
            "attack.steps = 0\nout.dir = x\n",
            "detect.q = 0\nout.dir = x\n",
            "detect.q = 101\nout.dir = x\n",
            "detect.target_fpr = 1\nout.dir = x\n",
            "train.lr = -0.1\nout.dir = x\n",
            "adaptive.q_lo = 90\nadaptive.q_hi = 30\nout.dir = x\n",
            "seed = -1\nout.dir = x\n",
            "attack.kind = cw\nout.dir = x\n",
            "detect.randomize = yes\nout.dir = x\n",
        ] {
            assert!(
                matches!(RunConfig::parse(text), Err(Error::Config(_))),
                "expected config error for {text:?}"
            );
        }
    }

    #[test]
    fn idx_source_requires_paths_and_synth_rejects_them() {
        let err = RunConfig::parse("data.source = idx\nout.dir = x\n").unwrap_err();
        assert!(err.to_string().contains("requires data.paths"));
        let err =
            RunConfig::parse("data.paths = a,b\nout.dir = x\n").unwrap_err();
        assert!(err.to_string().contains("only applies"));
        let cfg = RunConfig::parse(
            "data.source = idx\ndata.paths = imgs.idx3, lbls.idx1\nout.dir = x\n",
        )
        .unwrap();
        assert_eq!(
            cfg.source,
            DataSource::Idx {
                images: PathBuf::from("imgs.idx3"),
                labels: PathBuf::from("lbls.idx1")
            }
        );
    }

    #[test]
    fn lambda_default_tracks_the_training_mode() {
        let cfg = RunConfig::parse("train.mode = default\nout.dir = x\n").unwrap();
        assert_eq!(cfg.train_lambda, 0.0);
        let err = RunConfig::parse(
            "train.mode = default\ntrain.lambda = 0.1\nout.dir = x\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("requires train.lambda = 0"));
        let err = RunConfig::parse(
            "train.mode = amplified\ntrain.lambda = 0\nout.dir = x\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("requires train.lambda > 0"));
    }

    #[test]
    fn attack_config_fills_step_and_rand_init() {
        let cfg = RunConfig::parse("attack.kind = bim\nout.dir = x\n").unwrap();
        let a = cfg.attack_config(0.08);
        assert_eq!(a.step, 0.02);
        assert!(!a.rand_init);
        let cfg =
            RunConfig::parse("attack.step = 0.005\nout.dir = x\n").unwrap();
        let a = cfg.attack_config(0.08);
        assert_eq!(a.step, 0.005);
        assert!(a.rand_init);
    }
}
