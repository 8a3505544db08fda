//! Noise-amplification toolkit: how adversarial perturbations grow through
//! a network, and how to exploit that for detection.
//!
//! The crate makes one result executable end to end.  If every activation
//! expands distances by at least `L_f` and every weight matrix by at least
//! its smallest singular value, a perturbation that reaches the first layer
//! with impact `d_1` leaves the last layer with impact
//! `d_n >= beta * d_1`, where `beta` is the product of the per-layer
//! factors.  Training can push `beta` up with a spectral barrier, a JPEG
//! round trip supplies a reference point that leaves clean inputs nearly
//! unchanged, and the ratio `d_n / d_1` between an input and its sanitized
//! version then separates adversarial inputs from clean ones.
//!
//! The pieces, bottom up:
//!
//! - [`tensor`], [`matrix`]: dense float64 containers.
//! - [`rng`]: seeded generator and the per-purpose stream tags.
//! - [`net`], [`grad`]: small multilayer perceptrons with traced forwards
//!   and reverse-mode gradients for every objective used here.
//! - [`svd`], [`spectral`]: one-sided Jacobi SVD, the log-barrier penalty,
//!   the certifier and the per-pair bound check.
//! - [`jpeg`], [`corrupt`]: from-scratch lossy JPEG round trip, its
//!   straight-through variant, and the non-adversarial corruption suite.
//! - [`dataset`], [`train`], [`checkpoint`]: IDX loading, the synthetic
//!   task, SGD/Adam training with the optional barrier, serialization.
//! - [`attack`], [`adaptive`]: FGSM/BIM/PGD plus the two detector-aware
//!   attacks.
//! - [`detect`], [`harness`]: layer impacts, the detector score, AUROC,
//!   threshold calibration, experiments and CSV artifacts.

pub mod adaptive;
pub mod attack;
pub mod checkpoint;
pub mod corrupt;
pub mod dataset;
pub mod detect;
pub mod error;
pub mod grad;
pub mod harness;
pub mod jpeg;
pub mod matrix;
pub mod net;
pub mod rng;
pub mod spectral;
pub mod svd;
pub mod tensor;
pub mod train;

pub use adaptive::{classical_attack, eot_attack, AdaptiveConfig, AdaptiveMode, AdaptiveResult};
pub use attack::{attack_success, fgsm, run_attack, AttackConfig, AttackKind, NormKind};
pub use corrupt::{corrupt, CorruptionKind, CorruptionSpec};
pub use dataset::{load_idx, synth_dataset, Dataset};
pub use detect::{
    auroc, calibrate_threshold, jad_score, jad_score_flagged, layer_impacts, net_amplification,
    prediction_change_detector, AmplificationReport, DetectorConfig, QualityMode,
};
pub use error::{Error, Result};
pub use grad::{
    cross_entropy, input_gradient, objective_value, param_gradients, DifferentiableTransform,
    GradientBundle, Objective,
};
pub use harness::{
    corruption_study, run_experiment, AttackEntry, AttackRow, CorruptionRow, EvalReport,
    ExperimentOutcome, ScoreRow,
};
pub use jpeg::{jpeg_roundtrip, quality_tables, QuantTables, SteJpeg};
pub use matrix::Matrix;
pub use net::{softmax, Activation, Layer, LayerSpec, Network};
pub use rng::SplitMix64;
pub use spectral::{beta_product, certify, spectral_penalty, verify_bound, BoundCheck, SpectralReport};
pub use svd::{svd, Svd};
pub use tensor::Tensor;
pub use train::{evaluate_accuracy, train, OptimizerKind, TrainConfig, TrainMode};
