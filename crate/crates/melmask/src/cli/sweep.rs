//! Ablation harness: short pre-training runs on a fixed synthetic corpus
//! plus a fixed single-cell linear probe, so CSV rows are comparable across
//! masking ratios or batch sizes.

use crate::audio::synth;
use crate::autodiff::Tensor;
use crate::config::RunConfig;
use crate::error::Result;
use crate::probe::{self, LabelData, ProbeConfig, ProbeModel, ProbeOptions, Split, Task, TaskKind};
use crate::trainer::{Repr, Trainer};
use crate::vit::flop_estimate;

/// Synthetic-corpus geometry shared by every sweep row.
pub const SWEEP_TRAIN_CLIPS: usize = 32;
pub const SWEEP_HELDOUT_CLIPS: usize = 16;
const CLIP_SECONDS: f64 = 6.0;

/// The fixed probe cell used for sweep rows.
pub fn sweep_probe_cell() -> ProbeConfig {
    ProbeConfig {
        standardize: true,
        model: ProbeModel::Linear,
        batch: 64,
        lr: 1e-3,
        dropout: 0.25,
        l2: 0.0,
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Mean loss over the trailing 10 steps (or all steps if fewer).
    pub loss: f64,
    /// Held-out accuracy of the fixed linear probe on the 4-class
    /// frequency task.
    pub probe_metric: f64,
    /// Median optimization-step wall time.
    pub step_wall_ms: f64,
    /// Encoder forward FLOPs per step (batch x two views x one encode).
    pub flops_per_step: u64,
    pub tokens_kept: usize,
}

/// Pre-train with the given configuration on the synthetic corpus, then fit
/// the fixed probe on frozen embeddings. Fully determined by the config
/// (including its seed), except for the wall-clock column.
pub fn run_point(cfg: &RunConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let seed = cfg.train.seed;
    let train_clips = synth::corpus(8, CLIP_SECONDS, seed);
    let mut trainer = Trainer::new(cfg.model_config()?, cfg.train_config())?;

    let mut losses = Vec::with_capacity(cfg.train.steps as usize);
    let mut walls = Vec::with_capacity(cfg.train.steps as usize);
    let mut kept = 0;
    for _ in 0..cfg.train.steps {
        let stats = trainer.pretrain_step(&train_clips)?;
        losses.push(f64::from(stats.loss));
        walls.push(stats.wall_ms);
        kept = stats.tokens_kept;
    }
    let tail = losses.len().min(10);
    let loss = losses[losses.len() - tail..].iter().sum::<f64>() / tail as f64;
    walls.sort_by(f64::total_cmp);
    let step_wall_ms = walls[walls.len() / 2];

    let probe_metric = probe_accuracy(&trainer, seed, cfg)?;
    let views = 2 * cfg.train.batch_size as u64;
    Ok(SweepOutcome {
        loss,
        probe_metric,
        step_wall_ms,
        flops_per_step: views * flop_estimate(&trainer.model_cfg, kept),
        tokens_kept: kept,
    })
}

/// Embed the labeled synthetic clips with the trained encoder and fit the
/// fixed probe cell: train/valid from one batch of clips, test from a
/// held-out batch of fresh clips. Returns held-out accuracy.
pub fn probe_accuracy(trainer: &Trainer, seed: u64, cfg: &RunConfig) -> Result<f64> {
    let repr = match cfg.model.patches.as_str() {
        "vertical" => Repr::Vertical,
        _ => Repr::Square,
    };
    let train = synth::labeled_corpus(SWEEP_TRAIN_CLIPS, CLIP_SECONDS, seed.wrapping_add(101));
    let heldout = synth::labeled_corpus(SWEEP_HELDOUT_CLIPS, CLIP_SECONDS, seed.wrapping_add(202));

    let dim = trainer.model_cfg.dim;
    let mut feats = Vec::with_capacity((train.len() + heldout.len()) * dim);
    let mut labels = Vec::with_capacity(train.len() + heldout.len());
    for (clip, class) in train.iter().chain(heldout.iter()) {
        feats.extend(trainer.embed_clip(clip, repr)?);
        labels.push(*class);
    }
    let n = labels.len();
    let n_train = (train.len() * 3) / 4;
    let task = Task::new(
        TaskKind::Multiclass,
        Tensor::matrix(n, dim, feats)?,
        LabelData::Classes(labels),
        (0..n_train).collect(),
        (n_train..train.len()).collect(),
        (train.len()..n).collect(),
    )?;
    let opts = ProbeOptions {
        max_epochs: cfg.probe.max_epochs,
        patience: cfg.probe.patience,
        seed: cfg.probe.seed,
    };
    let trained = probe::train_probe(&task, &sweep_probe_cell(), &opts)?;
    let metrics = trained.evaluate(&task, Split::Test)?;
    Ok(metrics["accuracy"])
}
