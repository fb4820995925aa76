//! Pre-training loop: paired segments, masked views, shared encoder and
//! projector, contrastive (or reconstruction) objective, Adam updates.
//!
//! Randomness is derived per step from the run seed, so a run is a pure
//! function of (seed, config, data) and resuming from a checkpoint replays
//! the exact step sequence an uninterrupted run would have produced.

pub mod adam;
pub mod checkpoint;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{
    mel_spectrogram, resample, select_segments, standardize, AudioClip, MelSpectrogram, Segment,
    SAMPLE_RATE, SEGMENT_SAMPLES,
};
use crate::autodiff::{Graph, ParamStore, Var};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::masking::{patchify, sample_mask, PatchConfig, TokenSet};
use crate::objectives::{hybrid_loss, info_nce, mae_loss, ObjectiveConfig};
use crate::vit::{encode, mae_forward, project_and_normalize, tokenize, ModelConfig, ModelVars};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Contrastive,
    Mae,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub mask_ratio: f64,
    pub lr: f32,
    pub weight_decay: f32,
    pub objective: ObjectiveConfig,
    pub kind: ObjectiveKind,
    pub steps: u64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::BatchSize(format!(
                "batch size {} must be >= 2",
                self.batch_size
            )));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Parameter(format!(
                "mask ratio {} outside [0,1)",
                self.mask_ratio
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Parameter("learning rate must be > 0".into()));
        }
        self.objective.validate()
    }
}

#[derive(Debug, Clone)]
pub struct StepStats {
    pub step: u64,
    pub loss: f32,
    /// Loss of each patch-layout branch (one entry unless hybrid).
    pub branch_losses: Vec<f32>,
    /// Tokens kept per view.
    pub tokens_kept: usize,
    pub wall_ms: f64,
}

/// Which representation `embed_clip` returns for a (possibly hybrid) model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repr {
    Square,
    Vertical,
    /// Square and vertical embeddings concatenated (hybrid models only).
    Concat,
}

impl Repr {
    pub fn parse(s: &str) -> Result<Repr> {
        match s {
            "square" => Ok(Repr::Square),
            "vertical" => Ok(Repr::Vertical),
            "concat" => Ok(Repr::Concat),
            other => Err(Error::Config(format!("unknown representation `{other}`"))),
        }
    }
}

pub struct Trainer {
    pub model_cfg: ModelConfig,
    pub cfg: TrainConfig,
    pub params: ParamStore,
    pub adam: AdamState,
    pub step: u64,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig) -> Result<Self> {
        model_cfg.validate()?;
        cfg.validate()?;
        if cfg.kind == ObjectiveKind::Mae {
            if model_cfg.decoder.is_none() {
                return Err(Error::Config("mae training needs a decoder".into()));
            }
            if model_cfg.patch_cfgs.len() != 1 {
                return Err(Error::Config("mae training uses a single patch layout".into()));
            }
        }
        let params = crate::vit::init_params(&model_cfg, cfg.seed)?;
        let adam = AdamState::new(&params);
        Ok(Trainer {
            model_cfg,
            cfg,
            params,
            adam,
            step: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let model_cfg = ckpt.config.model_config()?;
        let cfg = ckpt.config.train_config();
        Ok(Trainer {
            model_cfg,
            cfg,
            params: ckpt.params,
            adam: ckpt.adam,
            step: ckpt.step,
        })
    }

    pub fn to_checkpoint(&self, config: &RunConfig) -> Checkpoint {
        Checkpoint {
            config: config.clone(),
            params: self.params.clone(),
            adam: self.adam.clone(),
            step: self.step,
        }
    }

    /// One optimization step on a batch sampled (with replacement) from
    /// `clips`. Every clip must be at least 3 s at 16 kHz.
    pub fn pretrain_step(&mut self, clips: &[AudioClip]) -> Result<StepStats> {
        if clips.is_empty() {
            return Err(Error::Data("no clips to train on".into()));
        }
        let t0 = Instant::now();
        let mut rng = step_rng(self.cfg.seed, self.step);
        let batch: Vec<usize> = (0..self.cfg.batch_size)
            .map(|_| rng.gen_range(0..clips.len()))
            .collect();

        let stats = match self.cfg.kind {
            ObjectiveKind::Contrastive => self.contrastive_step(clips, &batch, &mut rng)?,
            ObjectiveKind::Mae => self.mae_step(clips, &batch, &mut rng)?,
        };
        self.step += 1;
        Ok(StepStats {
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            ..stats
        })
    }

    fn contrastive_step(
        &mut self,
        clips: &[AudioClip],
        batch: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<StepStats> {
        // Draw all per-item randomness up front, independent of the branch
        // count, so hybrid and single-branch runs see the same views.
        let mut specs: Vec<[MelSpectrogram; 2]> = Vec::with_capacity(batch.len());
        for &ci in batch {
            let (s1, s2) = select_segments(&clips[ci], rng)?;
            specs.push([
                standardize(&mel_spectrogram(&s1)),
                standardize(&mel_spectrogram(&s2)),
            ]);
        }
        let mask_seeds: Vec<[u64; 2]> = (0..batch.len()).map(|_| [rng.gen(), rng.gen()]).collect();

        let mut g = Graph::new();
        let binding = self.params.bind(&mut g, true);
        let vars = ModelVars::new(&self.params, &binding);
        let mut branch_loss_vars: Vec<Var> = Vec::new();
        let mut tokens_kept = 0usize;
        for patch_cfg in &self.model_cfg.patch_cfgs {
            let mut view_rows: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
            for (i, pair) in specs.iter().enumerate() {
                for v in 0..2 {
                    let grid = patchify(&pair[v], patch_cfg)?;
                    let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seeds[i][v]);
                    let ts = sample_mask(&grid, self.cfg.mask_ratio, &mut mask_rng)?;
                    tokens_kept = ts.kept();
                    let x = tokenize(&mut g, &vars, patch_cfg, &ts)?;
                    let h = encode(&mut g, &vars, &self.model_cfg, x)?;
                    let z = project_and_normalize(&mut g, &vars, h)?;
                    view_rows[v].push(z);
                }
            }
            let z1 = g.concat(&view_rows[0], 0)?;
            let z2 = g.concat(&view_rows[1], 0)?;
            branch_loss_vars.push(info_nce(&mut g, z1, z2, &self.cfg.objective)?);
        }
        let loss_var = match branch_loss_vars.as_slice() {
            [single] => *single,
            [a, b] => hybrid_loss(&mut g, *a, *b)?,
            _ => unreachable!("1 or 2 patch layouts"),
        };
        let loss = g.value(loss_var).item();
        let branch_losses = branch_loss_vars.iter().map(|&v| g.value(v).item()).collect();

        g.backward(loss_var)?;
        self.params.zero_grads();
        self.params.harvest(&g, &binding)?;
        self.adam
            .step(&mut self.params, self.cfg.lr, self.cfg.weight_decay)?;
        Ok(StepStats {
            step: self.step,
            loss,
            branch_losses,
            tokens_kept,
            wall_ms: 0.0,
        })
    }

    fn mae_step(
        &mut self,
        clips: &[AudioClip],
        batch: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<StepStats> {
        let patch_cfg = self.model_cfg.patch_cfgs[0];
        let mut grids = Vec::with_capacity(batch.len());
        for &ci in batch {
            let (seg, _) = select_segments(&clips[ci], rng)?;
            let spec = standardize(&mel_spectrogram(&seg));
            grids.push(patchify(&spec, &patch_cfg)?);
        }
        let mask_seeds: Vec<u64> = (0..batch.len()).map(|_| rng.gen()).collect();

        let mut g = Graph::new();
        let binding = self.params.bind(&mut g, true);
        let vars = ModelVars::new(&self.params, &binding);
        let mut tokens_kept = 0usize;
        let mut sum: Option<Var> = None;
        for (grid, &seed) in grids.iter().zip(&mask_seeds) {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
            let ts = sample_mask(grid, self.cfg.mask_ratio, &mut mask_rng)?;
            tokens_kept = ts.kept();
            let rec = mae_forward(&mut g, &vars, &self.model_cfg, &ts)?;
            let item_loss = mae_loss(&mut g, rec, grid, &ts)?;
            sum = Some(match sum {
                None => item_loss,
                Some(acc) => g.add(acc, item_loss)?,
            });
        }
        let total = sum.expect("batch validated non-empty");
        let loss_var = g.scale(total, 1.0 / batch.len() as f32);
        let loss = g.value(loss_var).item();

        g.backward(loss_var)?;
        self.params.zero_grads();
        self.params.harvest(&g, &binding)?;
        self.adam
            .step(&mut self.params, self.cfg.lr, self.cfg.weight_decay)?;
        Ok(StepStats {
            step: self.step,
            loss,
            branch_losses: vec![loss],
            tokens_kept,
            wall_ms: 0.0,
        })
    }

    /// Evaluation embedding: mean of pooled encoder outputs over consecutive
    /// non-overlapping 3 s windows, no masking, projector not applied.
    pub fn embed_clip(&self, clip: &AudioClip, repr: Repr) -> Result<Vec<f32>> {
        embed_clip_with(&self.model_cfg, &self.params, clip, repr)
    }

    /// Projected, normalized embedding of a single masked view (evaluation
    /// utility; used to measure positive/negative pair similarities).
    pub fn segment_projection(
        &self,
        segment: &Segment,
        patch_cfg: &PatchConfig,
        mask_ratio: f64,
        mask_rng: &mut impl Rng,
    ) -> Result<Vec<f32>> {
        let spec = standardize(&mel_spectrogram(segment));
        let grid = patchify(&spec, patch_cfg)?;
        let ts = sample_mask(&grid, mask_ratio, mask_rng)?;
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g, false);
        let vars = ModelVars::new(&self.params, &binding);
        let x = tokenize(&mut g, &vars, patch_cfg, &ts)?;
        let h = encode(&mut g, &vars, &self.model_cfg, x)?;
        let z = project_and_normalize(&mut g, &vars, h)?;
        Ok(g.value(z).data().to_vec())
    }
}

/// Deterministic per-step random stream.
fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_add(1));
    rng
}

/// [`Trainer::embed_clip`] against explicit parameters (checkpoint use).
pub fn embed_clip_with(
    model_cfg: &ModelConfig,
    params: &ParamStore,
    clip: &AudioClip,
    repr: Repr,
) -> Result<Vec<f32>> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::Contract(format!(
            "embed wants {} Hz input, got {}",
            SAMPLE_RATE, clip.sample_rate
        )));
    }
    let windows = clip.samples.len() / SEGMENT_SAMPLES;
    if windows == 0 {
        return Err(Error::ClipTooShort {
            have_samples: clip.samples.len(),
            rate: clip.sample_rate,
            need_samples: SEGMENT_SAMPLES,
        });
    }
    let patch_cfgs: Vec<PatchConfig> = match repr {
        Repr::Square => vec![find_patch(model_cfg, "square")?],
        Repr::Vertical => vec![find_patch(model_cfg, "vertical")?],
        Repr::Concat => {
            if model_cfg.patch_cfgs.len() != 2 {
                return Err(Error::Config(
                    "concat representation needs a hybrid model".into(),
                ));
            }
            vec![find_patch(model_cfg, "square")?, find_patch(model_cfg, "vertical")?]
        }
    };
    let mut acc = vec![0.0f64; model_cfg.dim * patch_cfgs.len()];
    for w in 0..windows {
        let seg = Segment::new(
            clip.samples[w * SEGMENT_SAMPLES..(w + 1) * SEGMENT_SAMPLES].to_vec(),
        )?;
        let spec = standardize(&mel_spectrogram(&seg));
        for (pi, patch_cfg) in patch_cfgs.iter().enumerate() {
            let grid = patchify(&spec, patch_cfg)?;
            let ts = full_token_set(&grid)?;
            let mut g = Graph::new();
            let binding = params.bind(&mut g, false);
            let vars = ModelVars::new(params, &binding);
            let x = tokenize(&mut g, &vars, patch_cfg, &ts)?;
            let h = encode(&mut g, &vars, model_cfg, x)?;
            for (a, &v) in acc[pi * model_cfg.dim..(pi + 1) * model_cfg.dim]
                .iter_mut()
                .zip(g.value(h).data())
            {
                *a += f64::from(v);
            }
        }
    }
    Ok(acc.iter().map(|&v| (v / windows as f64) as f32).collect())
}

fn find_patch(model_cfg: &ModelConfig, name: &str) -> Result<PatchConfig> {
    model_cfg
        .patch_cfgs
        .iter()
        .copied()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("model has no `{name}` tokenizer")))
}

/// All tokens kept (mask ratio 0); no randomness consumed.
fn full_token_set(grid: &crate::masking::PatchGrid) -> Result<TokenSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    sample_mask(grid, 0.0, &mut rng)
}

// ---- dataset plumbing ----

/// Read a newline-delimited manifest of WAV paths; relative entries resolve
/// against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let entries: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let p = PathBuf::from(l);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::Data(format!(
            "manifest {} lists no files",
            path.display()
        )));
    }
    Ok(entries)
}

/// Decode and resample every manifest entry; clips shorter than one segment
/// are skipped (returned in `.1` for reporting).
pub fn load_clips(paths: &[PathBuf]) -> Result<(Vec<AudioClip>, Vec<String>)> {
    let mut clips = Vec::new();
    let mut skipped = Vec::new();
    for p in paths {
        let clip = crate::audio::decode_wav(p)?;
        let clip = resample(&clip, SAMPLE_RATE)?;
        if clip.samples.len() < SEGMENT_SAMPLES {
            skipped.push(format!(
                "{} ({:.2} s < 3 s)",
                p.display(),
                clip.duration_seconds()
            ));
        } else {
            clips.push(clip);
        }
    }
    Ok((clips, skipped))
}
