//! Command-line interface: pre-training, embedding export, probe grids,
//! ablation sweeps, and reconstruction dumps.
//!
//! Every command resolves its configuration (file, then `--set` overrides,
//! then `--seed`) and validates it fully before touching any output path.

pub mod pgm;
pub mod sweep;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::{mel_spectrogram, standardize, Segment, SEGMENT_SAMPLES};
use crate::autodiff::{Graph, Tensor};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::masking::{patchify, sample_mask, unpatchify};
use crate::probe::{self, LabelData, ProbeOptions, ProbeResult, Task, TaskKind};
use crate::trainer::{
    self, checkpoint, load_checkpoint, load_clips, load_manifest, save_checkpoint, Repr, Trainer,
};
use crate::vit::{mae_forward, ModelVars};

#[derive(Parser)]
#[command(
    name = "melmask",
    version,
    about = "Masking-based contrastive learning of audio representations on mel spectrograms"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

/// Configuration flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Configuration file (line-oriented `key = value` with [section] headers)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. --set train.batch_size=16 (repeatable)
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Shorthand for --set train.seed=N
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.apply_overrides(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_overrides(&self, cfg: &mut RunConfig) -> Result<()> {
        for spec in &self.set {
            cfg.apply_override(spec)?;
        }
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        Ok(())
    }
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Contrastive pre-training on a manifest of WAV files
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Newline-delimited list of WAV paths
        #[arg(long)]
        manifest: PathBuf,
        /// Output checkpoint path
        #[arg(long)]
        out: PathBuf,
        /// Training-log CSV (default: <out>.log.csv)
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Masked auto-encoder pre-training (baseline)
    MaePretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Export frozen embeddings for every clip in a manifest
    Embed {
        /// Trained checkpoint
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output feature file
        #[arg(long)]
        out: PathBuf,
        /// Representation: square, vertical, or concat (hybrid models)
        #[arg(long, default_value = "square")]
        repr: String,
    },
    /// Hyperparameter-grid probe evaluation on frozen features
    Probe {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Feature file (tensor `features`)
        #[arg(long)]
        features: Option<PathBuf>,
        /// Label file (tensors `labels`, `split_train`, `split_valid`, `split_test`)
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Task kind: multilabel, multiclass, key, or regression
        #[arg(long, default_value = "multiclass")]
        task: String,
        /// Grid subset: "full", "first:N", or comma-separated config ids
        #[arg(long, default_value = "full")]
        grid: String,
        /// Built-in synthetic task (blobs, tags, regression) instead of files
        #[arg(long)]
        synthetic: Option<String>,
        /// Results CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Masking-ratio ablation on the built-in synthetic corpus
    SweepMask {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated ratios in [0,1)
        #[arg(long, default_value = "0.0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
        ratios: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Batch-size ablation on the built-in synthetic corpus
    SweepBatch {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated batch sizes (each >= 2)
        #[arg(long, default_value = "8,16,32")]
        sizes: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump input/reconstruction/overlay PGM images from an MAE checkpoint
    MaeDump {
        /// MAE checkpoint (must contain a decoder)
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for PGM triples
        #[arg(long)]
        out: PathBuf,
        /// Overrides applied on top of the checkpoint's configuration
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
        /// Mask-sampling seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

pub fn main_entry() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Pretrain {
            cfg,
            manifest,
            out,
            log,
        } => {
            let cfg = cfg.resolve()?;
            let loss = cmd_pretrain(&cfg, &manifest, &out, log.as_deref())?;
            println!("final loss {loss:.6} -> {}", out.display());
            Ok(())
        }
        Cmd::MaePretrain {
            cfg,
            manifest,
            out,
            log,
        } => {
            let mut resolved = match &cfg.config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            resolved.train.objective = "mae".into();
            cfg.apply_overrides(&mut resolved)?;
            if resolved.train.objective != "mae" {
                return Err(Error::Config(
                    "mae-pretrain requires train.objective = mae".into(),
                ));
            }
            resolved.validate()?;
            let loss = cmd_pretrain(&resolved, &manifest, &out, log.as_deref())?;
            println!("final masked-mse {loss:.6} -> {}", out.display());
            Ok(())
        }
        Cmd::Embed {
            checkpoint,
            manifest,
            out,
            repr,
        } => {
            let n = cmd_embed(&checkpoint, &manifest, &out, Repr::parse(&repr)?)?;
            println!("wrote {n} feature rows -> {}", out.display());
            Ok(())
        }
        Cmd::Probe {
            cfg,
            features,
            labels,
            task,
            grid,
            synthetic,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let kind = TaskKind::parse(&task)?;
            let task = match (&synthetic, &features, &labels) {
                (Some(name), _, _) => synthetic_task(name, cfg.probe.seed)?,
                (None, Some(f), Some(l)) => load_task(f, l, kind)?,
                _ => {
                    return Err(Error::Config(
                        "probe needs --features and --labels, or --synthetic".into(),
                    ))
                }
            };
            let result = cmd_probe(&cfg, &task, &grid, &out)?;
            println!(
                "winner config {} ({}): valid {:.6}, test {:?} -> {}",
                result.best_config_id,
                describe_config(&result.best_config),
                result.valid_metric,
                result.test_metrics,
                out.display()
            );
            Ok(())
        }
        Cmd::SweepMask { cfg, ratios, out } => {
            let cfg = cfg.resolve()?;
            let ratios = parse_f64_list(&ratios)?;
            cmd_sweep_mask(&cfg, &ratios, &out)?;
            println!("wrote {} sweep rows -> {}", ratios.len(), out.display());
            Ok(())
        }
        Cmd::SweepBatch { cfg, sizes, out } => {
            let cfg = cfg.resolve()?;
            let sizes = parse_usize_list(&sizes)?;
            cmd_sweep_batch(&cfg, &sizes, &out)?;
            println!("wrote {} sweep rows -> {}", sizes.len(), out.display());
            Ok(())
        }
        Cmd::MaeDump {
            checkpoint,
            manifest,
            out,
            set,
            seed,
        } => {
            let n = cmd_mae_dump(&checkpoint, &manifest, &out, &set, seed)?;
            println!("wrote {n} image triples -> {}", out.display());
            Ok(())
        }
    }
}

/// Train per the configuration and write checkpoint plus log CSV. Returns
/// the final step's loss.
pub fn cmd_pretrain(
    cfg: &RunConfig,
    manifest: &Path,
    out: &Path,
    log: Option<&Path>,
) -> Result<f32> {
    cfg.validate()?;
    let paths = load_manifest(manifest)?;
    let (clips, skipped) = load_clips(&paths)?;
    for s in &skipped {
        eprintln!("skipping {s}");
    }
    if clips.is_empty() {
        return Err(Error::Data(format!(
            "no trainable clips in {} ({} skipped as too short)",
            manifest.display(),
            skipped.len()
        )));
    }
    let default_log = log_path(out);
    let log_file = log.unwrap_or(&default_log);
    let mut log_out = open_log(log_file)?;

    let mut trainer = Trainer::new(cfg.model_config()?, cfg.train_config())?;
    let mut recent: Vec<f32> = Vec::new();
    let mut last = f32::NAN;
    for _ in 0..cfg.train.steps {
        let stats = trainer.pretrain_step(&clips)?;
        if !stats.loss.is_finite() {
            return Err(Error::Data(format!(
                "non-finite loss at step {} (recent losses: {:?})",
                stats.step, recent
            )));
        }
        writeln!(
            log_out,
            "{},{:.6},{},{},{:.3}",
            stats.step, stats.loss, cfg.train.lr, stats.tokens_kept, stats.wall_ms
        )
        .map_err(|e| Error::io(log_file, e))?;
        recent.push(stats.loss);
        if recent.len() > 10 {
            recent.remove(0);
        }
        last = stats.loss;
    }
    log_out.flush().map_err(|e| Error::io(log_file, e))?;
    save_checkpoint(out, &trainer.to_checkpoint(cfg))?;
    Ok(last)
}

pub fn log_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".log.csv");
    checkpoint.with_file_name(name)
}

fn open_log(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let exists = path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    if !exists {
        writeln!(out, "step,loss,lr,tokens_kept,wall_ms").map_err(|e| Error::io(path, e))?;
    }
    Ok(out)
}

/// Embed every manifest clip (manifest order) and write the feature file.
pub fn cmd_embed(checkpoint_path: &Path, manifest: &Path, out: &Path, repr: Repr) -> Result<usize> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let model_cfg = ckpt.config.model_config()?;
    let paths = load_manifest(manifest)?;
    let (clips, skipped) = load_clips(&paths)?;
    if !skipped.is_empty() {
        return Err(Error::Data(format!(
            "embedding requires clips of at least 3 s; too short: {}",
            skipped.join(", ")
        )));
    }
    let mut rows: Vec<f32> = Vec::new();
    let mut dim = 0;
    for clip in &clips {
        let e = trainer::embed_clip_with(&model_cfg, &ckpt.params, clip, repr)?;
        dim = e.len();
        rows.extend(e);
    }
    let features = Tensor::matrix(clips.len(), dim, rows)?;
    checkpoint::write_container(
        out,
        &ckpt.config.to_canonical_text(),
        &[("features".to_string(), &features)],
    )?;
    Ok(clips.len())
}

/// Run the probe grid and write the results CSV. Only the winner's row
/// carries test metrics.
pub fn cmd_probe(cfg: &RunConfig, task: &Task, grid_spec: &str, out: &Path) -> Result<ProbeResult> {
    let ids = parse_grid_spec(grid_spec)?;
    let opts = ProbeOptions {
        max_epochs: cfg.probe.max_epochs,
        patience: cfg.probe.patience,
        seed: cfg.probe.seed,
    };
    let result = probe::run_grid(task, &ids, &opts)?;

    let mut csv = String::new();
    csv.push_str("config_id,standardize,model,batch,lr,dropout,l2,valid_metric");
    for key in result.test_metrics.keys() {
        csv.push_str(&format!(",test_{key}"));
    }
    csv.push('\n');
    for cell in &result.cells {
        let c = &cell.config;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6}",
            cell.config_id,
            if c.standardize { "on" } else { "off" },
            c.model.name(),
            c.batch,
            c.lr,
            c.dropout,
            c.l2,
            cell.valid_metric
        ));
        for value in result.test_metrics.values() {
            if cell.config_id == result.best_config_id {
                csv.push_str(&format!(",{value:.6}"));
            } else {
                csv.push(',');
            }
        }
        csv.push('\n');
    }
    std::fs::write(out, csv).map_err(|e| Error::io(out, e))?;
    Ok(result)
}

fn describe_config(c: &probe::ProbeConfig) -> String {
    format!(
        "standardize={} model={} batch={} lr={} dropout={} l2={}",
        if c.standardize { "on" } else { "off" },
        c.model.name(),
        c.batch,
        c.lr,
        c.dropout,
        c.l2
    )
}

/// Masking-ratio sweep CSV: `ratio,loss,probe_metric,step_wall_ms,flops_per_step`.
pub fn cmd_sweep_mask(cfg: &RunConfig, ratios: &[f64], out: &Path) -> Result<()> {
    if ratios.is_empty() {
        return Err(Error::Parameter("no ratios given".into()));
    }
    for &r in ratios {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::Parameter(format!("ratio {r} outside [0,1)")));
        }
    }
    let mut csv = String::from("ratio,loss,probe_metric,step_wall_ms,flops_per_step\n");
    for &r in ratios {
        let mut point_cfg = cfg.clone();
        point_cfg.train.mask_ratio = r;
        let o = sweep::run_point(&point_cfg)?;
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.3},{}\n",
            r, o.loss, o.probe_metric, o.step_wall_ms, o.flops_per_step
        ));
    }
    std::fs::write(out, csv).map_err(|e| Error::io(out, e))
}

/// Batch-size sweep CSV: `batch,loss,probe_metric,step_wall_ms,flops_per_step`.
pub fn cmd_sweep_batch(cfg: &RunConfig, sizes: &[usize], out: &Path) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::Parameter("no batch sizes given".into()));
    }
    for &b in sizes {
        if b < 2 {
            return Err(Error::BatchSize(format!("batch size {b} must be >= 2")));
        }
    }
    let mut csv = String::from("batch,loss,probe_metric,step_wall_ms,flops_per_step\n");
    for &b in sizes {
        let mut point_cfg = cfg.clone();
        point_cfg.train.batch_size = b;
        let o = sweep::run_point(&point_cfg)?;
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.3},{}\n",
            b, o.loss, o.probe_metric, o.step_wall_ms, o.flops_per_step
        ));
    }
    std::fs::write(out, csv).map_err(|e| Error::io(out, e))
}

/// For each clip: write input, reconstruction, and overlay PGMs (96x128,
/// W x H). The overlay takes kept-patch pixels from the scaled input image
/// and masked-patch pixels from the scaled reconstruction image, so kept
/// pixels match the input image exactly.
pub fn cmd_mae_dump(
    checkpoint_path: &Path,
    manifest: &Path,
    out_dir: &Path,
    set: &[String],
    seed: u64,
) -> Result<usize> {
    let ckpt = load_checkpoint(checkpoint_path)?;
    let mut cfg = ckpt.config.clone();
    for spec in set {
        cfg.apply_override(spec)?;
    }
    cfg.validate()?;
    let model_cfg = cfg.model_config()?;
    if model_cfg.decoder.is_none() {
        return Err(Error::Config(format!(
            "checkpoint {} has no decoder; train one with mae-pretrain",
            checkpoint_path.display()
        )));
    }
    let patch_cfg = model_cfg.patch_cfgs[0];
    let paths = load_manifest(manifest)?;
    let (clips, skipped) = load_clips(&paths)?;
    if clips.is_empty() {
        return Err(Error::Data(format!(
            "no usable clips ({} skipped as too short)",
            skipped.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    for (i, clip) in clips.iter().enumerate() {
        let seg = Segment::new(clip.samples[..SEGMENT_SAMPLES].to_vec())?;
        let spec = standardize(&mel_spectrogram(&seg));
        let grid = patchify(&spec, &patch_cfg)?;
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let ts = sample_mask(&grid, cfg.train.mask_ratio, &mut mask_rng)?;

        let mut g = Graph::new();
        let binding = ckpt.params.bind(&mut g, false);
        let vars = ModelVars::new(&ckpt.params, &binding);
        let rec = mae_forward(&mut g, &vars, &model_cfg, &ts)?;
        let rec_pixels = unpatchify(g.value(rec).data(), grid.rows, grid.cols, &patch_cfg);

        let input_img = pgm::scale_to_bytes(spec.values());
        let rec_img = pgm::scale_to_bytes(&rec_pixels);

        // pixel-level kept mask via a 0/1 patch field
        let mut kept_field = vec![0.0f32; grid.total() * patch_cfg.values_per_patch()];
        for &idx in &ts.kept_indices {
            let v = patch_cfg.values_per_patch();
            kept_field[idx * v..(idx + 1) * v].fill(1.0);
        }
        let kept_pixels = unpatchify(&kept_field, grid.rows, grid.cols, &patch_cfg);
        let overlay: Vec<u8> = kept_pixels
            .iter()
            .zip(input_img.iter().zip(&rec_img))
            .map(|(&k, (&a, &b))| if k > 0.5 { a } else { b })
            .collect();

        let stem = paths[i]
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| format!("clip{i}"));
        let (w, h) = (spec.frames(), spec.mel_bins());
        pgm::write_pgm(&out_dir.join(format!("{i:03}_{stem}_input.pgm")), w, h, &input_img)?;
        pgm::write_pgm(&out_dir.join(format!("{i:03}_{stem}_recon.pgm")), w, h, &rec_img)?;
        pgm::write_pgm(&out_dir.join(format!("{i:03}_{stem}_overlay.pgm")), w, h, &overlay)?;
    }
    Ok(clips.len())
}

// ---- feature/label file plumbing ----

/// Write a label file for [`cmd_probe`]: tensors `labels`, `split_train`,
/// `split_valid`, `split_test` in the checkpoint container format.
pub fn write_label_file(
    path: &Path,
    labels: &Tensor,
    split_train: &[usize],
    split_valid: &[usize],
    split_test: &[usize],
) -> Result<()> {
    let to_tensor = |v: &[usize]| Tensor::vector(v.iter().map(|&i| i as f32).collect());
    let (tr, va, te) = (
        to_tensor(split_train),
        to_tensor(split_valid),
        to_tensor(split_test),
    );
    checkpoint::write_container(
        path,
        "# label file\n",
        &[
            ("labels".to_string(), labels),
            ("split_train".to_string(), &tr),
            ("split_valid".to_string(), &va),
            ("split_test".to_string(), &te),
        ],
    )
}

fn find_tensor(tensors: &[(String, Tensor)], name: &str, path: &Path) -> Result<Tensor> {
    tensors
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t.clone())
        .ok_or_else(|| {
            Error::CheckpointFormat(format!("{} has no tensor `{name}`", path.display()))
        })
}

fn tensor_to_indices(t: &Tensor, what: &str) -> Result<Vec<usize>> {
    t.data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Task(format!("{what} index {v} is not a valid index")))
            }
        })
        .collect()
}

/// Assemble a [`Task`] from a feature file and a label file.
pub fn load_task(features_path: &Path, labels_path: &Path, kind: TaskKind) -> Result<Task> {
    let (_, ft) = checkpoint::read_container(features_path)?;
    let features = find_tensor(&ft, "features", features_path)?;
    let (_, lt) = checkpoint::read_container(labels_path)?;
    let labels = find_tensor(&lt, "labels", labels_path)?;
    let split_train = tensor_to_indices(&find_tensor(&lt, "split_train", labels_path)?, "train")?;
    let split_valid = tensor_to_indices(&find_tensor(&lt, "split_valid", labels_path)?, "valid")?;
    let split_test = tensor_to_indices(&find_tensor(&lt, "split_test", labels_path)?, "test")?;

    let label_data = match kind {
        TaskKind::Multiclass | TaskKind::Key => {
            if labels.rank() != 1 {
                return Err(Error::Task(format!(
                    "class labels must be a vector, got shape {:?}",
                    labels.shape()
                )));
            }
            LabelData::Classes(
                labels
                    .data()
                    .iter()
                    .map(|&v| {
                        if v >= 0.0 && v.fract() == 0.0 {
                            Ok(v as usize)
                        } else {
                            Err(Error::Task(format!("class label {v} is not an integer")))
                        }
                    })
                    .collect::<Result<_>>()?,
            )
        }
        TaskKind::Multilabel => {
            let (_, tags) = labels.dims2()?;
            if labels.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Task("multilabel targets must be 0/1".into()));
            }
            LabelData::Binary {
                data: labels.data().to_vec(),
                tags,
            }
        }
        TaskKind::Regression => {
            let (_, targets) = labels.dims2()?;
            LabelData::Real {
                data: labels.data().to_vec(),
                targets,
            }
        }
    };
    Task::new(kind, features, label_data, split_train, split_valid, split_test)
}

fn synthetic_task(name: &str, seed: u64) -> Result<Task> {
    match name {
        "blobs" => Ok(probe::synthetic::blobs(4, 60, 16, 0.5, seed)),
        "tags" => Ok(probe::synthetic::halfspace_tags(320, 12, 4, seed)),
        "regression" => Ok(probe::synthetic::realizable_regression(400, 12, 2, seed)),
        other => Err(Error::Config(format!(
            "unknown synthetic task `{other}` (blobs, tags, regression)"
        ))),
    }
}

fn parse_grid_spec(spec: &str) -> Result<Vec<usize>> {
    if spec == "full" {
        return Ok(Vec::new());
    }
    if let Some(n) = spec.strip_prefix("first:") {
        let n: usize = n
            .parse()
            .map_err(|_| Error::Parameter(format!("bad grid spec `{spec}`")))?;
        return Ok((0..n).collect());
    }
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Parameter(format!("bad config id `{s}` in grid spec")))
        })
        .collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Parameter(format!("bad number `{x}`")))
        })
        .collect()
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Parameter(format!("bad integer `{x}`")))
        })
        .collect()
}
