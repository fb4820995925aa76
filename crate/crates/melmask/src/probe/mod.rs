//! Frozen-embedding evaluation: a 216-point hyperparameter grid of linear
//! and one-hidden-layer probes, early stopping on validation metrics, and
//! test evaluation for the selected configuration only.
//!
//! Selection is auditable by construction: cell training touches only the
//! train and validation splits, and every read of test labels bumps a
//! counter that [`run_grid`] checks before it evaluates the winner.

pub mod metrics;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Graph, ParamStore, Tensor};
use crate::error::{Error, Result};
use metrics::MetricMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeModel {
    Linear,
    Mlp512,
}

impl ProbeModel {
    pub fn name(&self) -> &'static str {
        match self {
            ProbeModel::Linear => "linear",
            ProbeModel::Mlp512 => "mlp-512",
        }
    }
}

/// One grid cell: the exact hyperparameter axes of the evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub standardize: bool,
    pub model: ProbeModel,
    pub batch: usize,
    pub lr: f32,
    pub dropout: f32,
    pub l2: f32,
}

pub const MLP_HIDDEN: usize = 512;

/// The full 216-configuration grid in deterministic order (standardize
/// outermost, l2 innermost). The first entry is
/// (off, linear, 64, 1e-5, 0.25, 0).
pub fn enumerate_grid() -> Vec<ProbeConfig> {
    let mut out = Vec::with_capacity(216);
    for &standardize in &[false, true] {
        for &model in &[ProbeModel::Linear, ProbeModel::Mlp512] {
            for &batch in &[64usize, 256] {
                for &lr in &[1e-5f32, 1e-4, 1e-3] {
                    for &dropout in &[0.25f32, 0.5, 0.75] {
                        for &l2 in &[0.0f32, 1e-4, 1e-3] {
                            out.push(ProbeConfig {
                                standardize,
                                model,
                                batch,
                                lr,
                                dropout,
                                l2,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Multilabel,
    Multiclass,
    Key,
    Regression,
}

impl TaskKind {
    pub fn parse(s: &str) -> Result<TaskKind> {
        match s {
            "multilabel" => Ok(TaskKind::Multilabel),
            "multiclass" => Ok(TaskKind::Multiclass),
            "key" => Ok(TaskKind::Key),
            "regression" => Ok(TaskKind::Regression),
            other => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }

    /// The validation metric used for early stopping and model selection.
    pub fn primary_metric(&self) -> &'static str {
        match self {
            TaskKind::Multilabel => "auc",
            TaskKind::Multiclass => "accuracy",
            TaskKind::Key => "weighted_score",
            TaskKind::Regression => "r2_mean",
        }
    }
}

#[derive(Debug, Clone)]
pub enum LabelData {
    /// Class index per item (multiclass and key tasks).
    Classes(Vec<usize>),
    /// N x tags matrix of 0/1 indicators.
    Binary { data: Vec<f32>, tags: usize },
    /// N x targets matrix of real values.
    Real { data: Vec<f32>, targets: usize },
}

impl LabelData {
    fn len(&self) -> usize {
        match self {
            LabelData::Classes(c) => c.len(),
            LabelData::Binary { data, tags } => data.len() / tags,
            LabelData::Real { data, targets } => data.len() / targets,
        }
    }

    fn subset(&self, indices: &[usize]) -> LabelData {
        match self {
            LabelData::Classes(c) => LabelData::Classes(indices.iter().map(|&i| c[i]).collect()),
            LabelData::Binary { data, tags } => LabelData::Binary {
                data: gather_rows(data, *tags, indices),
                tags: *tags,
            },
            LabelData::Real { data, targets } => LabelData::Real {
                data: gather_rows(data, *targets, indices),
                targets: *targets,
            },
        }
    }
}

fn gather_rows(data: &[f32], cols: usize, indices: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(indices.len() * cols);
    for &i in indices {
        out.extend_from_slice(&data[i * cols..(i + 1) * cols]);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// A frozen-feature evaluation task with disjoint splits.
pub struct Task {
    pub kind: TaskKind,
    features: Tensor,
    labels: LabelData,
    split_train: Vec<usize>,
    split_valid: Vec<usize>,
    split_test: Vec<usize>,
    test_label_reads: AtomicUsize,
}

impl Task {
    pub fn new(
        kind: TaskKind,
        features: Tensor,
        labels: LabelData,
        split_train: Vec<usize>,
        split_valid: Vec<usize>,
        split_test: Vec<usize>,
    ) -> Result<Task> {
        let (n, _) = features.dims2()?;
        if labels.len() != n {
            return Err(Error::Task(format!(
                "{} labels for {} feature rows",
                labels.len(),
                n
            )));
        }
        match (&kind, &labels) {
            (TaskKind::Multiclass | TaskKind::Key, LabelData::Classes(_)) => {}
            (TaskKind::Multilabel, LabelData::Binary { .. }) => {}
            (TaskKind::Regression, LabelData::Real { .. }) => {}
            _ => {
                return Err(Error::Task(format!(
                    "label layout does not match task kind {kind:?}"
                )))
            }
        }
        if let LabelData::Classes(c) = &labels {
            let limit = if kind == TaskKind::Key { metrics::NUM_KEYS } else { usize::MAX };
            if let Some(&bad) = c.iter().find(|&&y| y >= limit) {
                return Err(Error::Task(format!("class {bad} out of range for {kind:?}")));
            }
        }
        let mut seen = vec![false; n];
        for (name, split) in [
            ("train", &split_train),
            ("valid", &split_valid),
            ("test", &split_test),
        ] {
            if split.is_empty() {
                return Err(Error::Task(format!("{name} split is empty")));
            }
            for &i in split {
                if i >= n {
                    return Err(Error::Task(format!("{name} index {i} out of range")));
                }
                if seen[i] {
                    return Err(Error::Task(format!(
                        "item {i} appears in more than one split"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(Task {
            kind,
            features,
            labels,
            split_train,
            split_valid,
            split_test,
            test_label_reads: AtomicUsize::new(0),
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.split_train,
            Split::Valid => &self.split_valid,
            Split::Test => &self.split_test,
        }
    }

    /// Labels for a split. Reading test labels is counted so grid selection
    /// can be audited to never touch them.
    pub fn labels_for(&self, split: Split) -> LabelData {
        if split == Split::Test {
            self.test_label_reads.fetch_add(1, Ordering::SeqCst);
        }
        self.labels.subset(self.indices(split))
    }

    pub fn test_label_reads(&self) -> usize {
        self.test_label_reads.load(Ordering::SeqCst)
    }

    /// Output width of a probe head for this task.
    pub fn output_dim(&self) -> usize {
        match &self.labels {
            LabelData::Classes(c) => {
                if self.kind == TaskKind::Key {
                    metrics::NUM_KEYS
                } else {
                    c.iter().max().map_or(1, |&m| m + 1)
                }
            }
            LabelData::Binary { tags, .. } => *tags,
            LabelData::Real { targets, .. } => *targets,
        }
    }

    fn features_subset(&self, split: Split) -> (Vec<f32>, usize) {
        let d = self.dim();
        (
            gather_rows(self.features.data(), d, self.indices(split)),
            self.indices(split).len(),
        )
    }
}

/// Per-feature affine transform fitted on the training split.
#[derive(Debug, Clone)]
struct Standardizer {
    mean: Vec<f32>,
    inv_std: Vec<f32>,
}

impl Standardizer {
    fn fit(data: &[f32], dim: usize) -> Standardizer {
        let n = (data.len() / dim) as f64;
        let mut mean = vec![0.0f64; dim];
        for row in data.chunks_exact(dim) {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += f64::from(x);
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0f64; dim];
        for row in data.chunks_exact(dim) {
            for (j, &x) in row.iter().enumerate() {
                let d = f64::from(x) - mean[j];
                var[j] += d * d;
            }
        }
        Standardizer {
            mean: mean.iter().map(|&m| m as f32).collect(),
            inv_std: var
                .iter()
                .map(|&v| (1.0 / (v / n).sqrt().max(1e-6)) as f32)
                .collect(),
        }
    }

    fn identity(dim: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; dim],
            inv_std: vec![1.0; dim],
        }
    }

    fn apply(&self, data: &mut [f32]) {
        let dim = self.mean.len();
        for row in data.chunks_exact_mut(dim) {
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - self.mean[j]) * self.inv_std[j];
            }
        }
    }
}

/// Early-stopping knobs (the grid never varies these).
#[derive(Debug, Clone, Copy)]
pub struct ProbeOptions {
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

/// A trained grid cell: best-epoch weights and their validation metric.
pub struct TrainedProbe {
    pub config: ProbeConfig,
    pub valid_metric: f64,
    params: ParamStore,
    standardizer: Standardizer,
}

fn init_probe_params(
    model: ProbeModel,
    dim: usize,
    out_dim: usize,
    rng: &mut ChaCha8Rng,
) -> ParamStore {
    let mut store = ParamStore::new();
    match model {
        ProbeModel::Linear => {
            store.add("w1", Tensor::zeros(&[dim, out_dim]));
            store.add("b1", Tensor::zeros(&[out_dim]));
        }
        ProbeModel::Mlp512 => {
            let std = (2.0 / dim as f32).sqrt();
            let w1: Vec<f32> = (0..dim * MLP_HIDDEN)
                .map(|_| crate::vit::normal(rng, std))
                .collect();
            store.add("w1", Tensor::matrix(dim, MLP_HIDDEN, w1).unwrap());
            store.add("b1", Tensor::zeros(&[MLP_HIDDEN]));
            let std2 = (2.0 / MLP_HIDDEN as f32).sqrt();
            let w2: Vec<f32> = (0..MLP_HIDDEN * out_dim)
                .map(|_| crate::vit::normal(rng, std2))
                .collect();
            store.add("w2", Tensor::matrix(MLP_HIDDEN, out_dim, w2).unwrap());
            store.add("b2", Tensor::zeros(&[out_dim]));
        }
    }
    store
}

/// Forward to logits. Dropout regularizes the MLP probe's input during
/// training (`train_rng` present); the linear probe is convex and is fit
/// without dropout so realizable targets stay realizable.
fn probe_logits(
    g: &mut Graph,
    params: &ParamStore,
    binding: &crate::autodiff::Binding,
    model: ProbeModel,
    x: crate::autodiff::Var,
    dropout: f32,
    train_rng: Option<&mut ChaCha8Rng>,
) -> Result<crate::autodiff::Var> {
    match model {
        ProbeModel::Linear => {
            let h = g.matmul(x, binding.named(params, "w1")?)?;
            g.add_row(h, binding.named(params, "b1")?)
        }
        ProbeModel::Mlp512 => {
            let x = match train_rng {
                Some(rng) => g.dropout(x, dropout, rng)?,
                None => x,
            };
            let h = g.matmul(x, binding.named(params, "w1")?)?;
            let h = g.add_row(h, binding.named(params, "b1")?)?;
            let h = g.relu(h);
            let h = g.matmul(h, binding.named(params, "w2")?)?;
            g.add_row(h, binding.named(params, "b2")?)
        }
    }
}

fn task_loss(
    g: &mut Graph,
    kind: TaskKind,
    logits: crate::autodiff::Var,
    labels: &LabelData,
) -> Result<crate::autodiff::Var> {
    match (kind, labels) {
        (TaskKind::Multiclass | TaskKind::Key, LabelData::Classes(c)) => {
            g.cross_entropy_logits(logits, c)
        }
        (TaskKind::Multilabel, LabelData::Binary { data, tags }) => {
            let t = Tensor::matrix(data.len() / tags, *tags, data.clone())?;
            g.bce_with_logits(logits, &t)
        }
        (TaskKind::Regression, LabelData::Real { data, targets }) => {
            let t = Tensor::matrix(data.len() / targets, *targets, data.clone())?;
            let tv = g.constant(t);
            g.mse(logits, tv)
        }
        _ => Err(Error::Task("label layout does not match task kind".into())),
    }
}

/// Evaluate logits against labels, returning the full metric map.
fn eval_metrics(kind: TaskKind, logits: &Tensor, labels: &LabelData) -> Result<MetricMap> {
    let (n, c) = logits.dims2()?;
    match (kind, labels) {
        (TaskKind::Multiclass, LabelData::Classes(y)) => {
            Ok(metrics::multiclass_metrics(&argmax_rows(logits), y))
        }
        (TaskKind::Key, LabelData::Classes(y)) => Ok(metrics::key_metrics(&argmax_rows(logits), y)),
        (TaskKind::Multilabel, LabelData::Binary { data, tags }) => {
            debug_assert_eq!(c, *tags);
            metrics::multilabel_metrics(logits.data(), data, n, *tags)
        }
        (TaskKind::Regression, LabelData::Real { data, targets }) => {
            debug_assert_eq!(c, *targets);
            Ok(metrics::regression_metrics(logits.data(), data, n, *targets))
        }
        _ => Err(Error::Task("label layout does not match task kind".into())),
    }
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let (_, c) = logits.dims2().expect("rank-2 logits");
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect()
}

impl TrainedProbe {
    /// Logits for one split of the task.
    pub fn predict(&self, task: &Task, split: Split) -> Result<Tensor> {
        let (mut feats, n) = task.features_subset(split);
        self.standardizer.apply(&mut feats);
        let d = task.dim();
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g, false);
        let x = g.constant(Tensor::matrix(n, d, feats)?);
        let logits = probe_logits(
            &mut g,
            &self.params,
            &binding,
            self.config.model,
            x,
            self.config.dropout,
            None,
        )?;
        Ok(g.value(logits).clone())
    }

    /// Metric map on a split (reads that split's labels).
    pub fn evaluate(&self, task: &Task, split: Split) -> Result<MetricMap> {
        let logits = self.predict(task, split)?;
        eval_metrics(task.kind, &logits, &task.labels_for(split))
    }
}

/// Train one grid cell with Adam on the task loss, early stopping on the
/// validation metric (patience epochs without improvement, bounded by
/// max_epochs), restoring the best epoch's weights.
pub fn train_probe(task: &Task, cfg: &ProbeConfig, opts: &ProbeOptions) -> Result<TrainedProbe> {
    let train_labels = task.labels_for(Split::Train);
    if let LabelData::Classes(c) = &train_labels {
        if c.windows(2).all(|w| w[0] == w[1]) {
            return Err(Error::Task(
                "degenerate labels: a single class in the training split".into(),
            ));
        }
    }
    let dim = task.dim();
    let (mut train_feats, n_train) = task.features_subset(Split::Train);
    let standardizer = if cfg.standardize {
        Standardizer::fit(&train_feats, dim)
    } else {
        Standardizer::identity(dim)
    };
    standardizer.apply(&mut train_feats);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = init_probe_params(cfg.model, dim, task.output_dim(), &mut rng);
    let mut adam = crate::trainer::AdamState::new(&params);

    let valid_labels = task.labels_for(Split::Valid);
    let (mut valid_feats, n_valid) = task.features_subset(Split::Valid);
    standardizer.apply(&mut valid_feats);

    let mut best_metric = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let mut patience_left = opts.patience;
    let mut order: Vec<usize> = (0..n_train).collect();

    for _epoch in 0..opts.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let feats = gather_rows(&train_feats, dim, chunk);
            let labels = train_labels.subset(chunk);
            let mut g = Graph::new();
            let binding = params.bind(&mut g, true);
            let x = g.constant(Tensor::matrix(chunk.len(), dim, feats)?);
            let logits = probe_logits(
                &mut g,
                &params,
                &binding,
                cfg.model,
                x,
                cfg.dropout,
                Some(&mut rng),
            )?;
            let mut loss = task_loss(&mut g, task.kind, logits, &labels)?;
            if cfg.l2 > 0.0 {
                for name in ["w1", "w2"] {
                    if params.id(name).is_some() {
                        let w = binding.named(&params, name)?;
                        let sq = g.mul(w, w)?;
                        let pen = g.sum_all(sq);
                        let pen = g.scale(pen, cfg.l2);
                        loss = g.add(loss, pen)?;
                    }
                }
            }
            g.backward(loss)?;
            params.zero_grads();
            params.harvest(&g, &binding)?;
            adam.step(&mut params, cfg.lr, 0.0)?;
        }

        // Validation metric with dropout off.
        let metric = {
            let mut g = Graph::new();
            let binding = params.bind(&mut g, false);
            let x = g.constant(Tensor::matrix(n_valid, dim, valid_feats.clone())?);
            let logits = probe_logits(&mut g, &params, &binding, cfg.model, x, cfg.dropout, None)?;
            let m = eval_metrics(task.kind, g.value(logits), &valid_labels)?;
            m[task.kind.primary_metric()]
        };
        if metric > best_metric {
            best_metric = metric;
            best_params = params.clone();
            patience_left = opts.patience;
        } else {
            patience_left -= 1;
            if patience_left == 0 {
                break;
            }
        }
    }
    Ok(TrainedProbe {
        config: *cfg,
        valid_metric: best_metric,
        params: best_params,
        standardizer,
    })
}

/// One row of the grid report.
#[derive(Debug, Clone)]
pub struct CellSummary {
    pub config_id: usize,
    pub config: ProbeConfig,
    pub valid_metric: f64,
}

pub struct ProbeResult {
    pub best_config_id: usize,
    pub best_config: ProbeConfig,
    pub valid_metric: f64,
    pub test_metrics: MetricMap,
    pub cells: Vec<CellSummary>,
}

/// Train every requested grid cell, pick the best validation metric
/// (earliest config on ties), and evaluate only that winner on the test
/// split. `config_ids` empty means the full 216-cell grid.
pub fn run_grid(task: &Task, config_ids: &[usize], opts: &ProbeOptions) -> Result<ProbeResult> {
    let grid = enumerate_grid();
    let ids: Vec<usize> = if config_ids.is_empty() {
        (0..grid.len()).collect()
    } else {
        for &i in config_ids {
            if i >= grid.len() {
                return Err(Error::Parameter(format!(
                    "config id {i} outside the {}-cell grid",
                    grid.len()
                )));
            }
        }
        config_ids.to_vec()
    };

    let cells: Vec<CellSummary> = ids
        .par_iter()
        .map(|&config_id| {
            let cell_opts = ProbeOptions {
                seed: cell_seed(opts.seed, config_id),
                ..*opts
            };
            train_probe(task, &grid[config_id], &cell_opts).map(|t| CellSummary {
                config_id,
                config: grid[config_id],
                valid_metric: t.valid_metric,
            })
        })
        .collect::<Result<_>>()?;

    // Selection sees validation metrics only; the audit counter must still
    // be zero here.
    assert_eq!(
        task.test_label_reads(),
        0,
        "test labels were read before selection"
    );
    let best = cells
        .iter()
        .max_by(|a, b| {
            a.valid_metric
                .total_cmp(&b.valid_metric)
                .then(b.config_id.cmp(&a.config_id))
        })
        .expect("at least one cell");

    let winner = train_probe(
        task,
        &grid[best.config_id],
        &ProbeOptions {
            seed: cell_seed(opts.seed, best.config_id),
            ..*opts
        },
    )?;
    let test_metrics = winner.evaluate(task, Split::Test)?;
    Ok(ProbeResult {
        best_config_id: best.config_id,
        best_config: best.config,
        valid_metric: best.valid_metric,
        test_metrics,
        cells,
    })
}

fn cell_seed(seed: u64, config_id: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(config_id as u64 + 1)
}

/// Built-in feature-space tasks for demos and harness tests.
pub mod synthetic {
    use super::*;

    fn splits(n: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let n_train = (n * 6) / 10;
        let n_valid = (n * 2) / 10;
        (
            idx[..n_train].to_vec(),
            idx[n_train..n_train + n_valid].to_vec(),
            idx[n_train + n_valid..].to_vec(),
        )
    }

    /// Gaussian blobs, one cluster per class.
    pub fn blobs(classes: usize, per_class: usize, dim: usize, noise: f32, seed: u64) -> Task {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f32>> = (0..classes)
            .map(|_| (0..dim).map(|_| crate::vit::normal(&mut rng, 3.0)).collect())
            .collect();
        let n = classes * per_class;
        let mut feats = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % classes;
            labels.push(c);
            for j in 0..dim {
                feats.push(centers[c][j] + crate::vit::normal(&mut rng, noise));
            }
        }
        let (tr, va, te) = splits(n, &mut rng);
        Task::new(
            TaskKind::Multiclass,
            Tensor::matrix(n, dim, feats).unwrap(),
            LabelData::Classes(labels),
            tr,
            va,
            te,
        )
        .unwrap()
    }

    /// Two clusters split cleanly by the first coordinate; the remaining
    /// coordinates are zero, so every optimizer separates this immediately.
    pub fn separable_two_class(per_class: usize, dim: usize, seed: u64) -> Task {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = per_class * 2;
        let mut feats = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 2;
            labels.push(c);
            let offset = if c == 0 { 4.0 } else { -4.0 };
            feats.push(offset + crate::vit::normal(&mut rng, 0.5));
            feats.extend(std::iter::repeat(0.0).take(dim - 1));
        }
        let (tr, va, te) = splits(n, &mut rng);
        Task::new(
            TaskKind::Multiclass,
            Tensor::matrix(n, dim, feats).unwrap(),
            LabelData::Classes(labels),
            tr,
            va,
            te,
        )
        .unwrap()
    }

    /// Features carry no label information at all.
    pub fn random_labels(n: usize, dim: usize, classes: usize, seed: u64) -> Task {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats: Vec<f32> = (0..n * dim).map(|_| crate::vit::normal(&mut rng, 1.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| (i + rng.gen_range(0..classes)) % classes).collect();
        let (tr, va, te) = splits(n, &mut rng);
        Task::new(
            TaskKind::Multiclass,
            Tensor::matrix(n, dim, feats).unwrap(),
            LabelData::Classes(labels),
            tr,
            va,
            te,
        )
        .unwrap()
    }

    /// Exactly realizable linear regression: y = x W.
    pub fn realizable_regression(n: usize, dim: usize, targets: usize, seed: u64) -> Task {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f32> = (0..dim * targets).map(|_| crate::vit::normal(&mut rng, 0.25)).collect();
        let feats: Vec<f32> = (0..n * dim).map(|_| crate::vit::normal(&mut rng, 1.0)).collect();
        let mut labels = vec![0.0f32; n * targets];
        for i in 0..n {
            for j in 0..targets {
                labels[i * targets + j] = (0..dim)
                    .map(|l| feats[i * dim + l] * w[l * targets + j])
                    .sum();
            }
        }
        let (tr, va, te) = splits(n, &mut rng);
        Task::new(
            TaskKind::Regression,
            Tensor::matrix(n, dim, feats).unwrap(),
            LabelData::Real {
                data: labels,
                targets,
            },
            tr,
            va,
            te,
        )
        .unwrap()
    }

    /// Multilabel task where each tag is a (noisy) halfspace of the features.
    pub fn halfspace_tags(n: usize, dim: usize, tags: usize, seed: u64) -> Task {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f32> = (0..dim * tags).map(|_| crate::vit::normal(&mut rng, 1.0)).collect();
        let feats: Vec<f32> = (0..n * dim).map(|_| crate::vit::normal(&mut rng, 1.0)).collect();
        let mut labels = vec![0.0f32; n * tags];
        for i in 0..n {
            for j in 0..tags {
                let score: f32 = (0..dim)
                    .map(|l| feats[i * dim + l] * w[l * tags + j])
                    .sum();
                labels[i * tags + j] = f32::from(u8::from(score + crate::vit::normal(&mut rng, 0.3) > 0.0));
            }
        }
        let (tr, va, te) = splits(n, &mut rng);
        Task::new(
            TaskKind::Multilabel,
            Tensor::matrix(n, dim, feats).unwrap(),
            LabelData::Binary { data: labels, tags },
            tr,
            va,
            te,
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_216_unique_configs_in_contract_order() {
        let grid = enumerate_grid();
        assert_eq!(grid.len(), 216);
        assert_eq!(
            grid[0],
            ProbeConfig {
                standardize: false,
                model: ProbeModel::Linear,
                batch: 64,
                lr: 1e-5,
                dropout: 0.25,
                l2: 0.0,
            }
        );
        for i in 0..grid.len() {
            for j in i + 1..grid.len() {
                assert_ne!(grid[i], grid[j], "configs {i} and {j} coincide");
            }
        }
    }

    fn quick_opts(seed: u64) -> ProbeOptions {
        ProbeOptions {
            max_epochs: 60,
            patience: 10,
            seed,
        }
    }

    #[test]
    fn separable_task_reaches_perfect_validation_accuracy() {
        let task = synthetic::separable_two_class(200, 6, 11);
        let cfg = ProbeConfig {
            standardize: true,
            model: ProbeModel::Linear,
            batch: 64,
            lr: 1e-3,
            dropout: 0.25,
            l2: 0.0,
        };
        let trained = train_probe(&task, &cfg, &quick_opts(3)).unwrap();
        assert_eq!(trained.valid_metric, 1.0);
    }

    #[test]
    fn random_labels_stay_at_chance_on_test() {
        let task = synthetic::random_labels(640, 8, 4, 21);
        let cfg = ProbeConfig {
            standardize: false,
            model: ProbeModel::Linear,
            batch: 64,
            lr: 1e-3,
            dropout: 0.25,
            l2: 0.0,
        };
        let trained = train_probe(&task, &cfg, &quick_opts(5)).unwrap();
        let m = trained.evaluate(&task, Split::Test).unwrap();
        // 99% binomial interval around 0.25 for the 128-item test split
        let n_test = task.indices(Split::Test).len() as f64;
        let bound = 2.58 * (0.25f64 * 0.75 / n_test).sqrt();
        assert!(
            (m["accuracy"] - 0.25).abs() <= bound + 0.05,
            "accuracy {} strays from chance (bound {bound:.3})",
            m["accuracy"]
        );
    }

    #[test]
    fn realizable_regression_fits() {
        let task = synthetic::realizable_regression(500, 6, 2, 31);
        let cfg = ProbeConfig {
            standardize: false,
            model: ProbeModel::Linear,
            batch: 64,
            lr: 1e-3,
            dropout: 0.25,
            l2: 0.0,
        };
        let trained = train_probe(
            &task,
            &cfg,
            &ProbeOptions {
                max_epochs: 300,
                patience: 30,
                seed: 7,
            },
        )
        .unwrap();
        let m = trained.evaluate(&task, Split::Test).unwrap();
        assert!(m["r2_mean"] > 0.99, "r2 {}", m["r2_mean"]);
    }

    #[test]
    fn degenerate_training_labels_rejected() {
        let feats = Tensor::matrix(9, 2, (0..18).map(|i| i as f32).collect()).unwrap();
        let labels = LabelData::Classes(vec![0, 0, 0, 0, 0, 0, 1, 1, 1]);
        // train split sees only class 0
        let task = Task::new(
            TaskKind::Multiclass,
            feats,
            labels,
            vec![0, 1, 2],
            vec![3, 4, 6],
            vec![5, 7, 8],
        )
        .unwrap();
        let cfg = enumerate_grid()[0];
        assert!(matches!(
            train_probe(&task, &cfg, &quick_opts(0)),
            Err(Error::Task(_))
        ));
    }

    #[test]
    fn overlapping_splits_rejected() {
        let feats = Tensor::matrix(4, 2, vec![0.0; 8]).unwrap();
        let labels = LabelData::Classes(vec![0, 1, 0, 1]);
        assert!(matches!(
            Task::new(
                TaskKind::Multiclass,
                feats,
                labels,
                vec![0, 1],
                vec![1, 2],
                vec![3],
            ),
            Err(Error::Task(_))
        ));
    }

    #[test]
    fn single_cell_grid_equals_that_cell() {
        let task = synthetic::separable_two_class(120, 4, 41);
        let opts = quick_opts(9);
        let result = run_grid(&task, &[5], &opts).unwrap();
        assert_eq!(result.best_config_id, 5);
        assert_eq!(result.cells.len(), 1);
        let direct = train_probe(
            &task,
            &enumerate_grid()[5],
            &ProbeOptions {
                seed: cell_seed(9, 5),
                ..opts
            },
        )
        .unwrap();
        assert_eq!(result.valid_metric, direct.valid_metric);
    }

    #[test]
    fn ties_resolve_to_earliest_config() {
        // A separable task drives many cells to validation accuracy 1.0;
        // the reported winner must be the smallest config id among them.
        let task = synthetic::separable_two_class(120, 4, 51);
        let ids = [7usize, 3, 12];
        let result = run_grid(&task, &ids, &quick_opts(13)).unwrap();
        let best_metric = result.valid_metric;
        let earliest = result
            .cells
            .iter()
            .filter(|c| c.valid_metric == best_metric)
            .map(|c| c.config_id)
            .min()
            .unwrap();
        assert_eq!(result.best_config_id, earliest);
    }

    #[test]
    fn selection_never_reads_test_labels() {
        let task = synthetic::separable_two_class(120, 4, 61);
        assert_eq!(task.test_label_reads(), 0);
        let result = run_grid(&task, &[0, 110], &quick_opts(17)).unwrap();
        // exactly one read: the winner's test evaluation
        assert_eq!(task.test_label_reads(), 1);
        assert_eq!(result.test_metrics["accuracy"], 1.0);
    }

    #[test]
    fn multilabel_probe_beats_chance() {
        let task = synthetic::halfspace_tags(240, 6, 3, 71);
        let cfg = ProbeConfig {
            standardize: true,
            model: ProbeModel::Linear,
            batch: 64,
            lr: 1e-3,
            dropout: 0.25,
            l2: 1e-4,
        };
        let trained = train_probe(&task, &cfg, &quick_opts(19)).unwrap();
        let m = trained.evaluate(&task, Split::Test).unwrap();
        assert!(m["auc"] > 0.85, "auc {}", m["auc"]);
    }

    #[test]
    fn key_task_trains_and_scores() {
        // 24-key blobs task routed through the key metric.
        let base = synthetic::blobs(24, 16, 8, 0.2, 81);
        let task = Task::new(
            TaskKind::Key,
            base.features.clone(),
            base.labels.clone(),
            base.split_train.clone(),
            base.split_valid.clone(),
            base.split_test.clone(),
        )
        .unwrap();
        let cfg = ProbeConfig {
            standardize: true,
            model: ProbeModel::Linear,
            batch: 64,
            lr: 1e-3,
            dropout: 0.25,
            l2: 0.0,
        };
        let trained = train_probe(
            &task,
            &cfg,
            &ProbeOptions {
                max_epochs: 200,
                patience: 20,
                seed: 23,
            },
        )
        .unwrap();
        let m = trained.evaluate(&task, Split::Test).unwrap();
        assert!(m["weighted_score"] > 0.6, "score {}", m["weighted_score"]);
    }
}
