//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a node holding the forward
//! value and the context its backward rule needs. Creation order is already a
//! topological order, so [`Graph::backward`] walks the tape once in reverse
//! and accumulates exact gradients into every node whose subtree contains a
//! trainable leaf.
//!
//! Broadcasting is deliberately restricted to row-vector bias/gain
//! ([`Graph::add_row`], [`Graph::mul_row`]); everything else requires exact
//! shape agreement, which keeps each backward rule small enough to verify by
//! finite differences (see [`gradcheck`]).

mod params;
mod tensor;


pub mod gradcheck;

pub use params::{Binding, ParamId, ParamStore};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use rand::Rng;
use tensor::{matmul_nn, matmul_nt, matmul_tn, transpose2};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const GELU_C1: f32 = 0.797_884_56; // sqrt(2/pi)
const GELU_C2: f32 = 0.044_715;
/// Lanes with an L2 norm below this are treated as zero vectors.
const L2_TINY: f32 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Affine { a: Var, alpha: f32, beta: f32 },
    Transpose(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    SliceCols { a: Var, start: usize, len: usize },
    GatherRows { a: Var, indices: Vec<usize> },
    Softmax { a: Var, axis: usize },
    LayerNorm { a: Var, eps: f32, inv_std: Vec<f32> },
    Gelu(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sum { a: Var, axis: usize },
    SumAll(Var),
    Mean { a: Var, axis: usize },
    MeanAll(Var),
    L2Normalize { a: Var, norms: Vec<f32> },
    Dropout { a: Var, mask: Vec<f32> },
    CrossEntropyLogits { logits: Var, classes: Vec<usize>, probs: Vec<f32> },
    BceWithLogits { logits: Var, targets: Vec<f32>, sig: Vec<f32> },
    Mse(Var, Var),
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::MulRow(..) => "mul_row",
            Op::Affine { .. } => "affine",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Concat { .. } => "concat",
            Op::SliceCols { .. } => "slice_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sum { .. } => "sum",
            Op::SumAll(..) => "sum_all",
            Op::Mean { .. } => "mean",
            Op::MeanAll(..) => "mean_all",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Dropout { .. } => "dropout",
            Op::CrossEntropyLogits { .. } => "cross_entropy_logits",
            Op::BceWithLogits { .. } => "bce_with_logits",
            Op::Mse(..) => "mse",
        }
    }
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
    op: Op,
}

/// Reverse-mode tape. Single-threaded; build one per training step.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        debug_assert!(
            value.is_finite(),
            "non-finite output from op `{}`",
            op.kind()
        );
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Non-trainable input (data, masks, positional tables).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false, Op::Leaf)
    }

    /// Trainable leaf; [`Graph::backward`] accumulates into its grad buffer.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient buffer of `v` after a backward pass, if one reached it.
    pub fn grad_data(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    // ---- ops ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ka) = self.value(a).dims2()?;
        let (kb, n) = self.value(b).dims2()?;
        if ka != kb {
            return Err(Error::Shape(format!(
                "matmul inner dims {} vs {}",
                ka, kb
            )));
        }
        let data = matmul_nn(self.value(a).data(), self.value(b).data(), m, ka, n);
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::from_vec(vec![m, n], data)?, req, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add shapes {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::from_vec(shape, data)?, req, Op::Add(a, b)))
    }

    /// `m + v` with `v` broadcast across the rows of `m` (bias add).
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = self.value(m).dims2()?;
        if self.value(v).shape() != [c] {
            return Err(Error::Shape(format!(
                "add_row wants [{}], got {:?}",
                c,
                self.value(v).shape()
            )));
        }
        let mut data = self.value(m).data().to_vec();
        let vv = self.value(v).data();
        for row in data.chunks_exact_mut(c) {
            for (x, &b) in row.iter_mut().zip(vv) {
                *x += b;
            }
        }
        let req = self.requires(m) || self.requires(v);
        Ok(self.push(Tensor::from_vec(vec![r, c], data)?, req, Op::AddRow(m, v)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "mul shapes {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Tensor::from_vec(shape, data)?, req, Op::Mul(a, b)))
    }

    /// `m * v` with `v` broadcast across the rows of `m` (per-feature gain).
    pub fn mul_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = self.value(m).dims2()?;
        if self.value(v).shape() != [c] {
            return Err(Error::Shape(format!(
                "mul_row wants [{}], got {:?}",
                c,
                self.value(v).shape()
            )));
        }
        let mut data = self.value(m).data().to_vec();
        let vv = self.value(v).data();
        for row in data.chunks_exact_mut(c) {
            for (x, &g) in row.iter_mut().zip(vv) {
                *x *= g;
            }
        }
        let req = self.requires(m) || self.requires(v);
        Ok(self.push(Tensor::from_vec(vec![r, c], data)?, req, Op::MulRow(m, v)))
    }

    /// Elementwise `alpha * a + beta`.
    pub fn affine(&mut self, a: Var, alpha: f32, beta: f32) -> Var {
        let data: Vec<f32> = self.value(a).data().iter().map(|x| alpha * x + beta).collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a);
        self.push(
            Tensor::from_vec(shape, data).expect("same shape"),
            req,
            Op::Affine { a, alpha, beta },
        )
    }

    pub fn scale(&mut self, a: Var, alpha: f32) -> Var {
        self.affine(a, alpha, 0.0)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        let data = transpose2(self.value(a).data(), r, c);
        let req = self.requires(a);
        Ok(self.push(Tensor::from_vec(vec![c, r], data)?, req, Op::Transpose(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {:?} changes element count",
                self.value(a).shape(),
                shape
            )));
        }
        let data = self.value(a).data().to_vec();
        let req = self.requires(a);
        Ok(self.push(Tensor::from_vec(shape.to_vec(), data)?, req, Op::Reshape(a)))
    }

    /// Concatenate rank-2 tensors along `axis` (0 = stack rows, 1 = widen).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero parts".into()));
        }
        if axis > 1 {
            return Err(Error::Axis { axis, rank: 2 });
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.value(p).dims2())
            .collect::<Result<_>>()?;
        let (r0, c0) = dims[0];
        let (rows, cols, data) = if axis == 0 {
            if dims.iter().any(|&(_, c)| c != c0) {
                return Err(Error::Shape("concat axis 0 needs equal column counts".into()));
            }
            let rows: usize = dims.iter().map(|&(r, _)| r).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            (rows, c0, data)
        } else {
            if dims.iter().any(|&(r, _)| r != r0) {
                return Err(Error::Shape("concat axis 1 needs equal row counts".into()));
            }
            let cols: usize = dims.iter().map(|&(_, c)| c).sum();
            let mut data = vec![0.0f32; r0 * cols];
            let mut off = 0;
            for (&p, &(_, c)) in parts.iter().zip(&dims) {
                let src = self.value(p).data();
                for i in 0..r0 {
                    data[i * cols + off..i * cols + off + c]
                        .copy_from_slice(&src[i * c..(i + 1) * c]);
                }
                off += c;
            }
            (r0, cols, data)
        };
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Tensor::from_vec(vec![rows, cols], data)?,
            req,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        if start + len > c || len == 0 {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {}) of {} columns",
                start + len,
                c
            )));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let req = self.requires(a);
        Ok(self.push(
            Tensor::from_vec(vec![r, len], data)?,
            req,
            Op::SliceCols { a, start, len },
        ))
    }

    /// Select rows of `a` by index; duplicates allowed (gradients accumulate).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        if indices.is_empty() {
            return Err(Error::Contract("gather_rows with no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::Shape(format!("gather_rows index {bad} >= {r} rows")));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let req = self.requires(a);
        Ok(self.push(
            Tensor::from_vec(vec![indices.len(), c], data)?,
            req,
            Op::GatherRows {
                a,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Softmax along `axis` of a rank-2 tensor (or axis 0 of a vector).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let (shape, lanes) = lane_layout(t, axis)?;
        let mut data = t.data().to_vec();
        for lane in lanes.iter() {
            let m = lane.iter().map(|&i| data[i]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for &i in lane {
                let e = (data[i] - m).exp();
                data[i] = e;
                sum += e;
            }
            for &i in lane {
                data[i] /= sum;
            }
        }
        let req = self.requires(a);
        Ok(self.push(Tensor::from_vec(shape, data)?, req, Op::Softmax { a, axis }))
    }

    /// Normalize each lane of the last axis to zero mean, unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f32) -> Result<Var> {
        let t = self.value(a);
        let axis = t.rank().saturating_sub(1);
        let (shape, lanes) = lane_layout(t, axis)?;
        let mut data = t.data().to_vec();
        let mut inv_stds = Vec::with_capacity(lanes.len());
        for lane in lanes.iter() {
            let n = lane.len() as f32;
            let mean = lane.iter().map(|&i| data[i]).sum::<f32>() / n;
            let var = lane.iter().map(|&i| (data[i] - mean) * (data[i] - mean)).sum::<f32>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for &i in lane {
                data[i] = (data[i] - mean) * inv;
            }
            inv_stds.push(inv);
        }
        let req = self.requires(a);
        Ok(self.push(
            Tensor::from_vec(shape, data)?,
            req,
            Op::LayerNorm {
                a,
                eps,
                inv_std: inv_stds,
            },
        ))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| {
                let u = GELU_C1 * (x + GELU_C2 * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            })
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a);
        self.push(Tensor::from_vec(shape, data).expect("same shape"), req, Op::Gelu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data: Vec<f32> = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a);
        self.push(Tensor::from_vec(shape, data).expect("same shape"), req, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let data: Vec<f32> = self.value(a).data().iter().map(|&x| x.exp()).collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a);
        self.push(Tensor::from_vec(shape, data).expect("same shape"), req, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let data: Vec<f32> = self.value(a).data().iter().map(|&x| x.ln()).collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a);
        self.push(Tensor::from_vec(shape, data).expect("same shape"), req, Op::Log(a))
    }

    /// Sum a rank-2 tensor along `axis` (0 -> per-column, 1 -> per-row).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        if axis > 1 {
            return Err(Error::Axis { axis, rank: 2 });
        }
        let src = self.value(a).data();
        let data = if axis == 0 {
            let mut out = vec![0.0f32; c];
            for row in src.chunks_exact(c) {
                for (o, &x) in out.iter_mut().zip(row) {
                    *o += x;
                }
            }
            out
        } else {
            src.chunks_exact(c).map(|row| row.iter().sum()).collect()
        };
        let out_len = if axis == 0 { c } else { r };
        let req = self.requires(a);
        Ok(self.push(
            Tensor::from_vec(vec![out_len], data)?,
            req,
            Op::Sum { a, axis },
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f32 = self.value(a).data().iter().sum();
        let req = self.requires(a);
        self.push(Tensor::scalar(s), req, Op::SumAll(a))
    }

    /// Mean of a rank-2 tensor along `axis` (0 -> per-column, 1 -> per-row).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.value(a).dims2()?;
        if axis > 1 {
            return Err(Error::Axis { axis, rank: 2 });
        }
        let denom = if axis == 0 { r } else { c } as f32;
        let src = self.value(a).data();
        let data: Vec<f32> = if axis == 0 {
            let mut out = vec![0.0f32; c];
            for row in src.chunks_exact(c) {
                for (o, &x) in out.iter_mut().zip(row) {
                    *o += x;
                }
            }
            out.iter().map(|x| x / denom).collect()
        } else {
            src.chunks_exact(c).map(|row| row.iter().sum::<f32>() / denom).collect()
        };
        let out_len = if axis == 0 { c } else { r };
        let req = self.requires(a);
        Ok(self.push(
            Tensor::from_vec(vec![out_len], data)?,
            req,
            Op::Mean { a, axis },
        ))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f32;
        let s: f32 = self.value(a).data().iter().sum();
        let req = self.requires(a);
        self.push(Tensor::scalar(s / n), req, Op::MeanAll(a))
    }

    /// L2-normalize each lane of the last axis; zero lanes map to zero.
    pub fn l2_normalize(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis + 1 != t.rank().max(1) {
            return Err(Error::Axis { axis, rank: t.rank() });
        }
        let (shape, lanes) = lane_layout(t, axis)?;
        let mut data = t.data().to_vec();
        let mut norms = Vec::with_capacity(lanes.len());
        for lane in lanes.iter() {
            let n = lane.iter().map(|&i| data[i] * data[i]).sum::<f32>().sqrt();
            if n > L2_TINY {
                for &i in lane {
                    data[i] /= n;
                }
            } else {
                for &i in lane {
                    data[i] = 0.0;
                }
            }
            norms.push(n);
        }
        let req = self.requires(a);
        Ok(self.push(
            Tensor::from_vec(shape, data)?,
            req,
            Op::L2Normalize { a, norms },
        ))
    }

    /// Inverted dropout: kept activations are scaled by 1/(1-p), so the
    /// identity (no-op) is the evaluation-mode behaviour.
    pub fn dropout(&mut self, a: Var, p: f32, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout p={p} outside [0,1)")));
        }
        let n = self.value(a).numel();
        let mask: Vec<f32> = if p == 0.0 {
            vec![1.0; n]
        } else {
            let keep = 1.0 / (1.0 - p);
            (0..n)
                .map(|_| if rng.gen::<f32>() < p { 0.0 } else { keep })
                .collect()
        };
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let req = self.requires(a);
        Ok(self.push(Tensor::from_vec(shape, data)?, req, Op::Dropout { a, mask }))
    }

    /// Mean softmax cross-entropy of `logits` rows against class indices.
    pub fn cross_entropy_logits(&mut self, logits: Var, classes: &[usize]) -> Result<Var> {
        let (n, c) = self.value(logits).dims2()?;
        if classes.len() != n {
            return Err(Error::Shape(format!(
                "{} class labels for {} rows",
                classes.len(),
                n
            )));
        }
        if let Some(&bad) = classes.iter().find(|&&y| y >= c) {
            return Err(Error::Shape(format!("class {bad} >= {c} logits")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0f32; n * c];
        let mut loss = 0.0f64;
        for (i, &y) in classes.iter().enumerate() {
            let row = &src[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - m).exp();
                probs[i * c + j] = e;
                sum += e;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p /= sum;
            }
            loss += f64::from(sum.ln() + m - row[y]);
        }
        let req = self.requires(logits);
        Ok(self.push(
            Tensor::scalar((loss / n as f64) as f32),
            req,
            Op::CrossEntropyLogits {
                logits,
                classes: classes.to_vec(),
                probs,
            },
        ))
    }

    /// Mean of elementwise binary cross-entropy on logits against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        if self.value(logits).shape() != targets.shape() {
            return Err(Error::Shape(format!(
                "bce shapes {:?} vs {:?}",
                self.value(logits).shape(),
                targets.shape()
            )));
        }
        let src = self.value(logits).data();
        let mut sig = vec![0.0f32; src.len()];
        let mut loss = 0.0f64;
        for (i, (&x, &t)) in src.iter().zip(targets.data()).enumerate() {
            sig[i] = 1.0 / (1.0 + (-x).exp());
            loss += f64::from(x.max(0.0) - x * t + (-x.abs()).exp().ln_1p());
        }
        let req = self.requires(logits);
        Ok(self.push(
            Tensor::scalar((loss / src.len() as f64) as f32),
            req,
            Op::BceWithLogits {
                logits,
                targets: targets.data().to_vec(),
                sig,
            },
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.value(pred).shape() != self.value(target).shape() {
            return Err(Error::Shape(format!(
                "mse shapes {:?} vs {:?}",
                self.value(pred).shape(),
                self.value(target).shape()
            )));
        }
        let s: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum();
        let n = self.value(pred).numel() as f64;
        let req = self.requires(pred) || self.requires(target);
        Ok(self.push(Tensor::scalar((s / n) as f32), req, Op::Mse(pred, target)))
    }

    // ---- backward ----

    /// Reverse pass from a scalar loss. Each call runs one sweep in scratch
    /// buffers and then adds the result into every reached node's persistent
    /// grad, so repeated calls without a fresh graph accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut work: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        work[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || work[i].is_none() {
                continue;
            }
            let g = work[i].take().unwrap();
            self.backprop_node(i, &g, &mut work);
            let node = &mut self.nodes[i];
            let n = node.value.numel();
            let buf = node.grad.get_or_insert_with(|| vec![0.0; n]);
            for (b, &d) in buf.iter_mut().zip(&g) {
                *b += d;
            }
        }
        Ok(())
    }

    fn accumulate(&self, v: Var, delta: &[f32], work: &mut [Option<Vec<f32>>]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let grad = work[v.0].get_or_insert_with(|| vec![0.0; n]);
        for (g, &d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn backprop_node(&self, idx: usize, g: &[f32], work: &mut [Option<Vec<f32>>]) {
        // The op is cloned out shallowly via match on references; parent
        // values are read immutably before any accumulate call.
        match &self.nodes[idx].op {
            Op::Leaf => {}
            &Op::Matmul(a, b) => {
                let (m, k) = self.nodes[a.0].value.dims2().unwrap();
                let n = self.nodes[b.0].value.shape()[1];
                let da = matmul_nt(g, self.nodes[b.0].value.data(), m, n, k);
                let db = matmul_tn(self.nodes[a.0].value.data(), g, m, k, n);
                self.accumulate(a, &da, work);
                self.accumulate(b, &db, work);
            }
            &Op::Add(a, b) => {
                self.accumulate(a, g, work);
                self.accumulate(b, g, work);
            }
            &Op::AddRow(m, v) => {
                let c = self.nodes[v.0].value.numel();
                let mut dv = vec![0.0f32; c];
                for row in g.chunks_exact(c) {
                    for (o, &x) in dv.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                self.accumulate(m, g, work);
                self.accumulate(v, &dv, work);
            }
            &Op::Mul(a, b) => {
                let da: Vec<f32> = g
                    .iter()
                    .zip(self.nodes[b.0].value.data())
                    .map(|(&gi, &bi)| gi * bi)
                    .collect();
                let db: Vec<f32> = g
                    .iter()
                    .zip(self.nodes[a.0].value.data())
                    .map(|(&gi, &ai)| gi * ai)
                    .collect();
                self.accumulate(a, &da, work);
                self.accumulate(b, &db, work);
            }
            &Op::MulRow(m, v) => {
                let c = self.nodes[v.0].value.numel();
                let vv = self.nodes[v.0].value.data();
                let mv = self.nodes[m.0].value.data();
                let mut dm = vec![0.0f32; g.len()];
                let mut dv = vec![0.0f32; c];
                for (ri, row) in g.chunks_exact(c).enumerate() {
                    for j in 0..c {
                        dm[ri * c + j] = row[j] * vv[j];
                        dv[j] += row[j] * mv[ri * c + j];
                    }
                }
                self.accumulate(m, &dm, work);
                self.accumulate(v, &dv, work);
            }
            &Op::Affine { a, alpha, .. } => {
                let da: Vec<f32> = g.iter().map(|&x| alpha * x).collect();
                self.accumulate(a, &da, work);
            }
            &Op::Transpose(a) => {
                let (r, c) = self.nodes[idx].value.dims2().unwrap();
                let da = transpose2(g, r, c);
                self.accumulate(a, &da, work);
            }
            &Op::Reshape(a) => {
                self.accumulate(a, g, work);
            }
            Op::Concat { parts, axis } => {
                let parts = parts.clone();
                let axis = *axis;
                if axis == 0 {
                    let mut off = 0;
                    for &p in &parts {
                        let n = self.nodes[p.0].value.numel();
                        let slice = g[off..off + n].to_vec();
                        self.accumulate(p, &slice, work);
                        off += n;
                    }
                } else {
                    let rows = self.nodes[idx].value.shape()[0];
                    let cols = self.nodes[idx].value.shape()[1];
                    let mut off = 0;
                    for &p in &parts {
                        let c = self.nodes[p.0].value.shape()[1];
                        let mut dp = vec![0.0f32; rows * c];
                        for i in 0..rows {
                            dp[i * c..(i + 1) * c]
                                .copy_from_slice(&g[i * cols + off..i * cols + off + c]);
                        }
                        self.accumulate(p, &dp, work);
                        off += c;
                    }
                }
            }
            &Op::SliceCols { a, start, len } => {
                let (r, c) = self.nodes[a.0].value.dims2().unwrap();
                let mut da = vec![0.0f32; r * c];
                for i in 0..r {
                    da[i * c + start..i * c + start + len]
                        .copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                self.accumulate(a, &da, work);
            }
            Op::GatherRows { a, indices } => {
                let a = *a;
                let indices = indices.clone();
                let (r, c) = self.nodes[a.0].value.dims2().unwrap();
                let mut da = vec![0.0f32; r * c];
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        da[i * c + j] += g[k * c + j];
                    }
                }
                self.accumulate(a, &da, work);
            }
            &Op::Softmax { a, axis } => {
                let y = &self.nodes[idx].value;
                let (_, lanes) = lane_layout(y, axis).unwrap();
                let yd = y.data();
                let mut da = vec![0.0f32; yd.len()];
                for lane in lanes.iter() {
                    let dot: f32 = lane.iter().map(|&i| g[i] * yd[i]).sum();
                    for &i in lane {
                        da[i] = yd[i] * (g[i] - dot);
                    }
                }
                self.accumulate(a, &da, work);
            }
            Op::LayerNorm { a, inv_std, .. } => {
                let a = *a;
                let inv_std = inv_std.clone();
                let y = self.nodes[idx].value.data();
                let t = &self.nodes[idx].value;
                let axis = t.rank().saturating_sub(1);
                let (_, lanes) = lane_layout(t, axis).unwrap();
                let mut da = vec![0.0f32; y.len()];
                for (li, lane) in lanes.iter().enumerate() {
                    let n = lane.len() as f32;
                    let g_mean: f32 = lane.iter().map(|&i| g[i]).sum::<f32>() / n;
                    let gy_mean: f32 = lane.iter().map(|&i| g[i] * y[i]).sum::<f32>() / n;
                    for &i in lane {
                        da[i] = inv_std[li] * (g[i] - g_mean - y[i] * gy_mean);
                    }
                }
                self.accumulate(a, &da, work);
            }
            &Op::Gelu(a) => {
                let xv = self.nodes[a.0].value.data();
                let da: Vec<f32> = g
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &x)| {
                        let u = GELU_C1 * (x + GELU_C2 * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C1 * (1.0 + 3.0 * GELU_C2 * x * x);
                        gi * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .collect();
                self.accumulate(a, &da, work);
            }
            &Op::Relu(a) => {
                let xv = self.nodes[a.0].value.data();
                let da: Vec<f32> = g
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &x)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                self.accumulate(a, &da, work);
            }
            &Op::Exp(a) => {
                let y = self.nodes[idx].value.data();
                let da: Vec<f32> = g.iter().zip(y).map(|(&gi, &yi)| gi * yi).collect();
                self.accumulate(a, &da, work);
            }
            &Op::Log(a) => {
                let xv = self.nodes[a.0].value.data();
                let da: Vec<f32> = g.iter().zip(xv).map(|(&gi, &x)| gi / x).collect();
                self.accumulate(a, &da, work);
            }
            &Op::Sum { a, axis } => {
                let (r, c) = self.nodes[a.0].value.dims2().unwrap();
                let mut da = vec![0.0f32; r * c];
                if axis == 0 {
                    for row in da.chunks_exact_mut(c) {
                        row.copy_from_slice(g);
                    }
                } else {
                    for (i, row) in da.chunks_exact_mut(c).enumerate() {
                        row.fill(g[i]);
                    }
                }
                self.accumulate(a, &da, work);
            }
            &Op::SumAll(a) => {
                let da = vec![g[0]; self.nodes[a.0].value.numel()];
                self.accumulate(a, &da, work);
            }
            &Op::Mean { a, axis } => {
                let (r, c) = self.nodes[a.0].value.dims2().unwrap();
                let denom = if axis == 0 { r } else { c } as f32;
                let mut da = vec![0.0f32; r * c];
                if axis == 0 {
                    for row in da.chunks_exact_mut(c) {
                        for (o, &gv) in row.iter_mut().zip(g) {
                            *o = gv / denom;
                        }
                    }
                } else {
                    for (i, row) in da.chunks_exact_mut(c).enumerate() {
                        row.fill(g[i] / denom);
                    }
                }
                self.accumulate(a, &da, work);
            }
            &Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.numel();
                let da = vec![g[0] / n as f32; n];
                self.accumulate(a, &da, work);
            }
            Op::L2Normalize { a, norms } => {
                let a = *a;
                let norms = norms.clone();
                let t = &self.nodes[idx].value;
                let axis = t.rank().saturating_sub(1);
                let (_, lanes) = lane_layout(t, axis).unwrap();
                let y = self.nodes[idx].value.data();
                let mut da = vec![0.0f32; y.len()];
                for (li, lane) in lanes.iter().enumerate() {
                    if norms[li] <= L2_TINY {
                        continue; // zero lane: zero gradient by convention
                    }
                    let dot: f32 = lane.iter().map(|&i| g[i] * y[i]).sum();
                    for &i in lane {
                        da[i] = (g[i] - y[i] * dot) / norms[li];
                    }
                }
                self.accumulate(a, &da, work);
            }
            Op::Dropout { a, mask } => {
                let a = *a;
                let da: Vec<f32> = g.iter().zip(mask).map(|(&gi, &m)| gi * m).collect();
                self.accumulate(a, &da, work);
            }
            Op::CrossEntropyLogits { logits, classes, probs } => {
                let logits = *logits;
                let n = classes.len();
                let c = probs.len() / n;
                let mut da = probs.clone();
                for (i, &y) in classes.iter().enumerate() {
                    da[i * c + y] -= 1.0;
                }
                let scale = g[0] / n as f32;
                for d in &mut da {
                    *d *= scale;
                }
                self.accumulate(logits, &da, work);
            }
            Op::BceWithLogits { logits, targets, sig } => {
                let logits = *logits;
                let scale = g[0] / sig.len() as f32;
                let da: Vec<f32> = sig
                    .iter()
                    .zip(targets)
                    .map(|(&s, &t)| (s - t) * scale)
                    .collect();
                self.accumulate(logits, &da, work);
            }
            &Op::Mse(pred, target) => {
                let n = self.nodes[pred.0].value.numel() as f32;
                let scale = 2.0 * g[0] / n;
                let da: Vec<f32> = self
                    .nodes[pred.0]
                    .value
                    .data()
                    .iter()
                    .zip(self.nodes[target.0].value.data())
                    .map(|(&a, &b)| scale * (a - b))
                    .collect();
                let db: Vec<f32> = da.iter().map(|&x| -x).collect();
                self.accumulate(pred, &da, work);
                self.accumulate(target, &db, work);
            }
        }
    }
}

impl Graph {
    /// Re-evaluate the recorded tape up to `target` in f64, overriding the
    /// values of selected leaves. Saved stochastic context (dropout masks)
    /// is reused, so the replay computes the same function as the original
    /// forward pass at higher precision. This is the numeric side of the
    /// finite-difference oracle in [`gradcheck`].
    pub fn replay_f64(&self, target: Var, overrides: &[(Var, &[f64])]) -> Result<f64> {
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(target.0 + 1);
        let val = |vals: &Vec<Vec<f64>>, v: Var| -> Vec<f64> { vals[v.0].clone() };
        for idx in 0..=target.0 {
            let node = &self.nodes[idx];
            let out: Vec<f64> = match &node.op {
                Op::Leaf => {
                    if let Some((_, data)) = overrides.iter().find(|(v, _)| v.0 == idx) {
                        data.to_vec()
                    } else {
                        node.value.data().iter().map(|&x| f64::from(x)).collect()
                    }
                }
                &Op::Matmul(a, b) => {
                    let (m, k) = self.nodes[a.0].value.dims2()?;
                    let n = self.nodes[b.0].value.shape()[1];
                    let (av, bv) = (val(&vals, a), val(&vals, b));
                    let mut out = vec![0.0f64; m * n];
                    for i in 0..m {
                        for l in 0..k {
                            let x = av[i * k + l];
                            for j in 0..n {
                                out[i * n + j] += x * bv[l * n + j];
                            }
                        }
                    }
                    out
                }
                &Op::Add(a, b) => val(&vals, a)
                    .iter()
                    .zip(&val(&vals, b))
                    .map(|(x, y)| x + y)
                    .collect(),
                &Op::AddRow(m, v) => {
                    let c = self.nodes[v.0].value.numel();
                    let (mv, vv) = (val(&vals, m), val(&vals, v));
                    mv.iter().enumerate().map(|(i, x)| x + vv[i % c]).collect()
                }
                &Op::Mul(a, b) => val(&vals, a)
                    .iter()
                    .zip(&val(&vals, b))
                    .map(|(x, y)| x * y)
                    .collect(),
                &Op::MulRow(m, v) => {
                    let c = self.nodes[v.0].value.numel();
                    let (mv, vv) = (val(&vals, m), val(&vals, v));
                    mv.iter().enumerate().map(|(i, x)| x * vv[i % c]).collect()
                }
                &Op::Affine { a, alpha, beta } => val(&vals, a)
                    .iter()
                    .map(|x| f64::from(alpha) * x + f64::from(beta))
                    .collect(),
                &Op::Transpose(a) => {
                    let (r, c) = self.nodes[a.0].value.dims2()?;
                    let av = val(&vals, a);
                    let mut out = vec![0.0f64; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            out[j * r + i] = av[i * c + j];
                        }
                    }
                    out
                }
                &Op::Reshape(a) => val(&vals, a),
                Op::Concat { parts, axis } => {
                    if *axis == 0 {
                        parts.iter().flat_map(|&p| val(&vals, p)).collect()
                    } else {
                        let rows = self.nodes[idx].value.shape()[0];
                        let cols = self.nodes[idx].value.shape()[1];
                        let mut out = vec![0.0f64; rows * cols];
                        let mut off = 0;
                        for &p in parts {
                            let c = self.nodes[p.0].value.shape()[1];
                            let pv = val(&vals, p);
                            for i in 0..rows {
                                out[i * cols + off..i * cols + off + c]
                                    .copy_from_slice(&pv[i * c..(i + 1) * c]);
                            }
                            off += c;
                        }
                        out
                    }
                }
                &Op::SliceCols { a, start, len } => {
                    let (r, c) = self.nodes[a.0].value.dims2()?;
                    let av = val(&vals, a);
                    let mut out = Vec::with_capacity(r * len);
                    for i in 0..r {
                        out.extend_from_slice(&av[i * c + start..i * c + start + len]);
                    }
                    out
                }
                Op::GatherRows { a, indices } => {
                    let c = self.nodes[a.0].value.shape()[1];
                    let av = val(&vals, *a);
                    indices
                        .iter()
                        .flat_map(|&i| av[i * c..(i + 1) * c].to_vec())
                        .collect()
                }
                &Op::Softmax { a, axis } => {
                    let (_, lanes) = lane_layout(&self.nodes[a.0].value, axis)?;
                    let mut out = val(&vals, a);
                    for lane in &lanes {
                        let m = lane.iter().map(|&i| out[i]).fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        for &i in lane {
                            out[i] = (out[i] - m).exp();
                            sum += out[i];
                        }
                        for &i in lane {
                            out[i] /= sum;
                        }
                    }
                    out
                }
                Op::LayerNorm { a, eps, .. } => {
                    let (a, eps) = (*a, *eps);
                    let t = &self.nodes[a.0].value;
                    let axis = t.rank().saturating_sub(1);
                    let (_, lanes) = lane_layout(t, axis)?;
                    let mut out = val(&vals, a);
                    for lane in &lanes {
                        let n = lane.len() as f64;
                        let mean = lane.iter().map(|&i| out[i]).sum::<f64>() / n;
                        let var =
                            lane.iter().map(|&i| (out[i] - mean) * (out[i] - mean)).sum::<f64>()
                                / n;
                        let inv = 1.0 / (var + f64::from(eps)).sqrt();
                        for &i in lane {
                            out[i] = (out[i] - mean) * inv;
                        }
                    }
                    out
                }
                &Op::Gelu(a) => val(&vals, a)
                    .iter()
                    .map(|&x| {
                        let u = f64::from(GELU_C1) * (x + f64::from(GELU_C2) * x * x * x);
                        0.5 * x * (1.0 + u.tanh())
                    })
                    .collect(),
                &Op::Relu(a) => val(&vals, a).iter().map(|&x| x.max(0.0)).collect(),
                &Op::Exp(a) => val(&vals, a).iter().map(|&x| x.exp()).collect(),
                &Op::Log(a) => val(&vals, a).iter().map(|&x| x.ln()).collect(),
                &Op::Sum { a, axis } => {
                    let (r, c) = self.nodes[a.0].value.dims2()?;
                    let av = val(&vals, a);
                    if axis == 0 {
                        (0..c).map(|j| (0..r).map(|i| av[i * c + j]).sum()).collect()
                    } else {
                        av.chunks_exact(c).map(|row| row.iter().sum()).collect()
                    }
                }
                &Op::SumAll(a) => vec![val(&vals, a).iter().sum()],
                &Op::Mean { a, axis } => {
                    let (r, c) = self.nodes[a.0].value.dims2()?;
                    let av = val(&vals, a);
                    let denom = if axis == 0 { r } else { c } as f64;
                    if axis == 0 {
                        (0..c)
                            .map(|j| (0..r).map(|i| av[i * c + j]).sum::<f64>() / denom)
                            .collect()
                    } else {
                        av.chunks_exact(c)
                            .map(|row| row.iter().sum::<f64>() / denom)
                            .collect()
                    }
                }
                &Op::MeanAll(a) => {
                    let av = val(&vals, a);
                    vec![av.iter().sum::<f64>() / av.len() as f64]
                }
                Op::L2Normalize { a, .. } => {
                    let a = *a;
                    let t = &self.nodes[a.0].value;
                    let axis = t.rank().saturating_sub(1);
                    let (_, lanes) = lane_layout(t, axis)?;
                    let mut out = val(&vals, a);
                    for lane in &lanes {
                        let n = lane.iter().map(|&i| out[i] * out[i]).sum::<f64>().sqrt();
                        if n > f64::from(L2_TINY) {
                            for &i in lane {
                                out[i] /= n;
                            }
                        } else {
                            for &i in lane {
                                out[i] = 0.0;
                            }
                        }
                    }
                    out
                }
                Op::Dropout { a, mask } => val(&vals, *a)
                    .iter()
                    .zip(mask)
                    .map(|(x, &m)| x * f64::from(m))
                    .collect(),
                Op::CrossEntropyLogits { logits, classes, .. } => {
                    let c = self.nodes[logits.0].value.shape()[1];
                    let lv = val(&vals, *logits);
                    let mut loss = 0.0f64;
                    for (i, &y) in classes.iter().enumerate() {
                        let row = &lv[i * c..(i + 1) * c];
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let sum: f64 = row.iter().map(|&x| (x - m).exp()).sum();
                        loss += sum.ln() + m - row[y];
                    }
                    vec![loss / classes.len() as f64]
                }
                Op::BceWithLogits { logits, targets, .. } => {
                    let lv = val(&vals, *logits);
                    let loss: f64 = lv
                        .iter()
                        .zip(targets)
                        .map(|(&x, &t)| x.max(0.0) - x * f64::from(t) + (-x.abs()).exp().ln_1p())
                        .sum();
                    vec![loss / lv.len() as f64]
                }
                &Op::Mse(pred, tgt) => {
                    let (pv, tv) = (val(&vals, pred), val(&vals, tgt));
                    let s: f64 = pv
                        .iter()
                        .zip(&tv)
                        .map(|(&a, &b)| (a - b) * (a - b))
                        .sum();
                    vec![s / pv.len() as f64]
                }
            };
            vals.push(out);
        }
        let out = &vals[target.0];
        if out.len() != 1 {
            return Err(Error::Contract("replay target must be scalar".into()));
        }
        Ok(out[0])
    }
}

/// Index lists for every lane along `axis`. A lane is one run of elements
/// that a per-axis op (softmax, layer_norm, l2_normalize) treats as a unit.
fn lane_layout(t: &Tensor, axis: usize) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
    let shape = t.shape().to_vec();
    match (t.rank(), axis) {
        (0, _) => Ok((shape, vec![vec![0]])),
        (1, 0) => Ok((shape.clone(), vec![(0..shape[0]).collect()])),
        (2, 0) => {
            let (r, c) = (shape[0], shape[1]);
            let lanes = (0..c)
                .map(|j| (0..r).map(|i| i * c + j).collect())
                .collect();
            Ok((shape, lanes))
        }
        (2, 1) => {
            let (r, c) = (shape[0], shape[1]);
            let lanes = (0..r)
                .map(|i| (i * c..(i + 1) * c).collect())
                .collect();
            Ok((shape, lanes))
        }
        (rank, axis) => Err(Error::Axis { axis, rank }),
    }
}
