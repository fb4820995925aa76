//! SimpleViT-style encoder: per-patch-layout linear tokenizers, fixed 2D
//! sinusoidal positional encodings, pre-norm transformer blocks with GELU,
//! global average pooling instead of a CLS token, a 2-layer projector head,
//! and an optional light decoder for the masked auto-encoder baseline.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Binding, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::masking::{PatchConfig, TokenSet, SQUARE, VERTICAL};

pub const LN_EPS: f32 = 1e-5;
const INIT_STD: f32 = 0.02;
/// Flattened values per patch; both shipped layouts give 16*16 = 128*2 = 256.
pub const PATCH_VALUES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            dim: 64,
            depth: 2,
            heads: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub proj_dim: usize,
    pub patch_cfgs: Vec<PatchConfig>,
    /// Present only for the masked auto-encoder baseline.
    pub decoder: Option<DecoderConfig>,
}

impl ModelConfig {
    /// Small configuration that trains on CPU in minutes.
    pub fn desk(patch_cfgs: Vec<PatchConfig>) -> Self {
        ModelConfig {
            dim: 128,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            proj_dim: 128,
            patch_cfgs,
            decoder: None,
        }
    }

    /// ViT-S shape (~22M parameters with both tokenizers and projector);
    /// used for parity checks, not for desk-scale training.
    pub fn vit_s() -> Self {
        ModelConfig {
            dim: 384,
            depth: 12,
            heads: 6,
            mlp_ratio: 4,
            proj_dim: 128,
            patch_cfgs: vec![SQUARE, VERTICAL],
            decoder: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.dim % 4 != 0 {
            return Err(Error::Config(format!(
                "dim {} not divisible by 4 (2D sinusoidal encoding)",
                self.dim
            )));
        }
        if self.patch_cfgs.is_empty() || self.patch_cfgs.len() > 2 {
            return Err(Error::Config("need one or two patch layouts".into()));
        }
        if self.patch_cfgs.len() == 2 && self.patch_cfgs[0].name == self.patch_cfgs[1].name {
            return Err(Error::Config("duplicate patch layout".into()));
        }
        for p in &self.patch_cfgs {
            if p.values_per_patch() != PATCH_VALUES {
                return Err(Error::Config(format!(
                    "patch layout {} has {} values per patch, tokenizers expect {}",
                    p.name,
                    p.values_per_patch(),
                    PATCH_VALUES
                )));
            }
        }
        if let Some(d) = &self.decoder {
            if d.dim % d.heads != 0 || d.dim % 4 != 0 || d.depth == 0 {
                return Err(Error::Config("invalid decoder shape".into()));
            }
        }
        Ok(())
    }

    pub fn has_patch(&self, name: &str) -> bool {
        self.patch_cfgs.iter().any(|p| p.name == name)
    }
}

pub(crate) fn normal(rng: &mut impl Rng, std: f32) -> f32 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32 * std
}

fn weight(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| normal(rng, INIT_STD)).collect();
    Tensor::matrix(rows, cols, data).expect("sized data")
}

fn add_block(store: &mut ParamStore, rng: &mut impl Rng, prefix: &str, dim: usize, mlp: usize) {
    store.add(&format!("{prefix}.ln1.g"), Tensor::full(&[dim], 1.0));
    store.add(&format!("{prefix}.ln1.b"), Tensor::zeros(&[dim]));
    store.add(&format!("{prefix}.qkv.w"), weight(rng, dim, 3 * dim));
    store.add(&format!("{prefix}.qkv.b"), Tensor::zeros(&[3 * dim]));
    store.add(&format!("{prefix}.out.w"), weight(rng, dim, dim));
    store.add(&format!("{prefix}.out.b"), Tensor::zeros(&[dim]));
    store.add(&format!("{prefix}.ln2.g"), Tensor::full(&[dim], 1.0));
    store.add(&format!("{prefix}.ln2.b"), Tensor::zeros(&[dim]));
    store.add(&format!("{prefix}.mlp1.w"), weight(rng, dim, mlp));
    store.add(&format!("{prefix}.mlp1.b"), Tensor::zeros(&[mlp]));
    store.add(&format!("{prefix}.mlp2.w"), weight(rng, mlp, dim));
    store.add(&format!("{prefix}.mlp2.b"), Tensor::zeros(&[dim]));
}

/// Create and initialize all model parameters in canonical order.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for p in &cfg.patch_cfgs {
        store.add(
            &format!("tok.{}.w", p.name),
            weight(&mut rng, PATCH_VALUES, cfg.dim),
        );
        store.add(&format!("tok.{}.b", p.name), Tensor::zeros(&[cfg.dim]));
    }
    for i in 0..cfg.depth {
        add_block(
            &mut store,
            &mut rng,
            &format!("enc.{i}"),
            cfg.dim,
            cfg.dim * cfg.mlp_ratio,
        );
    }
    store.add("enc.ln.g", Tensor::full(&[cfg.dim], 1.0));
    store.add("enc.ln.b", Tensor::zeros(&[cfg.dim]));
    store.add("proj.0.w", weight(&mut rng, cfg.dim, cfg.dim));
    store.add("proj.0.b", Tensor::zeros(&[cfg.dim]));
    store.add("proj.1.w", weight(&mut rng, cfg.dim, cfg.proj_dim));
    store.add("proj.1.b", Tensor::zeros(&[cfg.proj_dim]));
    if let Some(d) = &cfg.decoder {
        store.add("dec.embed.w", weight(&mut rng, cfg.dim, d.dim));
        store.add("dec.embed.b", Tensor::zeros(&[d.dim]));
        let mt = Tensor::matrix(1, d.dim, (0..d.dim).map(|_| normal(&mut rng, INIT_STD)).collect())?;
        store.add("dec.mask_token", mt);
        for i in 0..d.depth {
            add_block(
                &mut store,
                &mut rng,
                &format!("dec.{i}"),
                d.dim,
                d.dim * cfg.mlp_ratio,
            );
        }
        store.add("dec.ln.g", Tensor::full(&[d.dim], 1.0));
        store.add("dec.ln.b", Tensor::zeros(&[d.dim]));
        store.add("dec.head.w", weight(&mut rng, d.dim, PATCH_VALUES));
        store.add("dec.head.b", Tensor::zeros(&[PATCH_VALUES]));
    }
    Ok(store)
}

/// Fixed 2D sinusoidal positional table for a rows x cols grid, laid out as
/// four blocks of dim/4 frequencies: [sin(y w) | cos(y w) | sin(x w) | cos(x w)],
/// w_k = 10000^(-4k/dim).
pub fn posenc_2d(rows: usize, cols: usize, dim: usize) -> Result<Tensor> {
    if dim % 4 != 0 {
        return Err(Error::Config(format!("posenc dim {dim} not divisible by 4")));
    }
    let quarter = dim / 4;
    let mut data = vec![0.0f32; rows * cols * dim];
    for y in 0..rows {
        for x in 0..cols {
            let base = (y * cols + x) * dim;
            for k in 0..quarter {
                let omega = 10_000f64.powf(-4.0 * k as f64 / dim as f64);
                let (ya, xa) = (y as f64 * omega, x as f64 * omega);
                data[base + k] = ya.sin() as f32;
                data[base + quarter + k] = ya.cos() as f32;
                data[base + 2 * quarter + k] = xa.sin() as f32;
                data[base + 3 * quarter + k] = xa.cos() as f32;
            }
        }
    }
    Tensor::matrix(rows * cols, dim, data)
}

/// Parameter handles for one graph.
pub struct ModelVars<'a> {
    pub store: &'a ParamStore,
    pub binding: &'a Binding,
}

impl<'a> ModelVars<'a> {
    pub fn new(store: &'a ParamStore, binding: &'a Binding) -> Self {
        ModelVars { store, binding }
    }

    fn var(&self, name: &str) -> Result<Var> {
        self.binding.named(self.store, name)
    }
}

/// Linear patch embedding plus positional encoding gathered at each kept
/// token's original grid coordinate (masking hides positions, it does not
/// relabel them).
pub fn tokenize(
    g: &mut Graph,
    vars: &ModelVars,
    cfg: &PatchConfig,
    tokens: &TokenSet,
) -> Result<Var> {
    if tokens.cfg.name != cfg.name {
        return Err(Error::Config(format!(
            "token set was patchified as `{}`, tokenizer is `{}`",
            tokens.cfg.name, cfg.name
        )));
    }
    let w = vars.var(&format!("tok.{}.w", cfg.name)).map_err(|_| {
        Error::Config(format!("model has no tokenizer for layout `{}`", cfg.name))
    })?;
    let b = vars.var(&format!("tok.{}.b", cfg.name))?;
    let k = tokens.kept();
    let values = g.constant(Tensor::matrix(k, cfg.values_per_patch(), tokens.values.clone())?);
    let projected = g.matmul(values, w)?;
    let projected = g.add_row(projected, b)?;
    let dim = vars.store.value(vars.store.id(&format!("tok.{}.w", cfg.name)).unwrap()).shape()[1];
    let pe = posenc_2d(tokens.grid_rows, tokens.grid_cols, dim)?;
    let pe = g.constant(pe);
    let pe_kept = g.gather_rows(pe, &tokens.kept_indices)?;
    g.add(projected, pe_kept)
}

fn transformer_block(
    g: &mut Graph,
    vars: &ModelVars,
    prefix: &str,
    x: Var,
    dim: usize,
    heads: usize,
) -> Result<Var> {
    // Pre-norm attention.
    let ln = g.layer_norm(x, LN_EPS)?;
    let ln = g.mul_row(ln, vars.var(&format!("{prefix}.ln1.g"))?)?;
    let ln = g.add_row(ln, vars.var(&format!("{prefix}.ln1.b"))?)?;
    let qkv = g.matmul(ln, vars.var(&format!("{prefix}.qkv.w"))?)?;
    let qkv = g.add_row(qkv, vars.var(&format!("{prefix}.qkv.b"))?)?;
    let dh = dim / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = g.slice_cols(qkv, h * dh, dh)?;
        let k = g.slice_cols(qkv, dim + h * dh, dh)?;
        let v = g.slice_cols(qkv, 2 * dim + h * dh, dh)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax(scores, 1)?;
        head_outs.push(g.matmul(attn, v)?);
    }
    let merged = g.concat(&head_outs, 1)?;
    let projected = g.matmul(merged, vars.var(&format!("{prefix}.out.w"))?)?;
    let projected = g.add_row(projected, vars.var(&format!("{prefix}.out.b"))?)?;
    let x = g.add(x, projected)?;

    // Pre-norm MLP.
    let ln = g.layer_norm(x, LN_EPS)?;
    let ln = g.mul_row(ln, vars.var(&format!("{prefix}.ln2.g"))?)?;
    let ln = g.add_row(ln, vars.var(&format!("{prefix}.ln2.b"))?)?;
    let h1 = g.matmul(ln, vars.var(&format!("{prefix}.mlp1.w"))?)?;
    let h1 = g.add_row(h1, vars.var(&format!("{prefix}.mlp1.b"))?)?;
    let h1 = g.gelu(h1);
    let h2 = g.matmul(h1, vars.var(&format!("{prefix}.mlp2.w"))?)?;
    let h2 = g.add_row(h2, vars.var(&format!("{prefix}.mlp2.b"))?)?;
    g.add(x, h2)
}

fn run_stack(
    g: &mut Graph,
    vars: &ModelVars,
    prefix: &str,
    mut x: Var,
    dim: usize,
    depth: usize,
    heads: usize,
) -> Result<Var> {
    for i in 0..depth {
        x = transformer_block(g, vars, &format!("{prefix}.{i}"), x, dim, heads)?;
    }
    let ln = g.layer_norm(x, LN_EPS)?;
    let ln = g.mul_row(ln, vars.var(&format!("{prefix}.ln.g"))?)?;
    g.add_row(ln, vars.var(&format!("{prefix}.ln.b"))?)
}

/// Full encoder stack without pooling: K x dim in, K x dim out.
pub fn encode_tokens(g: &mut Graph, vars: &ModelVars, cfg: &ModelConfig, x: Var) -> Result<Var> {
    run_stack(g, vars, "enc", x, cfg.dim, cfg.depth, cfg.heads)
}

/// Encoder with global average pooling: K x dim in, 1 x dim out.
pub fn encode(g: &mut Graph, vars: &ModelVars, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let tokens = encode_tokens(g, vars, cfg, x)?;
    let pooled = g.mean_axis(tokens, 0)?;
    g.reshape(pooled, &[1, cfg.dim])
}

/// 2-layer projector (dim -> dim, GELU, dim -> proj_dim) + L2 normalization.
pub fn project_and_normalize(g: &mut Graph, vars: &ModelVars, h: Var) -> Result<Var> {
    let z = g.matmul(h, vars.var("proj.0.w")?)?;
    let z = g.add_row(z, vars.var("proj.0.b")?)?;
    let z = g.gelu(z);
    let z = g.matmul(z, vars.var("proj.1.w")?)?;
    let z = g.add_row(z, vars.var("proj.1.b")?)?;
    g.l2_normalize(z, 1)
}

/// MAE forward: encode kept tokens only, rebuild the full T-length sequence
/// with learned mask tokens at masked slots, run the light decoder, and map
/// every position to its 256 patch values.
pub fn mae_forward(
    g: &mut Graph,
    vars: &ModelVars,
    cfg: &ModelConfig,
    tokens: &TokenSet,
) -> Result<Var> {
    let dec = cfg
        .decoder
        .as_ref()
        .ok_or_else(|| Error::Config("model has no decoder".into()))?;
    let patch_cfg = tokens.cfg;
    let embedded = tokenize(g, vars, &patch_cfg, tokens)?;
    let encoded = encode_tokens(g, vars, cfg, embedded)?;
    let dec_in = g.matmul(encoded, vars.var("dec.embed.w")?)?;
    let dec_in = g.add_row(dec_in, vars.var("dec.embed.b")?)?;

    let total = tokens.grid_total();
    let k = tokens.kept();
    // T x K selection matrix: row t picks kept slot j when kept[j] == t.
    let mut sel = vec![0.0f32; total * k];
    for (j, &t) in tokens.kept_indices.iter().enumerate() {
        sel[t * k + j] = 1.0;
    }
    let sel = g.constant(Tensor::matrix(total, k, sel)?);
    let placed = g.matmul(sel, dec_in)?;

    // T x 1 indicator of masked rows times the 1 x dd mask token.
    let mut masked = vec![1.0f32; total];
    for &t in &tokens.kept_indices {
        masked[t] = 0.0;
    }
    let masked = g.constant(Tensor::matrix(total, 1, masked)?);
    let mask_token = vars.var("dec.mask_token")?;
    let fill = g.matmul(masked, mask_token)?;
    let seq = g.add(placed, fill)?;

    let pe = g.constant(posenc_2d(tokens.grid_rows, tokens.grid_cols, dec.dim)?);
    let seq = g.add(seq, pe)?;
    let out = run_stack(g, vars, "dec", seq, dec.dim, dec.depth, dec.heads)?;
    let rec = g.matmul(out, vars.var("dec.head.w")?)?;
    g.add_row(rec, vars.var("dec.head.b")?)
}

/// Analytic forward FLOP count for one encoder pass over `k` tokens:
/// per block 4 k dim^2 (qkv + out) + 2 k^2 dim (attention) +
/// 2 k dim^2 mlp_ratio (MLP), times depth.
pub fn flop_estimate(cfg: &ModelConfig, k: usize) -> u64 {
    let (k, dim, mlp) = (k as u64, cfg.dim as u64, cfg.mlp_ratio as u64);
    let per_block = 4 * k * dim * dim + 2 * k * k * dim + 2 * k * dim * dim * mlp;
    per_block * cfg.depth as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::MelSpectrogram;
    use crate::masking::{patchify, sample_mask};

    fn toy_cfg() -> ModelConfig {
        ModelConfig {
            dim: 32,
            depth: 2,
            heads: 4,
            mlp_ratio: 2,
            proj_dim: 16,
            patch_cfgs: vec![SQUARE],
            decoder: None,
        }
    }

    fn random_tokens(seed: u64, r: f64) -> TokenSet {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f32> = (0..128 * 96).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
        let spec = MelSpectrogram::from_values(values).unwrap();
        let grid = patchify(&spec, &SQUARE).unwrap();
        sample_mask(&grid, r, &mut rng).unwrap()
    }

    #[test]
    fn posenc_origin_is_sin0_cos1() {
        let pe = posenc_2d(8, 6, 32).unwrap();
        let row0 = &pe.data()[..32];
        let q = 8;
        for k in 0..q {
            assert_eq!(row0[k], 0.0); // sin(y=0)
            assert_eq!(row0[q + k], 1.0); // cos(y=0)
            assert_eq!(row0[2 * q + k], 0.0); // sin(x=0)
            assert_eq!(row0[3 * q + k], 1.0); // cos(x=0)
        }
    }

    #[test]
    fn posenc_pairs_are_unit_circles() {
        let pe = posenc_2d(8, 6, 64).unwrap();
        let q = 16;
        for cell in pe.data().chunks_exact(64) {
            for k in 0..q {
                let y2 = cell[k] * cell[k] + cell[q + k] * cell[q + k];
                let x2 = cell[2 * q + k] * cell[2 * q + k] + cell[3 * q + k] * cell[3 * q + k];
                assert!((y2 - 1.0).abs() < 1e-5);
                assert!((x2 - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn posenc_single_row_grid_has_constant_y() {
        let pe = posenc_2d(1, 48, 32).unwrap();
        let q = 8;
        let first = &pe.data()[..32];
        for cell in pe.data().chunks_exact(32) {
            for k in 0..q {
                assert_eq!(cell[k], first[k]);
                assert_eq!(cell[q + k], first[q + k]);
            }
        }
    }

    #[test]
    fn posenc_rejects_bad_dim() {
        assert!(posenc_2d(8, 6, 30).is_err());
    }

    #[test]
    fn tokenize_zero_patches_equals_gathered_posenc() {
        let cfg = toy_cfg();
        let store = init_params(&cfg, 3).unwrap();
        let mut tokens = random_tokens(4, 0.9);
        tokens.values.iter_mut().for_each(|v| *v = 0.0);
        let mut g = Graph::new();
        let binding = store.bind(&mut g, false);
        let vars = ModelVars::new(&store, &binding);
        let out = tokenize(&mut g, &vars, &SQUARE, &tokens).unwrap();
        let pe = posenc_2d(8, 6, cfg.dim).unwrap();
        for (slot, &idx) in tokens.kept_indices.iter().enumerate() {
            let got = &g.value(out).data()[slot * cfg.dim..(slot + 1) * cfg.dim];
            let want = &pe.data()[idx * cfg.dim..(idx + 1) * cfg.dim];
            for (a, b) in got.iter().zip(want) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tokenize_mismatched_layout_is_config_error() {
        let cfg = toy_cfg(); // square tokenizer only
        let store = init_params(&cfg, 3).unwrap();
        let mut g = Graph::new();
        let binding = store.bind(&mut g, false);
        let vars = ModelVars::new(&store, &binding);
        let tokens = random_tokens(4, 0.9);
        let err = tokenize(&mut g, &vars, &VERTICAL, &tokens).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err}");
    }

    #[test]
    fn tokenize_permutation_permutes_rows() {
        let cfg = toy_cfg();
        let store = init_params(&cfg, 5).unwrap();
        let tokens = random_tokens(6, 0.9);

        let run = |ts: &TokenSet| {
            let mut g = Graph::new();
            let binding = store.bind(&mut g, false);
            let vars = ModelVars::new(&store, &binding);
            let out = tokenize(&mut g, &vars, &SQUARE, ts).unwrap();
            g.value(out).data().to_vec()
        };
        let base = run(&tokens);

        // Reverse the kept list (indices, coords, and value rows together).
        let v = SQUARE.values_per_patch();
        let k = tokens.kept();
        let mut rev = tokens.clone();
        rev.kept_indices.reverse();
        rev.coords.reverse();
        let mut values = vec![0.0f32; k * v];
        for slot in 0..k {
            values[slot * v..(slot + 1) * v]
                .copy_from_slice(&tokens.values[(k - 1 - slot) * v..(k - slot) * v]);
        }
        rev.values = values;
        let permuted = run(&rev);

        let dim = cfg.dim;
        for slot in 0..k {
            let a = &base[slot * dim..(slot + 1) * dim];
            let b = &permuted[(k - 1 - slot) * dim..(k - slot) * dim];
            assert_eq!(a, b);
        }
    }

    #[test]
    fn encode_single_token_is_finite_and_deterministic() {
        let cfg = toy_cfg();
        let store = init_params(&cfg, 7).unwrap();
        let run = || {
            let mut g = Graph::new();
            let binding = store.bind(&mut g, false);
            let vars = ModelVars::new(&store, &binding);
            let x = g.constant(Tensor::matrix(1, 32, (0..32).map(|i| i as f32 * 0.1).collect()).unwrap());
            let out = encode(&mut g, &vars, &cfg, x).unwrap();
            g.value(out).data().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, b);
    }

    #[test]
    fn encode_identical_tokens_collapse_to_single_token_output() {
        let cfg = toy_cfg();
        let store = init_params(&cfg, 9).unwrap();
        let row: Vec<f32> = (0..32).map(|i| (i as f32 * 0.3).sin()).collect();
        let run = |k: usize| {
            let mut g = Graph::new();
            let binding = store.bind(&mut g, false);
            let vars = ModelVars::new(&store, &binding);
            let data: Vec<f32> = (0..k).flat_map(|_| row.clone()).collect();
            let x = g.constant(Tensor::matrix(k, 32, data).unwrap());
            let out = encode(&mut g, &vars, &cfg, x).unwrap();
            g.value(out).data().to_vec()
        };
        let one = run(1);
        let four = run(4);
        for (a, b) in one.iter().zip(&four) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn encode_is_permutation_invariant() {
        let cfg = toy_cfg();
        let store = init_params(&cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let k = 6;
        let rows: Vec<Vec<f32>> = (0..k)
            .map(|_| (0..32).map(|_| rng.gen_range(-1.0..1.0f32)).collect())
            .collect();
        let run = |order: &[usize]| {
            let mut g = Graph::new();
            let binding = store.bind(&mut g, false);
            let vars = ModelVars::new(&store, &binding);
            let data: Vec<f32> = order.iter().flat_map(|&i| rows[i].clone()).collect();
            let x = g.constant(Tensor::matrix(k, 32, data).unwrap());
            let out = encode(&mut g, &vars, &cfg, x).unwrap();
            g.value(out).data().to_vec()
        };
        let a = run(&[0, 1, 2, 3, 4, 5]);
        let b = run(&[4, 2, 5, 0, 3, 1]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn projector_output_is_unit_norm() {
        let cfg = toy_cfg();
        let store = init_params(&cfg, 15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..5 {
            let mut g = Graph::new();
            let binding = store.bind(&mut g, false);
            let vars = ModelVars::new(&store, &binding);
            let h: Vec<f32> = (0..32).map(|_| rng.gen_range(-2.0..2.0f32)).collect();
            let h = g.constant(Tensor::matrix(1, 32, h).unwrap());
            let z = project_and_normalize(&mut g, &vars, h).unwrap();
            let norm: f32 = g.value(z).data().iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-5, "norm {norm}");
        }
    }

    #[test]
    fn projector_zero_weights_give_zero_vector() {
        let cfg = toy_cfg();
        let mut store = init_params(&cfg, 17).unwrap();
        for name in ["proj.0.w", "proj.0.b", "proj.1.w", "proj.1.b"] {
            let id = store.id(name).unwrap();
            store.value_mut(id).data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let binding = store.bind(&mut g, false);
        let vars = ModelVars::new(&store, &binding);
        let h = g.constant(Tensor::matrix(1, 32, vec![1.0; 32]).unwrap());
        let z = project_and_normalize(&mut g, &vars, h).unwrap();
        assert!(g.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mae_forward_shape_and_missing_decoder() {
        let mut cfg = toy_cfg();
        let tokens = random_tokens(20, 0.9);
        {
            let store = init_params(&cfg, 19).unwrap();
            let mut g = Graph::new();
            let binding = store.bind(&mut g, false);
            let vars = ModelVars::new(&store, &binding);
            let err = mae_forward(&mut g, &vars, &cfg, &tokens).unwrap_err();
            assert!(matches!(err, Error::Config(_)));
        }
        cfg.decoder = Some(DecoderConfig {
            dim: 16,
            depth: 1,
            heads: 2,
        });
        let store = init_params(&cfg, 19).unwrap();
        let mut g = Graph::new();
        let binding = store.bind(&mut g, false);
        let vars = ModelVars::new(&store, &binding);
        let rec = mae_forward(&mut g, &vars, &cfg, &tokens).unwrap();
        assert_eq!(g.value(rec).shape(), &[48, 256]);
    }

    #[test]
    fn flop_estimate_scales_as_documented() {
        let cfg = ModelConfig::desk(vec![SQUARE]);
        // attention term quadruples when K doubles
        let attn = |k: u64| 2 * k * k * cfg.dim as u64 * cfg.depth as u64;
        assert_eq!(attn(10), 4 * attn(5));
        // depth is linear
        let mut deep = cfg.clone();
        deep.depth *= 2;
        assert_eq!(flop_estimate(&deep, 7), 2 * flop_estimate(&cfg, 7));
        // masked-to-full ratio for the desk model
        let ratio = flop_estimate(&cfg, 5) as f64 / flop_estimate(&cfg, 48) as f64;
        assert!(ratio < 0.12, "ratio {ratio}");
    }

    #[test]
    fn vit_s_parameter_count_near_22m() {
        let store = init_params(&ModelConfig::vit_s(), 0).unwrap();
        let n = store.total_elements() as f64;
        assert!(
            (n - 22e6).abs() / 22e6 < 0.10,
            "parameter count {n} outside 10% of 22M"
        );
    }
}
