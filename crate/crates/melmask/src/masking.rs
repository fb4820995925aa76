//! Patch tiling of spectrograms and uniform token-subset sampling.

use rand::Rng;

use crate::audio::MelSpectrogram;
use crate::error::{Error, Result};

/// Patch geometry. The two shipped layouts both tile 128 x 96 into 48
/// patches of 256 values: 16 x 16 ("square") and 128 x 2 ("vertical").
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch_h: usize,
    pub patch_w: usize,
    pub name: &'static str,
}

pub const SQUARE: PatchConfig = PatchConfig {
    patch_h: 16,
    patch_w: 16,
    name: "square",
};

pub const VERTICAL: PatchConfig = PatchConfig {
    patch_h: 128,
    patch_w: 2,
    name: "vertical",
};

impl PatchConfig {
    pub fn by_name(name: &str) -> Result<PatchConfig> {
        match name {
            "square" => Ok(SQUARE),
            "vertical" => Ok(VERTICAL),
            other => Err(Error::Config(format!("unknown patch layout `{other}`"))),
        }
    }

    pub fn values_per_patch(&self) -> usize {
        self.patch_h * self.patch_w
    }
}

/// Non-overlapping row-major tiling of one spectrogram.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    /// T x (patch_h * patch_w), each patch flattened row-major.
    pub patches: Vec<f32>,
    pub rows: usize,
    pub cols: usize,
    pub cfg: PatchConfig,
}

impl PatchGrid {
    pub fn total(&self) -> usize {
        self.rows * self.cols
    }

    pub fn patch(&self, idx: usize) -> &[f32] {
        let v = self.cfg.values_per_patch();
        &self.patches[idx * v..(idx + 1) * v]
    }

    /// Grid coordinate of patch `idx` in row-major order.
    pub fn coord(&self, idx: usize) -> (usize, usize) {
        (idx / self.cols, idx % self.cols)
    }
}

/// Kept (unmasked) subset of a patch grid.
#[derive(Debug, Clone)]
pub struct TokenSet {
    /// Strictly increasing patch indices into the source grid.
    pub kept_indices: Vec<usize>,
    /// K x (patch_h * patch_w) values of the kept patches.
    pub values: Vec<f32>,
    /// (row, col) of each kept patch in the original grid.
    pub coords: Vec<(usize, usize)>,
    pub mask_ratio: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub cfg: PatchConfig,
}

impl TokenSet {
    pub fn kept(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn grid_total(&self) -> usize {
        self.grid_rows * self.grid_cols
    }
}

/// Tokens kept for ratio `r` out of `total`: round-half-up, at least one.
pub fn kept_count(total: usize, r: f64) -> usize {
    (((1.0 - r) * total as f64).round() as usize).max(1)
}

/// Tile a spectrogram into non-overlapping patches, row-major patch order,
/// values flattened row-major within each patch.
pub fn patchify(spec: &MelSpectrogram, cfg: &PatchConfig) -> Result<PatchGrid> {
    let (h, w) = (spec.mel_bins(), spec.frames());
    if h % cfg.patch_h != 0 || w % cfg.patch_w != 0 {
        return Err(Error::Shape(format!(
            "{}x{} spectrogram not divisible by {}x{} patches",
            h, w, cfg.patch_h, cfg.patch_w
        )));
    }
    let rows = h / cfg.patch_h;
    let cols = w / cfg.patch_w;
    let v = cfg.values_per_patch();
    let mut patches = vec![0.0f32; rows * cols * v];
    for pr in 0..rows {
        for pc in 0..cols {
            let base = (pr * cols + pc) * v;
            for dy in 0..cfg.patch_h {
                for dx in 0..cfg.patch_w {
                    patches[base + dy * cfg.patch_w + dx] =
                        spec.at(pr * cfg.patch_h + dy, pc * cfg.patch_w + dx);
                }
            }
        }
    }
    Ok(PatchGrid {
        patches,
        rows,
        cols,
        cfg: *cfg,
    })
}

/// Reassemble a full spectrogram-shaped grid (mel_bins x frames, row-major)
/// from per-patch values laid out like [`PatchGrid::patches`].
pub fn unpatchify(patches: &[f32], rows: usize, cols: usize, cfg: &PatchConfig) -> Vec<f32> {
    let v = cfg.values_per_patch();
    debug_assert_eq!(patches.len(), rows * cols * v);
    let width = cols * cfg.patch_w;
    let mut out = vec![0.0f32; rows * cfg.patch_h * width];
    for pr in 0..rows {
        for pc in 0..cols {
            let base = (pr * cols + pc) * v;
            for dy in 0..cfg.patch_h {
                for dx in 0..cfg.patch_w {
                    out[(pr * cfg.patch_h + dy) * width + pc * cfg.patch_w + dx] =
                        patches[base + dy * cfg.patch_w + dx];
                }
            }
        }
    }
    out
}

/// Keep a uniform random K-subset of the grid's patches, K = max(1,
/// round((1-r) * T)). Indices come out sorted ascending.
pub fn sample_mask(grid: &PatchGrid, r: f64, rng: &mut impl Rng) -> Result<TokenSet> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::Parameter(format!("mask ratio {r} outside [0,1)")));
    }
    let total = grid.total();
    let k = kept_count(total, r);
    // Partial Fisher-Yates: the first k entries form a uniform k-subset.
    let mut pool: Vec<usize> = (0..total).collect();
    for i in 0..k {
        let j = rng.gen_range(i..total);
        pool.swap(i, j);
    }
    let mut kept: Vec<usize> = pool[..k].to_vec();
    kept.sort_unstable();

    let v = grid.cfg.values_per_patch();
    let mut values = Vec::with_capacity(k * v);
    let mut coords = Vec::with_capacity(k);
    for &idx in &kept {
        values.extend_from_slice(grid.patch(idx));
        coords.push(grid.coord(idx));
    }
    Ok(TokenSet {
        kept_indices: kept,
        values,
        coords,
        mask_ratio: r,
        grid_rows: grid.rows,
        grid_cols: grid.cols,
        cfg: grid.cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec_from_fn(f: impl Fn(usize, usize) -> f32) -> MelSpectrogram {
        let mut values = vec![0.0f32; 128 * 96];
        for mel in 0..128 {
            for t in 0..96 {
                values[mel * 96 + t] = f(mel, t);
            }
        }
        MelSpectrogram::from_values(values).unwrap()
    }

    #[test]
    fn square_patchify_shape() {
        let g = patchify(&spec_from_fn(|m, t| (m * 96 + t) as f32), &SQUARE).unwrap();
        assert_eq!((g.rows, g.cols), (8, 6));
        assert_eq!(g.total(), 48);
        assert_eq!(g.patches.len(), 48 * 256);
    }

    #[test]
    fn vertical_patchify_shape() {
        let g = patchify(&spec_from_fn(|m, t| (m * 96 + t) as f32), &VERTICAL).unwrap();
        assert_eq!((g.rows, g.cols), (1, 48));
        assert_eq!(g.total(), 48);
        assert_eq!(g.patches.len(), 48 * 256);
    }

    #[test]
    fn constant_field_gives_constant_patches() {
        for cfg in [SQUARE, VERTICAL] {
            let g = patchify(&spec_from_fn(|_, _| 2.5), &cfg).unwrap();
            assert!(g.patches.iter().all(|&v| v == 2.5));
        }
    }

    #[test]
    fn kept_count_rule() {
        assert_eq!(kept_count(48, 0.9), 5); // round(4.8) = 5
        assert_eq!(kept_count(48, 0.0), 48);
        assert_eq!(kept_count(48, 0.99), 1); // floor is 1
        assert_eq!(kept_count(48, 0.5), 24);
    }

    #[test]
    fn ratio_out_of_range_rejected() {
        let g = patchify(&spec_from_fn(|_, _| 0.0), &SQUARE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_mask(&g, 1.0, &mut rng).is_err());
        assert!(sample_mask(&g, -0.1, &mut rng).is_err());
    }

    #[test]
    fn zero_ratio_keeps_everything() {
        let g = patchify(&spec_from_fn(|m, t| (m + t) as f32), &SQUARE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ts = sample_mask(&g, 0.0, &mut rng).unwrap();
        assert_eq!(ts.kept_indices, (0..48).collect::<Vec<_>>());
        assert_eq!(ts.values, g.patches);
    }

    #[test]
    fn mask_sampling_reproducible() {
        let g = patchify(&spec_from_fn(|m, t| (m * t) as f32), &SQUARE).unwrap();
        let a = sample_mask(&g, 0.9, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = sample_mask(&g, 0.9, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a.kept_indices, b.kept_indices);
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn kept_frequency_matches_binomial_bound() {
        // Each of 48 indices should be kept with frequency 5/48 within
        // 3 sigma of the binomial over 20000 draws (seeded, deterministic).
        let g = patchify(&spec_from_fn(|_, _| 0.0), &SQUARE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20_000);
        const DRAWS: usize = 20_000;
        let mut counts = [0usize; 48];
        for _ in 0..DRAWS {
            let ts = sample_mask(&g, 0.9, &mut rng).unwrap();
            for &i in &ts.kept_indices {
                counts[i] += 1;
            }
        }
        let p = 5.0 / 48.0;
        let sigma = (p * (1.0 - p) / DRAWS as f64).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let f = c as f64 / DRAWS as f64;
            assert!(
                (f - p).abs() <= 3.0 * sigma,
                "index {i}: frequency {f:.5} vs p {p:.5} (3 sigma = {:.5})",
                3.0 * sigma
            );
        }
    }

    /// Independent test-only reassembly, written differently from
    /// `unpatchify` (walks destination cells instead of patches).
    fn oracle_unpatchify(ts_values: &[f32], indices: &[usize], cfg: &PatchConfig) -> Vec<f32> {
        let cols = 96 / cfg.patch_w;
        let mut out = vec![f32::NAN; 128 * 96];
        for (slot, &idx) in indices.iter().enumerate() {
            let (pr, pc) = (idx / cols, idx % cols);
            for mel in 0..128 {
                for t in 0..96 {
                    if mel / cfg.patch_h == pr && t / cfg.patch_w == pc {
                        let dy = mel % cfg.patch_h;
                        let dx = t % cfg.patch_w;
                        out[mel * 96 + t] =
                            ts_values[slot * cfg.values_per_patch() + dy * cfg.patch_w + dx];
                    }
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn patchify_roundtrip_on_kept_region(seed in 0u64..500, square in proptest::bool::ANY, r in 0.0f64..0.95) {
            let cfg = if square { SQUARE } else { VERTICAL };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..128 * 96).map(|_| rng.gen_range(-2.0..2.0f32)).collect();
            let spec = MelSpectrogram::from_values(values.clone()).unwrap();
            let grid = patchify(&spec, &cfg).unwrap();
            let ts = sample_mask(&grid, r, &mut rng).unwrap();
            let rebuilt = oracle_unpatchify(&ts.values, &ts.kept_indices, &cfg);
            for (i, &v) in rebuilt.iter().enumerate() {
                if !v.is_nan() {
                    prop_assert_eq!(v, values[i]);
                }
            }
            // Kept cells count must equal K * values_per_patch.
            let known = rebuilt.iter().filter(|v| !v.is_nan()).count();
            prop_assert_eq!(known, ts.kept() * cfg.values_per_patch());
        }

        #[test]
        fn mask_indices_unique_sorted(seed in 0u64..1000, r in 0.0f64..0.99) {
            let spec = MelSpectrogram::from_values(vec![0.0; 128 * 96]).unwrap();
            let grid = patchify(&spec, &SQUARE).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ts = sample_mask(&grid, r, &mut rng).unwrap();
            prop_assert_eq!(ts.kept(), kept_count(48, r));
            for w in ts.kept_indices.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
            prop_assert!(*ts.kept_indices.last().unwrap() < 48);
        }

        #[test]
        fn full_unpatchify_is_inverse(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..128 * 96).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
            let spec = MelSpectrogram::from_values(values.clone()).unwrap();
            for cfg in [SQUARE, VERTICAL] {
                let grid = patchify(&spec, &cfg).unwrap();
                let back = unpatchify(&grid.patches, grid.rows, grid.cols, &cfg);
                prop_assert_eq!(&back, &values);
            }
        }
    }
}
