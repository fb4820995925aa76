//! Contrastive, hybrid, and reconstruction losses.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::masking::{PatchGrid, TokenSet};

/// Temperature and symmetrization switches for the contrastive loss.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveConfig {
    pub tau: f32,
    /// Average anchor-on-view-1 and anchor-on-view-2 losses (default on).
    pub symmetrize: bool,
    /// Add the positive pair's own term to the denominator. Off by default:
    /// the denominator then contains only the 2N-2 negative terms.
    pub denominator_includes_positive: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            tau: 0.1,
            symmetrize: true,
            denominator_includes_positive: false,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Parameter(format!("tau {} must be > 0", self.tau)));
        }
        Ok(())
    }
}

/// Temperature-scaled contrastive loss over two views of N items.
///
/// Per anchor i on view 1:
/// l_i = -log( exp(s(z1_i, z2_i)/tau) / sum_{j != i, v in {1,2}} exp(s(z1_i, zv_j)/tau) ),
/// with s the dot product of the (already normalized) rows. With
/// `symmetrize`, anchors on view 2 are averaged in. Exponents are shifted by
/// -1/tau, which is exact for unit-norm rows and keeps exp() in range for
/// any tau > 0.
///
/// `z1`, `z2` are N x proj_dim graph nodes with L2-normalized rows.
pub fn info_nce(g: &mut Graph, z1: Var, z2: Var, cfg: &ObjectiveConfig) -> Result<Var> {
    cfg.validate()?;
    let (n, d) = g.value(z1).dims2()?;
    let (n2, d2) = g.value(z2).dims2()?;
    if n != n2 || d != d2 {
        return Err(Error::Shape(format!(
            "view shapes {:?} vs {:?}",
            g.value(z1).shape(),
            g.value(z2).shape()
        )));
    }
    if n < 2 {
        return Err(Error::BatchSize(format!(
            "contrastive loss needs N >= 2, got {n} (denominator would be empty)"
        )));
    }
    for (name, z) in [("z1", z1), ("z2", z2)] {
        for (i, row) in g.value(z).data().chunks_exact(d).enumerate() {
            let norm: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            if (norm - 1.0).abs() > 1e-4 {
                return Err(Error::Contract(format!(
                    "{name} row {i} has norm {norm}, expected 1"
                )));
            }
        }
    }
    let l1 = anchored_loss(g, z1, z2, cfg)?;
    if !cfg.symmetrize {
        return Ok(l1);
    }
    let l2 = anchored_loss(g, z2, z1, cfg)?;
    let sum = g.add(l1, l2)?;
    Ok(g.scale(sum, 0.5))
}

/// Mean over anchors of -pos/tau + log(denominator), anchors on `a`.
fn anchored_loss(g: &mut Graph, a: Var, b: Var, cfg: &ObjectiveConfig) -> Result<Var> {
    let (n, _) = g.value(a).dims2()?;
    let inv_tau = 1.0 / cfg.tau;

    let bt = g.transpose(b)?;
    let sim_ab = g.matmul(a, bt)?; // N x N, diagonal = positives
    let at = g.transpose(a)?;
    let sim_aa = g.matmul(a, at)?; // N x N, same-view similarities

    // exp((s - 1)/tau): bounded by 1 for unit-norm rows.
    let e_ab = shifted_exp(g, sim_ab, inv_tau);
    let e_aa = shifted_exp(g, sim_aa, inv_tau);

    let off_diag = g.constant(off_diagonal_mask(n));
    let neg_ab = if cfg.denominator_includes_positive {
        e_ab
    } else {
        g.mul(e_ab, off_diag)?
    };
    let neg_aa = g.mul(e_aa, off_diag)?;
    let den_ab = g.sum_axis(neg_ab, 1)?;
    let den_aa = g.sum_axis(neg_aa, 1)?;
    let den = g.add(den_ab, den_aa)?;
    // log(true denominator) = log(shifted sum) + 1/tau
    let log_den = g.log(den);
    let log_den = g.affine(log_den, 1.0, inv_tau);

    let eye = g.constant(diagonal_mask(n));
    let pos = g.mul(sim_ab, eye)?;
    let pos = g.sum_axis(pos, 1)?; // length-N vector of positive similarities
    let pos_term = g.scale(pos, inv_tau);

    let neg_pos = g.scale(pos_term, -1.0);
    let losses = g.add(neg_pos, log_den)?;
    let losses = g.reshape(losses, &[1, n])?;
    Ok(g.mean_all(losses))
}

fn shifted_exp(g: &mut Graph, sim: Var, inv_tau: f32) -> Var {
    let shifted = g.affine(sim, inv_tau, -inv_tau);
    g.exp(shifted)
}

fn off_diagonal_mask(n: usize) -> Tensor {
    let mut data = vec![1.0f32; n * n];
    for i in 0..n {
        data[i * n + i] = 0.0;
    }
    Tensor::matrix(n, n, data).expect("sized")
}

fn diagonal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0f32; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
    }
    Tensor::matrix(n, n, data).expect("sized")
}

/// Average of the two branch losses; gradients flow into both.
pub fn hybrid_loss(g: &mut Graph, l_square: Var, l_vertical: Var) -> Result<Var> {
    let sum = g.add(l_square, l_vertical)?;
    Ok(g.scale(sum, 0.5))
}

/// Mean squared error over masked positions only. Targets are the (already
/// standardized) patch values; an empty masked set gives 0 by convention.
pub fn mae_loss(
    g: &mut Graph,
    reconstruction: Var,
    target: &PatchGrid,
    kept: &TokenSet,
) -> Result<Var> {
    let (t, v) = g.value(reconstruction).dims2()?;
    if t != target.total() || v != target.cfg.values_per_patch() {
        return Err(Error::Shape(format!(
            "reconstruction {t}x{v} vs target {}x{}",
            target.total(),
            target.cfg.values_per_patch()
        )));
    }
    let masked_count = t - kept.kept();
    if masked_count == 0 {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let mut row_mask = vec![1.0f32; t * v];
    for &idx in &kept.kept_indices {
        row_mask[idx * v..(idx + 1) * v].fill(0.0);
    }
    let mask = g.constant(Tensor::matrix(t, v, row_mask)?);
    let target_t = g.constant(Tensor::matrix(t, v, target.patches.clone())?);
    let neg_target = g.scale(target_t, -1.0);
    let diff = g.add(reconstruction, neg_target)?;
    let diff = g.mul(diff, mask)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum_all(sq);
    Ok(g.scale(total, 1.0 / (masked_count * v) as f32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::MelSpectrogram;
    use crate::masking::{patchify, sample_mask, SQUARE};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Loss value for explicit embeddings through a fresh graph.
    fn loss_of(z1: &[Vec<f32>], z2: &[Vec<f32>], cfg: &ObjectiveConfig) -> f32 {
        let n = z1.len();
        let d = z1[0].len();
        let mut g = Graph::new();
        let a = g
            .constant(Tensor::matrix(n, d, z1.concat()).unwrap());
        let b = g
            .constant(Tensor::matrix(n, d, z2.concat()).unwrap());
        let l = info_nce(&mut g, a, b, cfg).unwrap();
        g.value(l).item()
    }

    /// Independent scalar oracle evaluating the loss formula directly in f64.
    fn oracle(z1: &[Vec<f32>], z2: &[Vec<f32>], cfg: &ObjectiveConfig) -> f64 {
        let n = z1.len();
        let dot = |x: &[f32], y: &[f32]| -> f64 {
            x.iter().zip(y).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum()
        };
        let one_dir = |a: &[Vec<f32>], b: &[Vec<f32>]| -> f64 {
            let mut total = 0.0;
            for i in 0..n {
                let pos = (dot(&a[i], &b[i]) / f64::from(cfg.tau)).exp();
                let mut den = 0.0;
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    den += (dot(&a[i], &a[j]) / f64::from(cfg.tau)).exp();
                    den += (dot(&a[i], &b[j]) / f64::from(cfg.tau)).exp();
                }
                if cfg.denominator_includes_positive {
                    den += pos;
                }
                total += -(pos / den).ln();
            }
            total / n as f64
        };
        let l1 = one_dir(z1, z2);
        if !cfg.symmetrize {
            return l1;
        }
        0.5 * (l1 + one_dir(z2, z1))
    }

    fn unit_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
                let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                v
            })
            .collect()
    }

    #[test]
    fn identical_embeddings_give_ln_2n_minus_2() {
        for n in [2usize, 4, 16] {
            let row = {
                let mut v = vec![0.0f32; 8];
                v[0] = 1.0;
                v
            };
            let z: Vec<Vec<f32>> = (0..n).map(|_| row.clone()).collect();
            let want = ((2 * n - 2) as f32).ln();
            for tau in [0.1f32, 0.5, 1.0] {
                let cfg = ObjectiveConfig {
                    tau,
                    ..Default::default()
                };
                let got = loss_of(&z, &z, &cfg);
                assert!((got - want).abs() < 1e-5, "n={n} tau={tau}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn aligned_positive_orthogonal_negatives_closed_form() {
        // N=2, tau=0.1: positives at similarity 1, everything else 0
        // -> l = -(1/tau - ln(2N-2)) = -(10 - ln 2) ~= -9.306853.
        let z1 = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let z2 = z1.clone();
        let cfg = ObjectiveConfig {
            tau: 0.1,
            ..Default::default()
        };
        let got = loss_of(&z1, &z2, &cfg);
        assert!((got - (-9.306_853f32)).abs() < 1e-4, "got {got}");
    }

    #[test]
    fn derived_three_item_case_matches_oracle() {
        let s = (0.5f32).sqrt();
        let z1 = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s]];
        let z2 = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];

        let asym = ObjectiveConfig {
            tau: 0.5,
            symmetrize: false,
            ..Default::default()
        };
        // frozen from the f64 oracle on the f32-rounded inputs above
        assert!((loss_of(&z1, &z2, &asym) - 0.650_371_4f32).abs() < 1e-5);
        assert!((oracle(&z1, &z2, &asym) - 0.650_371_385_367_181_6).abs() < 1e-12);

        let sym = ObjectiveConfig {
            tau: 0.5,
            ..Default::default()
        };
        assert!((loss_of(&z1, &z2, &sym) - 0.653_632_6f32).abs() < 1e-5);
        assert!((oracle(&z1, &z2, &sym) - 0.653_632_600_752_709_3).abs() < 1e-12);

        let incl = ObjectiveConfig {
            tau: 0.5,
            symmetrize: true,
            denominator_includes_positive: true,
        };
        assert!((loss_of(&z1, &z2, &incl) - 1.110_307_9f32).abs() < 1e-5);
    }

    #[test]
    fn random_batches_match_oracle() {
        for seed in 0..10u64 {
            let n = 2 + (seed as usize % 5);
            let z1 = unit_rows(n, 6, seed * 2 + 1);
            let z2 = unit_rows(n, 6, seed * 2 + 2);
            for cfg in [
                ObjectiveConfig::default(),
                ObjectiveConfig {
                    tau: 0.37,
                    symmetrize: false,
                    denominator_includes_positive: false,
                },
                ObjectiveConfig {
                    tau: 0.2,
                    symmetrize: true,
                    denominator_includes_positive: true,
                },
            ] {
                let got = f64::from(loss_of(&z1, &z2, &cfg));
                let want = oracle(&z1, &z2, &cfg);
                assert!(
                    (got - want).abs() < 1e-4,
                    "seed {seed}: {got} vs {want} ({cfg:?})"
                );
            }
        }
    }

    #[test]
    fn batch_of_one_is_batch_size_error() {
        let z = vec![vec![1.0, 0.0]];
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(1, 2, z.concat()).unwrap());
        let err = info_nce(&mut g, a, a, &ObjectiveConfig::default()).unwrap_err();
        assert!(matches!(err, Error::BatchSize(_)));
    }

    #[test]
    fn increasing_positive_similarity_decreases_loss() {
        // Rotate one view-2 row toward its positive; loss must drop.
        let z1 = unit_rows(4, 4, 77);
        let mut z2 = unit_rows(4, 4, 78);
        let cfg = ObjectiveConfig::default();
        let before = loss_of(&z1, &z2, &cfg);
        for (a, b) in z2[0].iter_mut().zip(&z1[0]) {
            *a = 0.2 * *a + 0.8 * b;
        }
        let norm: f32 = z2[0].iter().map(|x| x * x).sum::<f32>().sqrt();
        z2[0].iter_mut().for_each(|x| *x /= norm);
        let after = loss_of(&z1, &z2, &cfg);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn invariant_under_joint_permutation() {
        let z1 = unit_rows(5, 4, 100);
        let z2 = unit_rows(5, 4, 101);
        let cfg = ObjectiveConfig::default();
        let base = loss_of(&z1, &z2, &cfg);
        let perm = [3usize, 0, 4, 1, 2];
        let p1: Vec<Vec<f32>> = perm.iter().map(|&i| z1[i].clone()).collect();
        let p2: Vec<Vec<f32>> = perm.iter().map(|&i| z2[i].clone()).collect();
        let permuted = loss_of(&p1, &p2, &cfg);
        assert!((base - permuted).abs() < 1e-6);
    }

    #[test]
    fn loss_respects_sanity_lower_band() {
        for seed in 0..5u64 {
            let n = 4;
            let z1 = unit_rows(n, 8, seed + 300);
            let z2 = unit_rows(n, 8, seed + 400);
            let cfg = ObjectiveConfig::default();
            let loss = f64::from(loss_of(&z1, &z2, &cfg));
            let band = -1.0 / f64::from(cfg.tau) + ((2 * n - 2) as f64).ln() - 20.0;
            assert!(loss >= band, "loss {loss} below band {band}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        use crate::autodiff::gradcheck;
        let n = 3;
        let d = 4;
        let z1 = unit_rows(n, d, 55);
        let z2 = unit_rows(n, d, 56);
        let inputs = vec![
            Tensor::matrix(n, d, z1.concat()).unwrap(),
            Tensor::matrix(n, d, z2.concat()).unwrap(),
        ];
        // Re-normalize inside the graph so perturbed inputs stay on the
        // sphere and the norm precondition holds during the FD sweep.
        let err = gradcheck::check(&inputs, 1e-3, |g, vars| {
            let a = g.l2_normalize(vars[0], 1)?;
            let b = g.l2_normalize(vars[1], 1)?;
            info_nce(g, a, b, &ObjectiveConfig::default())
        })
        .unwrap();
        assert!(err < 1e-3, "max rel err {err}");
    }

    #[test]
    fn hybrid_loss_is_exact_mean() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(0.4));
        let b = g.constant(Tensor::scalar(0.6));
        let l = hybrid_loss(&mut g, a, b).unwrap();
        assert!((g.value(l).item() - 0.5).abs() < 1e-7);

        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1.234));
        let l = hybrid_loss(&mut g, x, x).unwrap();
        assert!((g.value(l).item() - 1.234).abs() < 1e-7);
    }

    #[test]
    fn hybrid_gradients_are_mean_of_branch_gradients() {
        use crate::autodiff::gradcheck;
        // Shared "encoder" parameter feeding two branch losses.
        let theta = Tensor::matrix(2, 3, vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.6]).unwrap();
        let err = gradcheck::check(&[theta], 1e-3, |g, vars| {
            let sq = g.mul(vars[0], vars[0])?;
            let l_a = g.mean_all(sq);
            let gl = g.gelu(vars[0]);
            let l_b = g.mean_all(gl);
            hybrid_loss(g, l_a, l_b)
        })
        .unwrap();
        assert!(err < 1e-3, "max rel err {err}");
    }

    fn toy_grid_and_tokens(r: f64, seed: u64) -> (PatchGrid, TokenSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f32> = (0..128 * 96).map(|_| rng.gen_range(-1.0..1.0f32)).collect();
        let spec = MelSpectrogram::from_values(values).unwrap();
        let grid = patchify(&spec, &SQUARE).unwrap();
        let tokens = sample_mask(&grid, r, &mut rng).unwrap();
        (grid, tokens)
    }

    #[test]
    fn mae_loss_zero_for_perfect_reconstruction() {
        let (grid, tokens) = toy_grid_and_tokens(0.9, 1);
        let mut g = Graph::new();
        let rec = g.constant(Tensor::matrix(48, 256, grid.patches.clone()).unwrap());
        let l = mae_loss(&mut g, rec, &grid, &tokens).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn mae_loss_zero_when_nothing_masked() {
        let (grid, tokens) = toy_grid_and_tokens(0.0, 2);
        let mut g = Graph::new();
        let rec = g.constant(Tensor::matrix(48, 256, vec![9.0; 48 * 256]).unwrap());
        let l = mae_loss(&mut g, rec, &grid, &tokens).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn mae_loss_single_masked_patch_constant_error() {
        let (grid, mut tokens) = toy_grid_and_tokens(0.0, 3);
        // Un-keep patch 7 so exactly one patch is masked.
        tokens.kept_indices.retain(|&i| i != 7);
        let mut rec = grid.patches.clone();
        let e = 0.75f32;
        for v in &mut rec[7 * 256..8 * 256] {
            *v += e;
        }
        // Also corrupt a kept patch; it must not contribute.
        for v in &mut rec[3 * 256..4 * 256] {
            *v += 100.0;
        }
        let mut g = Graph::new();
        let rec = g.constant(Tensor::matrix(48, 256, rec).unwrap());
        let l = mae_loss(&mut g, rec, &grid, &tokens).unwrap();
        assert!((g.value(l).item() - e * e).abs() < 1e-5);
    }
}
