//! Central finite-difference verification of backward rules.
//!
//! The builder closure records one tape on the base inputs; backward gives
//! the analytic gradients. The numeric side perturbs one input element at a
//! time and re-evaluates the same tape in f64 ([`Graph::replay_f64`]), so
//! the difference quotient is limited by truncation error, not by f32
//! rounding of the forward pass. Stochastic context (dropout masks) is
//! recorded on the tape and reused, making the comparison well defined.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_H: f64 = 1e-3;

/// Relative error with a floor so near-zero gradients compare absolutely:
/// |a - n| / max(|a|, |n|, floor).
pub fn rel_err(analytic: f32, numeric: f64, floor: f64) -> f64 {
    let a = f64::from(analytic);
    (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor)
}

/// Check gradients of a scalar-valued builder w.r.t. every element of every
/// input. Returns the maximum relative error observed.
pub fn check<F>(inputs: &[Tensor], h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let elems: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    check_subset(inputs, &elems, h, build)
}

/// Like [`check`] but only for the listed `(input, element)` pairs — used
/// for end-to-end checks where the full parameter set is too large.
pub fn check_subset<F>(inputs: &[Tensor], elems: &[(usize, usize)], h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    if g.value(loss).numel() != 1 {
        return Err(Error::Contract("gradcheck builder must return a scalar".into()));
    }
    g.backward(loss)?;
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .map(|&v| {
            g.grad_data(v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; g.value(v).numel()])
        })
        .collect();

    let base: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.data().iter().map(|&x| f64::from(x)).collect())
        .collect();

    let mut max_err = 0.0f64;
    for &(i, j) in elems {
        let mut plus = base[i].clone();
        plus[j] += h;
        let f_plus = g.replay_f64(loss, &[(vars[i], &plus)])?;
        let mut minus = base[i].clone();
        minus[j] -= h;
        let f_minus = g.replay_f64(loss, &[(vars[i], &minus)])?;
        let numeric = (f_plus - f_minus) / (2.0 * h);
        let err = rel_err(analytic[i][j], numeric, 1e-2);
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}
