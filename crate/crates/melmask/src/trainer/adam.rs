//! Adam with bias correction and decoupled weight decay.

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const BETA1: f32 = 0.9;
pub const BETA2: f32 = 0.999;
pub const EPS: f32 = 1e-8;

/// First/second moment buffers, one pair per parameter, plus the step count
/// used for bias correction.
#[derive(Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let m = store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect::<Vec<_>>();
        AdamState {
            v: m.clone(),
            m,
            t: 0,
        }
    }

    /// One update over every parameter in the store. Decoupled weight decay
    /// shrinks parameters first (theta -= lr * wd * theta), then the
    /// bias-corrected Adam step applies the gradient currently held in the
    /// store's grad buffers.
    pub fn step(&mut self, store: &mut ParamStore, lr: f32, weight_decay: f32) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for id in store.ids() {
            let grad = store.grad(id).data().to_vec();
            let m = self.m[id_index(id)].data_mut();
            let v = self.v[id_index(id)].data_mut();
            let theta = store.value_mut(id).data_mut();
            for i in 0..theta.len() {
                if weight_decay != 0.0 {
                    theta[i] -= lr * weight_decay * theta[i];
                }
                let g = grad[i];
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }
}

fn id_index(id: crate::autodiff::ParamId) -> usize {
    // ParamIds are dense indices in insertion order.
    id.index()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::scalar(value));
        s
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // g = 1, wd = 0: bias-corrected m_hat/sqrt(v_hat) = 1 up to eps.
        let mut store = scalar_store(0.0);
        let id = store.id("theta").unwrap();
        store.accumulate_grad(id, &[1.0]);
        let mut adam = AdamState::new(&store);
        adam.step(&mut store, 0.1, 0.0).unwrap();
        let theta = store.value(id).item();
        assert!((theta + 0.1).abs() < 1e-6, "theta {theta}");
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut store = scalar_store(0.7);
        let id = store.id("theta").unwrap();
        let mut adam = AdamState::new(&store);
        for _ in 0..50 {
            store.zero_grads();
            adam.step(&mut store, 0.1, 0.0).unwrap();
        }
        assert_eq!(store.value(id).item(), 0.7);
    }

    /// Independent scalar Adam, written directly from the update equations.
    fn oracle_quadratic(steps: usize, lr: f64) -> f64 {
        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=steps {
            let g = 2.0 * theta;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t as i32));
            let v_hat = v / (1.0 - 0.999f64.powi(t as i32));
            theta -= lr * m_hat / (v_hat.sqrt() + 1e-8);
        }
        theta
    }

    #[test]
    fn quadratic_converges_and_tracks_oracle() {
        let mut store = scalar_store(1.0);
        let id = store.id("theta").unwrap();
        let mut adam = AdamState::new(&store);
        for _ in 0..200 {
            let theta = store.value(id).item();
            store.zero_grads();
            store.accumulate_grad(id, &[2.0 * theta]);
            adam.step(&mut store, 0.1, 0.0).unwrap();
        }
        let theta = store.value(id).item();
        assert!(theta.abs() < 0.05, "theta {theta}");
        let oracle = oracle_quadratic(200, 0.1);
        assert!(
            (f64::from(theta) - oracle).abs() < 1e-3,
            "theta {theta} vs oracle {oracle}"
        );
    }

    #[test]
    fn weight_decay_shrinks_before_update() {
        let mut store = scalar_store(1.0);
        let id = store.id("theta").unwrap();
        let mut adam = AdamState::new(&store);
        // zero gradient: only the decay acts, theta -> theta * (1 - lr*wd)
        adam.step(&mut store, 0.5, 0.1).unwrap();
        let theta = store.value(id).item();
        assert!((theta - 0.95).abs() < 1e-6, "theta {theta}");
    }
}
