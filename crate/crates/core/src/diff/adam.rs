use serde::{Deserialize, Serialize};

use super::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update using the accumulated `grad` buffers.
///
/// `lr(name)` picks the learning rate per tensor; `None` leaves the tensor
/// and its moments untouched. Each tensor keeps its own step count, so a
/// tensor that joins training late (a new keyframe pose) starts with a
/// fresh bias correction.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig, lr: impl Fn(&str) -> Option<f64>) {
    for p in store.iter_mut() {
        let Some(rate) = lr(&p.name) else { continue };
        p.steps += 1;
        let t = p.steps as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..p.value.data.len() {
            let g = p.grad.data[i];
            let m = cfg.beta1 * p.m.data[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * p.v.data[i] + (1.0 - cfg.beta2) * g * g;
            p.m.data[i] = m;
            p.v.data[i] = v;
            p.value.data[i] -= rate * (m / bc1) / ((v / bc2).sqrt() + cfg.eps);
        }
    }
    store.step += 1;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::tensor::Tensor;

    #[test]
    fn zero_gradient_changes_nothing() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::row(vec![1.0, -2.0]));
        let before = s.value(a).clone();
        adam_step(&mut s, &AdamConfig::default(), |_| Some(0.1));
        assert_eq!(s.value(a), &before);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::row(vec![1.0, 1.0]));
        s.get_mut(a).grad = Tensor::row(vec![3.0, -0.002]);
        adam_step(&mut s, &AdamConfig::default(), |_| Some(0.01));
        let v = &s.value(a).data;
        assert!((v[0] - (1.0 - 0.01)).abs() < 1e-8);
        assert!((v[1] - (1.0 + 0.01)).abs() < 1e-5);
    }

    #[test]
    fn frozen_group_is_bit_identical() {
        let mut s = ParamStore::new();
        let a = s.insert("twist.0", Tensor::row(vec![0.1; 6]));
        s.get_mut(a).grad = Tensor::row(vec![1.0; 6]);
        let before = s.get(a).clone();
        adam_step(&mut s, &AdamConfig::default(), |n| (!n.starts_with("twist.")).then_some(0.1));
        assert_eq!(s.get(a), &before);
    }

    #[test]
    fn descends_a_quadratic_bowl() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::row(vec![2.0, -3.0]));
        for _ in 0..2000 {
            let g = s.value(a).map(|x| 2.0 * x);
            s.get_mut(a).grad = g;
            adam_step(&mut s, &AdamConfig::default(), |_| Some(0.05));
        }
        assert!(s.value(a).max_abs() < 1e-2);
        assert_eq!(s.step, 2000);
    }
}
