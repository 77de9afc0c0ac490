//! Adam updates and global-norm gradient clipping.

use crate::params::ParamSet;
use crate::tensor::{Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one pair per parameter, in
/// parameter-set order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let m = params
            .iter()
            .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        let v = params
            .iter()
            .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
            .collect();
        AdamState { m, v, step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update; gradients are zeroed afterwards.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, state: &mut AdamState<T>, lr: f64) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    let b1 = T::from_f64(ADAM_BETA1);
    let b2 = T::from_f64(ADAM_BETA2);
    let one_m_b1 = T::from_f64(1.0 - ADAM_BETA1);
    let one_m_b2 = T::from_f64(1.0 - ADAM_BETA2);

    for (idx, p) in params.iter_mut().enumerate() {
        if p.trainable {
            let m = &mut state.m[idx];
            let v = &mut state.v[idx];
            for k in 0..p.value.len() {
                let g = p.grad.data()[k];
                let mk = b1 * m.data()[k] + one_m_b1 * g;
                let vk = b2 * v.data()[k] + one_m_b2 * g * g;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                let m_hat = mk.as_f64() / bc1;
                let v_hat = vk.as_f64() / bc2;
                let update = lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                let cur = p.value.data()[k].as_f64();
                p.value.data_mut()[k] = T::from_f64(cur - update);
            }
        }
        p.grad.fill(T::zero());
    }
}

/// Computes the global L2 norm of all gradients and, when it exceeds
/// `threshold`, rescales every gradient by `threshold / norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients<T: Scalar>(params: &mut ParamSet<T>, threshold: f64) -> f64 {
    assert!(threshold > 0.0, "clip threshold must be positive");
    let norm_sq: f64 = params.iter().map(|p| p.grad.frobenius_sq()).sum();
    let norm = norm_sq.sqrt();
    if norm > threshold {
        let factor = T::from_f64(threshold / norm);
        for p in params.iter_mut() {
            p.grad.scale_assign(factor);
        }
    }
    norm
}
