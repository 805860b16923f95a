//! AdamW with decoupled weight decay, cosine learning-rate decay and
//! global-norm gradient clipping.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::nn::{Float, ParamStore, Tensor};

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

/// First and second moments, one pair per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl<F: Float> AdamState<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        AdamState { m: zeros(), v: zeros(), step: 0 }
    }
}

/// One AdamW update of every trainable parameter from the gradients held in
/// `store`. Fails without touching anything if a gradient is not finite.
pub fn adamw_step<F: Float>(store: &mut ParamStore<F>, state: &mut AdamState<F>, lr: f64, hyper: &AdamHyper) -> Result<()> {
    if state.m.len() != store.len() || state.v.len() != store.len() {
        return Err(Error::invalid(format!(
            "optimizer state has {} moments for {} parameters",
            state.m.len(),
            store.len()
        )));
    }
    for (id, p) in store.iter() {
        if !p.grad.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {} at step {}", p.name, state.step + 1)));
        }
        if state.m[id.index()].shape() != p.value.shape() {
            return Err(Error::invalid(format!("optimizer moment shape mismatch for {}", p.name)));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in store.iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, theta) in p.value.data_mut().iter_mut().enumerate() {
            let g = p.grad.data()[j].f64();
            let mj = b1 * m[j].f64() + (1.0 - b1) * g;
            let vj = b2 * v[j].f64() + (1.0 - b2) * g * g;
            m[j] = F::of(mj);
            v[j] = F::of(vj);
            let update = (mj / c1) / ((vj / c2).sqrt() + ADAM_EPS) + hyper.weight_decay * theta.f64();
            *theta = F::of(theta.f64() - lr * update);
        }
    }
    Ok(())
}

/// `lr_min + ½(lr_init − lr_min)(1 + cos(π·iter/total))`; `lr_init` when
/// `total` is zero.
pub fn cosine_lr(iter: u64, total: u64, lr_init: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_init;
    }
    let frac = iter.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr_init - lr_min) * (1.0 + (PI * frac).cos())
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm <= 0` disables clipping.
pub fn clip_grad_norm<F: Float>(store: &mut ParamStore<F>, max_norm: f64) -> f64 {
    let norm = store.grad_norm().f64();
    if max_norm > 0.0 && norm > max_norm {
        let k = F::of(max_norm / norm);
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= k);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(theta: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add("theta", Tensor::full([1, 1, 1, 1], theta)).unwrap();
        s.get_mut(id).grad.fill(grad);
        s
    }

    const HYPER: AdamHyper = AdamHyper { beta1: 0.9, beta2: 0.999, weight_decay: 0.0 };

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut s = scalar_store(0.7, 0.0);
        let mut st = AdamState::new(&s);
        adamw_step(&mut s, &mut st, 0.1, &HYPER).unwrap();
        assert_eq!(s.iter().next().unwrap().1.value.data()[0], 0.7);
    }

    #[test]
    fn decoupled_decay_only() {
        let mut s = scalar_store(2.0, 0.0);
        let mut st = AdamState::new(&s);
        adamw_step(&mut s, &mut st, 0.01, &AdamHyper { weight_decay: 0.1, ..HYPER }).unwrap();
        assert!((s.iter().next().unwrap().1.value.data()[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
    }

    #[test]
    fn first_step_hand_computed() {
        let mut s = scalar_store(1.0, 1.0);
        let mut st = AdamState::new(&s);
        adamw_step(&mut s, &mut st, 0.1, &HYPER).unwrap();
        // m̂ = 1, v̂ = 1
        let want = 1.0 - 0.1 * (1.0 / (1.0 + ADAM_EPS));
        assert!((s.iter().next().unwrap().1.value.data()[0] - want).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut s = scalar_store(1.0, f64::NAN);
        let mut st = AdamState::new(&s);
        let err = adamw_step(&mut s, &mut st, 0.1, &HYPER).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 1e-3, 1e-7), 1e-3);
        assert!((cosine_lr(100, 100, 1e-3, 1e-7) - 1e-7).abs() < 1e-20);
        assert!((cosine_lr(50, 100, 1e-3, 1e-7) - (1e-3 + 1e-7) / 2.0).abs() < 1e-18);
    }

    #[test]
    fn clipping() {
        let mut s = scalar_store(0.0, 3.0);
        let id = s.add("b", Tensor::zeros([1, 1, 1, 1])).unwrap();
        s.get_mut(id).grad.fill(4.0);
        assert_eq!(clip_grad_norm(&mut s, 1.0), 5.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-12);
        assert!((clip_grad_norm(&mut s, 0.0) - 1.0).abs() < 1e-12);
    }
}
