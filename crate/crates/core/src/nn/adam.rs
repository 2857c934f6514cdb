//! Bias-corrected Adam over the network's named parameter tensors.

use super::network::NetworkParams;
use super::scalar::Scalar;
use super::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState<S: Scalar> {
    step: u64,
    beta1: S,
    beta2: S,
    eps: S,
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    /// Fresh state with β1 = 0.9, β2 = 0.999, ε = 1e-8; moment tensors
    /// mirror the parameter iteration order.
    pub fn new(params: &NetworkParams<S>) -> AdamState<S> {
        let shapes: Vec<Tensor<S>> =
            params.named_tensors().iter().map(|(_, t)| t.zeros_like()).collect();
        AdamState {
            step: 0,
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            eps: S::from_f64(1e-8),
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One update: m ← β1·m + (1−β1)·g, v ← β2·v + (1−β2)·g², then
/// p ← p − lr·m̂/(√v̂ + ε) with the standard bias corrections.
pub fn adam_step<S: Scalar>(
    params: &mut NetworkParams<S>,
    grads: &NetworkParams<S>,
    state: &mut AdamState<S>,
    lr: S,
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = S::from_f64(1.0 - state.beta1.to_f64().powi(t));
    let bc2 = S::from_f64(1.0 - state.beta2.to_f64().powi(t));
    let (b1, b2) = (state.beta1, state.beta2);
    let one_m_b1 = S::ONE - b1;
    let one_m_b2 = S::ONE - b2;
    let grad_tensors = grads.named_tensors();
    for (idx, (name, p)) in params.named_tensors_mut().into_iter().enumerate() {
        let (gname, g) = &grad_tensors[idx];
        debug_assert_eq!(&name, gname);
        debug_assert_eq!(p.shape(), g.shape());
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        for (((pv, &gv), mv), vv) in
            p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut())
        {
            *mv = b1 * *mv + one_m_b1 * gv;
            *vv = b2 * *vv + one_m_b2 * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
}
