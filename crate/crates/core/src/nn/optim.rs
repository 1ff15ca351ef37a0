use super::{MlpParams, Scalar};
use crate::error::{invalid, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam moments shaped like the parameters they track.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: MlpParams<F>,
    pub v: MlpParams<F>,
    pub step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &MlpParams<F>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// One in-place update of `params` along `grads`.
    pub fn update(&mut self, params: &mut MlpParams<F>, grads: &MlpParams<F>, lr: f64) -> Result<()> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(invalid("adam: parameter, gradient and moment shapes differ"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let (b1, b2, eps) = (F::of(ADAM_BETA1), F::of(ADAM_BETA2), F::of(ADAM_EPS));
        let (one, lr, c1, c2) = (F::one(), F::of(lr), F::of(c1), F::of(c2));
        // Moments of dead units decay geometrically and would linger in the
        // subnormal range for thousands of steps, where arithmetic is
        // several times slower. Below `tiny` they cannot move a parameter.
        let tiny = F::min_positive_value();
        let flush = |x: F| if x.abs() < tiny { F::zero() } else { x };
        let tensors = params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = flush(b1 * *m + (one - b1) * g);
                *v = flush(b2 * *v + (one - b2) * g * g);
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `target ← c·target + (1 − c)·online`, elementwise.
pub fn polyak_update<F: Scalar>(target: &mut MlpParams<F>, online: &MlpParams<F>, coefficient: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&coefficient) {
        return Err(invalid(format!("polyak coefficient {coefficient} outside [0, 1]")));
    }
    if !target.same_shape(online) {
        return Err(invalid("polyak: target and online shapes differ"));
    }
    let c = F::of(coefficient);
    let rest = F::one() - c;
    for (t, o) in target.tensors_mut().zip(online.tensors()) {
        for (t, &o) in t.iter_mut().zip(o) {
            *t = c * *t + rest * o;
        }
    }
    Ok(())
}
