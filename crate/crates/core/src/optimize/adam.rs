use serde::{Deserialize, Serialize};

use crate::quat::Quat;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moments for one flat parameter block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam update in place. Entries whose gradient is not
/// finite are left untouched (moments included); the count of skipped
/// entries is returned and reported with `iteration`.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
    iteration: usize,
) -> usize {
    assert_eq!(params.len(), state.len(), "parameter block size changed");
    assert_eq!(grads.len(), state.len(), "gradient block size mismatch");
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let mut skipped = 0;
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if !g.is_finite() {
            skipped += 1;
            continue;
        }
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    if skipped > 0 {
        log::warn!("iteration {iteration}: skipped {skipped} parameters with non-finite gradients");
    }
    skipped
}

/// `lr1 + ½(lr0 − lr1)(1 + cos(π t / T))`.
pub fn cosine_lr(t: usize, total: usize, lr0: f64, lr1: f64) -> f64 {
    if total == 0 {
        return lr1;
    }
    let frac = (t.min(total) as f64) / total as f64;
    lr1 + 0.5 * (lr0 - lr1) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Renormalizes quaternions stored as consecutive `(w, x, y, z)` groups.
/// Groups already unit to within rounding are left untouched.
pub fn renormalize_quats(flat: &mut [f64]) {
    for c in flat.chunks_exact_mut(4) {
        let norm2: f64 = c.iter().map(|v| v * v).sum();
        if (norm2 - 1.0).abs() <= 4.0 * f64::EPSILON {
            continue;
        }
        let q = Quat::new(c[0], c[1], c[2], c[3]);
        if let Ok(u) = q.normalize() {
            c.copy_from_slice(&u.to_array());
        }
    }
}
