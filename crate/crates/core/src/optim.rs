//! Adam with bias correction and a staircase learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamStore};

pub const ADAM_EPS: f64 = 1e-8;

/// Piecewise-constant schedule: `base_lr * decay_factor^(#decay_steps <= iter)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_steps: Vec<usize>,
}

impl LrSchedule {
    pub fn new(base_lr: f64, decay_factor: f64, mut decay_steps: Vec<usize>) -> Self {
        decay_steps.sort_unstable();
        Self {
            base_lr,
            decay_factor,
            decay_steps,
        }
    }

    pub fn constant(lr: f64) -> Self {
        Self::new(lr, 1.0, Vec::new())
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        let passed = self.decay_steps.iter().take_while(|&&s| s <= iter).count();
        self.base_lr * libm::pow(self.decay_factor, passed as f64)
    }

    /// Same shape stretched by `factor` (decay points rounded to nearest).
    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(
            self.base_lr,
            self.decay_factor,
            self.decay_steps
                .iter()
                .map(|&s| libm::round(s as f64 * factor) as usize)
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: ADAM_EPS,
        }
    }
}

/// One Adam update with the learning rate the schedule gives for `iter`.
///
/// Every gradient is checked before anything is written, so a NaN leaves
/// parameters and state untouched.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    schedule: &LrSchedule,
    iter: usize,
) -> Result<()> {
    if state.first_moment.len() != params.len() {
        return Err(Error::Contract("Adam state does not match parameters".into()));
    }
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for &id in &ids {
        if grads.get(id).iter().any(|g| !g.is_finite()) {
            return Err(Error::NanGradient(params.name(id).into()));
        }
        if grads.get(id).len() != params.get(id).len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: params.get(id).shape().to_vec(),
                rhs: vec![grads.get(id).len()],
            });
        }
    }
    state.step_count += 1;
    let t = state.step_count as f64;
    let lr = schedule.lr_at(iter);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - libm::pow(b1, t);
    let c2 = 1.0 - libm::pow(b2, t);
    for id in ids {
        let i = id.index();
        let g = grads.get(id);
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        let w = params.get_mut(id).data_mut();
        for j in 0..w.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            w[j] -= lr * mhat / (libm::sqrt(vhat) + eps);
        }
    }
    Ok(())
}
