use indexmap::IndexMap;

use super::{ParameterSet, RealMatrix};
use crate::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// Adam moments and hyperparameters. No learning-rate schedule.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: IndexMap<String, RealMatrix>,
    second: IndexMap<String, RealMatrix>,
}

impl OptimizerState {
    pub fn adam(lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
            step: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&RealMatrix> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&RealMatrix> {
        self.second.get(name)
    }
}

/// One bias-corrected Adam update over every entry of `params`.
///
/// Every entry must carry a populated gradient; gradient slots are cleared
/// afterwards. Nothing is mutated when a gradient is missing.
pub fn adam_step(params: &mut ParameterSet, state: &mut OptimizerState) -> Result<()> {
    for (name, p) in params.iter() {
        let g = p
            .grad
            .as_ref()
            .ok_or_else(|| Error::State(format!("missing gradient for {name}")))?;
        if g.shape() != p.value.shape() {
            return Err(Error::State(format!("gradient shape mismatch for {name}")));
        }
        g.ensure_finite(name)?;
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);

    for (name, p) in params.iter_mut() {
        let g = p.grad.take().expect("checked above");
        let (r, c) = g.shape();
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| RealMatrix::zeros(r, c));
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| RealMatrix::zeros(r, c));
        let values = p.value.as_mut_slice();
        for i in 0..values.len() {
            let gi = g.as_slice()[i];
            let mi = &mut m.as_mut_slice()[i];
            let vi = &mut v.as_mut_slice()[i];
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
