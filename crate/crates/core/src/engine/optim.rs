//! Adam optimizer over a [`WeightStore`].

use super::weights::WeightStore;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

/// First/second moment estimates and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: WeightStore,
    v: WeightStore,
    step: u32,
}

impl AdamState {
    /// Zero moments shaped like `weights`.
    pub fn new(weights: &WeightStore) -> Self {
        Self {
            m: weights.zeros_like(),
            v: weights.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }
}

/// One Adam update with betas 0.9/0.999 and eps 1e-8.
pub fn adam_step(weights: &mut WeightStore, grads: &WeightStore, state: &mut AdamState, lr: f32) -> Result<()> {
    for (name, p) in weights.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingWeights(name.clone()))?;
        if g.weight.shape() != p.weight.shape() || g.bias.shape() != p.bias.shape() {
            return Err(Error::Shape {
                layer: name.clone(),
                expected: p.weight.shape().to_vec(),
                got: g.weight.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, p) in weights.iter_mut() {
        let g = grads.get(name).expect("checked above");
        let m = state.m.get_mut(name).expect("state layout");
        let v = state.v.get_mut(name).expect("state layout");
        for (((w, &gv), mv), vv) in p
            .weight
            .data_mut()
            .iter_mut()
            .chain(p.bias.data_mut().iter_mut())
            .zip(g.weight.data().iter().chain(g.bias.data()))
            .zip(m.weight.data_mut().iter_mut().chain(m.bias.data_mut().iter_mut()))
            .zip(v.weight.data_mut().iter_mut().chain(v.bias.data_mut().iter_mut()))
        {
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}
