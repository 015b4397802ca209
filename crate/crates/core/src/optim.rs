//! First-order optimizers over a flat list of parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

fn check_shapes(params: &[Tensor], other: &[Tensor], what: &'static str) -> Result<()> {
    if params.len() != other.len() {
        return Err(Error::shape(what, &[params.len()], &[other.len()]));
    }
    for (p, o) in params.iter().zip(other) {
        if p.shape() != o.shape() {
            return Err(Error::shape(what, p.shape(), o.shape()));
        }
    }
    Ok(())
}

pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
    check_shapes(params, grads, "sgd_step")?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (w, dw) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * dw;
        }
    }
    Ok(())
}

/// Bias-corrected Adam update.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64, betas: (f64, f64), eps: f64) -> Result<()> {
    check_shapes(params, grads, "adam_step")?;
    check_shapes(params, &state.m, "adam_step state")?;
    check_shapes(params, &state.v, "adam_step state")?;
    let (b1, b2) = betas;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (w, &dw)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * dw;
            v[j] = b2 * v[j] + (1.0 - b2) * dw * dw;
            *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// An optimizer bound to its hyperparameters and state.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Adam { lr: f64, state: AdamState },
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[Tensor]) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                state: AdamState::new(params),
            },
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        match self {
            Optimizer::Adam { lr, state } => adam_step(params, grads, state, *lr, ADAM_BETAS, ADAM_EPS),
            Optimizer::Sgd { lr } => sgd_step(params, grads, *lr),
        }
    }
}
