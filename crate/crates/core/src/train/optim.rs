use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::params::ParamStore;
use crate::Float;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adamax,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adamax => "adamax",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adamax" => Ok(OptimizerKind::Adamax),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::config(format!("unknown optimizer {:?} (adamax|adam)", s))),
        }
    }
}

pub const BETA1: Float = 0.9;
pub const BETA2: Float = 0.999;
pub const EPSILON: Float = 1e-8;

/// Adam-family optimizer state. `second` holds the infinity-norm estimate
/// for Adamax and the squared-gradient average for Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub step: u64,
    pub first: ParamStore,
    pub second: ParamStore,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &ParamStore) -> Self {
        Optimizer { kind, step: 0, first: params.zeros_like(), second: params.zeros_like() }
    }

    /// One update with gradients aligned to `params`' order.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: Float) -> Result<()> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(Error::invalid(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let kind = self.kind;
        for (((p, m), u), g) in params.tensors_mut().zip(self.first.tensors_mut()).zip(self.second.tensors_mut()).zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("optimizer", format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
            }
            let (p, m, u) = (p.data_mut(), m.data_mut(), u.data_mut());
            for (k, gv) in g.data().iter().enumerate() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * gv;
                match kind {
                    OptimizerKind::Adamax => {
                        u[k] = (BETA2 * u[k]).max(gv.abs());
                        p[k] -= lr / c1 * m[k] / (u[k] + EPSILON);
                    }
                    OptimizerKind::Adam => {
                        u[k] = BETA2 * u[k] + (1.0 - BETA2) * gv * gv;
                        p[k] -= lr * (m[k] / c1) / ((u[k] / c2).sqrt() + EPSILON);
                    }
                }
            }
        }
        Ok(())
    }
}

/// `shadow <- decay * shadow + (1 - decay) * params`.
pub fn ema_update(shadow: &mut ParamStore, params: &ParamStore, decay: Float) {
    for (s, (_, p)) in shadow.tensors_mut().zip(params.iter()) {
        for (a, b) in s.data_mut().iter_mut().zip(p.data()) {
            *a = decay * *a + (1.0 - decay) * b;
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> Float {
    grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<Float>()).sum::<Float>().sqrt()
}

/// Rescales `grads` to global norm `max_norm` when it is exceeded.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: Float) -> Float {
    let n = global_norm(grads);
    if n > max_norm {
        for g in grads.iter_mut() {
            g.scale_assign(max_norm / n);
        }
    }
    n
}
