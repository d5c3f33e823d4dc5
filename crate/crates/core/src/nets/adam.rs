use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, allocated lazily on the first step.
#[derive(Debug, Clone, Default)]
pub struct AdamState<S: Scalar> {
    pub config: AdamConfig,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` along `grads`.
pub fn adam_step<S: Scalar, P: ParamSet<S>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<S>,
    lr: f64,
) -> Result<()> {
    let gt = grads.tensors();
    {
        let pt = params.tensors();
        if pt.len() != gt.len() {
            return Err(Error::Dimension {
                expected: pt.len(),
                got: gt.len(),
            });
        }
        for (p, g) in pt.iter().zip(&gt) {
            if p.len() != g.len() {
                return Err(Error::Dimension {
                    expected: p.len(),
                    got: g.len(),
                });
            }
        }
    }
    if state.m.is_empty() {
        state.m = gt.iter().map(|g| vec![S::zero(); g.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != gt.len() || state.m.iter().zip(&gt).any(|(m, g)| m.len() != g.len()) {
        return Err(Error::Data("optimizer state does not match parameters".into()));
    }

    state.step += 1;
    let cfg = state.config;
    let (b1, b2) = (S::of(cfg.beta1), S::of(cfg.beta2));
    let (c1, c2) = (
        S::one() - b1.powi(state.step as i32),
        S::one() - b2.powi(state.step as i32),
    );
    let (lr, eps) = (S::of(lr), S::of(cfg.eps));
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(gt)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (S::one() - b1) * gi;
            v[i] = b2 * v[i] + (S::one() - b2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    params.bump_version();
    Ok(())
}
