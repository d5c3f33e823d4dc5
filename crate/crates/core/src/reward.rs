//! Terminal rewards: background preservation, surrogate prompt alignment,
//! their weighted combination, the global-edit variant and a judge-based
//! variant with a pluggable success predicate.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::EditTask;
use crate::error::{Error, Result};
use crate::scalar::{masked_mse, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Masked,
    Global,
    Judge,
}

/// Signature of a custom edit-success predicate.
pub type JudgeFn<S> = dyn Fn(&[S], &EditTask<S>) -> bool + Send + Sync;

/// Decides whether an edit succeeded.
#[derive(Clone)]
pub enum Judge<S: Scalar> {
    /// Success iff the in-mask MSE to the edit target is below the threshold.
    Threshold(S),
    Custom(Arc<JudgeFn<S>>),
}

impl<S: Scalar> Judge<S> {
    pub fn accepts(&self, x0: &[S], task: &EditTask<S>) -> bool {
        match self {
            Judge::Threshold(th) => in_mask_mse(x0, task).is_some_and(|m| m < *th),
            Judge::Custom(f) => f(x0, task),
        }
    }
}

impl<S: Scalar> fmt::Debug for Judge<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Judge::Threshold(th) => f.debug_tuple("Threshold").field(th).finish(),
            Judge::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RewardConfig<S: Scalar> {
    pub alpha: S,
    pub beta: S,
    pub mode: RewardMode,
    /// Background coefficient of the judge score.
    pub judge_coeff: S,
    pub judge: Option<Judge<S>>,
}

impl<S: Scalar> Default for RewardConfig<S> {
    fn default() -> Self {
        Self {
            alpha: S::of(30.0),
            beta: S::of(30.0),
            mode: RewardMode::Masked,
            judge_coeff: S::of(5.0),
            judge: None,
        }
    }
}

impl<S: Scalar> RewardConfig<S> {
    pub fn masked(alpha: f64, beta: f64) -> Self {
        Self {
            alpha: S::of(alpha),
            beta: S::of(beta),
            ..Self::default()
        }
    }

    pub fn global(alpha: f64) -> Self {
        Self {
            alpha: S::of(alpha),
            mode: RewardMode::Global,
            ..Self::default()
        }
    }

    pub fn judge(judge: Judge<S>, judge_coeff: f64) -> Self {
        Self {
            mode: RewardMode::Judge,
            judge_coeff: S::of(judge_coeff),
            judge: Some(judge),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= S::zero() && self.beta >= S::zero())
            || !self.alpha.is_finite()
            || !self.beta.is_finite()
        {
            return Err(Error::Config("alpha and beta must be finite and >= 0".into()));
        }
        match (self.mode, &self.judge) {
            (RewardMode::Judge, None) => {
                Err(Error::Config("judge mode requires a judge".into()))
            }
            (RewardMode::Masked | RewardMode::Global, Some(_)) => {
                Err(Error::Config("judge supplied outside judge mode".into()))
            }
            _ => Ok(()),
        }
    }

    /// Same configuration with `alpha` and `beta` multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            alpha: self.alpha * S::of(c),
            beta: self.beta * S::of(c),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RewardBreakdown<S: Scalar> {
    pub r_edit: S,
    pub r_noedit: S,
    pub total: S,
}

fn in_mask_mse<S: Scalar>(x0: &[S], task: &EditTask<S>) -> Option<S> {
    masked_mse(x0, &task.c_edit, |i| task.in_mask(i))
}

/// Out-of-mask MSE against the source, 0 when the mask covers everything.
pub fn out_of_mask_mse<S: Scalar>(x0: &[S], task: &EditTask<S>) -> S {
    masked_mse(x0, &task.i_src, |i| !task.in_mask(i)).unwrap_or_else(S::zero)
}

/// Negative out-of-mask MSE to the source; 0 for an all-ones mask.
pub fn background_reward<S: Scalar>(x0: &[S], task: &EditTask<S>) -> Result<S> {
    crate::diffusion::check_dim(task.dim(), x0.len())?;
    Ok(-out_of_mask_mse(x0, task))
}

/// `1 / (1 + in-mask MSE to c_edit)`.
pub fn alignment_reward<S: Scalar>(x0: &[S], task: &EditTask<S>) -> Result<S> {
    crate::diffusion::check_dim(task.dim(), x0.len())?;
    let mse = in_mask_mse(x0, task).ok_or_else(|| Error::Reward("empty edit mask".into()))?;
    Ok(S::one() / (S::one() + mse))
}

fn global_alignment<S: Scalar>(x0: &[S], task: &EditTask<S>) -> S {
    let mse = masked_mse(x0, &task.c_edit, |_| true).unwrap_or_else(S::zero);
    S::one() / (S::one() + mse)
}

/// Terminal reward of an edited latent.
pub fn compose<S: Scalar>(
    x0: &[S],
    task: &EditTask<S>,
    cfg: &RewardConfig<S>,
) -> Result<RewardBreakdown<S>> {
    cfg.validate()?;
    match cfg.mode {
        RewardMode::Masked => {
            if task.is_global() {
                return Err(Error::Reward(
                    "masked reward needs background coordinates; use global mode".into(),
                ));
            }
            let r_edit = alignment_reward(x0, task)?;
            let r_noedit = background_reward(x0, task)?;
            Ok(RewardBreakdown {
                r_edit,
                r_noedit,
                total: cfg.alpha * r_edit + cfg.beta * r_noedit,
            })
        }
        RewardMode::Global => {
            crate::diffusion::check_dim(task.dim(), x0.len())?;
            let r_edit = global_alignment(x0, task);
            Ok(RewardBreakdown {
                r_edit,
                r_noedit: S::zero(),
                total: cfg.alpha * r_edit,
            })
        }
        RewardMode::Judge => judge_score(x0, task, cfg),
    }
}

/// Binary judge verdict plus `max(0, 1 - judge_coeff * out-of-mask MSE)`.
pub fn judge_score<S: Scalar>(
    x0: &[S],
    task: &EditTask<S>,
    cfg: &RewardConfig<S>,
) -> Result<RewardBreakdown<S>> {
    let judge = cfg
        .judge
        .as_ref()
        .ok_or_else(|| Error::Reward("judge score needs a judge".into()))?;
    crate::diffusion::check_dim(task.dim(), x0.len())?;
    let r_edit = if judge.accepts(x0, task) {
        S::one()
    } else {
        S::zero()
    };
    let r_noedit = (S::one() - cfg.judge_coeff * out_of_mask_mse(x0, task)).max(S::zero());
    Ok(RewardBreakdown {
        r_edit,
        r_noedit,
        total: r_edit + r_noedit,
    })
}
