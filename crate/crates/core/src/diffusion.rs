//! Noise schedules and deterministic (DDIM-style, zero reverse variance)
//! forward, inversion and denoising maps on vector latents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cumulative signal retention `alpha_bar[0..=T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct NoiseSchedule<S: Scalar> {
    alpha_bar: Vec<S>,
}

impl<S: Scalar> NoiseSchedule<S> {
    /// `alpha_bar[t] = 1 - t / (T + 1)`. The floor at `1/(T+1)` keeps the
    /// clean-estimate division defined at `t = T`.
    pub fn linear(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("step count must be at least 1".into()));
        }
        let denom = S::of_usize(steps + 1);
        let alpha_bar = (0..=steps)
            .map(|t| S::one() - S::of_usize(t) / denom)
            .collect();
        Ok(Self { alpha_bar })
    }

    /// Builds a schedule from an explicit sequence, checking its invariants.
    pub fn from_alpha_bar(alpha_bar: Vec<S>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::Schedule("need alpha_bar_0..alpha_bar_T with T >= 1".into()));
        }
        if alpha_bar[0] != S::one() {
            return Err(Error::Schedule("alpha_bar_0 must equal 1".into()));
        }
        for (t, w) in alpha_bar.windows(2).enumerate() {
            if w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Less) {
                return Err(Error::Schedule(format!(
                    "not strictly decreasing at t={}",
                    t + 1
                )));
            }
        }
        let last = *alpha_bar.last().unwrap();
        if last.partial_cmp(&S::zero()) != Some(std::cmp::Ordering::Greater) || !last.is_finite() {
            return Err(Error::Schedule("alpha_bar_T must be positive".into()));
        }
        Ok(Self { alpha_bar })
    }

    /// Number of denoising steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> S {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[S] {
        &self.alpha_bar
    }

    /// Per-step retention `alpha_t = alpha_bar_t / alpha_bar_{t-1}`.
    pub fn alpha(&self, t: usize) -> Result<S> {
        self.check_t(t, 1)?;
        Ok(self.alpha_bar[t] / self.alpha_bar[t - 1])
    }

    fn check_t(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps() {
            return Err(Error::Timestep {
                t,
                lo,
                hi: self.steps(),
            });
        }
        Ok(())
    }

    /// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
    pub fn forward_sample(&self, x0: &[S], t: usize, eps: &[S]) -> Result<Vec<S>> {
        self.check_t(t, 0)?;
        check_dim(x0.len(), eps.len())?;
        Ok(self.mix(x0, t, eps))
    }

    /// Clean estimate implied by `x_t` under noise `eps`.
    pub fn implied_x0(&self, x_t: &[S], t: usize, eps: &[S]) -> Result<Vec<S>> {
        self.check_t(t, 1)?;
        check_dim(x_t.len(), eps.len())?;
        let ab = self.alpha_bar[t];
        let (sa, sn) = (ab.sqrt(), (S::one() - ab).sqrt());
        Ok(x_t
            .iter()
            .zip(eps)
            .map(|(&x, &e)| (x - sn * e) / sa)
            .collect())
    }

    /// Deterministic reverse step: re-noises `x_hat0` to level `t - 1` with
    /// the same episode noise.
    pub fn ddim_step(&self, x_hat0: &[S], t: usize, eps: &[S]) -> Result<Vec<S>> {
        self.check_t(t, 1)?;
        check_dim(x_hat0.len(), eps.len())?;
        Ok(self.mix(x_hat0, t - 1, eps))
    }

    fn mix(&self, x0: &[S], t: usize, eps: &[S]) -> Vec<S> {
        let ab = self.alpha_bar[t];
        let (sa, sn) = (ab.sqrt(), (S::one() - ab).sqrt());
        x0.iter().zip(eps).map(|(&x, &e)| sa * x + sn * e).collect()
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

/// A point on the denoising trajectory, `s_t = (x_t, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LatentState<S: Scalar> {
    pub x: Vec<S>,
    pub t: usize,
}

impl<S: Scalar> LatentState<S> {
    pub fn new(x: Vec<S>, t: usize) -> Self {
        Self { x, t }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }
}
