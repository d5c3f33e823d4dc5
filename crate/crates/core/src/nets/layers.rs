use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense affine map `y = W x + b`, `W` stored row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Linear<S: Scalar> {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<S>,
    pub b: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![S::zero(); rows * cols],
            b: vec![S::zero(); rows],
        }
    }

    /// Uniform He-style initialisation scaled by `gain`; biases start at 0.
    pub fn init<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain * (6.0 / cols as f64).sqrt();
        let w = (0..rows * cols)
            .map(|_| S::of(rng.random_range(-bound..=bound)))
            .collect();
        Self {
            rows,
            cols,
            w,
            b: vec![S::zero(); rows],
        }
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.w.len() != self.rows * self.cols || self.b.len() != self.rows {
            return Err(Error::Data(format!(
                "layer {}x{} has {} weights and {} biases",
                self.rows,
                self.cols,
                self.w.len(),
                self.b.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.cols);
        self.w
            .chunks_exact(self.cols)
            .zip(&self.b)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &v)| acc + w * v))
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[S], dy: &[S], grad: &mut Linear<S>) -> Vec<S> {
        let mut dx = vec![S::zero(); self.cols];
        for (r, &g) in dy.iter().enumerate() {
            if g == S::zero() {
                continue;
            }
            grad.b[r] += g;
            let base = r * self.cols;
            let row = &self.w[base..base + self.cols];
            let grow = &mut grad.w[base..base + self.cols];
            for c in 0..self.cols {
                grow[c] += g * x[c];
                dx[c] += g * row[c];
            }
        }
        dx
    }

    pub(crate) fn tensors(&self) -> [&[S]; 2] {
        [&self.w, &self.b]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [S]; 2] {
        [&mut self.w, &mut self.b]
    }
}

pub(crate) fn relu<S: Scalar>(v: &mut [S]) {
    for x in v {
        if *x < S::zero() {
            *x = S::zero();
        }
    }
}

/// Zeroes upstream gradient where the post-activation output is zero.
pub(crate) fn relu_backward<S: Scalar>(out: &[S], dy: &mut [S]) {
    for (g, &o) in dy.iter_mut().zip(out) {
        if o <= S::zero() {
            *g = S::zero();
        }
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let m = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<S>().ln();
    logits.iter().map(|&z| z - lse).collect()
}
