//! Policy and value networks with hand-written backward passes.
//!
//! Both networks share one backbone layout: a shared two-layer encoder is
//! applied to `[x_t; i_src]` and `[x_t; c_edit]`, the two branch features
//! are concatenated and linearly fused, the timestep is embedded
//! sinusoidally and linearly projected, and the concatenation passes
//! through two ReLU layers. The policy ends in one linear head per
//! hyperparameter, the value network in a single scalar.

mod adam;
pub mod checkpoint;
mod layers;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{log_softmax, Linear};

use crate::diffusion::LatentState;
use crate::environment::EditTask;
use crate::error::{Error, Result};
use crate::hyperspace::{HyperSpace, StepAction};
use crate::scalar::Scalar;
use layers::{relu, relu_backward};

/// Layer widths. `dim` is the latent dimension D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetShape {
    pub dim: usize,
    pub enc: usize,
    pub fuse: usize,
    pub embed: usize,
    pub time: usize,
    pub hidden: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            dim: 16,
            enc: 32,
            fuse: 32,
            embed: 32,
            time: 32,
            hidden: 64,
        }
    }
}

impl NetShape {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.embed.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "time embedding width {} must be even",
                self.embed
            )));
        }
        let widths = [
            self.dim,
            self.enc,
            self.fuse,
            self.embed,
            self.time,
            self.hidden,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("network widths must be positive".into()));
        }
        Ok(())
    }
}

/// Sinusoidal embedding: `sin(t / 10000^(2i/E))` for `i < E/2`, followed by
/// the matching cosines.
pub fn time_embed<S: Scalar>(t: usize, width: usize) -> Result<Vec<S>> {
    if !width.is_multiple_of(2) {
        return Err(Error::Config(format!("embedding width {width} must be even")));
    }
    let half = width / 2;
    let t = t as f64;
    let freqs: Vec<f64> = (0..half)
        .map(|i| t / 10000f64.powf(2.0 * i as f64 / width as f64))
        .collect();
    Ok(freqs
        .iter()
        .map(|a| S::of(a.sin()))
        .chain(freqs.iter().map(|a| S::of(a.cos())))
        .collect())
}

/// Everything a network conditions on at one state.
#[derive(Debug, Clone, Copy)]
pub struct NetInput<'a, S: Scalar> {
    pub x: &'a [S],
    pub t: usize,
    pub src: &'a [S],
    pub edit: &'a [S],
}

impl<'a, S: Scalar> NetInput<'a, S> {
    pub fn new(state: &'a LatentState<S>, task: &'a EditTask<S>) -> Self {
        Self {
            x: &state.x,
            t: state.t,
            src: &task.i_src,
            edit: &task.c_edit,
        }
    }
}

/// Uniform access to every parameter tensor of a network, in a fixed order.
pub trait ParamSet<S: Scalar>: Clone {
    fn tensors(&self) -> Vec<&[S]>;
    fn tensors_mut(&mut self) -> Vec<&mut [S]>;
    /// Bumped after every optimizer update; caches from older versions are stale.
    fn version(&self) -> u64;
    fn bump_version(&mut self);

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(S::zero());
        }
        z
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    fn add_scaled(&mut self, other: &Self, scale: S) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Backbone<S: Scalar> {
    pub enc1: Linear<S>,
    pub enc2: Linear<S>,
    pub fuse: Linear<S>,
    pub time: Linear<S>,
    pub trunk1: Linear<S>,
    pub trunk2: Linear<S>,
}

#[derive(Debug, Clone)]
struct BranchCache<S> {
    input: Vec<S>,
    a1: Vec<S>,
    feat: Vec<S>,
}

#[derive(Debug, Clone)]
struct BackboneCache<S> {
    src: BranchCache<S>,
    edit: BranchCache<S>,
    cat: Vec<S>,
    emb: Vec<S>,
    z: Vec<S>,
    h1: Vec<S>,
    h2: Vec<S>,
}

impl<S: Scalar> Backbone<S> {
    fn init<R: Rng + ?Sized>(shape: &NetShape, rng: &mut R) -> Self {
        Self {
            enc1: Linear::init(shape.enc, 2 * shape.dim, 1.0, rng),
            enc2: Linear::init(shape.enc, shape.enc, 1.0, rng),
            fuse: Linear::init(shape.fuse, 2 * shape.enc, 0.5, rng),
            time: Linear::init(shape.time, shape.embed, 0.5, rng),
            trunk1: Linear::init(shape.hidden, shape.fuse + shape.time, 1.0, rng),
            trunk2: Linear::init(shape.hidden, shape.hidden, 1.0, rng),
        }
    }

    fn zeros(shape: &NetShape) -> Self {
        Self {
            enc1: Linear::zeros(shape.enc, 2 * shape.dim),
            enc2: Linear::zeros(shape.enc, shape.enc),
            fuse: Linear::zeros(shape.fuse, 2 * shape.enc),
            time: Linear::zeros(shape.time, shape.embed),
            trunk1: Linear::zeros(shape.hidden, shape.fuse + shape.time),
            trunk2: Linear::zeros(shape.hidden, shape.hidden),
        }
    }

    fn layers(&self) -> [&Linear<S>; 6] {
        [
            &self.enc1,
            &self.enc2,
            &self.fuse,
            &self.time,
            &self.trunk1,
            &self.trunk2,
        ]
    }

    fn layers_mut(&mut self) -> [&mut Linear<S>; 6] {
        [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.fuse,
            &mut self.time,
            &mut self.trunk1,
            &mut self.trunk2,
        ]
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            dim: self.enc1.cols / 2,
            enc: self.enc1.rows,
            fuse: self.fuse.rows,
            embed: self.time.cols,
            time: self.time.rows,
            hidden: self.trunk2.rows,
        }
    }

    fn check(&self) -> Result<()> {
        for l in self.layers() {
            l.check_shape()?;
        }
        let s = self.shape();
        let consistent = self.enc1.cols == 2 * s.dim
            && self.enc2.cols == s.enc
            && self.enc2.rows == s.enc
            && self.fuse.cols == 2 * s.enc
            && self.trunk1.cols == s.fuse + s.time
            && self.trunk1.rows == s.hidden
            && self.trunk2.cols == s.hidden;
        if !consistent {
            return Err(Error::Data("backbone layer shapes are inconsistent".into()));
        }
        s.validate()
    }

    fn branch(&self, x: &[S], p: &[S]) -> BranchCache<S> {
        let input: Vec<S> = x.iter().chain(p).copied().collect();
        let mut a1 = self.enc1.forward(&input);
        relu(&mut a1);
        let mut feat = self.enc2.forward(&a1);
        relu(&mut feat);
        BranchCache { input, a1, feat }
    }

    fn forward(&self, inp: &NetInput<'_, S>) -> Result<BackboneCache<S>> {
        let d = self.enc1.cols / 2;
        for len in [inp.x.len(), inp.src.len(), inp.edit.len()] {
            crate::diffusion::check_dim(d, len)?;
        }
        let src = self.branch(inp.x, inp.src);
        let edit = self.branch(inp.x, inp.edit);
        let cat: Vec<S> = src.feat.iter().chain(&edit.feat).copied().collect();
        let fc = self.fuse.forward(&cat);
        let emb = time_embed(inp.t, self.time.cols)?;
        let ft = self.time.forward(&emb);
        let z: Vec<S> = fc.into_iter().chain(ft).collect();
        let mut h1 = self.trunk1.forward(&z);
        relu(&mut h1);
        let mut h2 = self.trunk2.forward(&h1);
        relu(&mut h2);
        Ok(BackboneCache {
            src,
            edit,
            cat,
            emb,
            z,
            h1,
            h2,
        })
    }

    fn relu_pattern(cache: &BackboneCache<S>) -> Vec<bool> {
        [
            &cache.src.a1,
            &cache.src.feat,
            &cache.edit.a1,
            &cache.edit.feat,
            &cache.h1,
            &cache.h2,
        ]
        .into_iter()
        .flatten()
        .map(|&v| v > S::zero())
        .collect()
    }

    fn backward(&self, cache: &BackboneCache<S>, mut dh2: Vec<S>, grad: &mut Backbone<S>) {
        relu_backward(&cache.h2, &mut dh2);
        let mut dh1 = self.trunk2.backward(&cache.h1, &dh2, &mut grad.trunk2);
        relu_backward(&cache.h1, &mut dh1);
        let dz = self.trunk1.backward(&cache.z, &dh1, &mut grad.trunk1);
        let (dfc, dft) = dz.split_at(self.fuse.rows);
        self.time.backward(&cache.emb, dft, &mut grad.time);
        let dcat = self.fuse.backward(&cache.cat, dfc, &mut grad.fuse);
        let (dsrc, dedit) = dcat.split_at(self.enc2.rows);
        self.branch_backward(&cache.src, dsrc.to_vec(), grad);
        self.branch_backward(&cache.edit, dedit.to_vec(), grad);
    }

    fn branch_backward(&self, cache: &BranchCache<S>, mut dfeat: Vec<S>, grad: &mut Backbone<S>) {
        relu_backward(&cache.feat, &mut dfeat);
        let mut da1 = self.enc2.backward(&cache.a1, &dfeat, &mut grad.enc2);
        relu_backward(&cache.a1, &mut da1);
        self.enc1.backward(&cache.input, &da1, &mut grad.enc1);
    }
}

/// Parameters of the K-head policy network.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PolicyParams<S: Scalar> {
    pub backbone: Backbone<S>,
    pub heads: Vec<Linear<S>>,
    #[serde(skip)]
    version: u64,
}

impl<S: Scalar> PartialEq for PolicyParams<S> {
    fn eq(&self, other: &Self) -> bool {
        self.backbone == other.backbone && self.heads == other.heads
    }
}

/// Per-head categorical distributions at one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PolicyOutput<S: Scalar> {
    pub probs: Vec<Vec<S>>,
    pub log_probs: Vec<Vec<S>>,
}

impl<S: Scalar> PolicyOutput<S> {
    fn from_logits(logits: &[Vec<S>]) -> Self {
        let log_probs: Vec<Vec<S>> = logits.iter().map(|l| log_softmax(l)).collect();
        let probs = log_probs
            .iter()
            .map(|lp| lp.iter().map(|v| v.exp()).collect())
            .collect();
        Self { probs, log_probs }
    }

    /// Joint log-probability of a parallel action (sum over heads).
    pub fn log_prob(&self, action: &StepAction) -> S {
        self.log_probs
            .iter()
            .zip(&action.indices)
            .map(|(lp, &i)| lp[i])
            .sum()
    }

    /// Argmax per head; ties resolve to the lowest index.
    pub fn greedy(&self) -> StepAction {
        StepAction::new(
            self.probs
                .iter()
                .map(|p| {
                    let mut best = 0;
                    for (i, &v) in p.iter().enumerate() {
                        if v > p[best] {
                            best = i;
                        }
                    }
                    best
                })
                .collect(),
        )
    }

    /// Samples every head independently.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StepAction {
        StepAction::new(
            self.probs
                .iter()
                .map(|p| {
                    let u = S::of(rng.random::<f64>());
                    let mut acc = S::zero();
                    for (i, &v) in p.iter().enumerate() {
                        acc += v;
                        if u < acc {
                            return i;
                        }
                    }
                    p.len() - 1
                })
                .collect(),
        )
    }
}

/// Activations recorded by a policy forward pass.
#[derive(Debug, Clone)]
pub struct PolicyCache<S: Scalar> {
    version: u64,
    backbone: BackboneCache<S>,
}

impl<S: Scalar> PolicyParams<S> {
    pub fn init<R: Rng + ?Sized>(shape: &NetShape, space: &HyperSpace, rng: &mut R) -> Self {
        let backbone = Backbone::init(shape, rng);
        let heads = space
            .cardinalities()
            .into_iter()
            .map(|n| Linear::init(n, shape.hidden, 0.05, rng))
            .collect();
        Self {
            backbone,
            heads,
            version: 0,
        }
    }

    pub fn zeros(shape: &NetShape, space: &HyperSpace) -> Self {
        Self {
            backbone: Backbone::zeros(shape),
            heads: space
                .cardinalities()
                .into_iter()
                .map(|n| Linear::zeros(n, shape.hidden))
                .collect(),
            version: 0,
        }
    }

    pub fn shape(&self) -> NetShape {
        self.backbone.shape()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.rows).collect()
    }

    /// Checks internal consistency and agreement with `space`.
    pub fn check(&self, space: &HyperSpace) -> Result<()> {
        self.backbone.check()?;
        for h in &self.heads {
            h.check_shape()?;
            if h.cols != self.backbone.trunk2.rows {
                return Err(Error::Data("policy head width mismatch".into()));
            }
        }
        if self.cardinalities() != space.cardinalities() {
            return Err(Error::Data(format!(
                "policy heads {:?} do not match hyperspace {:?}",
                self.cardinalities(),
                space.cardinalities()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, inp: &NetInput<'_, S>) -> Result<(PolicyOutput<S>, PolicyCache<S>)> {
        let backbone = self.backbone.forward(inp)?;
        let logits: Vec<Vec<S>> = self.heads.iter().map(|h| h.forward(&backbone.h2)).collect();
        Ok((
            PolicyOutput::from_logits(&logits),
            PolicyCache {
                version: self.version,
                backbone,
            },
        ))
    }

    /// Which ReLU units are active; finite-difference checks use it to
    /// avoid straddling a kink.
    pub fn relu_pattern(&self, inp: &NetInput<'_, S>) -> Result<Vec<bool>> {
        Ok(Backbone::relu_pattern(&self.backbone.forward(inp)?))
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, inp: &NetInput<'_, S>) -> Result<PolicyOutput<S>> {
        Ok(self.forward(inp)?.0)
    }

    /// Accumulates `dL/dparams` into `grad`, given `dL/dlogits` per head.
    pub fn backward_into(
        &self,
        cache: &PolicyCache<S>,
        dlogits: &[Vec<S>],
        grad: &mut PolicyParams<S>,
    ) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                current: self.version,
            });
        }
        if dlogits.len() != self.heads.len()
            || dlogits.iter().zip(&self.heads).any(|(d, h)| d.len() != h.rows)
        {
            return Err(Error::Dimension {
                expected: self.heads.len(),
                got: dlogits.len(),
            });
        }
        let h2 = &cache.backbone.h2;
        let mut dh2 = vec![S::zero(); h2.len()];
        for ((head, g), d) in self.heads.iter().zip(grad.heads.iter_mut()).zip(dlogits) {
            if d.iter().all(|v| *v == S::zero()) {
                continue;
            }
            let dx = head.backward(h2, d, g);
            for (a, b) in dh2.iter_mut().zip(dx) {
                *a += b;
            }
        }
        if dh2.iter().any(|v| *v != S::zero()) {
            self.backbone.backward(&cache.backbone, dh2, &mut grad.backbone);
        }
        Ok(())
    }

    pub fn backward(&self, cache: &PolicyCache<S>, dlogits: &[Vec<S>]) -> Result<PolicyParams<S>> {
        let mut grad = self.zeros_like();
        self.backward_into(cache, dlogits, &mut grad)?;
        Ok(grad)
    }
}

impl<S: Scalar> ParamSet<S> for PolicyParams<S> {
    fn tensors(&self) -> Vec<&[S]> {
        let mut out: Vec<&[S]> = self.backbone.layers().into_iter().flat_map(|l| l.tensors()).collect();
        out.extend(self.heads.iter().flat_map(|l| l.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = self
            .backbone
            .layers_mut()
            .into_iter()
            .flat_map(|l| l.tensors_mut())
            .collect();
        out.extend(self.heads.iter_mut().flat_map(|l| l.tensors_mut()));
        out
    }

    fn version(&self) -> u64 {
        self.version
    }

    fn bump_version(&mut self) {
        self.version += 1;
    }
}

/// Parameters of the scalar value network.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ValueParams<S: Scalar> {
    pub backbone: Backbone<S>,
    pub head: Linear<S>,
    #[serde(skip)]
    version: u64,
}

impl<S: Scalar> PartialEq for ValueParams<S> {
    fn eq(&self, other: &Self) -> bool {
        self.backbone == other.backbone && self.head == other.head
    }
}

#[derive(Debug, Clone)]
pub struct ValueCache<S: Scalar> {
    version: u64,
    backbone: BackboneCache<S>,
}

impl<S: Scalar> ValueParams<S> {
    pub fn init<R: Rng + ?Sized>(shape: &NetShape, rng: &mut R) -> Self {
        Self {
            backbone: Backbone::init(shape, rng),
            head: Linear::init(1, shape.hidden, 0.05, rng),
            version: 0,
        }
    }

    pub fn zeros(shape: &NetShape) -> Self {
        Self {
            backbone: Backbone::zeros(shape),
            head: Linear::zeros(1, shape.hidden),
            version: 0,
        }
    }

    pub fn shape(&self) -> NetShape {
        self.backbone.shape()
    }

    pub fn check(&self) -> Result<()> {
        self.backbone.check()?;
        self.head.check_shape()?;
        if self.head.rows != 1 || self.head.cols != self.backbone.trunk2.rows {
            return Err(Error::Data("value head shape mismatch".into()));
        }
        Ok(())
    }

    pub fn forward(&self, inp: &NetInput<'_, S>) -> Result<(S, ValueCache<S>)> {
        let backbone = self.backbone.forward(inp)?;
        let v = self.head.forward(&backbone.h2)[0];
        Ok((
            v,
            ValueCache {
                version: self.version,
                backbone,
            },
        ))
    }

    pub fn relu_pattern(&self, inp: &NetInput<'_, S>) -> Result<Vec<bool>> {
        Ok(Backbone::relu_pattern(&self.backbone.forward(inp)?))
    }

    pub fn predict(&self, inp: &NetInput<'_, S>) -> Result<S> {
        Ok(self.forward(inp)?.0)
    }

    pub fn backward_into(&self, cache: &ValueCache<S>, dv: S, grad: &mut ValueParams<S>) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                current: self.version,
            });
        }
        if dv == S::zero() {
            return Ok(());
        }
        let dh2 = self.head.backward(&cache.backbone.h2, &[dv], &mut grad.head);
        self.backbone.backward(&cache.backbone, dh2, &mut grad.backbone);
        Ok(())
    }

    pub fn backward(&self, cache: &ValueCache<S>, dv: S) -> Result<ValueParams<S>> {
        let mut grad = self.zeros_like();
        self.backward_into(cache, dv, &mut grad)?;
        Ok(grad)
    }
}

impl<S: Scalar> ParamSet<S> for ValueParams<S> {
    fn tensors(&self) -> Vec<&[S]> {
        let mut out: Vec<&[S]> = self.backbone.layers().into_iter().flat_map(|l| l.tensors()).collect();
        out.extend(self.head.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [S]> {
        let mut out: Vec<&mut [S]> = self
            .backbone
            .layers_mut()
            .into_iter()
            .flat_map(|l| l.tensors_mut())
            .collect();
        out.extend(self.head.tensors_mut());
        out
    }

    fn version(&self) -> u64 {
        self.version
    }

    fn bump_version(&mut self) {
        self.version += 1;
    }
}

/// Convenience wrapper: policy distributions at a state of `task`.
pub fn policy_forward<S: Scalar>(
    params: &PolicyParams<S>,
    state: &LatentState<S>,
    task: &EditTask<S>,
) -> Result<PolicyOutput<S>> {
    params.predict(&NetInput::new(state, task))
}

/// Convenience wrapper: value estimate at a state of `task`.
pub fn value_forward<S: Scalar>(
    params: &ValueParams<S>,
    state: &LatentState<S>,
    task: &EditTask<S>,
) -> Result<S> {
    params.predict(&NetInput::new(state, task))
}
