use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::environment::{rollout, rollout_actions, EditTask};
use crate::error::{Error, Result};
use crate::hyperspace::{global_to_perstep, HyperSpace, PriorConfig, StepAction};
use crate::nets::{adam_step, AdamConfig, AdamState, NetInput, ParamSet, PolicyOutput, PolicyParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Phase1Config {
    pub optimizer_steps: usize,
    /// Sampled (task, prior config) pairs per optimizer step.
    pub batch_episodes: usize,
    pub lr: f64,
    /// Decay the learning rate linearly to zero over the run.
    pub lr_anneal: bool,
    pub prior: PriorConfig,
}

impl Default for Phase1Config {
    fn default() -> Self {
        Self {
            optimizer_steps: 2000,
            batch_episodes: 16,
            lr: 1e-3,
            lr_anneal: false,
            prior: PriorConfig::default(),
        }
    }
}

impl Phase1Config {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.batch_episodes == 0 {
            return Err(Error::Config("phase-1 batch_episodes must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("phase-1 lr {} must be positive", self.lr)));
        }
        if steps < 2 {
            return Err(Error::Config("prior sampling needs T >= 2".into()));
        }
        self.prior.validate(steps)
    }
}

#[derive(Debug, Clone)]
pub struct Phase1Output<S: Scalar> {
    pub policy: PolicyParams<S>,
    /// Mean per-step, per-head cross-entropy of every optimizer step.
    pub losses: Vec<f64>,
}

/// Mean over heads of `-log p(label)`.
pub fn cross_entropy<S: Scalar>(out: &PolicyOutput<S>, label: &StepAction) -> S {
    let k = out.log_probs.len();
    -out.log_prob(label) / S::of_usize(k)
}

/// Imitates per-step labels expanded from configurations drawn from the prior.
///
/// Each optimizer step draws `batch_episodes` tasks and prior configurations,
/// rolls the environment forward under the expanded labels and takes one Adam
/// step on the mean cross-entropy over steps, heads and episodes.
pub fn pretrain_phase1<S: Scalar>(
    init: &PolicyParams<S>,
    space: &HyperSpace,
    tasks: &[EditTask<S>],
    sched: &NoiseSchedule<S>,
    cfg: &Phase1Config,
    seed: u64,
) -> Result<Phase1Output<S>> {
    init.check(space)?;
    cfg.validate(sched.steps())?;
    if tasks.is_empty() {
        return Err(Error::Data("phase-1 needs at least one task".into()));
    }
    let steps = sched.steps();
    let heads = space.len();
    let mut policy = init.clone();
    let mut adam = AdamState::new(AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = Vec::with_capacity(cfg.optimizer_steps);
    let norm = S::of_usize(steps * heads * cfg.batch_episodes);
    for update in 0..cfg.optimizer_steps {
        let mut grad = policy.zeros_like();
        let mut loss = S::zero();
        for _ in 0..cfg.batch_episodes {
            let task = &tasks[rng.random_range(0..tasks.len())];
            let gc = cfg.prior.sample(space, steps, &mut rng);
            let labels = global_to_perstep(space, &gc, steps)?;
            let rec = rollout_actions(task, space, sched, labels)?;
            for (state, label) in rec.states.iter().zip(&rec.actions) {
                let (out, cache) = policy.forward(&NetInput::new(state, task))?;
                loss += -out.log_prob(label);
                let dlogits: Vec<Vec<S>> = out
                    .probs
                    .iter()
                    .zip(&label.indices)
                    .map(|(p, &a)| {
                        p.iter()
                            .enumerate()
                            .map(|(j, &pj)| {
                                let hot = if j == a { S::one() } else { S::zero() };
                                (pj - hot) / norm
                            })
                            .collect()
                    })
                    .collect();
                policy.backward_into(&cache, &dlogits, &mut grad)?;
            }
        }
        let loss = (loss / norm).as_f64();
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::NonFinite {
                what: "phase-1 loss",
                update,
                detail: format!("loss {loss}, gradient finite: {}", grad.all_finite()),
            });
        }
        losses.push(loss);
        let lr = if cfg.lr_anneal {
            cfg.lr * (1.0 - update as f64 / cfg.optimizer_steps as f64)
        } else {
            cfg.lr
        };
        adam_step(&mut policy, &grad, &mut adam, lr)?;
    }
    Ok(Phase1Output { policy, losses })
}

/// Per-step action marginals induced by sampling the policy.
///
/// Indexed `[step][head][category]` in rollout order. Each entry averages the
/// policy's probabilities at the visited states over `episodes` rollouts;
/// episode `i` runs on `tasks[i % len]`.
pub fn policy_marginals<S: Scalar>(
    policy: &PolicyParams<S>,
    space: &HyperSpace,
    tasks: &[EditTask<S>],
    sched: &NoiseSchedule<S>,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    policy.check(space)?;
    if tasks.is_empty() || episodes == 0 {
        return Err(Error::Data("marginals need tasks and at least one episode".into()));
    }
    let steps = sched.steps();
    let mut acc: Vec<Vec<Vec<f64>>> = (0..steps)
        .map(|_| space.cardinalities().iter().map(|&n| vec![0.0; n]).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for e in 0..episodes {
        let task = &tasks[e % tasks.len()];
        let mut k = 0;
        let mut provider = |state: &crate::diffusion::LatentState<S>| {
            let out = policy.predict(&NetInput::new(state, task))?;
            for (slot, p) in acc[k].iter_mut().zip(&out.probs) {
                for (a, &v) in slot.iter_mut().zip(p) {
                    *a += v.as_f64();
                }
            }
            k += 1;
            Ok(Some(out.sample(&mut rng)))
        };
        rollout(task, space, sched, &mut provider)?;
    }
    let n = episodes as f64;
    for step in &mut acc {
        for head in step {
            for v in head {
                *v /= n;
            }
        }
    }
    Ok(acc)
}
