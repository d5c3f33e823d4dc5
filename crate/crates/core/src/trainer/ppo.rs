use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::compute_gae;
use crate::diffusion::{LatentState, NoiseSchedule};
use crate::environment::{rollout, EditTask};
use crate::error::{Error, Result};
use crate::hyperspace::{perstep_to_inversion_step, HyperSpace, StepAction};
use crate::nets::{
    adam_step, AdamConfig, AdamState, NetInput, ParamSet, PolicyOutput, PolicyParams, ValueParams,
};
use crate::reward::{compose, RewardBreakdown, RewardConfig};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    /// Discount.
    pub gamma: f64,
    /// GAE decay.
    pub lam: f64,
    pub clip_eps: f64,
    /// Weight of the KL penalty towards the reference policy.
    pub kl_coeff: f64,
    /// Weight of the per-head entropy bonus.
    pub entropy_coeff: f64,
    /// Policy learning rate.
    pub lr: f64,
    /// Value-network learning rate.
    pub value_lr: f64,
    pub episodes: usize,
    pub batch_episodes: usize,
    pub epochs_per_batch: usize,
    /// Standardize advantages over each batch.
    pub normalize_advantages: bool,
    /// Add the terminal reward into every TD error.
    pub alg2_literal: bool,
    /// Decay both learning rates linearly to zero over the run.
    pub lr_anneal: bool,
    /// Stop a batch's epochs once the mean approximate KL from the
    /// behaviour policy exceeds this; 0 disables the check.
    pub target_kl: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.999,
            lam: 0.95,
            clip_eps: 0.2,
            kl_coeff: 0.02,
            entropy_coeff: 0.0,
            lr: 5e-5,
            value_lr: 1e-3,
            episodes: 2500,
            batch_episodes: 8,
            epochs_per_batch: 1,
            normalize_advantages: true,
            alg2_literal: false,
            lr_anneal: false,
            target_kl: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} must lie in (0, 1]", self.gamma));
        }
        if !(self.lam > 0.0 && self.lam <= 1.0) {
            return bad(format!("lam {} must lie in (0, 1]", self.lam));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps {} must lie in (0, 1)", self.clip_eps));
        }
        if !(self.kl_coeff >= 0.0 && self.kl_coeff.is_finite()) {
            return bad(format!("kl_coeff {} must be non-negative", self.kl_coeff));
        }
        for (name, lr) in [("lr", self.lr), ("value_lr", self.value_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} {lr} must be positive"));
            }
        }
        if !(self.entropy_coeff >= 0.0 && self.entropy_coeff.is_finite()) {
            return bad(format!("entropy_coeff {} must be non-negative", self.entropy_coeff));
        }
        if !(self.target_kl >= 0.0 && self.target_kl.is_finite()) {
            return bad(format!("target_kl {} must be non-negative", self.target_kl));
        }
        if self.batch_episodes == 0 || self.epochs_per_batch == 0 {
            return bad("batch_episodes and epochs_per_batch must be at least 1".into());
        }
        Ok(())
    }
}

/// PPO clipped objective `min(u A, clip(u, 1-eps, 1+eps) A)` with `u = exp(new - old)`.
pub fn clipped_surrogate<S: Scalar>(new_logp: S, old_logp: S, advantage: S, clip_eps: S) -> S {
    let u = (new_logp - old_logp).exp();
    let clipped = u.max(S::one() - clip_eps).min(S::one() + clip_eps);
    (u * advantage).min(clipped * advantage)
}

/// `KL(new || ref)` for one categorical head given log-probabilities.
pub fn categorical_kl<S: Scalar>(new_lp: &[S], ref_lp: &[S], head: usize) -> Result<S> {
    let mut kl = S::zero();
    for (j, (&a, &b)) in new_lp.iter().zip(ref_lp).enumerate() {
        let p = a.exp();
        if p == S::zero() {
            continue;
        }
        if b == S::neg_infinity() {
            return Err(Error::InfiniteKl { head, category: j });
        }
        kl += p * (a - b);
    }
    Ok(kl)
}

/// Sum over heads and steps of `KL(new || ref)`, divided by the step count.
pub fn kl_to_reference<S: Scalar>(new: &[PolicyOutput<S>], reference: &[PolicyOutput<S>]) -> Result<S> {
    if new.len() != reference.len() || new.is_empty() {
        return Err(Error::Dimension {
            expected: reference.len(),
            got: new.len(),
        });
    }
    let mut total = S::zero();
    for (n, r) in new.iter().zip(reference) {
        if n.log_probs.len() != r.log_probs.len() {
            return Err(Error::Dimension {
                expected: r.log_probs.len(),
                got: n.log_probs.len(),
            });
        }
        for (h, (a, b)) in n.log_probs.iter().zip(&r.log_probs).enumerate() {
            if a.len() != b.len() {
                return Err(Error::Dimension {
                    expected: b.len(),
                    got: a.len(),
                });
            }
            total += categorical_kl(a, b, h)?;
        }
    }
    Ok(total / S::of_usize(new.len()))
}

/// One sampled step of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrajectoryStep<S: Scalar> {
    pub state: LatentState<S>,
    pub action: StepAction,
    /// Behaviour log-probability, summed over heads.
    pub log_prob: S,
    pub dists: PolicyOutput<S>,
    pub reference: PolicyOutput<S>,
    pub value: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Trajectory<S: Scalar> {
    pub task_index: usize,
    pub steps: Vec<TrajectoryStep<S>>,
    pub reward: RewardBreakdown<S>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn actions(&self) -> Vec<StepAction> {
        self.steps.iter().map(|s| s.action.clone()).collect()
    }

    /// Per-step mean of the behaviour policy's KL to the reference.
    pub fn kl(&self) -> Result<S> {
        let new: Vec<_> = self.steps.iter().map(|s| s.dists.clone()).collect();
        let reference: Vec<_> = self.steps.iter().map(|s| s.reference.clone()).collect();
        kl_to_reference(&new, &reference)
    }
}

/// Environment and reward shared by every episode of a training run.
#[derive(Debug, Clone, Copy)]
pub struct TrainSetup<'a, S: Scalar> {
    pub space: &'a HyperSpace,
    pub sched: &'a NoiseSchedule<S>,
    pub tasks: &'a [EditTask<S>],
    pub reward: &'a RewardConfig<S>,
}

/// Rolls out `task_index` sampling every head from `policy`.
pub fn collect_trajectory<S: Scalar, R: Rng + ?Sized>(
    policy: &PolicyParams<S>,
    reference: &PolicyParams<S>,
    value: &ValueParams<S>,
    setup: &TrainSetup<'_, S>,
    task_index: usize,
    rng: &mut R,
) -> Result<Trajectory<S>> {
    let task = setup
        .tasks
        .get(task_index)
        .ok_or_else(|| Error::Data(format!("no task {task_index}")))?;
    let mut steps = Vec::with_capacity(setup.sched.steps());
    let mut provider = |state: &LatentState<S>| {
        let inp = NetInput::new(state, task);
        let dists = policy.predict(&inp)?;
        let action = dists.sample(rng);
        steps.push(TrajectoryStep {
            state: state.clone(),
            log_prob: dists.log_prob(&action),
            action: action.clone(),
            reference: reference.predict(&inp)?,
            value: value.predict(&inp)?,
            dists,
        });
        Ok(Some(action))
    };
    let rec = rollout(task, setup.space, setup.sched, &mut provider)?;
    let reward = compose(&rec.final_x0, task, setup.reward)?;
    Ok(Trajectory {
        task_index,
        steps,
        reward,
    })
}

/// One line of the training metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub reward_total: f64,
    pub r_edit: f64,
    pub r_noedit: f64,
    /// Per-step KL of the behaviour policy to the reference.
    pub kl: f64,
    /// Loss of the update that consumed this episode.
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Inversion step of the sampled schedule.
    pub mean_inversion_step: f64,
}

#[derive(Debug, Clone)]
pub struct Phase2Output<S: Scalar> {
    pub policy: PolicyParams<S>,
    pub value: ValueParams<S>,
    pub metrics: Vec<MetricsRow>,
}

fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

struct Losses {
    policy: f64,
    value: f64,
    /// Mean of `old_logp - new_logp` before the step.
    approx_kl: f64,
}

/// PPO fine-tuning of `init` against the terminal reward, regularized
/// towards the frozen `reference` policy.
///
/// Episodes are collected in batches of `batch_episodes`, in parallel, each
/// from its own random stream, so results do not depend on thread count.
pub fn train_phase2<S: Scalar>(
    init: &PolicyParams<S>,
    reference: &PolicyParams<S>,
    value_init: &ValueParams<S>,
    setup: &TrainSetup<'_, S>,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<Phase2Output<S>> {
    cfg.validate()?;
    init.check(setup.space)?;
    reference.check(setup.space)?;
    value_init.check()?;
    if setup.tasks.is_empty() {
        return Err(Error::Data("phase-2 needs at least one task".into()));
    }
    let mut policy = init.clone();
    let mut value = value_init.clone();
    let mut p_adam = AdamState::new(AdamConfig::default());
    let mut v_adam = AdamState::new(AdamConfig::default());
    let mut metrics = Vec::with_capacity(cfg.episodes);
    let mut update = 0;
    let mut start = 0;
    while start < cfg.episodes {
        let end = (start + cfg.batch_episodes).min(cfg.episodes);
        let batch: Vec<Trajectory<S>> = (start..end)
            .into_par_iter()
            .map(|e| {
                let mut rng = episode_rng(seed, e);
                let task_index = rng.random_range(0..setup.tasks.len());
                collect_trajectory(&policy, reference, &value, setup, task_index, &mut rng)
            })
            .collect::<Result<_>>()?;
        let lr_frac = if cfg.lr_anneal {
            1.0 - start as f64 / cfg.episodes as f64
        } else {
            1.0
        };
        let mut losses = Losses {
            policy: 0.0,
            value: 0.0,
            approx_kl: 0.0,
        };
        for _ in 0..cfg.epochs_per_batch {
            losses = ppo_update(
                &mut policy,
                &mut value,
                &batch,
                setup,
                cfg,
                lr_frac,
                &mut p_adam,
                &mut v_adam,
                update,
            )?;
            update += 1;
            if cfg.target_kl > 0.0 && losses.approx_kl > cfg.target_kl {
                break;
            }
        }
        for (i, traj) in batch.iter().enumerate() {
            metrics.push(MetricsRow {
                episode: start + i,
                reward_total: traj.reward.total.as_f64(),
                r_edit: traj.reward.r_edit.as_f64(),
                r_noedit: traj.reward.r_noedit.as_f64(),
                kl: traj.kl()?.as_f64(),
                policy_loss: losses.policy,
                value_loss: losses.value,
                mean_inversion_step: perstep_to_inversion_step(setup.space, &traj.actions()) as f64,
            });
        }
        start = end;
    }
    Ok(Phase2Output {
        policy,
        value,
        metrics,
    })
}

#[allow(clippy::too_many_arguments)]
fn ppo_update<S: Scalar>(
    policy: &mut PolicyParams<S>,
    value: &mut ValueParams<S>,
    batch: &[Trajectory<S>],
    setup: &TrainSetup<'_, S>,
    cfg: &PpoConfig,
    lr_frac: f64,
    p_adam: &mut AdamState<S>,
    v_adam: &mut AdamState<S>,
    update: usize,
) -> Result<Losses> {
    let mut advantages = Vec::with_capacity(batch.len());
    let mut returns = Vec::with_capacity(batch.len());
    for traj in batch {
        let values: Vec<S> = traj.steps.iter().map(|s| s.value).collect();
        let (a, r) = compute_gae(&values, traj.reward.total, cfg)?;
        advantages.push(a);
        returns.push(r);
    }
    if cfg.normalize_advantages {
        let flat: Vec<S> = advantages.concat();
        let n = S::of_usize(flat.len());
        let mean = flat.iter().copied().sum::<S>() / n;
        let var = flat.iter().map(|&a| (a - mean) * (a - mean)).sum::<S>() / n;
        let std = var.sqrt() + S::of(1e-8);
        for a in advantages.iter_mut().flatten() {
            *a = (*a - mean) / std;
        }
    }

    let n_steps: usize = batch.iter().map(|t| t.steps.len()).sum();
    let norm = S::of_usize(n_steps);
    let clip = S::of(cfg.clip_eps);
    let beta = S::of(cfg.kl_coeff);
    let ent_c = S::of(cfg.entropy_coeff);
    let mut p_grad = policy.zeros_like();
    let mut v_grad = value.zeros_like();
    let mut p_loss = S::zero();
    let mut v_loss = S::zero();
    let mut approx_kl = S::zero();
    for (t_idx, traj) in batch.iter().enumerate() {
        let task = &setup.tasks[traj.task_index];
        for (k, step) in traj.steps.iter().enumerate() {
            let inp = NetInput::new(&step.state, task);
            let (out, cache) = policy.forward(&inp)?;
            let adv = advantages[t_idx][k];
            let new_logp = out.log_prob(&step.action);
            approx_kl += step.log_prob - new_logp;
            let u = (new_logp - step.log_prob).exp();
            let surr = clipped_surrogate(new_logp, step.log_prob, adv, clip);
            // d surr / d new_logp: nonzero only where the unclipped branch is the minimum.
            let d_surr = if u * adv <= surr { u * adv } else { S::zero() };
            let mut dlogits = Vec::with_capacity(out.probs.len());
            let mut kl = S::zero();
            let mut entropy = S::zero();
            for (h, ((p, lp), lq)) in out
                .probs
                .iter()
                .zip(&out.log_probs)
                .zip(&step.reference.log_probs)
                .enumerate()
            {
                let kl_h = categorical_kl(lp, lq, h)?;
                kl += kl_h;
                let h_h = -p
                    .iter()
                    .zip(lp)
                    .filter(|(&pj, _)| pj > S::zero())
                    .map(|(&pj, &l)| pj * l)
                    .sum::<S>();
                entropy += h_h;
                let a = step.action.indices[h];
                dlogits.push(
                    (0..p.len())
                        .map(|j| {
                            let hot = if j == a { S::one() } else { S::zero() };
                            let d_kl = p[j] * (lp[j] - lq[j] - kl_h);
                            // d(-H)/d logit_j = p_j (log p_j + H).
                            let d_negent = if p[j] > S::zero() { p[j] * (lp[j] + h_h) } else { S::zero() };
                            (-d_surr * (hot - p[j]) + beta * d_kl + ent_c * d_negent) / norm
                        })
                        .collect::<Vec<S>>(),
                );
            }
            p_loss += -(surr - beta * kl + ent_c * entropy);
            policy.backward_into(&cache, &dlogits, &mut p_grad)?;

            let (v, vcache) = value.forward(&inp)?;
            let diff = v - returns[t_idx][k];
            v_loss += diff * diff;
            value.backward_into(&vcache, S::of(2.0) * diff / norm, &mut v_grad)?;
        }
    }
    let p_loss = (p_loss / norm).as_f64();
    let v_loss = (v_loss / norm).as_f64();
    if !p_loss.is_finite() || !v_loss.is_finite() || !p_grad.all_finite() || !v_grad.all_finite() {
        let rewards: Vec<f64> = batch.iter().map(|t| t.reward.total.as_f64()).collect();
        return Err(Error::NonFinite {
            what: "ppo loss",
            update,
            detail: format!(
                "policy_loss {p_loss}, value_loss {v_loss}, policy grad finite {}, value grad finite {}, \
                 policy params finite {}, value params finite {}, batch rewards {rewards:?}",
                p_grad.all_finite(),
                v_grad.all_finite(),
                policy.all_finite(),
                value.all_finite(),
            ),
        });
    }
    adam_step(policy, &p_grad, p_adam, cfg.lr * lr_frac)?;
    adam_step(value, &v_grad, v_adam, cfg.value_lr * lr_frac)?;
    Ok(Losses {
        policy: p_loss,
        value: v_loss,
        approx_kl: (approx_kl / norm).as_f64(),
    })
}
