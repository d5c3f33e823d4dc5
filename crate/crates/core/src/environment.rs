//! Synthetic editing environment.
//!
//! A task is a source latent plus an in-mask edit target. Denoising with the
//! source prompt pulls the clean estimate back to the source, denoising with
//! the edit prompt pulls the masked region toward the edit target while a
//! fraction `leak_rho` of the pull drags the background toward a drift field.
//! Inversion is closed form: the source is treated as perfectly reconstructed
//! under the source prompt, so `x_T = forward_sample(i_src, T, eps_star)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{check_dim, LatentState, NoiseSchedule};
use crate::error::{Error, Result};
use crate::hyperspace::{HyperSpace, StepAction, GATE_ON, PROMPT_SRC};
use crate::scalar::Scalar;

/// Ranges the task generator samples from. Range fields are `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub dim: usize,
    /// Per-coordinate probability of belonging to the edit region.
    pub mask_frac: f64,
    /// Global edits use an all-ones mask.
    pub global: bool,
    pub src_range: [f64; 2],
    /// Magnitude of `c_edit - i_src` inside the mask (sign is random).
    pub edit_shift: [f64; 2],
    /// Magnitude of `drift - i_src` outside the mask (sign is random).
    pub drift_shift: [f64; 2],
    pub leak_rho: [f64; 2],
    pub pull_kappa: [f64; 2],
    pub gate_damp: [f64; 2],
    pub gate_suppress: [f64; 2],
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            mask_frac: 0.375,
            global: false,
            src_range: [-1.0, 1.0],
            edit_shift: [0.8, 1.2],
            drift_shift: [0.8, 1.2],
            leak_rho: [0.2, 0.6],
            pull_kappa: [0.15, 0.3],
            gate_damp: [0.7, 0.7],
            gate_suppress: [0.3, 0.3],
        }
    }
}

fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] || r[0] < lo || r[1] > hi {
        return Err(Error::Config(format!(
            "{name} range [{}, {}] must be ordered within [{lo}, {hi}]",
            r[0], r[1]
        )));
    }
    Ok(())
}

fn draw<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn signed<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    let m = draw(rng, r);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config("task dimension must be at least 2".into()));
        }
        if !(self.mask_frac > 0.0 && self.mask_frac < 1.0) {
            return Err(Error::Config(format!(
                "mask_frac {} must lie in (0, 1)",
                self.mask_frac
            )));
        }
        check_range("src_range", self.src_range, f64::MIN, f64::MAX)?;
        check_range("edit_shift", self.edit_shift, 0.0, f64::MAX)?;
        check_range("drift_shift", self.drift_shift, 0.0, f64::MAX)?;
        check_range("leak_rho", self.leak_rho, 0.0, 1.0)?;
        check_range("pull_kappa", self.pull_kappa, f64::MIN_POSITIVE, 1.0 - f64::EPSILON)?;
        check_range("gate_damp", self.gate_damp, f64::MIN_POSITIVE, 1.0)?;
        check_range("gate_suppress", self.gate_suppress, 0.0, 1.0)?;
        if self.leak_rho[1] > 0.0 && self.drift_shift[0] <= 0.0 && !self.global {
            return Err(Error::Config(
                "drift_shift must be bounded away from 0 when leak is possible".into(),
            ));
        }
        Ok(())
    }
}

/// One synthetic editing episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EditTask<S: Scalar> {
    pub i_src: Vec<S>,
    pub c_edit: Vec<S>,
    pub drift: Vec<S>,
    /// 1 marks the edit region.
    pub mask: Vec<u8>,
    pub leak_rho: S,
    pub pull_kappa: S,
    pub gate_damp: S,
    pub gate_suppress: S,
    pub eps_star: Vec<S>,
    pub seed: u64,
}

impl<S: Scalar> EditTask<S> {
    pub fn dim(&self) -> usize {
        self.i_src.len()
    }

    pub fn in_mask(&self, i: usize) -> bool {
        self.mask[i] != 0
    }

    pub fn is_global(&self) -> bool {
        self.mask.iter().all(|&m| m != 0)
    }

    pub fn inside_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    /// Target of the edit prompt: `c_edit` inside the mask, `drift` outside.
    pub fn edit_target(&self) -> Vec<S> {
        (0..self.dim())
            .map(|i| {
                if self.in_mask(i) {
                    self.c_edit[i]
                } else {
                    self.drift[i]
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Data("task has zero dimension".into()));
        }
        for len in [
            self.c_edit.len(),
            self.drift.len(),
            self.mask.len(),
            self.eps_star.len(),
        ] {
            check_dim(d, len)?;
        }
        if self.mask.iter().any(|&m| m > 1) {
            return Err(Error::Data("mask entries must be 0 or 1".into()));
        }
        if self.inside_count() == 0 {
            return Err(Error::Data("mask has no edit region".into()));
        }
        let vectors = [&self.i_src, &self.c_edit, &self.drift, &self.eps_star];
        let scalars = [
            self.leak_rho,
            self.pull_kappa,
            self.gate_damp,
            self.gate_suppress,
        ];
        if vectors.iter().any(|v| v.iter().any(|x| !x.is_finite()))
            || scalars.iter().any(|x| !x.is_finite())
        {
            return Err(Error::Data("task has non-finite fields".into()));
        }
        let unit = |x: S| x >= S::zero() && x <= S::one();
        if !unit(self.leak_rho)
            || !unit(self.gate_suppress)
            || !(self.pull_kappa > S::zero() && self.pull_kappa < S::one())
            || !(self.gate_damp > S::zero() && self.gate_damp <= S::one())
        {
            return Err(Error::Data("task coefficients out of range".into()));
        }
        Ok(())
    }
}

/// Deterministically generates a task from `seed`.
pub fn generate_task<S: Scalar>(cfg: &GenConfig, seed: u64) -> Result<EditTask<S>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = cfg.dim;

    let mask: Vec<u8> = if cfg.global {
        vec![1; d]
    } else {
        let mut m: Vec<u8> = (0..d)
            .map(|_| u8::from(rng.random_bool(cfg.mask_frac)))
            .collect();
        let ones = m.iter().filter(|&&v| v == 1).count();
        if ones == 0 {
            m[rng.random_range(0..d)] = 1;
        } else if ones == d {
            m[rng.random_range(0..d)] = 0;
        }
        m
    };

    let mut i_src = Vec::with_capacity(d);
    let mut c_edit = Vec::with_capacity(d);
    let mut drift = Vec::with_capacity(d);
    for &m in &mask {
        let src = draw(&mut rng, cfg.src_range);
        let e = signed(&mut rng, cfg.edit_shift);
        let f = signed(&mut rng, cfg.drift_shift);
        i_src.push(S::of(src));
        if m == 1 {
            c_edit.push(S::of(src + e));
            drift.push(S::of(src));
        } else {
            c_edit.push(S::of(src));
            drift.push(S::of(src + f));
        }
    }
    let leak_rho = S::of(draw(&mut rng, cfg.leak_rho));
    let pull_kappa = S::of(draw(&mut rng, cfg.pull_kappa));
    let gate_damp = S::of(draw(&mut rng, cfg.gate_damp));
    let gate_suppress = S::of(draw(&mut rng, cfg.gate_suppress));
    let eps_star = (0..d)
        .map(|_| S::of(rng.sample::<f64, _>(StandardNormal)))
        .collect();

    Ok(EditTask {
        i_src,
        c_edit,
        drift,
        mask,
        leak_rho,
        pull_kappa,
        gate_damp,
        gate_suppress,
        eps_star,
        seed,
    })
}

/// Tasks for seeds `first_seed..first_seed + count`.
pub fn generate_tasks<S: Scalar>(
    cfg: &GenConfig,
    first_seed: u64,
    count: usize,
) -> Result<Vec<EditTask<S>>> {
    (0..count as u64)
        .map(|i| generate_task(cfg, first_seed + i))
        .collect()
}

/// Closed-form inversion to `x_T`.
pub fn invert<S: Scalar>(task: &EditTask<S>, sched: &NoiseSchedule<S>) -> Result<LatentState<S>> {
    let t = sched.steps();
    let x = sched.forward_sample(&task.i_src, t, &task.eps_star)?;
    Ok(LatentState::new(x, t))
}

/// Pull target and per-coordinate pull weights selected by `action`.
pub fn edit_pull_target<S: Scalar>(
    task: &EditTask<S>,
    space: &HyperSpace,
    action: &StepAction,
) -> Result<(Vec<S>, Vec<S>)> {
    space.check_action(action)?;
    let d = task.dim();
    let src_prompt = space
        .prompt_head()
        .is_some_and(|k| action.indices[k] == PROMPT_SRC);
    if src_prompt {
        return Ok((task.i_src.clone(), vec![S::one(); d]));
    }
    let gated = space
        .gate_head()
        .is_some_and(|k| action.indices[k] == GATE_ON);
    let target = task.edit_target();
    let weights = (0..d)
        .map(|i| {
            let (base, gate) = if task.in_mask(i) {
                (S::one(), task.gate_damp)
            } else {
                (task.leak_rho, task.gate_suppress)
            };
            if gated {
                base * gate
            } else {
                base
            }
        })
        .collect();
    Ok((target, weights))
}

/// Value of the scalar head for `action`, 1 without a scalar head.
pub fn scale_value<S: Scalar>(space: &HyperSpace, action: &StepAction) -> S {
    space
        .scale_head()
        .map_or(S::one(), |k| S::of(space.heads()[k].values[action.indices[k]]))
}

/// Number of one-step denoiser evaluations performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NfeCounter(pub usize);

impl NfeCounter {
    pub fn count(&self) -> usize {
        self.0
    }
}

/// One application of the denoiser `g(x_t, t, H_t)`.
pub fn denoise_step<S: Scalar>(
    state: &LatentState<S>,
    task: &EditTask<S>,
    space: &HyperSpace,
    action: &StepAction,
    sched: &NoiseSchedule<S>,
    nfe: &mut NfeCounter,
) -> Result<LatentState<S>> {
    let t = state.t;
    if t == 0 || t > sched.steps() {
        return Err(Error::Timestep {
            t,
            lo: 1,
            hi: sched.steps(),
        });
    }
    check_dim(task.dim(), state.dim())?;
    let (target, weights) = edit_pull_target(task, space, action)?;
    let rate = task.pull_kappa * scale_value::<S>(space, action);
    let mut x0 = sched.implied_x0(&state.x, t, &task.eps_star)?;
    for ((v, &tg), &w) in x0.iter_mut().zip(&target).zip(&weights) {
        *v += rate * w * (tg - *v);
    }
    let x = sched.ddim_step(&x0, t, &task.eps_star)?;
    nfe.0 += 1;
    Ok(LatentState::new(x, t - 1))
}

/// Supplies the action for each state of a rollout.
pub trait ActionProvider<S: Scalar> {
    fn next_action(&mut self, state: &LatentState<S>) -> Result<Option<StepAction>>;
}

/// Replays a fixed action sequence in rollout order.
#[derive(Debug, Clone)]
pub struct ScheduledActions {
    actions: std::vec::IntoIter<StepAction>,
}

impl ScheduledActions {
    pub fn new(actions: Vec<StepAction>) -> Self {
        Self {
            actions: actions.into_iter(),
        }
    }
}

impl<S: Scalar> ActionProvider<S> for ScheduledActions {
    fn next_action(&mut self, _state: &LatentState<S>) -> Result<Option<StepAction>> {
        Ok(self.actions.next())
    }
}

impl<S, F> ActionProvider<S> for F
where
    S: Scalar,
    F: FnMut(&LatentState<S>) -> Result<Option<StepAction>>,
{
    fn next_action(&mut self, state: &LatentState<S>) -> Result<Option<StepAction>> {
        self(state)
    }
}

/// Trajectory of one full rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EpisodeRecord<S: Scalar> {
    /// States visited, `t = T` down to `t = 1`.
    pub states: Vec<LatentState<S>>,
    pub actions: Vec<StepAction>,
    pub final_x0: Vec<S>,
    pub nfe_count: usize,
}

/// Inverts the task and denoises it for `T` steps under `provider`.
pub fn rollout<S: Scalar, P: ActionProvider<S> + ?Sized>(
    task: &EditTask<S>,
    space: &HyperSpace,
    sched: &NoiseSchedule<S>,
    provider: &mut P,
) -> Result<EpisodeRecord<S>> {
    let mut state = invert(task, sched)?;
    let mut nfe = NfeCounter::default();
    let steps = sched.steps();
    let mut states = Vec::with_capacity(steps);
    let mut actions = Vec::with_capacity(steps);
    while state.t > 0 {
        let action = provider
            .next_action(&state)?
            .ok_or(Error::ProviderExhausted(state.t))?;
        let next = denoise_step(&state, task, space, &action, sched, &mut nfe)?;
        states.push(state);
        actions.push(action);
        state = next;
    }
    Ok(EpisodeRecord {
        states,
        actions,
        final_x0: state.x,
        nfe_count: nfe.count(),
    })
}

/// Rolls out a fixed action sequence.
pub fn rollout_actions<S: Scalar>(
    task: &EditTask<S>,
    space: &HyperSpace,
    sched: &NoiseSchedule<S>,
    actions: Vec<StepAction>,
) -> Result<EpisodeRecord<S>> {
    rollout(task, space, sched, &mut ScheduledActions::new(actions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperspace::{global_to_perstep, GlobalConfig, PROMPT_EDIT};
    use crate::scalar::masked_mse;

    fn two_coord_task() -> EditTask<f64> {
        EditTask {
            i_src: vec![0.0, 0.0],
            c_edit: vec![1.0, 0.0],
            drift: vec![0.0, 1.0],
            mask: vec![1, 0],
            leak_rho: 0.3,
            pull_kappa: 0.15,
            gate_damp: 0.7,
            gate_suppress: 0.0,
            eps_star: vec![0.0, 0.0],
            seed: 0,
        }
    }

    fn act(prompt: usize, gate: usize, scale: usize) -> StepAction {
        StepAction::new(vec![prompt, gate, scale])
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig::default();
        let a: EditTask<f64> = generate_task(&cfg, 42).unwrap();
        let b: EditTask<f64> = generate_task(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_task::<f64>(&cfg, 43).unwrap());
        a.validate().unwrap();
    }

    #[test]
    fn mask_fraction_matches_config() {
        let cfg = GenConfig::default();
        let mut frac = 0.0;
        for seed in 0..1000 {
            let t: EditTask<f64> = generate_task(&cfg, seed).unwrap();
            assert!(t.inside_count() > 0 && t.inside_count() < t.dim());
            frac += t.inside_count() as f64 / t.dim() as f64;
        }
        frac /= 1000.0;
        assert!((frac - cfg.mask_frac).abs() <= 0.05, "mean {frac}");
    }

    #[test]
    fn zero_leak_range_gives_zero_leak() {
        let cfg = GenConfig {
            leak_rho: [0.0, 0.0],
            ..GenConfig::default()
        };
        for seed in 0..50 {
            assert_eq!(generate_task::<f64>(&cfg, seed).unwrap().leak_rho, 0.0);
        }
    }

    #[test]
    fn drift_differs_outside_mask() {
        let cfg = GenConfig::default();
        for seed in 0..100 {
            let t: EditTask<f64> = generate_task(&cfg, seed).unwrap();
            assert!((0..t.dim()).any(|i| !t.in_mask(i) && t.drift[i] != t.i_src[i]));
        }
    }

    #[test]
    fn invalid_gen_configs_rejected() {
        let bad = [
            GenConfig { dim: 1, ..GenConfig::default() },
            GenConfig { mask_frac: 0.0, ..GenConfig::default() },
            GenConfig { mask_frac: 1.0, ..GenConfig::default() },
            GenConfig { leak_rho: [0.5, 0.2], ..GenConfig::default() },
            GenConfig { pull_kappa: [0.0, 0.5], ..GenConfig::default() },
            GenConfig { gate_suppress: [0.0, 1.5], ..GenConfig::default() },
        ];
        for cfg in bad {
            assert!(generate_task::<f64>(&cfg, 0).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn global_generation_uses_full_mask() {
        let cfg = GenConfig { global: true, ..GenConfig::default() };
        let t: EditTask<f64> = generate_task(&cfg, 3).unwrap();
        assert!(t.is_global());
    }

    #[test]
    fn inversion_examples() {
        let sched = NoiseSchedule::<f64>::linear(10).unwrap();
        let mut task = two_coord_task();
        task.i_src = vec![0.4, -0.6];
        let x = invert(&task, &sched).unwrap();
        let sa = sched.alpha_bar(10).sqrt();
        assert_eq!(x.t, 10);
        assert_eq!(x.x, vec![0.4 * sa, -0.6 * sa]);

        task.eps_star = vec![1.3, -0.2];
        let x = invert(&task, &sched).unwrap();
        let back = sched.implied_x0(&x.x, 10, &task.eps_star).unwrap();
        for (a, b) in back.iter().zip(&task.i_src) {
            assert!((a - b).abs() < 1e-9);
        }

        let one = EditTask {
            i_src: vec![1.0],
            c_edit: vec![1.0],
            drift: vec![1.0],
            mask: vec![1],
            eps_star: vec![1.0],
            ..two_coord_task()
        };
        assert!((invert(&one, &sched).unwrap().x[0] - 1.254974).abs() < 1e-6);
    }

    #[test]
    fn pull_target_examples() {
        let space = HyperSpace::default();
        let task = two_coord_task();
        for gate in 0..2 {
            for scale in 0..6 {
                let (tg, w) = edit_pull_target(&task, &space, &act(PROMPT_SRC, gate, scale)).unwrap();
                assert_eq!(tg, task.i_src);
                assert_eq!(w, vec![1.0, 1.0]);
            }
        }
        let (tg, w) = edit_pull_target(&task, &space, &act(PROMPT_EDIT, 0, 1)).unwrap();
        assert_eq!(tg, vec![1.0, 1.0]);
        assert_eq!(w, vec![1.0, 0.3]);
        let (_, w) = edit_pull_target(&task, &space, &act(PROMPT_EDIT, 1, 1)).unwrap();
        assert_eq!(w, vec![0.7, 0.0]);
        assert!(edit_pull_target(&task, &space, &act(2, 0, 0)).is_err());
    }

    #[test]
    fn denoise_step_hand_value() {
        // x~0 = (0, 0), one edit step at t = 1 with kappa 0.15, w = 1:
        // in-mask 0.15 * 1 * (1 - 0) = 0.15, outside 0.15 * 0.3 * (1 - 0) = 0.045.
        let sched = NoiseSchedule::<f64>::linear(10).unwrap();
        let space = HyperSpace::default();
        let task = two_coord_task();
        let mut nfe = NfeCounter::default();
        let s = LatentState::new(vec![0.0, 0.0], 1);
        let out = denoise_step(&s, &task, &space, &act(PROMPT_EDIT, 0, 1), &sched, &mut nfe).unwrap();
        assert_eq!(out.t, 0);
        assert!((out.x[0] - 0.15).abs() < 1e-12);
        assert!((out.x[1] - 0.045).abs() < 1e-12);
        assert_eq!(nfe.count(), 1);
        let zero = LatentState::new(vec![0.0, 0.0], 0);
        assert!(denoise_step(&zero, &task, &space, &act(1, 0, 1), &sched, &mut nfe).is_err());
        assert_eq!(nfe.count(), 1);
    }

    #[test]
    fn src_step_is_fixed_point() {
        let sched = NoiseSchedule::<f64>::linear(10).unwrap();
        let space = HyperSpace::default();
        let task: EditTask<f64> = generate_task(&GenConfig::default(), 5).unwrap();
        let x = invert(&task, &sched).unwrap();
        let mut nfe = NfeCounter::default();
        let next = denoise_step(&x, &task, &space, &act(PROMPT_SRC, 1, 5), &sched, &mut nfe).unwrap();
        let x0 = sched.implied_x0(&next.x, 9, &task.eps_star).unwrap();
        for (a, b) in x0.iter().zip(&task.i_src) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rollout_contracts() {
        let sched = NoiseSchedule::<f64>::linear(10).unwrap();
        let space = HyperSpace::default();
        let task: EditTask<f64> = generate_task(&GenConfig::default(), 9).unwrap();
        let src = global_to_perstep(&space, &GlobalConfig { r: 0, gate_ratio: 0.3, scale_index: 3 }, 10).unwrap();
        let rec = rollout_actions(&task, &space, &sched, src).unwrap();
        assert_eq!(rec.nfe_count, 10);
        assert_eq!(rec.states.len(), 10);
        assert_eq!(rec.states[0].t, 10);
        assert_eq!(rec.states[9].t, 1);
        for (a, b) in rec.final_x0.iter().zip(&task.i_src) {
            assert!((a - b).abs() < 1e-9);
        }
        let out = masked_mse(&rec.final_x0, &task.i_src, |i| !task.in_mask(i)).unwrap();
        assert!(out <= 1e-12);

        let short = vec![act(0, 0, 1); 4];
        assert!(matches!(
            rollout_actions(&task, &space, &sched, short),
            Err(Error::ProviderExhausted(6))
        ));
    }

    #[test]
    fn zero_pull_reconstructs_source() {
        let sched = NoiseSchedule::<f64>::linear(10).unwrap();
        let space = HyperSpace::default();
        let mut task: EditTask<f64> = generate_task(&GenConfig::default(), 11).unwrap();
        task.pull_kappa = 0.0;
        let rec = rollout_actions(&task, &space, &sched, vec![act(1, 0, 5); 10]).unwrap();
        for (a, b) in rec.final_x0.iter().zip(&task.i_src) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn edit_rollout_moves_toward_target() {
        let sched = NoiseSchedule::<f64>::linear(10).unwrap();
        let space = HyperSpace::default();
        let cfg = GenConfig { leak_rho: [0.0, 0.0], ..GenConfig::default() };
        for seed in 0..20 {
            let task: EditTask<f64> = generate_task(&cfg, seed).unwrap();
            let inside = |x: &[f64]| masked_mse(x, &task.c_edit, |i| task.in_mask(i)).unwrap();
            let src = rollout_actions(&task, &space, &sched, vec![act(0, 0, 1); 10]).unwrap();
            let edit = rollout_actions(&task, &space, &sched, vec![act(1, 0, 1); 10]).unwrap();
            assert!(inside(&edit.final_x0) < inside(&src.final_x0));
        }
    }

    #[test]
    fn edit_steps_monotonically_reduce_inside_error() {
        let sched = NoiseSchedule::<f64>::linear(10).unwrap();
        let space = HyperSpace::default();
        let cfg = GenConfig { leak_rho: [0.0, 0.0], ..GenConfig::default() };
        let task: EditTask<f64> = generate_task(&cfg, 4).unwrap();
        let mut nfe = NfeCounter::default();
        let mut state = invert(&task, &sched).unwrap();
        let mut prev = f64::INFINITY;
        while state.t > 0 {
            let t = state.t;
            state = denoise_step(&state, &task, &space, &act(1, 0, 2), &sched, &mut nfe).unwrap();
            let x0 = if state.t == 0 {
                state.x.clone()
            } else {
                sched.implied_x0(&state.x, state.t, &task.eps_star).unwrap()
            };
            let err = masked_mse(&x0, &task.c_edit, |i| task.in_mask(i)).unwrap();
            assert!(err < prev, "t={t}");
            prev = err;
        }
        assert_eq!(nfe.count(), 10);
    }
}
