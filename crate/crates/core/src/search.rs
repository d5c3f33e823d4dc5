//! Exhaustive and random search over global configurations, with exact
//! function-evaluation accounting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::diffusion::LatentState;
use crate::environment::{rollout, rollout_actions, EditTask, EpisodeRecord};
use crate::error::{Error, Result};
use crate::hyperspace::{global_to_perstep, perstep_to_inversion_step, GlobalConfig, HyperSpace};
use crate::nets::checkpoint::Checkpoint;
use crate::nets::NetInput;
use crate::reward::{compose, RewardBreakdown, RewardConfig};
use crate::scalar::Scalar;

/// Cartesian grid of global configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub r_values: Vec<usize>,
    pub gate_ratios: Vec<f64>,
    pub scale_indices: Vec<usize>,
}

impl SearchGrid {
    /// Every inversion step, 11 evenly spaced gate ratios in `[0, 1]` and
    /// every scale value. Axes for heads the space lacks collapse to one point.
    pub fn full(space: &HyperSpace, steps: usize) -> Self {
        let r_values = if space.prompt_head().is_some() {
            (0..=steps).collect()
        } else {
            vec![steps]
        };
        let gate_ratios = if space.gate_head().is_some() {
            (0..=10).map(|i| i as f64 / 10.0).collect()
        } else {
            vec![0.0]
        };
        Self {
            r_values,
            gate_ratios,
            scale_indices: (0..space.scale_count()).collect(),
        }
    }

    /// Inversion step only; gate off, scale at its default.
    pub fn r_only(space: &HyperSpace, steps: usize) -> Self {
        Self {
            r_values: (0..=steps).collect(),
            gate_ratios: vec![0.0],
            scale_indices: vec![space.default_scale_index()],
        }
    }

    pub fn len(&self) -> usize {
        self.r_values.len() * self.gate_ratios.len() * self.scale_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All configurations in r-major, then gate, then scale order.
    pub fn configs(&self) -> Vec<GlobalConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &r in &self.r_values {
            for &gate_ratio in &self.gate_ratios {
                for &scale_index in &self.scale_indices {
                    out.push(GlobalConfig {
                        r,
                        gate_ratio,
                        scale_index,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SearchResult<S: Scalar> {
    pub best_config: GlobalConfig,
    pub best_reward: S,
    pub nfe_count: usize,
    pub evaluations: Vec<(GlobalConfig, S)>,
}

/// Rolls out one global configuration and scores the result.
pub fn evaluate_config<S: Scalar>(
    task: &EditTask<S>,
    space: &HyperSpace,
    sched: &NoiseSchedule<S>,
    cfg: &GlobalConfig,
    reward: &RewardConfig<S>,
) -> Result<(RewardBreakdown<S>, EpisodeRecord<S>)> {
    let actions = global_to_perstep(space, cfg, sched.steps())?;
    let rec = rollout_actions(task, space, sched, actions)?;
    let r = compose(&rec.final_x0, task, reward)?;
    Ok((r, rec))
}

fn search_over<S: Scalar>(
    task: &EditTask<S>,
    space: &HyperSpace,
    sched: &NoiseSchedule<S>,
    configs: Vec<GlobalConfig>,
    reward: &RewardConfig<S>,
) -> Result<SearchResult<S>> {
    if configs.is_empty() {
        return Err(Error::Config("search grid is empty".into()));
    }
    let scored: Vec<(GlobalConfig, S, usize)> = configs
        .into_par_iter()
        .map(|c| {
            let (r, rec) = evaluate_config(task, space, sched, &c, reward)?;
            Ok((c, r.total, rec.nfe_count))
        })
        .collect::<Result<_>>()?;
    let nfe_count = scored.iter().map(|s| s.2).sum();
    let mut best = 0;
    for (i, s) in scored.iter().enumerate() {
        if s.1 > scored[best].1 {
            best = i;
        }
    }
    Ok(SearchResult {
        best_config: scored[best].0.clone(),
        best_reward: scored[best].1,
        nfe_count,
        evaluations: scored.into_iter().map(|(c, r, _)| (c, r)).collect(),
    })
}

/// Evaluates every configuration in `grid`; ties go to the first in grid order.
pub fn brute_force<S: Scalar>(
    task: &EditTask<S>,
    space: &HyperSpace,
    sched: &NoiseSchedule<S>,
    grid: &SearchGrid,
    reward: &RewardConfig<S>,
) -> Result<SearchResult<S>> {
    search_over(task, space, sched, grid.configs(), reward)
}

/// Evaluates `budget` distinct configurations drawn uniformly from `grid`.
/// The draw order depends only on `seed`, so a smaller budget evaluates a
/// prefix of a larger one. Budgets beyond the grid size cover the grid.
pub fn random_search<S: Scalar>(
    task: &EditTask<S>,
    space: &HyperSpace,
    sched: &NoiseSchedule<S>,
    grid: &SearchGrid,
    budget: usize,
    reward: &RewardConfig<S>,
    seed: u64,
) -> Result<SearchResult<S>> {
    if budget == 0 {
        return Err(Error::Config("random search budget must be at least 1".into()));
    }
    let mut configs = grid.configs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    configs.shuffle(&mut rng);
    configs.truncate(budget);
    search_over(task, space, sched, configs, reward)
}

/// How the policy picks an action from its per-head distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Argmax per head.
    Greedy,
    /// Sample every head from a stream seeded with the given value.
    Sample(u64),
}

/// Rolls the checkpoint's policy out on `task`. Costs exactly `T` evaluations.
pub fn evaluate_policy<S: Scalar>(
    checkpoint: &Checkpoint<S>,
    space: &HyperSpace,
    task: &EditTask<S>,
    sched: &NoiseSchedule<S>,
    reward: &RewardConfig<S>,
    mode: EvalMode,
) -> Result<(RewardBreakdown<S>, EpisodeRecord<S>)> {
    if &checkpoint.space != space {
        return Err(Error::Config(
            "checkpoint hyperparameter space differs from the search space".into(),
        ));
    }
    let policy = &checkpoint.policy;
    policy.check(space)?;
    let mut rng = match mode {
        EvalMode::Sample(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        EvalMode::Greedy => None,
    };
    let mut provider = |state: &LatentState<S>| {
        let out = policy.predict(&NetInput::new(state, task))?;
        Ok(Some(match rng.as_mut() {
            Some(r) => out.sample(r),
            None => out.greedy(),
        }))
    };
    let rec = rollout(task, space, sched, &mut provider)?;
    let r = compose(&rec.final_x0, task, reward)?;
    Ok((r, rec))
}

/// `(R_policy - R_default) / (R_opt - R_default)`. When the optimum does not
/// beat the default the score is 1 if the policy matches the default, else 0.
pub fn normalized_score(policy: f64, default: f64, optimal: f64) -> f64 {
    let gap = optimal - default;
    if gap <= 1e-12 {
        if policy >= default {
            1.0
        } else {
            0.0
        }
    } else {
        (policy - default) / gap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    /// Trial counts of the random best-of-k columns.
    pub trials: Vec<usize>,
    pub trial_seed: u64,
    pub mode: EvalMode,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            trials: vec![1, 2, 3],
            trial_seed: 0,
            mode: EvalMode::Greedy,
        }
    }
}

/// One reward column with its evaluation cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub reward: f64,
    pub nfe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    /// Task seed, or `"mean"` for the aggregate row.
    pub task: String,
    pub default: Cell,
    /// Best of `k` random grid configurations, one per entry of `trials`.
    pub trials: Vec<Cell>,
    pub policy: Cell,
    pub optimal: Cell,
    pub policy_inversion_step: f64,
    pub normalized: f64,
    /// Set when the per-step policy beats every global configuration.
    pub policy_above_grid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub trials: Vec<usize>,
    pub rows: Vec<CompareRow>,
    pub aggregate: CompareRow,
    /// Share of tasks with normalized score at least 0.9.
    pub near_optimal_share: f64,
}

/// Scores the default configuration, random best-of-k trials, the policy and
/// the grid optimum on every task.
pub fn compare<S: Scalar>(
    checkpoint: &Checkpoint<S>,
    tasks: &[EditTask<S>],
    space: &HyperSpace,
    sched: &NoiseSchedule<S>,
    grid: &SearchGrid,
    reward: &RewardConfig<S>,
    cfg: &CompareConfig,
) -> Result<ComparisonTable> {
    if tasks.is_empty() {
        return Err(Error::Data("comparison needs at least one task".into()));
    }
    let steps = sched.steps();
    let default_cfg = space.default_config(steps);
    let mut rows = Vec::with_capacity(tasks.len());
    for (i, task) in tasks.iter().enumerate() {
        let (d, drec) = evaluate_config(task, space, sched, &default_cfg, reward)?;
        let trials = cfg
            .trials
            .iter()
            .map(|&k| {
                let seed = cfg.trial_seed.wrapping_add(i as u64);
                let r = random_search(task, space, sched, grid, k, reward, seed)?;
                Ok(Cell {
                    reward: r.best_reward.as_f64(),
                    nfe: r.nfe_count,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (p, prec) = evaluate_policy(checkpoint, space, task, sched, reward, cfg.mode)?;
        let opt = brute_force(task, space, sched, grid, reward)?;
        let (pr, dr, or) = (p.total.as_f64(), d.total.as_f64(), opt.best_reward.as_f64());
        rows.push(CompareRow {
            task: task.seed.to_string(),
            default: Cell {
                reward: dr,
                nfe: drec.nfe_count,
            },
            trials,
            policy: Cell {
                reward: pr,
                nfe: prec.nfe_count,
            },
            optimal: Cell {
                reward: or,
                nfe: opt.nfe_count,
            },
            policy_inversion_step: perstep_to_inversion_step(space, &prec.actions) as f64,
            normalized: normalized_score(pr, dr, or),
            policy_above_grid: pr > or,
        });
    }
    let n = rows.len() as f64;
    let mean_cell = |f: &dyn Fn(&CompareRow) -> &Cell| Cell {
        reward: rows.iter().map(|r| f(r).reward).sum::<f64>() / n,
        nfe: rows.iter().map(|r| f(r).nfe).sum(),
    };
    let aggregate = CompareRow {
        task: "mean".into(),
        default: mean_cell(&|r| &r.default),
        trials: (0..cfg.trials.len())
            .map(|j| mean_cell(&|r| &r.trials[j]))
            .collect(),
        policy: mean_cell(&|r| &r.policy),
        optimal: mean_cell(&|r| &r.optimal),
        policy_inversion_step: rows.iter().map(|r| r.policy_inversion_step).sum::<f64>() / n,
        normalized: rows.iter().map(|r| r.normalized).sum::<f64>() / n,
        policy_above_grid: rows.iter().any(|r| r.policy_above_grid),
    };
    let near = rows.iter().filter(|r| r.normalized >= 0.9).count() as f64 / n;
    Ok(ComparisonTable {
        trials: cfg.trials.clone(),
        rows,
        aggregate,
        near_optimal_share: near,
    })
}
