//! Batch commands. Each is a pure function of its input files, the config
//! and the seeds it carries.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::environment::{generate_tasks, EditTask};
use crate::error::{Error, Result};
use crate::hyperspace::{perstep_to_inversion_step, GlobalConfig};
use crate::nets::checkpoint::{Checkpoint, Phase};
use crate::nets::{PolicyParams, ValueParams};
use crate::persist::{
    read_tasks, write_comparison, write_json, write_metrics, write_tasks, Provenance,
};
use crate::reward::RewardBreakdown;
use crate::search::{brute_force, compare, evaluate_policy, random_search, ComparisonTable};
use crate::trainer::{pretrain_phase1, train_phase2, MetricsRow, TrainSetup};

fn check_hash(expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::HashMismatch {
            expected: expected.into(),
            found: found.into(),
        });
    }
    Ok(())
}

/// Reads a task file written under the same configuration.
pub fn load_tasks(cfg: &ExperimentConfig, path: &Path) -> Result<Vec<EditTask<f64>>> {
    let (header, tasks) = read_tasks(path)?;
    check_hash(&cfg.hash(), &header.config_hash)?;
    for t in &tasks {
        if t.dim() != cfg.environment.dim {
            return Err(Error::Data(format!(
                "task {} has dimension {}, config says {}",
                t.seed,
                t.dim(),
                cfg.environment.dim
            )));
        }
    }
    Ok(tasks)
}

/// Reads a checkpoint written under the same configuration.
pub fn load_checkpoint(cfg: &ExperimentConfig, path: &Path) -> Result<Checkpoint<f64>> {
    let ck = Checkpoint::load(path)?;
    check_hash(&cfg.hash(), &ck.config_hash)?;
    if ck.space != cfg.space || ck.shape != cfg.network {
        return Err(Error::Data("checkpoint architecture differs from the config".into()));
    }
    Ok(ck)
}

pub fn gen_tasks(cfg: &ExperimentConfig, count: usize, seed: u64, out: &Path) -> Result<()> {
    let tasks: Vec<EditTask<f64>> = generate_tasks(&cfg.environment, seed, count)?;
    write_tasks(out, &cfg.hash(), seed, &tasks)
}

/// Phase 1: imitation of the prior from a freshly initialized policy.
pub fn pretrain(cfg: &ExperimentConfig, tasks: &Path, out: &Path) -> Result<Checkpoint<f64>> {
    let tasks = load_tasks(cfg, tasks)?;
    let seeds = cfg.stage_seeds();
    let sched = cfg.schedule()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.init);
    let init = PolicyParams::init(&cfg.network, &cfg.space, &mut rng);
    let res = pretrain_phase1(&init, &cfg.space, &tasks, &sched, &cfg.phase1, seeds.phase1)?;
    let ck = Checkpoint::new(&cfg.hash(), cfg.seeds.master, Phase::Prior, cfg.space.clone(), res.policy);
    ck.save(out)?;
    Ok(ck)
}

/// Phase 2: PPO from `init`, regularized towards its policy.
pub fn train(
    cfg: &ExperimentConfig,
    tasks: &Path,
    init: &Path,
    out: &Path,
    metrics: &Path,
) -> Result<(Checkpoint<f64>, Vec<MetricsRow>)> {
    let tasks = load_tasks(cfg, tasks)?;
    let start = load_checkpoint(cfg, init)?;
    let seeds = cfg.stage_seeds();
    let sched = cfg.schedule()?;
    let reward = cfg.reward.build()?;
    let reference = start.reference.clone().unwrap_or_else(|| start.policy.clone());
    let value = match &start.value {
        Some(v) => v.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds.init);
            rng.set_stream(1);
            ValueParams::init(&cfg.network, &mut rng)
        }
    };
    let setup = TrainSetup {
        space: &cfg.space,
        sched: &sched,
        tasks: &tasks,
        reward: &reward,
    };
    let res = train_phase2(&start.policy, &reference, &value, &setup, &cfg.phase2, seeds.phase2)?;
    let mut ck = Checkpoint::new(&cfg.hash(), cfg.seeds.master, Phase::Online, cfg.space.clone(), res.policy);
    ck.value = Some(res.value);
    ck.reference = Some(reference);
    ck.save(out)?;
    let prov = Provenance::new(&cfg.hash(), cfg.seeds.master)
        .flag("normalize_advantages", cfg.phase2.normalize_advantages)
        .flag("alg2_literal", cfg.phase2.alg2_literal);
    write_metrics(metrics, &prov, &res.metrics)?;
    Ok((ck, res.metrics))
}

#[derive(Debug, Clone, Serialize)]
pub struct EditReport {
    pub config_hash: String,
    pub seed: u64,
    pub task_seed: u64,
    /// Per-step action indices in rollout order (t = T first).
    pub actions: Vec<Vec<usize>>,
    /// Per-step action values, one column per head.
    pub values: Vec<Vec<f64>>,
    pub inversion_step: usize,
    pub reward: RewardBreakdown<f64>,
    pub final_x0: Vec<f64>,
    pub nfe_count: usize,
}

/// Runs the policy on task `index` of the task file.
pub fn edit(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    tasks: &Path,
    index: usize,
    out: &Path,
) -> Result<EditReport> {
    let ck = load_checkpoint(cfg, checkpoint)?;
    let tasks = load_tasks(cfg, tasks)?;
    let task = tasks
        .get(index)
        .ok_or_else(|| Error::Data(format!("task index {index} out of range ({})", tasks.len())))?;
    let sched = cfg.schedule()?;
    let reward = cfg.reward.build()?;
    let mode = cfg.compare_config().mode;
    let (r, rec) = evaluate_policy(&ck, &cfg.space, task, &sched, &reward, mode)?;
    let report = EditReport {
        config_hash: cfg.hash(),
        seed: cfg.seeds.master,
        task_seed: task.seed,
        actions: rec.actions.iter().map(|a| a.indices.clone()).collect(),
        values: rec
            .actions
            .iter()
            .map(|a| {
                cfg.space
                    .heads()
                    .iter()
                    .zip(&a.indices)
                    .map(|(h, &i)| h.values[i])
                    .collect()
            })
            .collect(),
        inversion_step: perstep_to_inversion_step(&cfg.space, &rec.actions),
        reward: r,
        final_x0: rec.final_x0,
        nfe_count: rec.nfe_count,
    };
    write_json(out, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchSummary {
    pub best_config: GlobalConfig,
    pub best_reward: f64,
    pub nfe_count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchRow {
    pub task_seed: u64,
    pub brute_force: SearchSummary,
    /// Random search with each budget in `search.trials`.
    pub random: Vec<(usize, SearchSummary)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchReport {
    pub config_hash: String,
    pub seed: u64,
    pub grid_size: usize,
    pub total_nfe: usize,
    pub rows: Vec<SearchRow>,
}

pub fn search(cfg: &ExperimentConfig, tasks: &Path, out: &Path) -> Result<SearchReport> {
    let tasks = load_tasks(cfg, tasks)?;
    let sched = cfg.schedule()?;
    let reward = cfg.reward.build()?;
    let grid = cfg.grid();
    let trial_seed = cfg.stage_seeds().trials;
    let mut rows = Vec::with_capacity(tasks.len());
    let mut total_nfe = 0;
    for (i, task) in tasks.iter().enumerate() {
        let bf = brute_force(task, &cfg.space, &sched, &grid, &reward)?;
        total_nfe += bf.nfe_count;
        let mut random = Vec::new();
        for &k in &cfg.search.trials {
            let r = random_search(task, &cfg.space, &sched, &grid, k, &reward, trial_seed.wrapping_add(i as u64))?;
            total_nfe += r.nfe_count;
            random.push((
                k,
                SearchSummary {
                    best_config: r.best_config,
                    best_reward: r.best_reward,
                    nfe_count: r.nfe_count,
                },
            ));
        }
        rows.push(SearchRow {
            task_seed: task.seed,
            brute_force: SearchSummary {
                best_config: bf.best_config,
                best_reward: bf.best_reward,
                nfe_count: bf.nfe_count,
            },
            random,
        });
    }
    let report = SearchReport {
        config_hash: cfg.hash(),
        seed: cfg.seeds.master,
        grid_size: grid.len(),
        total_nfe,
        rows,
    };
    write_json(out, &report)?;
    Ok(report)
}

/// Writes `<out>.csv` and `<out>.json`.
pub fn compare_cmd(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    tasks: &Path,
    out: &Path,
) -> Result<ComparisonTable> {
    let ck = load_checkpoint(cfg, checkpoint)?;
    let tasks = load_tasks(cfg, tasks)?;
    let sched = cfg.schedule()?;
    let reward = cfg.reward.build()?;
    let table = compare(&ck, &tasks, &cfg.space, &sched, &cfg.grid(), &reward, &cfg.compare_config())?;
    let prov = Provenance::new(&cfg.hash(), cfg.seeds.master);
    write_comparison(out, &prov, &table)?;
    Ok(table)
}

/// Files produced by [`run_all`].
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub train_tasks: PathBuf,
    pub eval_tasks: PathBuf,
    pub prior: PathBuf,
    pub policy: PathBuf,
    pub metrics: PathBuf,
    /// Stem of `comparison.csv` and `comparison.json`.
    pub comparison: PathBuf,
}

impl RunPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            train_tasks: dir.join("train_tasks.jsonl"),
            eval_tasks: dir.join("eval_tasks.jsonl"),
            prior: dir.join("prior.json"),
            policy: dir.join("policy.json"),
            metrics: dir.join("metrics.csv"),
            comparison: dir.join("comparison"),
        }
    }
}

/// gen-tasks (train and eval splits), pretrain, train, compare.
pub fn run_all(cfg: &ExperimentConfig, dir: &Path) -> Result<(RunPaths, ComparisonTable)> {
    fs::create_dir_all(dir)?;
    let p = RunPaths::in_dir(dir);
    let d = &cfg.data;
    let train_end = d.train_first_seed.saturating_add(d.train_count as u64);
    let eval_end = d.eval_first_seed.saturating_add(d.eval_count as u64);
    if d.train_first_seed < eval_end && d.eval_first_seed < train_end {
        return Err(Error::Config("train and eval task seeds overlap".into()));
    }
    gen_tasks(cfg, d.train_count, d.train_first_seed, &p.train_tasks)?;
    gen_tasks(cfg, d.eval_count, d.eval_first_seed, &p.eval_tasks)?;
    pretrain(cfg, &p.train_tasks, &p.prior)?;
    train(cfg, &p.train_tasks, &p.prior, &p.policy, &p.metrics)?;
    let table = compare_cmd(cfg, &p.policy, &p.eval_tasks, &p.comparison)?;
    Ok((p, table))
}
