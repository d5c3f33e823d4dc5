//! Experiment configuration, read from TOML, and its content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::NoiseSchedule;
use crate::environment::GenConfig;
use crate::error::{Error, Result};
use crate::hyperspace::HyperSpace;
use crate::nets::NetShape;
use crate::reward::{Judge, RewardConfig, RewardMode};
use crate::scalar::Scalar;
use crate::search::{CompareConfig, EvalMode, SearchGrid};
use crate::trainer::{Phase1Config, PpoConfig};

/// Environment variable that replaces `seeds.master`.
pub const SEED_ENV: &str = "HYPERSTEP_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSection {
    pub steps: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self { steps: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSection {
    pub mode: RewardMode,
    pub alpha: f64,
    pub beta: f64,
    pub judge_coeff: f64,
    /// In-mask MSE below which the built-in judge accepts an edit.
    pub judge_threshold: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        Self {
            mode: RewardMode::Masked,
            alpha: 30.0,
            beta: 30.0,
            judge_coeff: 5.0,
            judge_threshold: 0.05,
        }
    }
}

impl RewardSection {
    pub fn build<S: Scalar>(&self) -> Result<RewardConfig<S>> {
        let cfg = match self.mode {
            RewardMode::Masked => RewardConfig::masked(self.alpha, self.beta),
            RewardMode::Global => RewardConfig::global(self.alpha),
            RewardMode::Judge => {
                RewardConfig::judge(Judge::Threshold(S::of(self.judge_threshold)), self.judge_coeff)
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSection {
    /// Number of evenly spaced gate ratios in `[0, 1]`.
    pub gate_points: usize,
    /// Random best-of-k columns of the comparison table.
    pub trials: Vec<usize>,
    /// Sample the policy instead of taking the argmax per head.
    pub stochastic: bool,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            gate_points: 11,
            trials: vec![1, 2, 3],
            stochastic: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub train_count: usize,
    pub eval_count: usize,
    /// Seed of the first training task; the eval split follows at `eval_first_seed`.
    pub train_first_seed: u64,
    pub eval_first_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_count: 2000,
            eval_count: 700,
            train_first_seed: 0,
            eval_first_seed: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedSection {
    pub master: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schedule: ScheduleSection,
    pub environment: GenConfig,
    pub space: HyperSpace,
    pub reward: RewardSection,
    pub network: NetShape,
    pub phase1: Phase1Config,
    pub phase2: PpoConfig,
    pub search: SearchSection,
    pub data: DataSection,
    pub seeds: SeedSection,
}

/// Seeds handed to each pipeline stage, derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub init: u64,
    pub phase1: u64,
    pub phase2: u64,
    pub trials: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seeds.master = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}='{v}' is not an unsigned integer")))?;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config encode: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let steps = self.schedule.steps;
        NoiseSchedule::<f64>::linear(steps)?;
        self.environment.validate()?;
        self.space.validate()?;
        self.reward.build::<f64>()?;
        self.network.validate()?;
        if self.network.dim != self.environment.dim {
            return Err(Error::Config(format!(
                "network dim {} differs from environment dim {}",
                self.network.dim, self.environment.dim
            )));
        }
        self.phase1.validate(steps)?;
        self.phase2.validate()?;
        if self.search.gate_points == 0 || self.search.trials.contains(&0) {
            return Err(Error::Config("search needs gate points and positive trial counts".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, ignoring seeds, as lowercase hex.
    pub fn hash(&self) -> String {
        let mut unseeded = self.clone();
        unseeded.seeds = SeedSection::default();
        let json = serde_json::to_string(&unseeded).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn stage_seeds(&self) -> StageSeeds {
        let m = self.seeds.master;
        StageSeeds {
            init: m,
            phase1: m.wrapping_add(1),
            phase2: m.wrapping_add(2),
            trials: m.wrapping_add(3),
        }
    }

    pub fn schedule<S: Scalar>(&self) -> Result<NoiseSchedule<S>> {
        NoiseSchedule::linear(self.schedule.steps)
    }

    pub fn grid(&self) -> SearchGrid {
        let mut grid = SearchGrid::full(&self.space, self.schedule.steps);
        if self.space.gate_head().is_some() {
            let n = self.search.gate_points;
            grid.gate_ratios = if n == 1 {
                vec![0.0]
            } else {
                (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
            };
        }
        grid
    }

    pub fn compare_config(&self) -> CompareConfig {
        let seeds = self.stage_seeds();
        CompareConfig {
            trials: self.search.trials.clone(),
            trial_seed: seeds.trials,
            mode: if self.search.stochastic {
                EvalMode::Sample(seeds.trials)
            } else {
                EvalMode::Greedy
            },
        }
    }
}
