//! Discrete K-head action spaces, global <-> per-step schedule conversion,
//! and the Phase-1 prior over global configurations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the source prompt on a prompt-switch head.
pub const PROMPT_SRC: usize = 0;
/// Index of the edit prompt on a prompt-switch head.
pub const PROMPT_EDIT: usize = 1;
pub const GATE_OFF: usize = 0;
pub const GATE_ON: usize = 1;

/// Attention-weight values offered to a scalar head by default.
pub const DEFAULT_SCALES: [f64; 6] = [0.5, 1.0, 1.5, 2.0, 3.0, 5.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    PromptSwitch,
    BinaryGate,
    DiscreteScalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub kind: HeadKind,
    pub values: Vec<f64>,
    pub default_index: usize,
}

impl HeadSpec {
    pub fn prompt_switch(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: HeadKind::PromptSwitch,
            values: vec![0.0, 1.0],
            default_index: PROMPT_EDIT,
        }
    }

    pub fn binary_gate(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: HeadKind::BinaryGate,
            values: vec![0.0, 1.0],
            default_index: GATE_OFF,
        }
    }

    /// Scalar head; the default is the entry equal to 1.0 when present.
    pub fn discrete_scalar(name: &str, values: Vec<f64>) -> Self {
        let default_index = values.iter().position(|&v| v == 1.0).unwrap_or(0);
        Self {
            name: name.into(),
            kind: HeadKind::DiscreteScalar,
            values,
            default_index,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }
}

/// Ordered list of hyperparameter heads acting in parallel at every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSpace {
    heads: Vec<HeadSpec>,
}

impl Default for HyperSpace {
    /// Prompt switch, attention-replacement gate and attention weight.
    fn default() -> Self {
        Self::new(vec![
            HeadSpec::prompt_switch("prompt"),
            HeadSpec::binary_gate("gate"),
            HeadSpec::discrete_scalar("scale", DEFAULT_SCALES.to_vec()),
        ])
        .expect("default space is valid")
    }
}

impl HyperSpace {
    pub fn new(heads: Vec<HeadSpec>) -> Result<Self> {
        let space = Self { heads };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::Config("hyperspace needs at least one head".into()));
        }
        for kind in [
            HeadKind::PromptSwitch,
            HeadKind::BinaryGate,
            HeadKind::DiscreteScalar,
        ] {
            if self.heads.iter().filter(|h| h.kind == kind).count() > 1 {
                return Err(Error::Config(format!("at most one {kind:?} head supported")));
            }
        }
        for h in &self.heads {
            let n = h.cardinality();
            match h.kind {
                HeadKind::PromptSwitch | HeadKind::BinaryGate if n != 2 => {
                    return Err(Error::Config(format!(
                        "head '{}' must have exactly 2 values",
                        h.name
                    )))
                }
                HeadKind::DiscreteScalar if n == 0 => {
                    return Err(Error::Config(format!("head '{}' has no values", h.name)))
                }
                _ => {}
            }
            if h.default_index >= n {
                return Err(Error::Config(format!(
                    "head '{}' default_index {} >= {}",
                    h.name, h.default_index, n
                )));
            }
            if h.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("head '{}' has non-finite values", h.name)));
            }
        }
        Ok(())
    }

    pub fn heads(&self) -> &[HeadSpec] {
        &self.heads
    }

    /// K, the number of heads.
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.heads.iter().map(HeadSpec::cardinality).collect()
    }

    /// Number of joint per-step actions, the product of all N_k.
    pub fn joint_size(&self) -> usize {
        self.cardinalities().iter().product()
    }

    pub fn head_of(&self, kind: HeadKind) -> Option<usize> {
        self.heads.iter().position(|h| h.kind == kind)
    }

    pub fn prompt_head(&self) -> Option<usize> {
        self.head_of(HeadKind::PromptSwitch)
    }

    pub fn gate_head(&self) -> Option<usize> {
        self.head_of(HeadKind::BinaryGate)
    }

    pub fn scale_head(&self) -> Option<usize> {
        self.head_of(HeadKind::DiscreteScalar)
    }

    /// Number of scalar values; 1 when there is no scalar head.
    pub fn scale_count(&self) -> usize {
        self.scale_head().map_or(1, |k| self.heads[k].cardinality())
    }

    pub fn default_scale_index(&self) -> usize {
        self.scale_head().map_or(0, |k| self.heads[k].default_index)
    }

    pub fn check_action(&self, action: &StepAction) -> Result<()> {
        if action.indices.len() != self.heads.len() {
            return Err(Error::Action(format!(
                "expected {} heads, got {}",
                self.heads.len(),
                action.indices.len()
            )));
        }
        for (h, &i) in self.heads.iter().zip(&action.indices) {
            if i >= h.cardinality() {
                return Err(Error::Action(format!(
                    "index {i} out of range for head '{}' ({} values)",
                    h.name,
                    h.cardinality()
                )));
            }
        }
        Ok(())
    }

    /// The action with every head at its default index.
    pub fn default_action(&self) -> StepAction {
        StepAction::new(self.heads.iter().map(|h| h.default_index).collect())
    }

    /// Global configuration equivalent to playing [`Self::default_action`]
    /// at every step.
    pub fn default_config(&self, steps: usize) -> GlobalConfig {
        let r = match self.prompt_head() {
            Some(k) if self.heads[k].default_index == PROMPT_SRC => 0,
            _ => steps,
        };
        let gate_ratio = match self.gate_head() {
            Some(k) if self.heads[k].default_index == GATE_ON => 1.0,
            _ => 0.0,
        };
        GlobalConfig {
            r,
            gate_ratio,
            scale_index: self.default_scale_index(),
        }
    }
}

/// One timestep's parallel action: a value index per head.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepAction {
    pub indices: Vec<usize>,
}

impl StepAction {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }
}

/// A whole-trajectory configuration: inversion step, gate ratio and scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalConfig {
    pub r: usize,
    pub gate_ratio: f64,
    pub scale_index: usize,
}

impl GlobalConfig {
    pub fn validate(&self, space: &HyperSpace, steps: usize) -> Result<()> {
        if self.r > steps {
            return Err(Error::Config(format!(
                "inversion step {} exceeds T={steps}",
                self.r
            )));
        }
        if !(0.0..=1.0).contains(&self.gate_ratio) {
            return Err(Error::Config(format!(
                "gate ratio {} outside [0, 1]",
                self.gate_ratio
            )));
        }
        if self.scale_index >= space.scale_count() {
            return Err(Error::Config(format!(
                "scale index {} out of range",
                self.scale_index
            )));
        }
        Ok(())
    }

    /// Number of leading (largest-t) steps with the gate active.
    pub fn gate_steps(&self, steps: usize) -> usize {
        floor_eps(self.gate_ratio * steps as f64).min(steps)
    }
}

// Products like 0.7 * 10 land a hair above or below the integer.
const ROUND_TOL: f64 = 1e-9;

fn floor_eps(x: f64) -> usize {
    (x + ROUND_TOL).floor().max(0.0) as usize
}

fn ceil_eps(x: f64) -> usize {
    (x - ROUND_TOL).ceil().max(0.0) as usize
}

/// Expands a global configuration into per-step actions in rollout order
/// (`t = T` first, `t = 1` last).
pub fn global_to_perstep(
    space: &HyperSpace,
    cfg: &GlobalConfig,
    steps: usize,
) -> Result<Vec<StepAction>> {
    cfg.validate(space, steps)?;
    let gate_steps = cfg.gate_steps(steps);
    let actions = (0..steps)
        .map(|k| {
            let t = steps - k;
            let indices = space
                .heads()
                .iter()
                .map(|h| match h.kind {
                    HeadKind::PromptSwitch => {
                        if t > cfg.r {
                            PROMPT_SRC
                        } else {
                            PROMPT_EDIT
                        }
                    }
                    HeadKind::BinaryGate => {
                        if k < gate_steps {
                            GATE_ON
                        } else {
                            GATE_OFF
                        }
                    }
                    HeadKind::DiscreteScalar => cfg.scale_index,
                })
                .collect();
            StepAction::new(indices)
        })
        .collect();
    Ok(actions)
}

/// Inversion-step readout: the largest `t` whose prompt head selects the
/// edit prompt, or 0 if it never does. `actions` are in rollout order.
pub fn perstep_to_inversion_step(space: &HyperSpace, actions: &[StepAction]) -> usize {
    let Some(k) = space.prompt_head() else {
        return 0;
    };
    let steps = actions.len();
    actions
        .iter()
        .position(|a| a.indices[k] == PROMPT_EDIT)
        .map_or(0, |pos| steps - pos)
}

/// Phase-1 prior ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Inversion step range as fractions of T.
    pub r_frac: [f64; 2],
    pub gate_ratio: [f64; 2],
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            r_frac: [0.35, 0.95],
            gate_ratio: [0.2, 0.8],
        }
    }
}

impl PriorConfig {
    /// Narrower gate range for cross-attention gating.
    pub fn cross_attention() -> Self {
        Self {
            gate_ratio: [0.2, 0.6],
            ..Self::default()
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        let [lo, hi] = self.r_frac;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!("invalid r_frac range [{lo}, {hi}]")));
        }
        let [glo, ghi] = self.gate_ratio;
        if !(0.0..=1.0).contains(&glo) || !(0.0..=1.0).contains(&ghi) || glo > ghi {
            return Err(Error::Config(format!(
                "invalid gate_ratio range [{glo}, {ghi}]"
            )));
        }
        let (a, b) = self.r_bounds(steps);
        if a > b {
            return Err(Error::Config(format!(
                "r_frac range [{lo}, {hi}] contains no integer step for T={steps}"
            )));
        }
        Ok(())
    }

    /// Integer support `[ceil(lo*T), floor(hi*T)]` of the inversion step.
    pub fn r_bounds(&self, steps: usize) -> (usize, usize) {
        let t = steps as f64;
        (ceil_eps(self.r_frac[0] * t), floor_eps(self.r_frac[1] * t))
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        space: &HyperSpace,
        steps: usize,
        rng: &mut R,
    ) -> GlobalConfig {
        let (lo, hi) = self.r_bounds(steps);
        let r = rng.random_range(lo..=hi);
        let [glo, ghi] = self.gate_ratio;
        let gate_ratio = if ghi > glo {
            rng.random_range(glo..=ghi)
        } else {
            glo
        };
        GlobalConfig {
            r,
            gate_ratio,
            scale_index: space.default_scale_index(),
        }
    }
}

/// Draws one global configuration from the prior, deterministically in `seed`.
pub fn sample_prior(
    space: &HyperSpace,
    steps: usize,
    prior: &PriorConfig,
    seed: u64,
) -> Result<GlobalConfig> {
    if steps < 2 {
        return Err(Error::Config("prior sampling needs T >= 2".into()));
    }
    prior.validate(steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(prior.sample(space, steps, &mut rng))
}
