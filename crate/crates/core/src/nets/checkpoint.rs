//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form and parsed exactly, so a reload reproduces every weight bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetShape, PolicyParams, ValueParams};
use crate::error::{Error, Result};
use crate::hyperspace::HyperSpace;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "hyperstep-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prior,
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Checkpoint<S: Scalar> {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub config_hash: String,
    pub seed: u64,
    pub phase: Phase,
    pub space: HyperSpace,
    pub shape: NetShape,
    pub policy: PolicyParams<S>,
    pub value: Option<ValueParams<S>>,
    /// Frozen prior policy used as the KL reference during online training.
    pub reference: Option<PolicyParams<S>>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(
        config_hash: &str,
        seed: u64,
        phase: Phase,
        space: HyperSpace,
        policy: PolicyParams<S>,
    ) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            scalar: S::NAME.into(),
            config_hash: config_hash.into(),
            seed,
            phase,
            shape: policy.shape(),
            space,
            policy,
            value: None,
            reference: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("not a checkpoint: format '{}'", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.scalar != S::NAME {
            return Err(Error::Data(format!(
                "checkpoint scalar '{}' does not match '{}'",
                self.scalar,
                S::NAME
            )));
        }
        self.space.validate()?;
        self.policy.check(&self.space)?;
        if self.policy.shape() != self.shape {
            return Err(Error::Data("policy shape disagrees with header".into()));
        }
        if let Some(v) = &self.value {
            v.check()?;
            if v.shape() != self.shape {
                return Err(Error::Data("value shape disagrees with header".into()));
            }
        }
        if let Some(r) = &self.reference {
            r.check(&self.space)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)
            .map_err(|e| Error::Data(format!("corrupt checkpoint: {e}")))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}
