//! Self-contained training snapshots.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sac::{Agent, SacConfig};
use crate::env::EnvConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub structure_hash: String,
    pub epoch: usize,
    pub episodes: u64,
    pub agent: Agent,
    pub rng: ChaCha8Rng,
}

/// Digest of everything a checkpoint's tensors depend on: network shapes,
/// action space and arm models.
pub fn structure_hash(env: &EnvConfig, sac: &SacConfig) -> String {
    let (obs, act, goal) = (env.obs_dim(), env.action_dim(), env.goal.desired.len());
    let desc = serde_json::json!({
        "controller": env.controller.name(),
        "arms": env.arms,
        "policy": sac.policy_dims(obs + 2 * goal, act),
        "q": sac.q_dims(obs + 2 * goal, act),
    });
    let digest = Sha256::digest(desc.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(structure_hash: &str, epoch: usize, episodes: u64, agent: Agent, rng: ChaCha8Rng) -> Self {
        Self { version: CHECKPOINT_VERSION, structure_hash: structure_hash.to_string(), epoch, episodes, agent, rng }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    /// Loads and checks format version and structure against `expected`.
    pub fn load(path: &Path, expected_hash: &str) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: malformed checkpoint: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        if ckpt.structure_hash != expected_hash {
            return Err(Error::Checkpoint(format!(
                "checkpoint structure {} does not match configuration {}",
                ckpt.structure_hash, expected_hash
            )));
        }
        ckpt.agent.check_finite()?;
        Ok(ckpt)
    }
}
