//! Checkpoint serialization for trained policies.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ppo::net::PolicyNet;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Digest of the configuration the policy was trained under.
    pub config_digest: String,
    pub iteration: usize,
    pub obs_dim: usize,
    pub net: PolicyNet,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("parse: {e}")))
    }

    /// Fail when the checkpoint cannot drive the given observation size.
    pub fn check_compatible(&self, obs_dim: usize) -> Result<()> {
        if self.obs_dim != obs_dim || self.net.input_dim != obs_dim {
            return Err(Error::Checkpoint(format!(
                "checkpoint expects {}-dim observations, configuration produces {obs_dim}",
                self.obs_dim
            )));
        }
        Ok(())
    }
}
