//! Proximal policy optimization, written out by hand on a flat-parameter MLP:
//! network, advantage estimation, optimizer, training loop and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gae;
pub mod net;
pub mod train;

use crate::config::{Config, EnvConfig, MachineConfig};
use crate::controllers::Controller;
use crate::delay::matched_observation;
use crate::env::rescale_action;
use crate::error::Result;
use crate::sim::Simulation;

pub use checkpoint::Checkpoint;
pub use net::PolicyNet;

/// Drives the box belt with the deterministic (mean) action of a trained
/// policy, through the full action delay.
pub struct PolicyController {
    net: PolicyNet,
    env: EnvConfig,
    machine: MachineConfig,
}

impl PolicyController {
    pub fn new(net: PolicyNet, cfg: &Config) -> Self {
        Self {
            net,
            env: cfg.env.clone(),
            machine: cfg.machine.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, cfg: &Config) -> Result<Self> {
        ck.check_compatible(crate::env::obs_dim(&cfg.env))?;
        Ok(Self::new(ck.net.clone(), cfg))
    }
}

impl Controller for PolicyController {
    fn decide(&mut self, sim: &Simulation) -> f64 {
        let obs = matched_observation(sim, &self.env);
        let (out, _) = self.net.forward(&obs);
        rescale_action(out.mean, &self.machine)
    }

    fn uses_delay(&self) -> bool {
        true
    }
}
