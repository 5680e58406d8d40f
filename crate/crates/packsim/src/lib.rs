//! Deterministic simulator and control stack for a dual-belt, four-robot
//! secondary packaging machine: machine physics, internal pick/place
//! scheduling, OEE metrics, a delayed-action RL environment with future
//! observation matching, a reactive baseline controller, and a from-scratch
//! PPO trainer.

pub mod config;
pub mod controllers;
pub mod delay;
pub mod env;
pub mod error;
pub mod machine;
pub mod ppo;
pub mod report;
pub mod scenario;
pub mod scheduler;
pub mod sim;

pub use config::Config;
pub use error::{Error, Result};
