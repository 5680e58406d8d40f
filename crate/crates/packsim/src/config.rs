//! Configuration for the machine, delay pipeline, reward, scenarios and training.
//!
//! Everything is loadable from a TOML document and every key can be overridden
//! through environment variables with the `PACKSIM_` prefix, using `__` as the
//! section separator (e.g. `PACKSIM_MACHINE__BOX_SPAWN_PITCH=0.3`).

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{ConfigError, Result};

/// Physical layout and kinematic limits of the packaging machine.
///
/// All units are SI: metres, seconds, m/s, m/s². Positions are measured as
/// distance upstream of the checkout point, so they decrease as belts move.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MachineConfig {
    /// Constant product belt speed v_P [m/s].
    pub product_belt_speed: f64,
    /// Minimum commandable box belt speed [m/s].
    pub box_speed_min: f64,
    /// Maximum commandable box belt speed [m/s].
    pub box_speed_max: f64,
    /// Maximum box belt acceleration magnitude [m/s²].
    pub box_accel_max: f64,
    /// Distance from the product detection point to the checkout point [m].
    pub belt_length: f64,
    /// Position at which new boxes enter the box belt [m upstream of checkout].
    pub box_spawn_position: f64,
    /// Four robot workspaces as `[upstream_edge, downstream_edge]` [m].
    pub robot_workspaces: [[f64; 2]; 4],
    /// Number of product lanes.
    pub lanes: u8,
    /// Products per box layer.
    pub box_capacity_per_layer: u32,
    /// Layers per box (two robots fill one box, one layer each).
    pub layers_per_box: u32,
    /// Time one pick-and-place cycle keeps a robot busy [s].
    pub robot_cycle_time: f64,
    /// Spacing between consecutive boxes on the box belt [m].
    pub box_spawn_pitch: f64,
    /// Control tick Δk [s]; one speed command per tick.
    pub control_tick: f64,
    /// Physics integration sub-step [s]; must divide the control tick.
    pub physics_subtick: f64,
    /// Steady-state warmup before the scenario starts [s]. The machine runs
    /// at the initial speed with a capacity-matched synthetic inflow so the
    /// belts are populated when measurement begins; warmup entities in flight
    /// at the end count as supplied.
    pub warmup_time: f64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        Self {
            product_belt_speed: 0.30,
            box_speed_min: 0.02,
            box_speed_max: 0.30,
            box_accel_max: 0.05,
            belt_length: 3.6,
            box_spawn_position: 3.2,
            robot_workspaces: [[3.0, 2.4], [2.4, 1.8], [1.8, 1.2], [1.2, 0.6]],
            lanes: 2,
            box_capacity_per_layer: 5,
            layers_per_box: 2,
            robot_cycle_time: 0.5,
            box_spawn_pitch: 0.25,
            control_tick: 1.0,
            physics_subtick: 0.05,
            warmup_time: 60.0,
        }
    }
}

impl MachineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.box_speed_min > 0.0 && self.box_speed_min < self.box_speed_max) {
            return Err(ConfigError::Invalid(
                "require 0 < box_speed_min < box_speed_max".into(),
            )
            .into());
        }
        if self.box_accel_max <= 0.0 {
            return Err(ConfigError::Invalid("box_accel_max must be > 0".into()).into());
        }
        if self.physics_subtick <= 0.0 || self.control_tick <= 0.0 {
            return Err(ConfigError::Invalid("tick lengths must be > 0".into()).into());
        }
        let ratio = self.control_tick / self.physics_subtick;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(ConfigError::Invalid(
                "control_tick must be an integer multiple of physics_subtick".into(),
            )
            .into());
        }
        if self.layers_per_box != 2 {
            return Err(ConfigError::Invalid("layers_per_box must be 2".into()).into());
        }
        if self.lanes != 2 {
            return Err(ConfigError::Invalid("lanes must be 2".into()).into());
        }
        if self.box_capacity_per_layer == 0 {
            return Err(ConfigError::Invalid("box_capacity_per_layer must be > 0".into()).into());
        }
        // Workspaces: ordered downstream, disjoint, strictly inside the belt.
        let mut prev_end = self.belt_length;
        for ws in &self.robot_workspaces {
            let (start, end) = (ws[0], ws[1]);
            // Negated form so a NaN edge also fails validation.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(start > end) {
                return Err(ConfigError::Invalid(
                    "workspace upstream edge must exceed downstream edge".into(),
                )
                .into());
            }
            if start > prev_end {
                return Err(ConfigError::Invalid(
                    "workspaces must be disjoint and ordered downstream".into(),
                )
                .into());
            }
            prev_end = end;
        }
        if self.robot_workspaces[0][0] >= self.belt_length || self.last_workspace_end() <= 0.0 {
            return Err(ConfigError::Invalid(
                "workspaces must lie strictly between detection and checkout".into(),
            )
            .into());
        }
        // Boxes must enter at or upstream of the first workspace so every robot
        // can reach every box, and strictly upstream of checkout.
        if self.box_spawn_position < self.robot_workspaces[0][0]
            || self.box_spawn_position > self.belt_length
        {
            return Err(ConfigError::Invalid(
                "box_spawn_position must lie between the first workspace and the detection point"
                    .into(),
            )
            .into());
        }
        if self.warmup_time < 0.0 {
            return Err(ConfigError::Invalid("warmup_time must be >= 0".into()).into());
        }
        Ok(())
    }

    pub fn warmup_ticks(&self) -> u32 {
        (self.warmup_time / self.control_tick).round() as u32
    }

    pub fn substeps_per_tick(&self) -> u32 {
        (self.control_tick / self.physics_subtick).round() as u32
    }

    pub fn workspace_len(&self, robot: usize) -> f64 {
        self.robot_workspaces[robot][0] - self.robot_workspaces[robot][1]
    }

    pub fn first_workspace_start(&self) -> f64 {
        self.robot_workspaces[0][0]
    }

    pub fn last_workspace_end(&self) -> f64 {
        self.robot_workspaces[3][1]
    }

    /// Time for a product to travel from detection to a given belt position,
    /// expressed in whole physics sub-steps.
    pub fn product_travel_substeps(&self, to_position: f64) -> i64 {
        let t = (self.belt_length - to_position) / self.product_belt_speed;
        (t / self.physics_subtick).round() as i64
    }

    /// Longest pick horizon: product travel time from detection to the end of
    /// the last workspace [s]. Schedules never extend past this horizon.
    pub fn schedule_horizon(&self) -> f64 {
        (self.belt_length - self.last_workspace_end()) / self.product_belt_speed
    }

    /// Box belt speed that balances box capacity throughput against a total
    /// product inflow given in products per minute.
    pub fn matched_speed(&self, inflow_per_min_total: f64) -> f64 {
        let capacity = (self.box_capacity_per_layer * self.layers_per_box) as f64;
        inflow_per_min_total / 60.0 * self.box_spawn_pitch / capacity
    }
}

/// Action-delay pipeline parameters (control delay γ and planned delay δ).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DelayConfig {
    /// Control delay γ [s]: unavoidable lag between decision and actuation.
    pub control_delay: f64,
    /// Planned delay δ [s]. If absent it is derived as the schedule horizon
    /// rounded up to a whole control tick.
    pub planned_delay: Option<f64>,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            control_delay: 0.2,
            planned_delay: None,
        }
    }
}

impl DelayConfig {
    pub fn resolved_planned_delay(&self, machine: &MachineConfig) -> f64 {
        match self.planned_delay {
            Some(d) => d,
            None => {
                let horizon = machine.schedule_horizon();
                (horizon / machine.control_tick).ceil() * machine.control_tick
            }
        }
    }

    /// Total delay in whole control ticks: round((γ+δ)/Δk).
    pub fn delay_ticks(&self, machine: &MachineConfig) -> u32 {
        let total = self.control_delay + self.resolved_planned_delay(machine);
        (total / machine.control_tick).round() as u32
    }

    pub fn validate(&self, machine: &MachineConfig) -> Result<()> {
        if self.control_delay < 0.0 {
            return Err(ConfigError::Invalid("control_delay must be >= 0".into()).into());
        }
        let delta = self.resolved_planned_delay(machine);
        if delta < 0.0 {
            return Err(ConfigError::Invalid("planned_delay must be >= 0".into()).into());
        }
        let total = self.control_delay + delta;
        if total > 0.0 && total + 1e-9 < machine.schedule_horizon() {
            return Err(ConfigError::Invalid(format!(
                "control_delay + planned_delay ({:.3} s) must cover the schedule horizon ({:.3} s)",
                total,
                machine.schedule_horizon()
            ))
            .into());
        }
        Ok(())
    }
}

/// Weights of the per-tick reward.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight per lost product.
    pub mu_prod: f64,
    /// Weight per lost empty box.
    pub mu_box: f64,
    /// Smoothness weight on commanded speed changes.
    pub zeta: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            mu_prod: 1.0,
            mu_box: 10.0,
            // Large enough that residual per-tick jitter (~1e-3 m/s) costs a
            // visible fraction of a lost product over an episode.
            zeta: 1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mu_prod < 0.0 || self.mu_box < 0.0 || self.zeta < 0.0 {
            return Err(ConfigError::Invalid("reward weights must be >= 0".into()).into());
        }
        Ok(())
    }
}

/// Randomized-inflow scenario parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    /// Episode length N [s] of product inflow.
    pub episode_length: f64,
    /// Lower bound of per-lane inflow rate [products/min].
    pub rate_min: f64,
    /// Upper bound of per-lane inflow rate [products/min].
    pub rate_max: f64,
    /// Minimum duration of a constant-rate segment [s].
    pub segment_min: f64,
    /// Maximum duration of a constant-rate segment [s].
    pub segment_max: f64,
    /// Relative jitter applied to inter-arrival intervals, in [0, 1).
    pub arrival_jitter: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            episode_length: 600.0,
            rate_min: 120.0,
            rate_max: 135.0,
            segment_min: 20.0,
            segment_max: 60.0,
            arrival_jitter: 0.1,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_min > 0.0 && self.rate_min <= self.rate_max) {
            return Err(ConfigError::Invalid("require 0 < rate_min <= rate_max".into()).into());
        }
        if !(self.segment_min > 0.0 && self.segment_min <= self.segment_max) {
            return Err(
                ConfigError::Invalid("require 0 < segment_min <= segment_max".into()).into(),
            );
        }
        if !(0.0..1.0).contains(&self.arrival_jitter) {
            return Err(ConfigError::Invalid("arrival_jitter must be in [0, 1)".into()).into());
        }
        if self.episode_length <= 0.0 {
            return Err(ConfigError::Invalid("episode_length must be > 0".into()).into());
        }
        Ok(())
    }
}

/// Observation construction parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Trailing window used to measure inflow at the detection point [s].
    pub inflow_window: f64,
    /// Normalization ceiling for inflow features [products/min].
    pub inflow_norm_max: f64,
    /// Historical slots per feature (the observation holds this many plus the
    /// current value).
    pub history_len: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            inflow_window: 10.0,
            inflow_norm_max: 200.0,
            history_len: 30,
        }
    }
}

/// Rule thresholds of the surrogate reactive baseline controller.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Trailing window for the baseline's own inflow estimate [s].
    pub inflow_window: f64,
    /// Safety factor applied to the projected time-to-fill before a box is
    /// considered critical.
    pub safety_factor: f64,
    /// Dead band around the inflow-matched nominal speed [m/s]; inside it the
    /// baseline leaves the speed alone.
    pub deadband: f64,
    /// Smoothing coefficient of the sluggish inflow tracker in (0, 1]; small
    /// values make the nominal speed react late to inflow changes.
    pub tracking_alpha: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            inflow_window: 10.0,
            safety_factor: 1.0,
            deadband: 0.005,
            tracking_alpha: 0.05,
        }
    }
}

/// PPO training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub discount: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Rollout length per environment, in control ticks.
    pub rollout_len: usize,
    /// Number of parallel environments.
    pub num_envs: usize,
    pub learning_rate: f64,
    /// Total number of rollout-update iterations.
    pub iterations: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Hidden layer widths of the policy/value network.
    pub hidden_sizes: Vec<usize>,
    /// Clamp range for the state-independent log standard deviation.
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub log_std_init: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub max_grad_norm: f64,
    pub seed: u64,
    /// Checkpoint/evaluation cadence in iterations.
    pub eval_every: usize,
    /// Held-out seeds used for deterministic-policy evaluation.
    pub eval_seeds: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            epochs: 10,
            minibatch_size: 64,
            rollout_len: 256,
            num_envs: 16,
            learning_rate: 3e-4,
            iterations: 120,
            entropy_coef: 0.0,
            value_coef: 0.5,
            hidden_sizes: vec![256, 256],
            log_std_min: -4.0,
            log_std_max: 1.0,
            log_std_init: -0.7,
            max_grad_norm: 0.5,
            seed: 0,
            eval_every: 10,
            eval_seeds: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(ConfigError::Invalid("discount must be in (0, 1]".into()).into());
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(ConfigError::Invalid("gae_lambda must be in [0, 1]".into()).into());
        }
        if self.clip_ratio <= 0.0 {
            return Err(ConfigError::Invalid("clip_ratio must be > 0".into()).into());
        }
        if self.num_envs == 0 || self.rollout_len == 0 || self.minibatch_size == 0 {
            return Err(ConfigError::Invalid("batch dimensions must be > 0".into()).into());
        }
        if self.learning_rate <= 0.0 {
            return Err(ConfigError::Invalid("learning_rate must be > 0".into()).into());
        }
        Ok(())
    }
}

/// Complete artifact configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub machine: MachineConfig,
    pub delay: DelayConfig,
    pub reward: RewardConfig,
    pub scenario: ScenarioSpec,
    pub env: EnvConfig,
    pub baseline: BaselineConfig,
    pub train: TrainConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.machine.validate()?;
        self.delay.validate(&self.machine)?;
        self.reward.validate()?;
        self.scenario.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Parse a TOML document, apply `PACKSIM_*` environment overrides, validate.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text)
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        apply_env_overrides(&mut value, std::env::vars())?;
        let cfg: Config = value
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Defaults plus environment overrides.
    pub fn default_with_env() -> Result<Self> {
        Self::from_toml_str("")
    }

    /// Stable hash of the serialized configuration, used to stamp checkpoints.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        // FNV-1a, enough to detect config drift between checkpoint and loader.
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

fn apply_env_overrides(
    value: &mut toml::Value,
    vars: impl Iterator<Item = (String, String)>,
) -> Result<()> {
    const PREFIX: &str = "PACKSIM_";
    for (key, raw) in vars {
        let Some(path) = key.strip_prefix(PREFIX) else {
            continue;
        };
        let segments: Vec<String> = path.split("__").map(|s| s.to_ascii_lowercase()).collect();
        if segments.is_empty() {
            continue;
        }
        // Interpret the raw value as a TOML literal (number, bool, array,
        // quoted string); anything that does not parse is a bare string.
        let parsed: toml::Value = toml::from_str::<toml::Value>(&format!("v = {raw}"))
            .ok()
            .and_then(|v| v.get("v").cloned())
            .unwrap_or(toml::Value::String(raw.clone()));
        let mut node = &mut *value;
        for seg in &segments[..segments.len() - 1] {
            if !node.is_table() {
                return Err(ConfigError::Invalid(format!("override {key} crosses a non-table")).into());
            }
            let table = node.as_table_mut().unwrap();
            node = table
                .entry(seg.clone())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("override {key} crosses a non-table")))?;
        table.insert(segments.last().unwrap().clone(), parsed);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn matched_speed_balances_flow() {
        let m = MachineConfig::default();
        // 120/min/lane on two lanes: 240 products/min against 10-product boxes
        // at 0.25 m pitch.
        let v = m.matched_speed(240.0);
        assert!((v - 0.1).abs() < 1e-12);
        // Capacity throughput equals inflow at the matched speed.
        let capacity_per_s = v / m.box_spawn_pitch * 10.0;
        assert!((capacity_per_s - 4.0).abs() < 1e-12);
    }

    #[test]
    fn planned_delay_covers_schedule_horizon() {
        let cfg = Config::default();
        let delta = cfg.delay.resolved_planned_delay(&cfg.machine);
        assert!(cfg.delay.control_delay + delta >= cfg.machine.schedule_horizon());
        assert_eq!(cfg.delay.delay_ticks(&cfg.machine), 10);
    }

    #[test]
    fn rejects_inverted_speed_bounds() {
        let mut cfg = Config::default();
        cfg.machine.box_speed_min = 0.4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_bad_subtick_ratio() {
        let mut cfg = Config::default();
        cfg.machine.physics_subtick = 0.07;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn env_override_reaches_nested_key() {
        let mut value: toml::Value = toml::from_str("").unwrap();
        let vars = vec![(
            "PACKSIM_MACHINE__BOX_SPAWN_PITCH".to_string(),
            "0.3".to_string(),
        )];
        apply_env_overrides(&mut value, vars.into_iter()).unwrap();
        let cfg: Config = value.try_into().unwrap();
        assert!((cfg.machine.box_spawn_pitch - 0.3).abs() < 1e-12);
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = Config::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
