//! The reinforcement-learning environment: observation construction,
//! action rescaling, the per-tick reward, and the delayed-action episode loop.
//!
//! The observation at step `k` is the matched future observation of tick
//! `k + D` (D = total delay in ticks), so the policy always sees the state its
//! action will meet. Each observation stacks the current feature row and
//! `history_len` predecessors, all normalized to [-1, 1].

use crate::config::{Config, EnvConfig, MachineConfig, RewardConfig};
use crate::delay::matched_observation;
use crate::error::Result;
use crate::scenario::Scenario;
use crate::sim::{Simulation, TickOutcome, FEATURES};

pub type Observation = Vec<f64>;

pub fn obs_dim(env: &EnvConfig) -> usize {
    (env.history_len + 1) * FEATURES
}

/// Normalize one raw feature to [-1, 1] by its column index.
fn normalize_feature(column: usize, x: f64, machine: &MachineConfig, env: &EnvConfig) -> f64 {
    let unit = |x: f64, max: f64| 2.0 * (x / max).clamp(0.0, 1.0) - 1.0;
    match column {
        0 | 1 => unit(x, machine.box_speed_max),
        2 | 3 => unit(x, env.inflow_norm_max),
        _ => unit(x, machine.belt_length),
    }
}

/// Build the stacked, normalized observation from a simulation's feature
/// history. Slots run oldest to newest; at episode start, missing history is
/// padded with the oldest available row.
pub fn featurize(sim: &Simulation, env: &EnvConfig) -> Observation {
    let slots = env.history_len + 1;
    let rows: Vec<&[f64; FEATURES]> = sim.history_rows().collect();
    debug_assert!(!rows.is_empty());
    let machine = sim.machine();
    let mut obs = Vec::with_capacity(slots * FEATURES);
    for slot in 0..slots {
        let idx = (rows.len() + slot).saturating_sub(slots).min(rows.len() - 1);
        for (column, &x) in rows[idx].iter().enumerate() {
            obs.push(normalize_feature(column, x, machine, env));
        }
    }
    obs
}

/// Map a policy action in [-1, 1] to a commandable box belt speed.
pub fn rescale_action(a: f64, machine: &MachineConfig) -> f64 {
    let a = a.clamp(-1.0, 1.0);
    machine.box_speed_min + (a + 1.0) / 2.0 * (machine.box_speed_max - machine.box_speed_min)
}

/// Inverse of [`rescale_action`] on the commandable range.
pub fn normalize_speed(v: f64, machine: &MachineConfig) -> f64 {
    2.0 * (v - machine.box_speed_min) / (machine.box_speed_max - machine.box_speed_min) - 1.0
}

/// Per-tick reward: lost products and lost empty boxes are penalized linearly,
/// plus a smoothness penalty on the change of the commanded speed. Always
/// non-positive.
pub fn tick_reward(out: &TickOutcome, commanded_delta: f64, w: &RewardConfig) -> f64 {
    -w.mu_prod * out.products_lost as f64
        - w.mu_box * out.boxes_lost_empty as f64
        - w.zeta * commanded_delta.abs()
}

/// Deterministic speed that balances box capacity against the nominal mid
/// inflow; used to initialize the belt.
pub fn nominal_speed(cfg: &Config) -> f64 {
    let per_lane = (cfg.scenario.rate_min + cfg.scenario.rate_max) / 2.0;
    cfg.machine
        .matched_speed(per_lane * cfg.machine.lanes as f64)
        .clamp(cfg.machine.box_speed_min, cfg.machine.box_speed_max)
}

/// One episode of the delayed-action control problem.
pub struct PackagingEnv {
    cfg: Config,
    sim: Simulation,
    initial_speed: f64,
}

/// Result of one environment step.
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub outcome: TickOutcome,
}

impl PackagingEnv {
    pub fn new(cfg: &Config, scenario: Scenario) -> Result<Self> {
        let initial_speed = nominal_speed(cfg);
        let sim = Simulation::new(cfg, scenario, initial_speed)?;
        Ok(Self {
            cfg: cfg.clone(),
            sim,
            initial_speed,
        })
    }

    pub fn reset(&mut self, scenario: Scenario) -> Result<Observation> {
        self.sim = Simulation::new(&self.cfg, scenario, self.initial_speed)?;
        Ok(self.observe())
    }

    /// The matched observation of the tick the next action will land on.
    pub fn observe(&self) -> Observation {
        matched_observation(&self.sim, &self.cfg.env)
    }

    pub fn sim(&self) -> &Simulation {
        &self.sim
    }

    pub fn obs_dim(&self) -> usize {
        obs_dim(&self.cfg.env)
    }

    /// Apply a policy action in [-1, 1]: enqueue the rescaled speed command
    /// (effective after the full delay) and advance one control tick.
    pub fn step(&mut self, action: f64) -> Result<StepResult> {
        let speed = rescale_action(action, &self.cfg.machine);
        self.sim.enqueue_delayed(speed)?;
        let outcome = self.sim.step_tick();
        let cmd = &self.sim.metrics.commanded_speed;
        let delta = match cmd.len() {
            0 => 0.0,
            1 => cmd[0] - self.initial_speed,
            n => cmd[n - 1] - cmd[n - 2],
        };
        let reward = tick_reward(&outcome, delta, &self.cfg.reward);
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done: self.sim.is_done(),
            outcome,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate_scenario;

    fn config() -> Config {
        Config::default()
    }

    fn short_scenario(seed: u64, cfg: &Config, length: f64) -> Scenario {
        let spec = crate::config::ScenarioSpec {
            episode_length: length,
            ..cfg.scenario.clone()
        };
        generate_scenario(&spec, seed, &cfg.machine)
    }

    #[test]
    fn action_rescaling_is_bijective_on_range() {
        let m = MachineConfig::default();
        for i in 0..=100 {
            let a = -1.0 + 2.0 * i as f64 / 100.0;
            let v = rescale_action(a, &m);
            assert!(v >= m.box_speed_min && v <= m.box_speed_max);
            assert!((normalize_speed(v, &m) - a).abs() < 1e-12);
        }
        assert_eq!(rescale_action(-1.0, &m), m.box_speed_min);
        assert_eq!(rescale_action(1.0, &m), m.box_speed_max);
        // Out-of-range policy outputs saturate.
        assert_eq!(rescale_action(3.0, &m), m.box_speed_max);
    }

    #[test]
    fn missing_entity_features_read_plus_one() {
        let mut cfg = config();
        cfg.machine.warmup_time = 0.0;
        // Empty scenario: no products ever arrive; position features sit at
        // the sentinel and normalize to exactly +1.
        let scenario = Scenario {
            products: vec![],
            boxes: Some(vec![]),
            length: 5.0,
            segments: vec![],
        };
        let sim = Simulation::new(&cfg, scenario, 0.1).unwrap();
        let obs = featurize(&sim, &cfg.env);
        assert_eq!(obs.len(), obs_dim(&cfg.env));
        let last = &obs[obs.len() - FEATURES..];
        assert_eq!(last[4], 1.0);
        assert_eq!(last[5], 1.0);
        assert_eq!(last[6], 1.0);
        for &x in &obs {
            assert!((-1.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn reward_matches_weighted_sum_and_is_nonpositive() {
        let w = RewardConfig {
            mu_prod: 1.0,
            mu_box: 10.0,
            zeta: 0.1,
        };
        let out = TickOutcome {
            products_lost: 3,
            boxes_lost_empty: 2,
            ..Default::default()
        };
        let r = tick_reward(&out, -0.05, &w);
        assert!((r - (-3.0 - 20.0 - 0.005)).abs() < 1e-12);
        let zero = tick_reward(&TickOutcome::default(), 0.0, &w);
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn matched_observation_equals_live_future() {
        // The observation handed to the agent at step k must equal, bit for
        // bit, the live observation once the simulation reaches tick k + D.
        let cfg = config();
        let scenario = short_scenario(9, &cfg, 60.0);
        let mut env = PackagingEnv::new(&cfg, scenario).unwrap();
        let delay = env.sim.delay_ticks() as usize;

        let actions = [0.5, -0.3, 0.0, 0.9, -1.0, 0.2];
        let mut promised: Vec<(usize, Observation)> =
            vec![(env.sim.tick() as usize + delay, env.observe())];
        for &a in &actions {
            let before = env.sim.tick() as usize;
            let step = env.step(a).unwrap();
            promised.push((before + 1 + delay, step.obs));
        }
        // Keep stepping with a fixed action until every promised tick passes.
        let last_needed = promised.last().unwrap().0;
        let mut live_at: Vec<(usize, Observation)> = Vec::new();
        while (env.sim.tick() as usize) <= last_needed {
            live_at.push((env.sim.tick() as usize, featurize(&env.sim, &cfg.env)));
            env.step(0.0).unwrap();
        }
        for (tick, obs) in promised {
            let live = live_at
                .iter()
                .find(|(t, _)| *t == tick)
                .map(|(_, o)| o)
                .expect("live observation recorded");
            assert_eq!(&obs, live, "mismatch at tick {tick}");
        }
    }

    #[test]
    fn episode_terminates_at_scenario_length() {
        let cfg = config();
        let scenario = short_scenario(1, &cfg, 30.0);
        let mut env = PackagingEnv::new(&cfg, scenario).unwrap();
        let mut steps = 0;
        loop {
            let r = env.step(0.0).unwrap();
            steps += 1;
            if r.done {
                break;
            }
            assert!(steps < 1000);
        }
        assert_eq!(steps, 30);
    }
}
