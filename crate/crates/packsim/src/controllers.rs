//! Box belt speed controllers: a fixed-speed reference and a reactive
//! rule-based baseline.
//!
//! The baseline is a surrogate for the incumbent integrated controller: it
//! tracks the inflow-matched speed from a trailing inflow estimate, reacts to
//! critically late boxes by slamming the belt to minimum speed, and holds its
//! command inside a dead band. The trailing estimate makes it react late to
//! inflow changes and the coarse speed steps make it jumpy — the failure
//! signature the learned controller is meant to improve on. It is the
//! incumbent, so it acts without the planned delay; the learned policy always
//! goes through the delay pipeline.

use crate::config::{BaselineConfig, Config, MachineConfig};
use crate::error::{Error, Result};
use crate::machine::{BoxStatus, RobotPair};
use crate::scenario::Scenario;
use crate::sim::Simulation;

/// A per-tick speed decision source.
pub trait Controller {
    /// Commanded speed for the upcoming tick.
    fn decide(&mut self, sim: &Simulation) -> f64;

    /// Whether commands go through the full action delay (the learned policy)
    /// or take effect immediately (incumbent controllers).
    fn uses_delay(&self) -> bool {
        false
    }
}

/// Holds one fixed speed for the whole episode.
pub struct ConstantController {
    speed: f64,
}

impl ConstantController {
    pub fn new(speed: f64, machine: &MachineConfig) -> Result<Self> {
        if speed < machine.box_speed_min || speed > machine.box_speed_max {
            return Err(Error::SpeedOutOfRange {
                commanded: speed,
                min: machine.box_speed_min,
                max: machine.box_speed_max,
            });
        }
        Ok(Self { speed })
    }
}

impl Controller for ConstantController {
    fn decide(&mut self, _sim: &Simulation) -> f64 {
        self.speed
    }
}

/// Reactive rule-based baseline (see module docs).
pub struct BaselineController {
    cfg: BaselineConfig,
    machine: MachineConfig,
    last_command: Option<f64>,
    /// Sluggish inflow estimate [products/min]; reacts late by design.
    tracked_inflow: Option<f64>,
}

/// Step size of the baseline's speed ladder [m/s]; the coarse grid is part of
/// its jumpy signature.
const SPEED_STEP: f64 = 0.01;

impl BaselineController {
    pub fn new(cfg: &Config) -> Self {
        Self {
            cfg: cfg.baseline.clone(),
            machine: cfg.machine.clone(),
            last_command: None,
            tracked_inflow: None,
        }
    }

    /// Most downstream unfinished box: (position, products missing, last belt
    /// position at which it can still be filled).
    fn critical_candidate(&self, sim: &Simulation) -> Option<(f64, u32, f64)> {
        let capacity = self.machine.box_capacity_per_layer * self.machine.layers_per_box;
        sim.boxes()
            .iter()
            .filter(|b| {
                b.status == BoxStatus::OnBelt && b.position >= 0.0 && b.total_fill() < capacity
            })
            .min_by(|a, b| a.position.total_cmp(&b.position))
            .map(|b| {
                let last_fill_pos = match b.pair {
                    RobotPair::A => self.machine.robot_workspaces[1][1],
                    RobotPair::B => self.machine.robot_workspaces[3][1],
                };
                (b.position, capacity - b.total_fill(), last_fill_pos)
            })
    }
}

impl Controller for BaselineController {
    fn decide(&mut self, sim: &Simulation) -> f64 {
        let (min, max) = (self.machine.box_speed_min, self.machine.box_speed_max);
        // Trailing inflow estimate from the current feature row [products/min].
        let row = sim
            .history_rows()
            .next_back()
            .copied()
            .unwrap_or([0.0; crate::sim::FEATURES]);
        let inflow_per_min = row[2] + row[3];
        let tracked = match self.tracked_inflow {
            Some(prev) => prev + self.cfg.tracking_alpha * (inflow_per_min - prev),
            None => inflow_per_min,
        };
        self.tracked_inflow = Some(tracked);

        // Track the capacity-matched speed on a coarse ladder.
        let mut target = self.machine.matched_speed(tracked).clamp(min, max);
        target = (target / SPEED_STEP).round() * SPEED_STEP;
        target = target.clamp(min, max);

        // Critical-box rule: if the most downstream unfinished box would leave
        // its last fill workspace before the inflow can complete it, stall the
        // belt outright.
        if let Some((position, missing, last_fill_pos)) = self.critical_candidate(sim) {
            if position > last_fill_pos {
                let pair_rate_per_s = (inflow_per_min / 60.0 / 2.0).max(1e-6);
                let time_to_fill = missing as f64 / pair_rate_per_s * self.cfg.safety_factor;
                let speed_now = sim.box_speed().max(1e-6);
                let time_available = (position - last_fill_pos) / speed_now;
                if time_available < time_to_fill {
                    target = min;
                }
            }
        }

        // Dead band: ignore small corrections.
        if let Some(last) = self.last_command {
            if (target - last).abs() < self.cfg.deadband {
                target = last;
            }
        }
        self.last_command = Some(target);
        target
    }
}

/// Run one full episode under a controller and return the finished simulation.
pub fn run_episode(
    cfg: &Config,
    scenario: Scenario,
    initial_speed: f64,
    controller: &mut dyn Controller,
) -> Result<Simulation> {
    let mut sim = Simulation::new(cfg, scenario, initial_speed)?;
    while !sim.is_done() {
        let speed = controller.decide(&sim);
        if controller.uses_delay() {
            sim.enqueue_delayed(speed)?;
        } else {
            sim.enqueue_immediate(speed)?;
        }
        sim.step_tick();
    }
    sim.check_conservation()?;
    Ok(sim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Arrival;
    use crate::sim::oee_report;

    fn config() -> Config {
        Config::default()
    }

    fn piecewise_scenario(rates: &[(f64, f64)], cfg: &Config) -> Scenario {
        // (duration [s], per-lane rate [/min]) segments, quasi-periodic.
        let mut products = Vec::new();
        for lane in 1..=2u8 {
            let mut t0 = 0.0;
            for &(duration, rate) in rates {
                let interval = 60.0 / rate;
                let mut t = t0;
                while t < t0 + duration {
                    products.push(Arrival {
                        substep: (t / cfg.machine.physics_subtick).round() as i64,
                        lane,
                    });
                    t += interval;
                }
                t0 += duration;
            }
        }
        products.sort_by_key(|a| (a.substep, a.lane));
        let length = rates.iter().map(|r| r.0).sum();
        Scenario {
            products,
            boxes: None,
            length,
            segments: Vec::new(),
        }
    }

    #[test]
    fn constant_controller_rejects_out_of_bounds() {
        let m = MachineConfig::default();
        assert!(ConstantController::new(0.5, &m).is_err());
        assert!(ConstantController::new(0.01, &m).is_err());
        assert!(ConstantController::new(0.1, &m).is_ok());
    }

    #[test]
    fn both_incumbents_lossless_on_constant_inflow() {
        let cfg = config();
        let scenario = piecewise_scenario(&[(600.0, 120.0)], &cfg);
        let speed = cfg.machine.matched_speed(240.0);

        let mut constant = ConstantController::new(speed, &cfg.machine).unwrap();
        let sim = run_episode(&cfg, scenario.clone(), speed, &mut constant).unwrap();
        let r = oee_report(&sim.metrics).unwrap();
        assert_eq!((r.performance, r.quality), (100.0, 100.0), "constant");

        let mut baseline = BaselineController::new(&cfg);
        let sim = run_episode(&cfg, scenario, speed, &mut baseline).unwrap();
        let r = oee_report(&sim.metrics).unwrap();
        assert_eq!((r.performance, r.quality), (100.0, 100.0), "baseline");
        // And it actually tracked the matched speed.
        let cmds = &sim.metrics.commanded_speed;
        assert!(cmds.iter().all(|&v| (v - speed).abs() < 0.02), "{cmds:?}");
    }

    #[test]
    fn baseline_dips_late_under_inflow_drop() {
        let cfg = config();
        // Sustained inflow collapse: the trailing estimate lags, the critical
        // rule eventually slams the belt to minimum speed.
        let scenario = piecewise_scenario(&[(120.0, 135.0), (120.0, 40.0), (120.0, 135.0)], &cfg);
        let initial = cfg.machine.matched_speed(270.0);
        let mut baseline = BaselineController::new(&cfg);
        let sim = run_episode(&cfg, scenario, initial, &mut baseline).unwrap();
        let cmds = &sim.metrics.commanded_speed;
        assert!(
            cmds.iter().any(|&v| v <= cfg.machine.box_speed_min + 1e-9),
            "no drastic dip: {cmds:?}"
        );
        let distinct: std::collections::BTreeSet<i64> =
            cmds.iter().map(|&v| (v * 1000.0).round() as i64).collect();
        assert!(distinct.len() >= 3, "command ladder too static: {distinct:?}");
    }
}
