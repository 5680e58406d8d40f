//! The action-delay pipeline: delayed speed commands, the rate-limited
//! actuator, and future-observation matching.
//!
//! A command decided at tick `k` becomes effective at tick `k + round((γ+δ)/Δk)`.
//! The planned delay δ is sized so every command takes effect only after the
//! pick windows of all schedules that existed when it was decided, so the
//! agent never interferes with the machine's own scheduling. Observation
//! matching compensates: the agent is fed the observation of the tick its
//! action will actually meet, produced by rolling a shadow copy of the
//! deterministic simulation forward through the already-enqueued commands.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::config::EnvConfig;
use crate::env::{featurize, Observation};
use crate::error::{Error, Result};
use crate::sim::Simulation;

/// A speed command stamped with its decision and execution ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayedAction {
    pub speed: f64,
    pub decided_at: u32,
    pub effective_at: u32,
}

/// Commands ordered by effective tick. Between effective times the belt holds
/// the most recent effective command.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ActionQueue {
    pending: VecDeque<DelayedAction>,
}

impl ActionQueue {
    pub fn enqueue(
        &mut self,
        speed: f64,
        decided_at: u32,
        delay_ticks: u32,
        min: f64,
        max: f64,
    ) -> Result<DelayedAction> {
        if speed < min || speed > max {
            return Err(Error::SpeedOutOfRange {
                commanded: speed,
                min,
                max,
            });
        }
        let action = DelayedAction {
            speed,
            decided_at,
            effective_at: decided_at + delay_ticks,
        };
        debug_assert!(self
            .pending
            .back()
            .is_none_or(|last| last.effective_at <= action.effective_at));
        self.pending.push_back(action);
        Ok(action)
    }

    /// Pop every command matured at `tick` and return the latest target.
    pub fn mature(&mut self, tick: u32) -> Option<f64> {
        let mut target = None;
        while let Some(front) = self.pending.front() {
            if front.effective_at > tick {
                break;
            }
            target = Some(front.speed);
            self.pending.pop_front();
        }
        target
    }

    pub fn pending(&self) -> impl Iterator<Item = &DelayedAction> {
        self.pending.iter()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

/// Rate-limited speed actuator: moves toward the current target by at most
/// `box_accel_max · dt` per physics sub-step, so the acceleration constraint
/// holds by construction for every controller.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Actuator {
    pub current: f64,
    pub target: f64,
}

impl Actuator {
    pub fn new(initial: f64) -> Self {
        Self {
            current: initial,
            target: initial,
        }
    }

    pub fn set_target(&mut self, target: f64) {
        self.target = target;
    }

    /// Advance one sub-step and return the speed used for motion.
    pub fn substep(&mut self, accel_max: f64, dt: f64) -> f64 {
        let max_delta = accel_max * dt;
        let delta = (self.target - self.current).clamp(-max_delta, max_delta);
        self.current += delta;
        self.current
    }
}

/// The observation the machine will exhibit `γ+δ` after the current tick,
/// computed by rolling a shadow copy of the simulation forward through the
/// already-enqueued command queue. The live simulation is untouched.
///
/// Commands affecting the rolled interval were all decided at least one full
/// delay before it, so the shadow never needs an action that has not been
/// enqueued yet; the delay configuration is validated against the schedule
/// horizon at load time.
pub fn matched_observation(sim: &Simulation, env: &EnvConfig) -> Observation {
    let mut shadow = sim.shadow_clone();
    for _ in 0..sim.delay_ticks() {
        shadow.step_tick();
    }
    featurize(&shadow, env)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamp_arithmetic() {
        let mut q = ActionQueue::default();
        let a = q.enqueue(0.1, 5, 12, 0.02, 0.3).unwrap();
        assert_eq!(a.effective_at, 17);
    }

    #[test]
    fn zero_delay_is_identity() {
        let mut q = ActionQueue::default();
        let a = q.enqueue(0.1, 7, 0, 0.02, 0.3).unwrap();
        assert_eq!(a.effective_at, a.decided_at);
    }

    #[test]
    fn out_of_range_command_rejected() {
        let mut q = ActionQueue::default();
        assert!(q.enqueue(0.5, 0, 0, 0.02, 0.3).is_err());
        assert!(q.enqueue(0.01, 0, 0, 0.02, 0.3).is_err());
    }

    #[test]
    fn queue_replay_timeline() {
        // Two commands decided at k=5 and k=6 with a 12-tick delay: the belt
        // holds its previous speed through k=16, the first command governs
        // [17, 18), the second from 18.
        let mut q = ActionQueue::default();
        q.enqueue(0.10, 5, 12, 0.02, 0.3).unwrap();
        q.enqueue(0.20, 6, 12, 0.02, 0.3).unwrap();
        let mut speed = 0.05;
        let mut timeline = Vec::new();
        for tick in 0..20u32 {
            if let Some(t) = q.mature(tick) {
                speed = t;
            }
            timeline.push(speed);
        }
        for &s in &timeline[..17] {
            assert_eq!(s, 0.05);
        }
        assert_eq!(timeline[17], 0.10);
        assert_eq!(timeline[18], 0.20);
        assert_eq!(timeline[19], 0.20);
    }

    #[test]
    fn actuator_ramps_at_accel_limit() {
        // 0.1 -> 0.3 with a_max = 0.05 and dt = 0.05: 0.0025 per sub-step,
        // target reached after 80 sub-steps.
        let mut act = Actuator::new(0.1);
        act.set_target(0.3);
        for i in 1..=80 {
            let v = act.substep(0.05, 0.05);
            assert!(v <= 0.3 + 1e-15);
            if i < 80 {
                assert!(v < 0.3);
            }
        }
        assert!((act.current - 0.3).abs() < 1e-12);
    }

    #[test]
    fn actuator_zero_ramp_at_target() {
        let mut act = Actuator::new(0.2);
        act.set_target(0.2);
        assert_eq!(act.substep(0.05, 0.05), 0.2);
    }

    #[test]
    fn no_matured_command_keeps_previous_speed() {
        let mut q = ActionQueue::default();
        q.enqueue(0.25, 3, 10, 0.02, 0.3).unwrap();
        assert_eq!(q.mature(5), None);
        assert_eq!(q.mature(13), Some(0.25));
    }
}
