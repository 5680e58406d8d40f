//! The machine's internal control system: product-to-robot assignment,
//! pick/place schedules with execution windows, and robot execution.
//!
//! Assignment and pick timing depend only on the product flow and the constant
//! product belt speed, never on the box belt. Pick times are fixed when a
//! schedule is created, so the pick event log is invariant to box belt speed
//! commands; only placement timing (and therefore losses) responds to speed.
//! The box a held product lands in is chosen at place time: the most
//! downstream box of the robot's pair that is inside the workspace and still
//! has capacity in the robot's layer.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::config::MachineConfig;
use crate::machine::{
    BoxStatus, BoxUnit, LayerRole, ProductId, ProductStatus, ProductUnit, RobotState,
};

/// A pick-and-place job for one product, with execution window anchors.
///
/// `c1`/`c3` bound the pick window in time (product enters the first robot
/// workspace / leaves the last robot workspace); `c2` is the earliest place
/// time; `c4` is the latest box position at which a place is still possible
/// (the downstream edge of the executing robot's workspace) — its time
/// equivalent depends on the box belt speed and is never fixed here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schedule {
    pub id: u64,
    pub robot: u8,
    pub product: ProductId,
    /// Sub-step at which the schedule was created.
    pub created_at: i64,
    pub c1: i64,
    pub c2: i64,
    pub c3: i64,
    /// Latest place position [m].
    pub c4: f64,
    /// Sub-step at which the pick fires; fixed at creation, within [c1, c3].
    pub pick_at: i64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct PickJob {
    pick_at: i64,
    product: ProductId,
    schedule: u64,
}

/// Pick/place/schedule events emitted for the audit log.
#[derive(Debug, Clone, PartialEq)]
pub enum RobotEvent {
    Pick {
        substep: i64,
        robot: u8,
        product: ProductId,
        schedule: u64,
    },
    Place {
        substep: i64,
        robot: u8,
        product: ProductId,
        box_id: u64,
    },
    /// A held product dropped because its robot's next scheduled pick fired
    /// before any reachable box had capacity. Counts as lost.
    Displaced {
        substep: i64,
        robot: u8,
        product: ProductId,
    },
}

/// Deterministic scheduler state: per-robot pick chains and pending jobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchedulerState {
    next_schedule_id: u64,
    /// Earliest sub-step at which each robot can start another pick cycle.
    projected_free: [i64; 4],
    /// Rotation pointer distributing products across feasible robots.
    rotation: usize,
    pending: [VecDeque<PickJob>; 4],
    /// Geometry offsets in sub-steps, precomputed from the machine config.
    enter_offset: [i64; 4],
    exit_offset: [i64; 4],
    c1_offset: i64,
    c3_offset: i64,
    cycle_substeps: i64,
}

impl SchedulerState {
    pub fn new(cfg: &MachineConfig) -> Self {
        let mut enter_offset = [0i64; 4];
        let mut exit_offset = [0i64; 4];
        for (i, ws) in cfg.robot_workspaces.iter().enumerate() {
            enter_offset[i] = cfg.product_travel_substeps(ws[0]);
            exit_offset[i] = cfg.product_travel_substeps(ws[1]);
        }
        Self {
            next_schedule_id: 0,
            projected_free: [0; 4],
            rotation: 0,
            pending: Default::default(),
            enter_offset,
            exit_offset,
            c1_offset: cfg.product_travel_substeps(cfg.first_workspace_start()),
            c3_offset: cfg.product_travel_substeps(cfg.last_workspace_end()),
            cycle_substeps: (cfg.robot_cycle_time / cfg.physics_subtick).round() as i64,
        }
    }

    /// Assign every unassigned product that can still be picked, emitting one
    /// schedule per assignment. Called once per control tick.
    ///
    /// Robots are tried in rotation order; a robot is feasible when its
    /// projected free time allows the pick while the product crosses its
    /// workspace. Products with no feasible robot stay unassigned and are
    /// retried next tick (they may eventually be lost at checkout).
    pub fn assign_entities(
        &mut self,
        now: i64,
        cfg: &MachineConfig,
        products: &mut [ProductUnit],
        mut on_schedule: impl FnMut(&Schedule),
    ) {
        for product in products.iter_mut() {
            if product.status != ProductStatus::OnBelt {
                continue;
            }
            for attempt in 0..4 {
                let r = (self.rotation + attempt) % 4;
                let enter = product.detected_at + self.enter_offset[r];
                let exit = product.detected_at + self.exit_offset[r];
                let pick_at = enter.max(self.projected_free[r]).max(now + 1);
                if pick_at > exit {
                    continue;
                }
                self.projected_free[r] = pick_at + self.cycle_substeps;
                self.rotation = (r + 1) % 4;
                product.status = ProductStatus::Assigned;
                product.assigned_robot = Some(r as u8);
                let schedule = Schedule {
                    id: self.next_schedule_id,
                    robot: r as u8,
                    product: product.id,
                    created_at: now,
                    c1: product.detected_at + self.c1_offset,
                    c2: product.detected_at + self.c1_offset,
                    c3: product.detected_at + self.c3_offset,
                    c4: cfg.robot_workspaces[r][1],
                    pick_at,
                };
                self.next_schedule_id += 1;
                self.pending[r].push_back(PickJob {
                    pick_at,
                    product: product.id,
                    schedule: schedule.id,
                });
                on_schedule(&schedule);
                break;
            }
        }
    }

    /// Execute one sub-step of robot work: places for holding robots, then any
    /// picks due now, then places again so a pick and its place may land in
    /// the same sub-step when the box is already underneath.
    pub fn execute_robots(
        &mut self,
        now: i64,
        cfg: &MachineConfig,
        robots: &mut [RobotState; 4],
        products: &mut [ProductUnit],
        boxes: &mut [BoxUnit],
        events: &mut Vec<RobotEvent>,
    ) {
        for r in 0..4 {
            try_place(now, cfg, &mut robots[r], products, boxes, events);
        }
        for r in 0..4 {
            while let Some(job) = self.pending[r].front().copied() {
                if job.pick_at > now {
                    break;
                }
                self.pending[r].pop_front();
                // Displace a still-held product: the scheduled pick takes
                // priority so the pick chain never slips.
                if let Some(held) = robots[r].held_product.take() {
                    if let Some(p) = products.iter_mut().find(|p| p.id == held) {
                        p.status = ProductStatus::Lost;
                    }
                    events.push(RobotEvent::Displaced {
                        substep: now,
                        robot: r as u8,
                        product: held,
                    });
                }
                let Some(p) = products.iter_mut().find(|p| p.id == job.product) else {
                    continue;
                };
                if p.status != ProductStatus::Assigned {
                    continue;
                }
                p.status = ProductStatus::HeldByRobot;
                robots[r].held_product = Some(p.id);
                robots[r].busy_until = robots[r].busy_until.max(now + self.cycle_substeps);
                events.push(RobotEvent::Pick {
                    substep: now,
                    robot: r as u8,
                    product: p.id,
                    schedule: job.schedule,
                });
                try_place(now, cfg, &mut robots[r], products, boxes, events);
            }
        }
    }

    /// Sub-step of the earliest still-pending pick, if any.
    pub fn next_pending_pick(&self) -> Option<i64> {
        self.pending
            .iter()
            .filter_map(|q| q.front().map(|j| j.pick_at))
            .min()
    }
}

/// Place a held product into the most downstream box of the robot's pair that
/// is inside the workspace with capacity left in the robot's layer. Top layers
/// only accept products once the bottom layer is complete.
fn try_place(
    now: i64,
    cfg: &MachineConfig,
    robot: &mut RobotState,
    products: &mut [ProductUnit],
    boxes: &mut [BoxUnit],
    events: &mut Vec<RobotEvent>,
) {
    let Some(held) = robot.held_product else {
        return;
    };
    let layer = robot.layer_role.index();
    let robot_pair = if robot.id < 2 {
        crate::machine::RobotPair::A
    } else {
        crate::machine::RobotPair::B
    };
    let mut best: Option<usize> = None;
    for (i, b) in boxes.iter().enumerate() {
        if b.status != BoxStatus::OnBelt
            || b.pair != robot_pair
            || !robot.workspace_contains(b.position)
            || b.position < 0.0
        {
            continue;
        }
        if b.fill[layer] >= cfg.box_capacity_per_layer {
            continue;
        }
        if robot.layer_role == LayerRole::Top
            && b.fill[LayerRole::Bottom.index()] < cfg.box_capacity_per_layer
        {
            continue;
        }
        match best {
            Some(j) if boxes[j].position <= b.position => {}
            _ => best = Some(i),
        }
    }
    let Some(i) = best else {
        return;
    };
    boxes[i].fill[layer] += 1;
    robot.held_product = None;
    if let Some(p) = products.iter_mut().find(|p| p.id == held) {
        p.status = ProductStatus::Packed;
    }
    events.push(RobotEvent::Place {
        substep: now,
        robot: robot.id,
        product: held,
        box_id: boxes[i].id,
    });
}
