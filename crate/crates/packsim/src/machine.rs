//! Physical entities of the packaging machine: products, boxes, robots, and
//! the kinematics that move them along the belt axis.
//!
//! A single axis is used for both belts: position = distance upstream of the
//! checkout point, so positions decrease as belts move and an entity has left
//! the machine once its position drops below zero.

use serde::{Deserialize, Serialize};

use crate::config::MachineConfig;
use crate::error::{Error, Result};

pub type ProductId = u64;
pub type BoxId = u64;
pub type RobotId = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProductStatus {
    OnBelt,
    Assigned,
    HeldByRobot,
    Packed,
    Lost,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductUnit {
    pub id: ProductId,
    pub lane: u8,
    /// Distance upstream of checkout [m].
    pub position: f64,
    /// Sub-step at which the product was detected.
    pub detected_at: i64,
    pub status: ProductStatus,
    pub assigned_robot: Option<RobotId>,
}

impl ProductUnit {
    pub fn on_belt(&self) -> bool {
        matches!(self.status, ProductStatus::OnBelt | ProductStatus::Assigned)
    }
}

/// Which robot pair a box is served by. Pair A is (R1, R2), pair B is (R3, R4);
/// boxes alternate between pairs in spawn order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobotPair {
    A,
    B,
}

impl RobotPair {
    pub fn of_box_index(index: u64) -> Self {
        if index.is_multiple_of(2) {
            RobotPair::A
        } else {
            RobotPair::B
        }
    }

    pub fn robots(self) -> [usize; 2] {
        match self {
            RobotPair::A => [0, 1],
            RobotPair::B => [2, 3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxStatus {
    OnBelt,
    Packed,
    LostEmpty,
    LostPartly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxUnit {
    pub id: BoxId,
    /// Distance upstream of checkout [m].
    pub position: f64,
    pub pair: RobotPair,
    /// Fill count per layer, indexed by [`LayerRole`].
    pub fill: [u32; 2],
    pub status: BoxStatus,
}

impl BoxUnit {
    pub fn total_fill(&self) -> u32 {
        self.fill[0] + self.fill[1]
    }
}

/// The layer a robot is responsible for. Within a pair the upstream robot
/// fills the bottom layer and the downstream robot the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerRole {
    Bottom = 0,
    Top = 1,
}

impl LayerRole {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotState {
    /// Robot index 0..4 (R1..R4).
    pub id: RobotId,
    /// Workspace as [upstream_edge, downstream_edge] [m].
    pub workspace: [f64; 2],
    pub layer_role: LayerRole,
    /// Sub-step until which the robot arm is committed to its current cycle.
    pub busy_until: i64,
    pub held_product: Option<ProductId>,
}

impl RobotState {
    pub fn from_config(cfg: &MachineConfig) -> [RobotState; 4] {
        let mut robots = Vec::with_capacity(4);
        for (i, ws) in cfg.robot_workspaces.iter().enumerate() {
            robots.push(RobotState {
                id: i as RobotId,
                workspace: *ws,
                // Upstream robot of each pair takes the bottom layer.
                layer_role: if i % 2 == 0 {
                    LayerRole::Bottom
                } else {
                    LayerRole::Top
                },
                busy_until: 0,
                held_product: None,
            });
        }
        robots.try_into().unwrap()
    }

    pub fn workspace_contains(&self, position: f64) -> bool {
        position <= self.workspace[0] && position >= self.workspace[1]
    }
}

/// Advance all on-belt entities by one physics sub-step.
///
/// Products move at the constant product belt speed; boxes move at the current
/// box belt speed. Nothing else changes.
pub fn advance_positions(
    products: &mut [ProductUnit],
    boxes: &mut [BoxUnit],
    cfg: &MachineConfig,
    box_speed: f64,
    dt: f64,
) -> Result<()> {
    if box_speed < 0.0 || box_speed > cfg.box_speed_max + 1e-12 {
        return Err(Error::SpeedOutOfRange {
            commanded: box_speed,
            min: 0.0,
            max: cfg.box_speed_max,
        });
    }
    let dp = cfg.product_belt_speed * dt;
    for p in products.iter_mut() {
        if p.on_belt() {
            p.position -= dp;
        }
    }
    let db = box_speed * dt;
    for b in boxes.iter_mut() {
        if b.status == BoxStatus::OnBelt {
            b.position -= db;
        }
    }
    Ok(())
}

/// Outcome of evaluating an entity against the checkout point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckoutClass {
    None,
    Packed,
    Lost,
    LostEmpty,
    LostPartly,
}

pub fn classify_product_at_checkout(product: &ProductUnit) -> CheckoutClass {
    if product.position > 0.0 || !product.on_belt() {
        return CheckoutClass::None;
    }
    CheckoutClass::Lost
}

pub fn classify_box_at_checkout(b: &BoxUnit, cfg: &MachineConfig) -> CheckoutClass {
    if b.position > 0.0 || b.status != BoxStatus::OnBelt {
        return CheckoutClass::None;
    }
    let capacity = cfg.box_capacity_per_layer * cfg.layers_per_box;
    if b.total_fill() == 0 {
        CheckoutClass::LostEmpty
    } else if b.total_fill() < capacity {
        CheckoutClass::LostPartly
    } else {
        CheckoutClass::Packed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn product(position: f64) -> ProductUnit {
        ProductUnit {
            id: 0,
            lane: 1,
            position,
            detected_at: 0,
            status: ProductStatus::OnBelt,
            assigned_robot: None,
        }
    }

    fn boxu(position: f64, fill: [u32; 2]) -> BoxUnit {
        BoxUnit {
            id: 0,
            position,
            pair: RobotPair::A,
            fill,
            status: BoxStatus::OnBelt,
        }
    }

    #[test]
    fn product_moves_linearly() {
        let cfg = MachineConfig::default();
        let mut products = vec![product(2.0)];
        let mut boxes = vec![];
        advance_positions(&mut products, &mut boxes, &cfg, 0.1, 0.05).unwrap();
        assert!((products[0].position - 1.985).abs() < 1e-12);
    }

    #[test]
    fn box_at_zero_speed_stays_put() {
        let cfg = MachineConfig::default();
        let mut products = vec![];
        let mut boxes = vec![boxu(1.0, [0, 0])];
        advance_positions(&mut products, &mut boxes, &cfg, 0.0, 0.05).unwrap();
        assert!((boxes[0].position - 1.0).abs() < 1e-15);
    }

    #[test]
    fn repeated_integration_matches_closed_form() {
        // 20 sub-steps at 0.1 m/s and dt = 0.05 s move a box by exactly 0.1 m.
        let cfg = MachineConfig::default();
        let mut products = vec![];
        let mut boxes = vec![boxu(0.5, [0, 0])];
        for _ in 0..20 {
            advance_positions(&mut products, &mut boxes, &cfg, 0.1, 0.05).unwrap();
        }
        let closed_form = 0.5 - 0.1 * 1.0;
        assert!((boxes[0].position - closed_form).abs() < 1e-12);
    }

    #[test]
    fn overspeed_rejected() {
        let cfg = MachineConfig::default();
        let mut products = vec![];
        let mut boxes = vec![];
        let err = advance_positions(&mut products, &mut boxes, &cfg, 0.31, 0.05);
        assert!(matches!(err, Err(Error::SpeedOutOfRange { .. })));
    }

    #[test]
    fn checkout_classification() {
        let cfg = MachineConfig::default();
        assert_eq!(
            classify_box_at_checkout(&boxu(-0.01, [5, 5]), &cfg),
            CheckoutClass::Packed
        );
        assert_eq!(
            classify_box_at_checkout(&boxu(-0.01, [0, 0]), &cfg),
            CheckoutClass::LostEmpty
        );
        assert_eq!(
            classify_box_at_checkout(&boxu(-0.01, [5, 2]), &cfg),
            CheckoutClass::LostPartly
        );
        assert_eq!(
            classify_box_at_checkout(&boxu(0.2, [0, 0]), &cfg),
            CheckoutClass::None
        );
        assert_eq!(
            classify_product_at_checkout(&product(-0.01)),
            CheckoutClass::Lost
        );
        assert_eq!(classify_product_at_checkout(&product(0.2)), CheckoutClass::None);
    }
}
