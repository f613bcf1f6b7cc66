//! Baseline central controller issuing one homogeneous set point per group.
//!
//! The controller sees each group only as an aggregate: its potential is the
//! sum of members' last output divided by last ratio, and every member gets
//! the same per-unit order, `alpha_g × group estimate` spread by rating. A
//! shaded member cannot meet its order and the unshaded members are not asked
//! to make up the difference, so heterogeneous shading shows up as
//! under-delivery.

use thiserror::Error;

use crate::control::{estimate_impp, InverterCommand, DEFAULT_ALPHA_FLOOR};

#[derive(Debug, Error, PartialEq)]
pub enum GroupingError {
    #[error("grouping configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingConfig {
    pub groups: Vec<Vec<usize>>,
    pub headroom_fraction: f64,
}

impl GroupingConfig {
    pub fn validate(&self, n: usize) -> Result<(), GroupingError> {
        if !(0.0..1.0).contains(&self.headroom_fraction) {
            return Err(GroupingError::Config(format!(
                "headroom_fraction {} outside [0, 1)",
                self.headroom_fraction
            )));
        }
        let mut seen = vec![false; n];
        for &m in self.groups.iter().flatten() {
            if m >= n || seen[m] {
                return Err(GroupingError::Config(format!("groups do not partition 0..{n} (inverter {m})")));
            }
            seen[m] = true;
        }
        if seen.iter().any(|s| !s) || self.groups.iter().any(Vec::is_empty) {
            return Err(GroupingError::Config(format!("groups do not partition 0..{n}")));
        }
        Ok(())
    }
}

/// Output to aim for while keeping `headroom_fraction` of estimated potential
/// in reserve.
pub fn headroom_target(group_impp_est: &[f64], headroom_fraction: f64) -> f64 {
    (1.0 - headroom_fraction) * group_impp_est.iter().sum::<f64>()
}

/// One curtailment ratio per group: each group covers its share of
/// `p_desired` in proportion to its estimated potential. A group with no
/// estimated potential passes through at 1.
pub fn group_alphas(p_desired: f64, group_impp_est: &[f64], alpha_floor: f64) -> Vec<f64> {
    let total: f64 = group_impp_est.iter().sum();
    group_impp_est
        .iter()
        .map(|&est| {
            if est <= 0.0 || total <= 0.0 {
                return 1.0;
            }
            let share = est / total;
            (share * p_desired.max(0.0) / est).clamp(alpha_floor, 1.0)
        })
        .collect()
}

/// Per-group and per-member set points for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupingPlan {
    pub group_impp_est: Vec<f64>,
    pub group_alpha: Vec<f64>,
    /// Each member's slice of its group's estimate, by rating.
    pub member_impp_est: Vec<f64>,
    /// The group's ratio, repeated for every member.
    pub member_alpha: Vec<f64>,
    /// kW ordered from each member: `member_alpha × member_impp_est`.
    pub orders: Vec<f64>,
}

impl GroupingPlan {
    /// kW orders for curtailed members. A group at `alpha = 1` passes
    /// through: its members run unconstrained, which also lets a group whose
    /// estimate collapsed to zero (e.g. overnight) recover.
    pub fn commands(&self) -> Vec<InverterCommand> {
        self.orders
            .iter()
            .zip(&self.member_alpha)
            .map(|(&kw, &a)| if a >= 1.0 { InverterCommand::Ratio(1.0) } else { InverterCommand::Limit(kw) })
            .collect()
    }

    pub fn planned_output(&self) -> f64 {
        self.orders.iter().sum()
    }
}

/// Set points for all inverters given group estimates. `ratings` weight how a
/// group's order is split among its members.
pub fn grouping_step(
    p_desired: f64,
    group_impp_est: &[f64],
    cfg: &GroupingConfig,
    ratings: &[f64],
    alpha_floor: f64,
) -> Result<GroupingPlan, GroupingError> {
    let n = ratings.len();
    cfg.validate(n)?;
    if group_impp_est.len() != cfg.groups.len() {
        return Err(GroupingError::Config(format!(
            "{} group estimates for {} groups",
            group_impp_est.len(),
            cfg.groups.len()
        )));
    }
    let group_alpha = group_alphas(p_desired, group_impp_est, alpha_floor);
    let mut member_impp_est = vec![0.0; n];
    let mut member_alpha = vec![1.0; n];
    for ((members, &est), &alpha) in cfg.groups.iter().zip(group_impp_est).zip(&group_alpha) {
        let total_rating: f64 = members.iter().map(|&m| ratings[m]).sum();
        for &m in members {
            member_impp_est[m] = if total_rating > 0.0 { est * ratings[m] / total_rating } else { 0.0 };
            member_alpha[m] = alpha;
        }
    }
    let orders = member_impp_est.iter().zip(&member_alpha).map(|(e, a)| e * a).collect();
    Ok(GroupingPlan { group_impp_est: group_impp_est.to_vec(), group_alpha, member_impp_est, member_alpha, orders })
}

/// Stateful grouping controller: aggregates member feedback into group
/// estimates and plans one step at a time.
#[derive(Debug, Clone)]
pub struct GroupingController {
    cfg: GroupingConfig,
    ratings: Vec<f64>,
    alpha_floor: f64,
    prev_output: Vec<f64>,
    prev_ratio: Vec<f64>,
    bootstrapped: bool,
}

impl GroupingController {
    pub fn new(cfg: GroupingConfig, ratings: Vec<f64>) -> Result<Self, GroupingError> {
        cfg.validate(ratings.len())?;
        if ratings.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(GroupingError::Config("inverter ratings must be positive".into()));
        }
        let n = ratings.len();
        Ok(Self {
            cfg,
            ratings,
            alpha_floor: DEFAULT_ALPHA_FLOOR,
            prev_output: vec![0.0; n],
            prev_ratio: vec![1.0; n],
            bootstrapped: false,
        })
    }

    pub fn with_alpha_floor(mut self, alpha_floor: f64) -> Self {
        self.alpha_floor = alpha_floor;
        self
    }

    pub fn config(&self) -> &GroupingConfig {
        &self.cfg
    }

    pub fn bootstrap(&mut self, outputs: &[f64], ratios: &[f64]) -> Result<(), GroupingError> {
        self.observe(outputs, ratios)?;
        self.bootstrapped = true;
        Ok(())
    }

    /// Group-level potential from last step's member outputs and ratios.
    pub fn group_estimates(&self) -> Vec<f64> {
        self.cfg
            .groups
            .iter()
            .map(|members| {
                members.iter().map(|&m| estimate_impp(self.prev_output[m], self.prev_ratio[m], self.alpha_floor)).sum()
            })
            .collect()
    }

    pub fn step(&mut self, p_desired: f64) -> Result<GroupingPlan, GroupingError> {
        if !self.bootstrapped {
            return Err(GroupingError::Config("controller stepped before bootstrap".into()));
        }
        grouping_step(p_desired, &self.group_estimates(), &self.cfg, &self.ratings, self.alpha_floor)
    }

    pub fn observe(&mut self, outputs: &[f64], ratios: &[f64]) -> Result<(), GroupingError> {
        let n = self.ratings.len();
        if outputs.len() != n || ratios.len() != n {
            return Err(GroupingError::Config(format!("observation does not cover {n} inverters")));
        }
        self.prev_output.copy_from_slice(outputs);
        self.prev_ratio.copy_from_slice(ratios);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_group(n: usize) -> GroupingConfig {
        GroupingConfig { groups: vec![(0..n).collect()], headroom_fraction: 0.2 }
    }

    #[test]
    fn proportional_members_get_uniform_ratio() {
        let plan = grouping_step(640.0, &[800.0], &one_group(2), &[500.0, 300.0], 0.01).unwrap();
        assert_eq!(plan.group_alpha, vec![0.8]);
        let out: Vec<f64> = plan.commands().iter().zip([500.0, 300.0]).map(|(c, cap)| c.realize(cap).0).collect();
        assert_eq!(out, vec![400.0, 240.0]);
    }

    #[test]
    fn shaded_member_under_delivers_its_order() {
        let plan = grouping_step(640.0, &[800.0], &one_group(2), &[400.0, 400.0], 0.01).unwrap();
        let caps = [400.0, 0.0];
        let out: f64 = plan.commands().iter().zip(caps).map(|(c, cap)| c.realize(cap).0).sum();
        assert_eq!(640.0 - out, plan.member_alpha[1] * plan.member_impp_est[1]);
    }

    #[test]
    fn zero_group_passes_through() {
        assert_eq!(group_alphas(100.0, &[0.0, 200.0], 0.01), vec![1.0, 0.5]);
        assert_eq!(group_alphas(100.0, &[0.0, 0.0], 0.01), vec![1.0, 1.0]);
    }

    #[test]
    fn headroom_mode_target() {
        assert!((headroom_target(&[500.0, 500.0], 0.2) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_partition_rejected() {
        let cfg = GroupingConfig { groups: vec![vec![0]], headroom_fraction: 0.2 };
        assert!(cfg.validate(2).is_err());
        let cfg = GroupingConfig { groups: vec![vec![0, 1]], headroom_fraction: 1.0 };
        assert!(cfg.validate(2).is_err());
    }

    #[test]
    fn controller_recovers_from_zero_estimate() {
        let mut ctrl = GroupingController::new(one_group(2), vec![470.0, 470.0]).unwrap();
        ctrl.bootstrap(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let plan = ctrl.step(100.0).unwrap();
        let (out, ratio): (Vec<f64>, Vec<f64>) =
            plan.commands().iter().zip([50.0, 80.0]).map(|(c, cap)| c.realize(cap)).unzip();
        assert_eq!(out, vec![50.0, 80.0]);
        ctrl.observe(&out, &ratio).unwrap();
        assert_eq!(ctrl.group_estimates(), vec![130.0]);
    }
}
