//! Three-layer curtailment control.
//!
//! Direct controllers (one per inverter) estimate their own maximum power
//! potential from last step's output and curtailment ratio. Supervisors
//! balance shortfalls inside their cluster, asking the least-correlated members
//! for help first. The adaptive (central) controller receives the plant set
//! point and only gets involved when a whole cluster cannot cover itself.

mod allocate;
mod controller;
mod estimate;
mod schedule;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use allocate::{
    allocate_across_clusters, allocate_within_cluster, control_step, finalize_alphas, Allocation, IterationResult,
};
pub use controller::{setpoint_command, HierarchicalController, InverterCommand};
pub use estimate::{estimate_impp, residual, system_mpp, uniform_request};
pub use schedule::{tick_scheduler, LayerCadences, LayerTicks, TickMode};

/// Lowest curtailment ratio an inverter is ever driven to. Keeps the estimator
/// observable: at `alpha = 0` the previous output carries no information.
pub const DEFAULT_ALPHA_FLOOR: f64 = 0.01;
pub const DEFAULT_MAX_ROUNDS: usize = 10;
/// Relative tolerance on the plant-sum conservation check.
pub const CONVERGENCE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("inverter {inverter}: assigned {p_final} kW exceeds estimated potential {p_impp_est} kW")]
    Infeasible { inverter: usize, p_final: f64, p_impp_est: f64 },
    #[error("iteration {iteration} did not converge in {rounds} rounds (plant sum off target by {gap} kW)")]
    NonConvergence { iteration: u64, rounds: usize, gap: f64, trace: Vec<ControlMessage> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub alpha_floor: f64,
    pub max_rounds: usize,
    pub tick_mode: TickMode,
    pub cadences: LayerCadences,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            alpha_floor: DEFAULT_ALPHA_FLOOR,
            max_rounds: DEFAULT_MAX_ROUNDS,
            tick_mode: TickMode::Instant,
            cadences: LayerCadences::default(),
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.alpha_floor > 0.0 && self.alpha_floor <= 1.0) {
            return Err(ControlError::Config(format!("alpha_floor {} must lie in (0, 1]", self.alpha_floor)));
        }
        if self.max_rounds == 0 {
            return Err(ControlError::Config("max_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

/// One direct controller's view of its inverter during a control iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterState {
    pub id: usize,
    pub p_final_prev: f64,
    pub alpha_prev: f64,
    pub p_impp_est: f64,
    pub p_res: f64,
    pub needs_help: bool,
    pub alpha: f64,
    pub p_final: f64,
}

impl InverterState {
    pub fn new(id: usize, p_final_prev: f64, alpha_prev: f64) -> Self {
        Self {
            id,
            p_final_prev,
            alpha_prev,
            p_impp_est: 0.0,
            p_res: 0.0,
            needs_help: false,
            alpha: alpha_prev,
            p_final: 0.0,
        }
    }
}

/// A supervisor and the aggregate residual of its cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisorState {
    pub id: usize,
    pub members: Vec<usize>,
    pub p_sup: f64,
    pub needs_help: bool,
}

impl SupervisorState {
    pub fn new(id: usize, members: Vec<usize>) -> Self {
        Self { id, members, p_sup: 0.0, needs_help: false }
    }

    /// Recomputes the aggregate residual from member states.
    pub fn aggregate(&mut self, states: &[InverterState]) {
        self.p_sup = self.members.iter().map(|&i| states[i].p_res).sum();
        self.needs_help = self.p_sup < 0.0;
    }
}

/// What the adaptive layer broadcasts at the start of an iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantRequest {
    pub p_desired: f64,
    pub n_inverters: usize,
    pub p_request: f64,
    pub p_mpp_system: f64,
}

impl PlantRequest {
    pub fn new(p_desired: f64, states: &[InverterState]) -> Result<Self, ControlError> {
        Ok(Self {
            p_desired,
            n_inverters: states.len(),
            p_request: uniform_request(p_desired, states.len())?,
            p_mpp_system: system_mpp(states),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    ImppReport,
    HelpRequest,
    HelpGrant,
    SetpointAssignment,
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageKind::ImppReport => "ImppReport",
            MessageKind::HelpRequest => "HelpRequest",
            MessageKind::HelpGrant => "HelpGrant",
            MessageKind::SetpointAssignment => "SetpointAssignment",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentId {
    Inverter(usize),
    Supervisor(usize),
    Central,
}

impl AgentId {
    pub fn is_central(self) -> bool {
        matches!(self, AgentId::Central)
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentId::Inverter(i) => write!(f, "inv{i}"),
            AgentId::Supervisor(c) => write!(f, "sup{c}"),
            AgentId::Central => f.write_str("central"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlMessage {
    pub iteration: u64,
    pub kind: MessageKind,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub amount: f64,
}

impl ControlMessage {
    /// Whether the adaptive layer sent or received this message.
    pub fn involves_central(&self) -> bool {
        self.sender.is_central() || self.receiver.is_central()
    }
}
