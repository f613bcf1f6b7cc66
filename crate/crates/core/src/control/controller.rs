use super::{
    allocate_within_cluster, control_step, estimate_impp, finalize_alphas, residual, Allocation, ControlConfig,
    ControlError, InverterState, IterationResult, PlantRequest, SupervisorState, TickMode,
};
use crate::correlation::NeighborOrder;

/// Set point sent to one inverter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InverterCommand {
    /// Operate at this fraction of whatever is currently available.
    Ratio(f64),
    /// Produce this many kW, or everything available if that is less.
    Limit(f64),
}

impl InverterCommand {
    /// Output (kW) and realized curtailment ratio of an inverter whose true
    /// potential is `capability`. An inverter with nothing available reports
    /// a ratio of 1.
    pub fn realize(self, capability: f64) -> (f64, f64) {
        let cap = capability.max(0.0);
        match self {
            InverterCommand::Ratio(a) => (a * cap, a),
            InverterCommand::Limit(kw) => {
                let out = kw.max(0.0).min(cap);
                (out, if cap > 0.0 { out / cap } else { 1.0 })
            }
        }
    }
}

/// Command carrying a planned kW set point.
pub fn setpoint_command(impp_est: f64, setpoint: f64) -> InverterCommand {
    if impp_est > 0.0 {
        InverterCommand::Limit(setpoint)
    } else {
        InverterCommand::Ratio(1.0)
    }
}

/// Stateful wrapper running [`control_step`] once per simulation step and
/// carrying each inverter's last output and ratio into the next estimate.
#[derive(Debug, Clone)]
pub struct HierarchicalController {
    config: ControlConfig,
    step_secs: u32,
    states: Vec<InverterState>,
    supervisors: Vec<SupervisorState>,
    order: NeighborOrder,
    iteration: u64,
    bootstrapped: bool,
    // Cadenced mode: per-inverter kW set points and per-cluster totals held
    // between supervisor and adaptive decisions.
    held: Vec<f64>,
    cluster_targets: Vec<f64>,
    latched: Option<(f64, PlantRequest)>,
}

impl HierarchicalController {
    /// `clusters` must partition `0..n` for some `n`.
    pub fn new(clusters: Vec<Vec<usize>>, config: ControlConfig) -> Result<Self, ControlError> {
        config.validate()?;
        let n: usize = clusters.iter().map(Vec::len).sum();
        if n == 0 {
            return Err(ControlError::Config("plant has no inverters".into()));
        }
        let mut seen = vec![false; n];
        for &m in clusters.iter().flatten() {
            if m >= n || seen[m] {
                return Err(ControlError::Config(format!("clusters do not partition 0..{n} (inverter {m})")));
            }
            seen[m] = true;
        }
        if clusters.iter().any(Vec::is_empty) {
            return Err(ControlError::Config("empty cluster".into()));
        }
        let supervisors = clusters.into_iter().enumerate().map(|(c, m)| SupervisorState::new(c, m)).collect();
        Ok(Self {
            config,
            step_secs: 1,
            states: (0..n).map(|i| InverterState::new(i, 0.0, 1.0)).collect(),
            supervisors,
            order: NeighborOrder::by_id(n),
            iteration: 0,
            bootstrapped: false,
            held: vec![0.0; n],
            cluster_targets: Vec::new(),
            latched: None,
        })
    }

    /// Simulation step length; needed to place cadenced layer decisions.
    pub fn with_step_secs(mut self, step_secs: u32) -> Result<Self, ControlError> {
        if self.config.tick_mode == TickMode::Cadenced {
            self.config.cadences.validate(step_secs)?;
        }
        self.step_secs = step_secs;
        Ok(self)
    }

    pub fn n_inverters(&self) -> usize {
        self.states.len()
    }

    pub fn config(&self) -> &ControlConfig {
        &self.config
    }

    pub fn clusters(&self) -> Vec<Vec<usize>> {
        self.supervisors.iter().map(|s| s.members.clone()).collect()
    }

    pub fn is_bootstrapped(&self) -> bool {
        self.bootstrapped
    }

    /// Seeds the estimator with an observed output and ratio per inverter,
    /// typically from one step run at `alpha = 1`.
    pub fn bootstrap(&mut self, outputs: &[f64], ratios: &[f64]) -> Result<(), ControlError> {
        self.observe(outputs, ratios)?;
        self.bootstrapped = true;
        Ok(())
    }

    pub fn set_neighbor_order(&mut self, order: NeighborOrder) -> Result<(), ControlError> {
        if order.n() != self.states.len() {
            return Err(ControlError::Config(format!(
                "neighbour order covers {} inverters, plant has {}",
                order.n(),
                self.states.len()
            )));
        }
        self.order = order;
        Ok(())
    }

    pub fn neighbor_order(&self) -> &NeighborOrder {
        &self.order
    }

    /// Plant potential the next step will estimate from current feedback.
    pub fn estimated_potential(&self) -> f64 {
        self.states.iter().map(|s| estimate_impp(s.p_final_prev, s.alpha_prev, self.config.alpha_floor)).sum()
    }

    /// Plans set points for the next step.
    pub fn step(&mut self, p_desired: f64) -> Result<IterationResult, ControlError> {
        if !self.bootstrapped {
            return Err(ControlError::Config("controller stepped before bootstrap".into()));
        }
        let iteration = self.iteration;
        self.iteration += 1;
        let ticks = self.config.cadences.ticks_at(iteration, self.step_secs, self.config.tick_mode);
        if ticks.adaptive || self.latched.is_none() {
            let result = control_step(
                p_desired,
                &mut self.states,
                &mut self.supervisors,
                &self.order,
                &self.config,
                iteration,
            )?;
            self.held = self.states.iter().map(|s| s.p_final).collect();
            self.cluster_targets =
                self.supervisors.iter().map(|s| s.members.iter().map(|&m| self.held[m]).sum()).collect();
            self.latched = Some((result.target, result.request));
            return Ok(result);
        }
        self.hold_step(iteration, ticks.supervisor)
    }

    /// A cadenced step without an adaptive decision: estimates refresh, the
    /// supervisor re-spreads its latched cluster total if it is due, and every
    /// inverter tracks its held kW set point as closely as it can.
    fn hold_step(&mut self, iteration: u64, supervisor_due: bool) -> Result<IterationResult, ControlError> {
        let floor = self.config.alpha_floor;
        let (target, request) = self.latched.expect("latched at first step");
        for s in &mut self.states {
            s.p_impp_est = estimate_impp(s.p_final_prev, s.alpha_prev, floor);
            (s.p_res, s.needs_help) = residual(s.p_impp_est, request.p_request);
        }
        let mut messages = Vec::new();
        if supervisor_due {
            for (c, sup) in self.supervisors.iter().enumerate() {
                let members = &sup.members;
                let available: f64 = members.iter().map(|&m| self.states[m].p_impp_est).sum();
                let share = self.cluster_targets[c].min(available) / members.len() as f64;
                let mut alloc = Allocation { iteration, outstanding: vec![0.0; self.states.len()], messages: Vec::new() };
                for &m in members {
                    let s = &mut self.states[m];
                    s.p_final = s.p_impp_est.min(share);
                    alloc.outstanding[m] = (share - s.p_impp_est).max(0.0);
                }
                allocate_within_cluster(sup, &mut self.states, &self.order, &mut alloc);
                for &m in members {
                    self.held[m] = self.states[m].p_final;
                }
                messages.extend(alloc.messages);
            }
        }
        for (s, &h) in self.states.iter_mut().zip(&self.held) {
            s.p_final = h.min(s.p_impp_est).max(0.0);
        }
        for sup in &mut self.supervisors {
            sup.aggregate(&self.states);
        }
        finalize_alphas(&mut self.states, floor)?;
        let planned: f64 = self.states.iter().map(|s| s.p_final).sum();
        let p_mpp: f64 = self.states.iter().map(|s| s.p_impp_est).sum();
        Ok(IterationResult {
            request: PlantRequest { p_mpp_system: p_mpp, ..request },
            target,
            plant_deficit: (request.p_desired - p_mpp).max(0.0),
            states: self.states.clone(),
            supervisors: self.supervisors.clone(),
            messages,
            converged: (planned - target).abs() <= super::CONVERGENCE_TOL * target.max(1e-9),
            rounds: 0,
        })
    }

    /// kW set points for a planned iteration. An inverter with no estimated
    /// potential runs unconstrained; a zero set point would keep it at zero.
    pub fn commands(result: &IterationResult) -> Vec<InverterCommand> {
        result.states.iter().map(|s| setpoint_command(s.p_impp_est, s.p_final)).collect()
    }

    /// Feeds back what each inverter actually produced and at which ratio.
    pub fn observe(&mut self, outputs: &[f64], ratios: &[f64]) -> Result<(), ControlError> {
        if outputs.len() != self.states.len() || ratios.len() != self.states.len() {
            return Err(ControlError::Config(format!(
                "observation for {} / {} inverters, plant has {}",
                outputs.len(),
                ratios.len(),
                self.states.len()
            )));
        }
        for ((s, &p), &a) in self.states.iter_mut().zip(outputs).zip(ratios) {
            s.p_final_prev = p;
            s.alpha_prev = a;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{LayerCadences, MessageKind};

    fn run_constant(ctrl: &mut HierarchicalController, caps: &[f64], p_desired: f64, steps: usize) -> Vec<f64> {
        let mut totals = Vec::new();
        for _ in 0..steps {
            let r = ctrl.step(p_desired).unwrap();
            let (out, ratio): (Vec<f64>, Vec<f64>) =
                HierarchicalController::commands(&r).iter().zip(caps).map(|(c, &cap)| c.realize(cap)).unzip();
            totals.push(out.iter().sum());
            ctrl.observe(&out, &ratio).unwrap();
        }
        totals
    }

    #[test]
    fn realize_semantics() {
        assert_eq!(InverterCommand::Ratio(0.5).realize(300.0), (150.0, 0.5));
        assert_eq!(InverterCommand::Limit(100.0).realize(400.0), (100.0, 0.25));
        assert_eq!(InverterCommand::Limit(500.0).realize(400.0), (400.0, 1.0));
        assert_eq!(InverterCommand::Limit(500.0).realize(0.0), (0.0, 1.0));
    }

    #[test]
    fn symmetric_plant_curtails_uniformly() {
        let caps = vec![406.08; 6];
        let mut ctrl = HierarchicalController::new(vec![vec![0, 1, 2], vec![3, 4, 5]], ControlConfig::default()).unwrap();
        ctrl.bootstrap(&caps, &[1.0; 6]).unwrap();
        let r = ctrl.step(0.8 * 6.0 * 406.08).unwrap();
        assert!(r.states.iter().all(|s| (s.alpha - 0.8).abs() < 1e-12));
        assert!(r.messages.iter().all(|m| m.kind != MessageKind::HelpRequest));
    }

    #[test]
    fn stepping_before_bootstrap_fails() {
        let mut ctrl = HierarchicalController::new(vec![vec![0]], ControlConfig::default()).unwrap();
        assert!(ctrl.step(1.0).is_err());
    }

    #[test]
    fn bad_partition_rejected() {
        assert!(HierarchicalController::new(vec![vec![0, 1], vec![1]], ControlConfig::default()).is_err());
        assert!(HierarchicalController::new(vec![vec![0, 2]], ControlConfig::default()).is_err());
    }

    #[test]
    fn cadenced_mode_tracks_on_steady_plant() {
        let config = ControlConfig { tick_mode: TickMode::Cadenced, cadences: LayerCadences::default(), ..Default::default() };
        let caps = vec![300.0, 200.0, 100.0, 400.0];
        let mut ctrl = HierarchicalController::new(vec![vec![0, 1], vec![2, 3]], config).unwrap();
        ctrl.bootstrap(&caps, &[1.0; 4]).unwrap();
        let totals = run_constant(&mut ctrl, &caps, 700.0, 130);
        assert!(totals.iter().all(|t| (t - 700.0).abs() < 1e-6));
    }
}
