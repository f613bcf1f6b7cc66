use super::{
    estimate_impp, residual, AgentId, ControlConfig, ControlError, ControlMessage, InverterState, MessageKind,
    PlantRequest, SupervisorState, CONVERGENCE_TOL,
};
use crate::correlation::NeighborOrder;

/// Slack allowed when checking `p_final <= p_impp_est` after float arithmetic.
const FEASIBILITY_SLACK: f64 = 1e-9;

/// Bookkeeping shared by the allocation passes of one iteration: each
/// inverter's still-uncovered shortfall and the message trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub iteration: u64,
    pub outstanding: Vec<f64>,
    pub messages: Vec<ControlMessage>,
}

impl Allocation {
    /// Sets every provisional output to `min(p_impp_est, p_request)` and
    /// records each deficit inverter's shortfall.
    pub fn start(states: &mut [InverterState], p_request: f64, iteration: u64) -> Self {
        let outstanding = states
            .iter_mut()
            .map(|s| {
                s.p_final = s.p_impp_est.min(p_request);
                (p_request - s.p_impp_est).max(0.0)
            })
            .collect();
        Self { iteration, outstanding, messages: Vec::new() }
    }

    fn send(&mut self, kind: MessageKind, sender: AgentId, receiver: AgentId, amount: f64) {
        self.messages.push(ControlMessage { iteration: self.iteration, kind, sender, receiver, amount });
    }

    /// Moves up to `limit` kW of `requester`'s outstanding shortfall onto
    /// `donors`, least-correlated first. Returns the amount moved.
    fn draw(
        &mut self,
        states: &mut [InverterState],
        requester: usize,
        donors: impl Iterator<Item = usize>,
        mut limit: f64,
    ) -> f64 {
        let mut moved = 0.0;
        for d in donors {
            let want = self.outstanding[requester].min(limit);
            if want <= 0.0 {
                break;
            }
            let headroom = states[d].p_impp_est - states[d].p_final;
            if headroom <= 0.0 {
                continue;
            }
            let give = want.min(headroom);
            states[d].p_final += give;
            self.outstanding[requester] -= give;
            limit -= give;
            moved += give;
            self.send(MessageKind::HelpGrant, AgentId::Inverter(d), AgentId::Inverter(requester), give);
        }
        moved
    }
}

/// Covers the shortfalls of a cluster's deficit members from the headroom of
/// the other members. Requesters are served in ascending id; each visits
/// donors in its own neighbour order restricted to the cluster. Returns the
/// shortfall the cluster could not cover.
pub fn allocate_within_cluster(
    supervisor: &SupervisorState,
    states: &mut [InverterState],
    order: &NeighborOrder,
    alloc: &mut Allocation,
) -> f64 {
    let mut members = supervisor.members.clone();
    members.sort_unstable();
    let mut in_cluster = vec![false; states.len()];
    for &m in &members {
        in_cluster[m] = true;
    }
    for &r in &members {
        let need = alloc.outstanding[r];
        if need <= 0.0 {
            continue;
        }
        alloc.send(MessageKind::HelpRequest, AgentId::Inverter(r), AgentId::Supervisor(supervisor.id), need);
        let donors = order.of(r).iter().copied().filter(|&d| in_cluster[d]);
        alloc.draw(states, r, donors, f64::INFINITY);
    }
    members.iter().map(|&m| alloc.outstanding[m]).sum()
}

/// Covers what the clusters could not cover themselves. Each cluster left in
/// deficit asks the central controller, which splits `min(total deficit,
/// total headroom)` across the other clusters in proportion to their
/// headroom. Each donor cluster places its share by walking the outstanding
/// requesters in ascending id, drawing from its own members in the
/// requester's neighbour order. Returns `max(0, p_desired - p_mpp_system)`.
pub fn allocate_across_clusters(
    supervisors: &[SupervisorState],
    states: &mut [InverterState],
    order: &NeighborOrder,
    p_desired: f64,
    alloc: &mut Allocation,
) -> f64 {
    let deficit_of = |alloc: &Allocation, s: &SupervisorState| -> f64 {
        s.members.iter().map(|&m| alloc.outstanding[m]).sum()
    };
    let headroom_of = |states: &[InverterState], s: &SupervisorState| -> f64 {
        s.members.iter().map(|&m| (states[m].p_impp_est - states[m].p_final).max(0.0)).sum()
    };

    let deficits: Vec<f64> = supervisors.iter().map(|s| deficit_of(alloc, s)).collect();
    let total_deficit: f64 = deficits.iter().sum();
    let p_mpp: f64 = states.iter().map(|s| s.p_impp_est).sum();
    let plant_deficit = (p_desired - p_mpp).max(0.0);
    if total_deficit <= 0.0 {
        return plant_deficit;
    }
    for (s, &d) in supervisors.iter().zip(&deficits) {
        if d > 0.0 {
            alloc.send(MessageKind::HelpRequest, AgentId::Supervisor(s.id), AgentId::Central, d);
        }
    }

    let headrooms: Vec<f64> = supervisors
        .iter()
        .zip(&deficits)
        .map(|(s, &d)| if d > 0.0 { 0.0 } else { headroom_of(states, s) })
        .collect();
    let total_headroom: f64 = headrooms.iter().sum();
    let give = total_deficit.min(total_headroom);
    if give <= 0.0 {
        return plant_deficit;
    }

    let mut requesters: Vec<usize> = (0..states.len()).filter(|&i| alloc.outstanding[i] > 0.0).collect();
    requesters.sort_unstable();
    for (b, s) in supervisors.iter().enumerate() {
        if headrooms[b] <= 0.0 {
            continue;
        }
        let share = (give * headrooms[b] / total_headroom).min(headrooms[b]);
        alloc.send(MessageKind::HelpRequest, AgentId::Central, AgentId::Supervisor(s.id), share);
        let mut in_b = vec![false; states.len()];
        for &m in &s.members {
            in_b[m] = true;
        }
        let mut left = share;
        for &r in &requesters {
            if left <= 0.0 {
                break;
            }
            let donors = order.of(r).iter().copied().filter(|&d| in_b[d]);
            left -= alloc.draw(states, r, donors, left);
        }
        alloc.send(MessageKind::HelpGrant, AgentId::Supervisor(s.id), AgentId::Central, share - left);
    }
    for (s, &d) in supervisors.iter().zip(&deficits) {
        if d > 0.0 {
            let covered = d - deficit_of(alloc, s);
            alloc.send(MessageKind::HelpGrant, AgentId::Central, AgentId::Supervisor(s.id), covered);
        }
    }
    plant_deficit
}

/// Converts provisional outputs into curtailment ratios.
///
/// An inverter whose ratio would fall below `alpha_floor` is held at the floor
/// and the extra output is taken back from the others in proportion to how
/// far each sits above its own floor. An inverter with no estimated potential
/// runs unconstrained (`alpha = 1`) so the estimator can see it recover.
pub fn finalize_alphas(states: &mut [InverterState], alpha_floor: f64) -> Result<Vec<(f64, f64)>, ControlError> {
    let mut excess = 0.0;
    let mut clamped = vec![false; states.len()];
    for (i, s) in states.iter_mut().enumerate() {
        if s.p_final > s.p_impp_est * (1.0 + FEASIBILITY_SLACK) + FEASIBILITY_SLACK {
            return Err(ControlError::Infeasible { inverter: s.id, p_final: s.p_final, p_impp_est: s.p_impp_est });
        }
        s.p_final = s.p_final.clamp(0.0, s.p_impp_est.max(0.0));
        let floor = alpha_floor * s.p_impp_est;
        if s.p_impp_est > 0.0 && s.p_final < floor {
            excess += floor - s.p_final;
            s.p_final = floor;
            clamped[i] = true;
        }
    }
    if excess > 0.0 {
        let margins: Vec<f64> = states
            .iter()
            .zip(&clamped)
            .map(|(s, &c)| if c { 0.0 } else { (s.p_final - alpha_floor * s.p_impp_est).max(0.0) })
            .collect();
        let total: f64 = margins.iter().sum();
        if total > 0.0 {
            let frac = (excess / total).min(1.0);
            for (s, m) in states.iter_mut().zip(&margins) {
                s.p_final -= m * frac;
            }
        }
    }
    Ok(states
        .iter_mut()
        .map(|s| {
            s.alpha = if s.p_impp_est > 0.0 {
                (s.p_final / s.p_impp_est).clamp(alpha_floor, 1.0)
            } else {
                1.0
            };
            (s.alpha, s.p_final)
        })
        .collect())
}

/// Outcome of one control iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationResult {
    pub request: PlantRequest,
    /// Plant output the iteration aimed for: `p_desired` clamped into what the
    /// estimated potentials and the ratio floor allow.
    pub target: f64,
    pub plant_deficit: f64,
    pub states: Vec<InverterState>,
    pub supervisors: Vec<SupervisorState>,
    pub messages: Vec<ControlMessage>,
    pub converged: bool,
    pub rounds: usize,
}

impl IterationResult {
    pub fn planned_output(&self) -> f64 {
        self.states.iter().map(|s| s.p_final).sum()
    }
}

fn plant_gap(states: &[InverterState], target: f64) -> f64 {
    target - states.iter().map(|s| s.p_final).sum::<f64>()
}

fn within_tolerance(gap: f64, target: f64) -> bool {
    gap.abs() <= CONVERGENCE_TOL * target.abs().max(1e-9)
}

/// Spreads a residual plant-sum error over every inverter: a shortfall in
/// proportion to headroom, an overshoot in proportion to margin above floor.
fn correction_pass(states: &mut [InverterState], gap: f64, alpha_floor: f64) {
    let room: Vec<f64> = states
        .iter()
        .map(|s| {
            if gap > 0.0 {
                (s.p_impp_est - s.p_final).max(0.0)
            } else {
                (s.p_final - alpha_floor * s.p_impp_est).max(0.0)
            }
        })
        .collect();
    let total: f64 = room.iter().sum();
    if total <= 0.0 {
        return;
    }
    let frac = (gap.abs() / total).min(1.0) * gap.signum();
    for (s, r) in states.iter_mut().zip(&room) {
        s.p_final += r * frac;
    }
}

/// Runs one full control iteration over all three layers.
///
/// `states` must carry last iteration's output and ratio; on return they hold
/// this iteration's estimates, residuals, ratios and outputs. `supervisors`
/// have their aggregate residuals refreshed.
pub fn control_step(
    p_desired: f64,
    states: &mut [InverterState],
    supervisors: &mut [SupervisorState],
    order: &NeighborOrder,
    config: &ControlConfig,
    iteration: u64,
) -> Result<IterationResult, ControlError> {
    if order.n() != states.len() {
        return Err(ControlError::Config(format!(
            "neighbour order covers {} inverters, plant has {}",
            order.n(),
            states.len()
        )));
    }
    let mut cluster_of = vec![usize::MAX; states.len()];
    for (c, s) in supervisors.iter().enumerate() {
        for &m in &s.members {
            if m >= states.len() || cluster_of[m] != usize::MAX {
                return Err(ControlError::Config(format!("inverter {m} missing from plant or in two clusters")));
            }
            cluster_of[m] = c;
        }
    }
    if let Some(i) = cluster_of.iter().position(|&c| c == usize::MAX) {
        return Err(ControlError::Config(format!("inverter {i} belongs to no cluster")));
    }
    let p_desired = p_desired.max(0.0);

    // Step 1: direct layer estimates its own potential and reports it.
    let mut reports = Vec::with_capacity(states.len());
    for s in states.iter_mut() {
        s.p_impp_est = estimate_impp(s.p_final_prev, s.alpha_prev, config.alpha_floor);
        reports.push(ControlMessage {
            iteration,
            kind: MessageKind::ImppReport,
            sender: AgentId::Inverter(s.id),
            receiver: AgentId::Supervisor(supervisors[cluster_of[s.id]].id),
            amount: s.p_impp_est,
        });
    }

    // Step 2: uniform request; residuals and help flags.
    let request = PlantRequest::new(p_desired, states)?;
    for s in states.iter_mut() {
        (s.p_res, s.needs_help) = residual(s.p_impp_est, request.p_request);
    }
    for sup in supervisors.iter_mut() {
        sup.aggregate(states);
    }
    let target = p_desired.min(request.p_mpp_system).max(config.alpha_floor * request.p_mpp_system);

    // Steps 3-4: help inside clusters, then across clusters.
    let mut alloc = Allocation::start(states, request.p_request, iteration);
    alloc.messages.splice(0..0, reports);
    for sup in supervisors.iter() {
        allocate_within_cluster(sup, states, order, &mut alloc);
    }
    let plant_deficit = allocate_across_clusters(supervisors, states, order, p_desired, &mut alloc);

    // Step 5: ratios, then correction rounds until the plant sum is on target.
    finalize_alphas(states, config.alpha_floor)?;
    let mut rounds = 1;
    let mut gap = plant_gap(states, target);
    while !within_tolerance(gap, target) && rounds < config.max_rounds {
        correction_pass(states, gap, config.alpha_floor);
        finalize_alphas(states, config.alpha_floor)?;
        gap = plant_gap(states, target);
        rounds += 1;
    }
    let mut messages = alloc.messages;
    if !within_tolerance(gap, target) {
        return Err(ControlError::NonConvergence { iteration, rounds, gap, trace: messages });
    }
    for s in states.iter() {
        messages.push(ControlMessage {
            iteration,
            kind: MessageKind::SetpointAssignment,
            sender: AgentId::Supervisor(supervisors[cluster_of[s.id]].id),
            receiver: AgentId::Inverter(s.id),
            amount: s.p_final,
        });
    }
    Ok(IterationResult {
        request,
        target,
        plant_deficit,
        states: states.to_vec(),
        supervisors: supervisors.to_vec(),
        messages,
        converged: true,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn states_with(est: &[f64], request: f64) -> Vec<InverterState> {
        est.iter()
            .enumerate()
            .map(|(i, &e)| {
                let (p_res, needs_help) = residual(e, request);
                InverterState { p_impp_est: e, p_res, needs_help, ..InverterState::new(i, e, 1.0) }
            })
            .collect()
    }

    fn sup(id: usize, members: &[usize]) -> SupervisorState {
        SupervisorState::new(id, members.to_vec())
    }

    #[test]
    fn donors_cover_one_requester() {
        let mut st = states_with(&[500.0, 500.0, 200.0], 400.0);
        let mut alloc = Allocation::start(&mut st, 400.0, 0);
        let left = allocate_within_cluster(&sup(0, &[0, 1, 2]), &mut st, &NeighborOrder::by_id(3), &mut alloc);
        assert_eq!(left, 0.0);
        let p: Vec<f64> = st.iter().map(|s| s.p_final).collect();
        assert_eq!(p, vec![500.0, 500.0, 200.0]);
        assert_eq!(p.iter().sum::<f64>(), 1200.0);
    }

    #[test]
    fn all_short_cluster_keeps_deficit() {
        let mut st = states_with(&[100.0; 3], 400.0);
        let mut alloc = Allocation::start(&mut st, 400.0, 0);
        let left = allocate_within_cluster(&sup(0, &[0, 1, 2]), &mut st, &NeighborOrder::by_id(3), &mut alloc);
        assert_eq!(left, 900.0);
        assert!(st.iter().all(|s| s.p_final == 100.0));
    }

    #[test]
    fn single_donor_covers_two_requesters() {
        let mut st = states_with(&[900.0, 250.0, 250.0], 400.0);
        let mut alloc = Allocation::start(&mut st, 400.0, 0);
        let left = allocate_within_cluster(&sup(0, &[0, 1, 2]), &mut st, &NeighborOrder::by_id(3), &mut alloc);
        assert_eq!(left, 0.0);
        assert_eq!(st[0].p_final, 700.0);
        assert_eq!((st[1].p_final, st[2].p_final), (250.0, 250.0));
    }

    #[test]
    fn cross_cluster_split_is_proportional() {
        // A = {0}: short 150. B = {1}: headroom 300. C = {2}: headroom 150.
        let mut st = states_with(&[250.0, 700.0, 550.0], 400.0);
        let sups = [sup(0, &[0]), sup(1, &[1]), sup(2, &[2])];
        let mut alloc = Allocation::start(&mut st, 400.0, 0);
        let order = NeighborOrder::by_id(3);
        for s in &sups {
            allocate_within_cluster(s, &mut st, &order, &mut alloc);
        }
        let deficit = allocate_across_clusters(&sups, &mut st, &order, 1200.0, &mut alloc);
        assert_eq!(deficit, 0.0);
        assert_eq!(st[1].p_final - 400.0, 100.0);
        assert_eq!(st[2].p_final - 400.0, 50.0);
    }

    #[test]
    fn floor_clamp_redistributes() {
        let mut st = states_with(&[1000.0, 1000.0], 0.0);
        st[0].p_final = 1.0;
        st[1].p_final = 500.0;
        let out = finalize_alphas(&mut st, 0.01).unwrap();
        assert_eq!(out[0], (0.01, 10.0));
        assert!((out[1].1 - 491.0).abs() < 1e-9);
        assert!((out[0].1 + out[1].1 - 501.0).abs() < 1e-9);
    }

    #[test]
    fn over_assignment_is_an_invariant_violation() {
        let mut st = states_with(&[100.0], 0.0);
        st[0].p_final = 150.0;
        assert!(matches!(finalize_alphas(&mut st, 0.01), Err(ControlError::Infeasible { .. })));
    }
}
