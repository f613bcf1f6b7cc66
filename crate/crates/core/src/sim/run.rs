use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::config::{CommitmentMode, ControllerKind, RunConfig, TrainingSource};
use super::trace::{FileSink, StepRecord, TraceSink};
use super::SimError;
use crate::control::{ControlMessage, HierarchicalController, InverterCommand};
use crate::correlation::{
    build_hourly_matrices, cluster_assign, neighbor_order, CorrelationMatrix, NeighborOrder,
};
use crate::dispatch::{
    build_dispatch, desired_output, regulation_window, CommitmentSchedule, DispatchSignal, RegulationWindow,
};
use crate::grouping::{GroupingConfig, GroupingController};
use crate::ingest::{
    fill_gaps, load_regulation_csv, parse_irradiance_csv, synth_cloud_scenario, synth_regd_signal, IrradianceDataset,
    ScenarioSpec,
};
use crate::metrics::{MetricsReport, RunSeries};
use crate::pv::{plant_rating_kw, plant_true_mpp, PlantConfig, PvArrayConfig};
use crate::series::TimeMatrix;
use crate::time::{parse_time_of_day, TimeGrid};

/// A controller's decisions for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub commands: Vec<InverterCommand>,
    /// The controller's own view of each inverter's potential.
    pub impp_est: Vec<f64>,
    pub alpha: Vec<f64>,
    /// kW each inverter is expected to deliver.
    pub planned: Vec<f64>,
    pub messages: Vec<ControlMessage>,
    pub plant_deficit: f64,
}

impl StepPlan {
    pub fn planned_total(&self) -> f64 {
        self.planned.iter().sum()
    }
}

/// What the simulation loop needs from a plant controller.
pub trait Controller {
    fn name(&self) -> &'static str;
    /// Seeds the controller with one step of unconstrained operation.
    fn bootstrap(&mut self, outputs: &[f64], ratios: &[f64]) -> Result<(), SimError>;
    /// Plant potential as the controller currently estimates it.
    fn estimated_potential(&self) -> f64;
    fn plan(&mut self, p_desired: f64) -> Result<StepPlan, SimError>;
    fn observe(&mut self, outputs: &[f64], ratios: &[f64]) -> Result<(), SimError>;
    fn set_neighbor_order(&mut self, _order: NeighborOrder) -> Result<(), SimError> {
        Ok(())
    }
}

pub struct HierarchicalAdapter(pub HierarchicalController);

impl Controller for HierarchicalAdapter {
    fn name(&self) -> &'static str {
        ControllerKind::Hierarchical.name()
    }

    fn bootstrap(&mut self, outputs: &[f64], ratios: &[f64]) -> Result<(), SimError> {
        Ok(self.0.bootstrap(outputs, ratios)?)
    }

    fn estimated_potential(&self) -> f64 {
        self.0.estimated_potential()
    }

    fn plan(&mut self, p_desired: f64) -> Result<StepPlan, SimError> {
        let r = self.0.step(p_desired)?;
        Ok(StepPlan {
            commands: HierarchicalController::commands(&r),
            impp_est: r.states.iter().map(|s| s.p_impp_est).collect(),
            alpha: r.states.iter().map(|s| s.alpha).collect(),
            planned: r.states.iter().map(|s| s.p_final).collect(),
            messages: r.messages,
            plant_deficit: r.plant_deficit,
        })
    }

    fn observe(&mut self, outputs: &[f64], ratios: &[f64]) -> Result<(), SimError> {
        Ok(self.0.observe(outputs, ratios)?)
    }

    fn set_neighbor_order(&mut self, order: NeighborOrder) -> Result<(), SimError> {
        Ok(self.0.set_neighbor_order(order)?)
    }
}

pub struct GroupingAdapter(pub GroupingController);

impl Controller for GroupingAdapter {
    fn name(&self) -> &'static str {
        ControllerKind::Grouping.name()
    }

    fn bootstrap(&mut self, outputs: &[f64], ratios: &[f64]) -> Result<(), SimError> {
        Ok(self.0.bootstrap(outputs, ratios)?)
    }

    fn estimated_potential(&self) -> f64 {
        self.0.group_estimates().iter().sum()
    }

    fn plan(&mut self, p_desired: f64) -> Result<StepPlan, SimError> {
        let p = self.0.step(p_desired)?;
        let p_mpp: f64 = p.group_impp_est.iter().sum();
        Ok(StepPlan {
            commands: p.commands(),
            impp_est: p.member_impp_est,
            alpha: p.member_alpha,
            planned: p.orders,
            messages: Vec::new(),
            plant_deficit: (p_desired - p_mpp).max(0.0),
        })
    }

    fn observe(&mut self, outputs: &[f64], ratios: &[f64]) -> Result<(), SimError> {
        Ok(self.0.observe(outputs, ratios)?)
    }
}

/// Every inverter at full output.
#[derive(Debug, Clone)]
pub struct UncontrolledController {
    last: Vec<f64>,
}

impl UncontrolledController {
    pub fn new(n: usize) -> Self {
        Self { last: vec![0.0; n] }
    }
}

impl Controller for UncontrolledController {
    fn name(&self) -> &'static str {
        ControllerKind::Uncontrolled.name()
    }

    fn bootstrap(&mut self, outputs: &[f64], ratios: &[f64]) -> Result<(), SimError> {
        self.observe(outputs, ratios)
    }

    fn estimated_potential(&self) -> f64 {
        self.last.iter().sum()
    }

    fn plan(&mut self, p_desired: f64) -> Result<StepPlan, SimError> {
        let n = self.last.len();
        Ok(StepPlan {
            commands: vec![InverterCommand::Ratio(1.0); n],
            impp_est: self.last.clone(),
            alpha: vec![1.0; n],
            planned: self.last.clone(),
            messages: Vec::new(),
            plant_deficit: (p_desired - self.estimated_potential()).max(0.0),
        })
    }

    fn observe(&mut self, outputs: &[f64], _ratios: &[f64]) -> Result<(), SimError> {
        if outputs.len() != self.last.len() {
            return Err(SimError::Config("observation size does not match plant".into()));
        }
        self.last.copy_from_slice(outputs);
        Ok(())
    }
}

/// Inputs of a run, loaded and checked, ready for any controller.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub config: RunConfig,
    /// Irradiance with columns in inverter order.
    pub dataset: IrradianceDataset,
    pub labels: Vec<String>,
    pub arrays: Vec<PvArrayConfig>,
    pub capabilities: TimeMatrix,
    pub grid: TimeGrid,
    pub rating_kw: f64,
    pub reserve_kw: f64,
    pub regulation: RegulationWindow,
    /// Scheduled dispatch; in headroom mode the commitment is replaced per
    /// step by the controller's own reserve target.
    pub dispatch: Vec<DispatchSignal>,
    /// Hourly matrices trained on the run's irradiance, keyed by local hour.
    pub hourly: BTreeMap<u32, CorrelationMatrix>,
    pub clusters: Vec<Vec<usize>>,
}

impl PreparedRun {
    pub fn n_inverters(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.grid.len
    }

    pub fn is_empty(&self) -> bool {
        self.grid.len == 0
    }

    /// Neighbour order for a local hour from the irradiance-trained matrices.
    pub fn same_day_order(&self, hour: u32) -> NeighborOrder {
        self.hourly.get(&hour).map(neighbor_order).unwrap_or_else(|| NeighborOrder::by_id(self.n_inverters()))
    }
}

fn load_irradiance(cfg: &RunConfig) -> Result<IrradianceDataset, SimError> {
    let src = &cfg.irradiance;
    let dataset = if let Some(path) = &src.file {
        let schema = src.schema.clone().unwrap_or_default();
        let loaded = parse_irradiance_csv(path, &schema).map_err(|e| SimError::from(e).context(&path.display().to_string()))?;
        if loaded.clamped > 0 {
            log::warn!("{}: {} irradiance values clamped into range", path.display(), loaded.clamped);
        }
        fill_gaps(&loaded.data, src.max_gap_secs).map_err(|e| SimError::from(e).context(&path.display().to_string()))?
    } else {
        let spec = match (&src.scenario, &src.scenario_file) {
            (Some(spec), _) => spec.clone(),
            (None, Some(path)) => ScenarioSpec::load(path).map_err(|e| SimError::from(e).context(&path.display().to_string()))?,
            (None, None) => return Err(SimError::Config("no irradiance source".into())),
        };
        synth_cloud_scenario(&spec, cfg.seed)?
    };
    dataset.validate()?;
    if dataset.is_empty() {
        return Err(SimError::Data("irradiance data has no steps".into()));
    }
    Ok(dataset)
}

fn resolve_clusters(cfg: &RunConfig, labels: &[String], mean: &CorrelationMatrix) -> Result<Vec<Vec<usize>>, SimError> {
    if let Some(named) = &cfg.controller.clusters {
        let mut clusters = Vec::with_capacity(named.len());
        for group in named {
            let idx = group
                .iter()
                .map(|l| {
                    labels
                        .iter()
                        .position(|x| x == l)
                        .ok_or_else(|| SimError::Config(format!("cluster member {l} is not an inverter")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            clusters.push(idx);
        }
        let mut all: Vec<usize> = clusters.iter().flatten().copied().collect();
        all.sort_unstable();
        if all != (0..labels.len()).collect::<Vec<_>>() {
            return Err(SimError::Config("explicit clusters must list every inverter exactly once".into()));
        }
        return Ok(clusters);
    }
    Ok(cluster_assign(mean, &cfg.controller.cluster_sizes)?)
}

/// Loads inputs and derives everything that does not depend on the controller.
pub fn prepare(config: &RunConfig) -> Result<PreparedRun, SimError> {
    config.validate()?;
    config.check_files()?;
    let plant = match &config.plant.path {
        Some(path) => PlantConfig::load(path)?,
        None => config.plant.inline.clone(),
    };
    let raw = load_irradiance(config)?;
    let (labels, arrays) = plant.resolve(&raw.sensors)?;
    let dataset = raw.select(&labels)?;
    let capabilities = plant_true_mpp(&dataset, &arrays)?;
    let grid = dataset.grid().with_utc_offset(config.utc_offset_secs());
    let rating_kw = plant_rating_kw(&arrays);

    let hourly: BTreeMap<u32, CorrelationMatrix> =
        build_hourly_matrices(dataset.values(), &grid.local_timestamps())?
            .into_iter()
            .filter_map(|m| m.hour.map(|h| (h, m)))
            .collect();
    let all: Vec<CorrelationMatrix> = hourly.values().cloned().collect();
    let mean = CorrelationMatrix::mean(&all).unwrap_or_else(|| CorrelationMatrix::identity(labels.len()));
    let clusters = resolve_clusters(config, &labels, &mean)?;

    let (regulation, reserve_kw, _) = match &config.regulation {
        None => (RegulationWindow::inactive(grid.len), 0.0, ()),
        Some(r) => {
            let signal = match (&r.path, &r.synthetic) {
                (Some(path), _) => {
                    let loaded =
                        load_regulation_csv(path).map_err(|e| SimError::from(e).context(&path.display().to_string()))?;
                    if loaded.clamped > 0 {
                        log::warn!("{}: {} regulation values clamped into [-1, 1]", path.display(), loaded.clamped);
                    }
                    loaded.data
                }
                (None, Some(params)) => synth_regd_signal(params, config.seed)?,
                (None, None) => return Err(SimError::Config("regulation has no signal".into())),
            };
            let window = |t: &str| {
                parse_time_of_day(t).ok_or_else(|| SimError::Config(format!("invalid regulation window time `{t}`")))
            };
            let active = (window(&r.active_start)?, window(&r.active_end)?);
            let reserve = r.reserve_kw.unwrap_or(config.controller.headroom_fraction * rating_kw);
            (regulation_window(&signal, &grid, active)?, reserve, ())
        }
    };

    let schedule = match config.commitment.mode {
        CommitmentMode::Schedule => {
            CommitmentSchedule::from_clock(&config.commitment.breakpoints, config.commitment.interpolation)?
        }
        CommitmentMode::Headroom => CommitmentSchedule::flat(0.0)?,
    };
    let dispatch = build_dispatch(&grid, &schedule, &regulation, reserve_kw);

    Ok(PreparedRun {
        config: config.clone(),
        dataset,
        labels,
        arrays,
        capabilities,
        grid,
        rating_kw,
        reserve_kw,
        regulation,
        dispatch,
        hourly,
        clusters,
    })
}

pub fn build_controller(prep: &PreparedRun, kind: ControllerKind) -> Result<Box<dyn Controller>, SimError> {
    let c = &prep.config.controller;
    Ok(match kind {
        ControllerKind::Hierarchical => {
            let ctrl = HierarchicalController::new(prep.clusters.clone(), c.control_config())?
                .with_step_secs(prep.grid.step_secs)?;
            Box::new(HierarchicalAdapter(ctrl))
        }
        ControllerKind::Grouping => {
            let cfg = GroupingConfig { groups: prep.clusters.clone(), headroom_fraction: c.headroom_fraction };
            let ratings = prep.arrays.iter().map(PvArrayConfig::rated_ac_kw).collect();
            Box::new(GroupingAdapter(GroupingController::new(cfg, ratings)?.with_alpha_floor(c.alpha_floor)))
        }
        ControllerKind::Uncontrolled => Box::new(UncontrolledController::new(prep.n_inverters())),
    })
}

/// Per-step plant series and the metrics computed from them.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub dispatch: Vec<DispatchSignal>,
    pub output: Vec<f64>,
    pub planned: Vec<f64>,
    pub mpp: Vec<f64>,
    pub clusters: Vec<Vec<usize>>,
}

/// Neighbour order from the estimate history of the same local hour over the
/// preceding `window_days`, if that history has at least two samples.
fn history_order(
    history: &[f64],
    n: usize,
    grid: &TimeGrid,
    upto: usize,
    hour: u32,
    window_days: u32,
) -> Option<NeighborOrder> {
    let day = grid.local_day(upto);
    let first_day = day - i64::from(window_days);
    let rows: Vec<usize> = (0..upto)
        .filter(|&t| {
            let d = grid.local_day(t);
            d >= first_day && d < day && grid.local_hour(t) == hour
        })
        .collect();
    if rows.len() < 2 {
        return None;
    }
    let data = TimeMatrix::from_rows(upto, n, history[..upto * n].to_vec())?;
    CorrelationMatrix::from_samples(&data, &rows).ok().map(|m| neighbor_order(&m))
}

/// Runs `controller` over the prepared inputs, feeding every step to `sink`.
pub fn simulate(
    prep: &PreparedRun,
    controller: &mut dyn Controller,
    sink: &mut dyn TraceSink,
) -> Result<RunOutcome, SimError> {
    let n = prep.n_inverters();
    let len = prep.len();
    let cfg = &prep.config;
    let headroom_mode = cfg.commitment.mode == CommitmentMode::Headroom;
    let history_mode = cfg.correlation.training == TrainingSource::History;

    // Pre-roll: one step at full output on the first sample seeds the estimators.
    let first = prep.capabilities.row(0).to_vec();
    controller.bootstrap(&first, &vec![1.0; n])?;

    let mut history = if history_mode { Vec::with_capacity(len * n) } else { Vec::new() };
    let mut orders: BTreeMap<u32, NeighborOrder> = BTreeMap::new();
    let mut prev_hour = None;
    let mut dispatch = Vec::with_capacity(len);
    let (mut output, mut planned, mut mpp) = (Vec::with_capacity(len), Vec::with_capacity(len), Vec::with_capacity(len));
    let mut outs = vec![0.0; n];
    let mut ratios = vec![0.0; n];

    for t in 0..len {
        let hour = prep.grid.local_hour(t);
        if prev_hour != Some(hour) {
            let order = history_mode
                .then(|| history_order(&history, n, &prep.grid, t, hour, cfg.correlation.window_days))
                .flatten()
                .unwrap_or_else(|| orders.entry(hour).or_insert_with(|| prep.same_day_order(hour)).clone());
            controller.set_neighbor_order(order)?;
            prev_hour = Some(hour);
        }

        let mut d = prep.dispatch[t].clone();
        if headroom_mode {
            d.commitment_kw = (1.0 - cfg.controller.headroom_fraction) * controller.estimated_potential();
            d.p_desired = desired_output(d.commitment_kw, d.regd_value, d.reserve_kw);
        }
        let plan = controller.plan(d.p_desired).map_err(|e| match e {
            SimError::Convergence { source, .. } => SimError::Convergence { step: t, source },
            other => other.context(&format!("step {t}")),
        })?;

        let caps = prep.capabilities.row(t);
        for i in 0..n {
            (outs[i], ratios[i]) = plan.commands[i].realize(caps[i]);
        }
        controller.observe(&outs, &ratios)?;
        if history_mode {
            history.extend_from_slice(&plan.impp_est);
        }

        let rec = StepRecord {
            step: t,
            timestamp: prep.grid.timestamp(t),
            dispatch: &d,
            plan: &plan,
            outputs: &outs,
            capabilities: caps,
        };
        sink.record(&rec)?;
        output.push(rec.output_total());
        planned.push(plan.planned_total());
        mpp.push(rec.mpp_total());
        dispatch.push(d);
    }
    sink.finish()?;

    let tolerance = cfg.regulation.as_ref().map_or(crate::metrics::DEFAULT_REGD_TOLERANCE_PCT, |r| r.tolerance_pct);
    let report = MetricsReport::compute(
        controller.name(),
        RunSeries { dispatch: &dispatch, output: &output, planned: &planned, mpp: &mpp },
        prep.grid.step_secs,
        tolerance,
    )?;
    Ok(RunOutcome { report, dispatch, output, planned, mpp, clusters: prep.clusters.clone() })
}

pub const CONFIG_SNAPSHOT_FILE: &str = "config.toml";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";

/// Full run: load inputs, simulate the configured controller and write the
/// config snapshot, traces and metrics into the output directory.
pub fn run_simulation(config: &RunConfig) -> Result<RunOutcome, SimError> {
    let prep = prepare(config)?;
    let mut controller = build_controller(&prep, config.controller.kind)?;
    let dir = &config.output.dir;
    fs::create_dir_all(dir).map_err(SimError::io(dir))?;
    let snapshot = dir.join(CONFIG_SNAPSHOT_FILE);
    fs::write(&snapshot, config.to_toml_string()?).map_err(SimError::io(&snapshot))?;

    let mut sink = FileSink::create(dir, controller.name(), config.output.write_messages)?;
    let outcome = simulate(&prep, controller.as_mut(), &mut sink)?;

    let json = dir.join(METRICS_JSON_FILE);
    let file = File::create(&json).map_err(SimError::io(&json))?;
    outcome.report.write_json(BufWriter::new(file)).map_err(SimError::io(&json))?;
    let csv = dir.join(METRICS_CSV_FILE);
    let file = File::create(&csv).map_err(SimError::io(&csv))?;
    outcome.report.write_csv(BufWriter::new(file)).map_err(SimError::io(&csv))?;
    log::info!(
        "{}: {} steps, mileage {:.3} kW, regulation {:.3} kWh",
        controller.name(),
        prep.len(),
        outcome.report.mileage_mean_kw,
        outcome.report.regulation_kwh
    );
    Ok(outcome)
}

/// Writes one correlation matrix per local hour (`corr_hour_HH.csv`) and the
/// resulting cluster membership (`clusters.csv`). Returns the files written.
pub fn export_correlation(config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    let prep = prepare(config)?;
    fs::create_dir_all(out_dir).map_err(SimError::io(out_dir))?;
    let mut written = Vec::new();
    for (hour, m) in &prep.hourly {
        let path = out_dir.join(format!("corr_hour_{hour:02}.csv"));
        let file = File::create(&path).map_err(SimError::io(&path))?;
        m.write_csv(&prep.labels, BufWriter::new(file)).map_err(SimError::io(&path))?;
        written.push(path);
    }
    let path = out_dir.join("clusters.csv");
    let mut text = String::from("cluster,inverter_id,sensor\n");
    for (c, members) in prep.clusters.iter().enumerate() {
        for &m in members {
            text.push_str(&format!("{c},{m},{}\n", prep.labels[m]));
        }
    }
    fs::write(&path, text).map_err(SimError::io(&path))?;
    written.push(path);
    Ok(written)
}
