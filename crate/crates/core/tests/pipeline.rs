use std::fs;
use std::path::Path;

use hiercurtail::sim::{
    build_controller, compare_runs, export_correlation, prepare, run_simulation, simulate, ControllerKind, FileSink,
    MemorySink, NullSink, SimError,
};
use hiercurtail::{MetricsReport, RunConfig};

const CLEAR: &str = r#"
seed = 5
[controller]
cluster_sizes = [3, 3]
[commitment]
breakpoints = [["00:00", 1948.0]]
[irradiance.scenario]
base_wm2 = 1000.0
n_sensors = 6
n_steps = 300
start_time = "2010-04-01T12:00:00Z"
"#;

const CLOUDY: &str = r#"
seed = 17
[controller]
cluster_sizes = [3, 3, 2]
[commitment]
breakpoints = [["00:00", 2400.0]]
[irradiance.scenario]
base_wm2 = 1000.0
n_sensors = 8
n_steps = 1800
start_time = "2010-04-01T11:45:00Z"
noise_amp = 3.0
[irradiance.scenario.random_clouds]
count = 12
footprint = 2
min_duration = 60
max_duration = 400
min_depth = 0.3
max_depth = 0.8
drift_steps = 5
"#;

fn config(text: &str, kind: ControllerKind, dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_toml_str(text).unwrap();
    cfg.controller.kind = kind;
    cfg.output.dir = dir.to_path_buf();
    cfg
}

#[test]
fn uncontrolled_output_is_plant_potential() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_simulation(&config(CLOUDY, ControllerKind::Uncontrolled, dir.path())).unwrap();
    assert_eq!(out.output, out.mpp);
    assert_eq!(out.report.curtailed_kwh, 0.0);
}

#[test]
fn clear_sky_commitment_is_held_flat() {
    // 6 × 406.08 kW available, 80 % committed.
    let dir = tempfile::tempdir().unwrap();
    let out = run_simulation(&config(CLEAR, ControllerKind::Hierarchical, dir.path())).unwrap();
    for &p in &out.output {
        assert!((p - 1948.0).abs() < 1e-6);
    }
    assert!(out.report.regulation_kwh < 1e-9);
    assert_eq!(out.report.mileage_max_kw < 1e-6, true);
}

#[test]
fn output_never_exceeds_potential_for_any_controller() {
    let cfg = RunConfig::from_toml_str(CLOUDY).unwrap();
    let prep = prepare(&cfg).unwrap();
    for kind in [ControllerKind::Hierarchical, ControllerKind::Grouping, ControllerKind::Uncontrolled] {
        let mut ctrl = build_controller(&prep, kind).unwrap();
        let out = simulate(&prep, ctrl.as_mut(), &mut NullSink).unwrap();
        for (t, (o, m)) in out.output.iter().zip(&out.mpp).enumerate() {
            assert!(o <= &(m * (1.0 + 1e-12)), "{kind:?} step {t}: {o} > {m}");
        }
    }
}

#[test]
fn per_inverter_output_is_min_of_setpoint_and_capability() {
    let cfg = RunConfig::from_toml_str(CLOUDY).unwrap();
    let prep = prepare(&cfg).unwrap();
    for kind in [ControllerKind::Hierarchical, ControllerKind::Grouping] {
        let mut ctrl = build_controller(&prep, kind).unwrap();
        let mut sink = MemorySink::default();
        simulate(&prep, ctrl.as_mut(), &mut sink).unwrap();
        for t in 0..prep.len() {
            for i in 0..prep.n_inverters() {
                let cap = sink.capabilities[t][i];
                // Pass-through: no estimate yet, or a grouping group at alpha = 1.
                let free = sink.impp_est[t][i] <= 0.0 || (kind == ControllerKind::Grouping && sink.alpha[t][i] >= 1.0);
                let expected = if free { cap } else { sink.planned[t][i].min(cap) };
                assert!((sink.outputs[t][i] - expected).abs() < 1e-9, "{kind:?} step {t} inverter {i}");
            }
        }
    }
}

#[test]
fn run_directory_is_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(CLOUDY, ControllerKind::Hierarchical, dir.path());
    run_simulation(&cfg).unwrap();
    let snapshot = RunConfig::from_toml_str(&fs::read_to_string(dir.path().join("config.toml")).unwrap()).unwrap();
    assert_eq!(snapshot, cfg);
    for f in [FileSink::PLANT_FILE, FileSink::MESSAGES_FILE, "metrics.json", "metrics.csv", "setpoints_hierarchical.csv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    let report = MetricsReport::from_json_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(report.steps, 1800);
    let setpoints = fs::read_to_string(dir.path().join("setpoints_hierarchical.csv")).unwrap();
    assert_eq!(setpoints.lines().count(), 1 + 1800 * 8);
    assert!(setpoints.starts_with("timestamp,inverter_id,impp_est_kw,alpha,p_final_kw\n"));
}

#[test]
fn comparing_a_run_with_itself_gives_unit_ratios() {
    let dir = tempfile::tempdir().unwrap();
    run_simulation(&config(CLOUDY, ControllerKind::Hierarchical, dir.path())).unwrap();
    let cmp = compare_runs(dir.path(), dir.path()).unwrap();
    for row in &cmp.rows {
        if row.a.is_some() {
            assert_eq!(row.ratio, Some(1.0), "{}", row.metric);
        }
    }
}

#[test]
fn hierarchical_needs_less_support_than_grouping() {
    let base = tempfile::tempdir().unwrap();
    let (h, g) = (base.path().join("h"), base.path().join("g"));
    run_simulation(&config(CLOUDY, ControllerKind::Hierarchical, &h)).unwrap();
    run_simulation(&config(CLOUDY, ControllerKind::Grouping, &g)).unwrap();
    let cmp = compare_runs(&h, &g).unwrap();
    assert!(cmp.row("mileage_mean_kw").unwrap().ratio.unwrap() < 1.0);
    assert!(cmp.row("regulation_kwh").unwrap().ratio.unwrap() < 1.0);
    assert!(cmp.row("commitment_satisfied_pct").unwrap().ratio.unwrap() > 1.0);
}

#[test]
fn comparing_runs_on_different_grids_fails() {
    let base = tempfile::tempdir().unwrap();
    let (a, b) = (base.path().join("a"), base.path().join("b"));
    run_simulation(&config(CLOUDY, ControllerKind::Hierarchical, &a)).unwrap();
    run_simulation(&config(CLEAR, ControllerKind::Hierarchical, &b)).unwrap();
    assert!(matches!(compare_runs(&a, &b), Err(SimError::Data(_))));
}

#[test]
fn history_training_and_cadenced_mode_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(CLOUDY, ControllerKind::Hierarchical, dir.path());
    cfg.correlation.training = hiercurtail::sim::TrainingSource::History;
    cfg.controller.tick_mode = hiercurtail::control::TickMode::Cadenced;
    let out = run_simulation(&cfg).unwrap();
    assert_eq!(out.report.steps, 1800);
    assert!(out.output.iter().zip(&out.mpp).all(|(o, m)| o <= m));
}

#[test]
fn explicit_clusters_are_used() {
    let mut cfg = RunConfig::from_toml_str(CLEAR).unwrap();
    cfg.controller.clusters =
        Some(vec![vec!["s01".into(), "s03".into(), "s05".into()], vec!["s02".into(), "s04".into(), "s06".into()]]);
    let prep = prepare(&cfg).unwrap();
    assert_eq!(prep.clusters, vec![vec![0, 2, 4], vec![1, 3, 5]]);

    cfg.controller.clusters = Some(vec![vec!["s01".into()], vec!["s99".into()]]);
    assert!(matches!(prepare(&cfg), Err(SimError::Config(_))));
}

#[test]
fn correlation_export_writes_one_matrix_per_hour() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml_str(CLOUDY).unwrap();
    let files = export_correlation(&cfg, dir.path()).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, vec!["corr_hour_11.csv", "corr_hour_12.csv", "clusters.csv"]);
    let m = fs::read_to_string(dir.path().join("corr_hour_12.csv")).unwrap();
    assert_eq!(m.lines().count(), 9);
    let clusters = fs::read_to_string(dir.path().join("clusters.csv")).unwrap();
    assert_eq!(clusters.lines().count(), 9);
}

#[test]
fn irradiance_file_with_short_gap_is_filled() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("irr.csv");
    let mut text = String::from("timestamp,a,b\n");
    for t in 0..120 {
        if (50..53).contains(&t) {
            continue;
        }
        text.push_str(&format!("2010-04-01T12:{:02}:{:02}Z,900,800\n", t / 60, t % 60));
    }
    fs::write(&csv, text).unwrap();
    let cfg_text = format!(
        "[controller]\ncluster_sizes = [1, 1]\n[commitment]\nbreakpoints = [[\"00:00\", 500.0]]\n[irradiance]\nfile = {:?}\n",
        csv.display().to_string()
    );
    let mut cfg = RunConfig::from_toml_str(&cfg_text).unwrap();
    cfg.output.dir = dir.path().join("out");
    let out = run_simulation(&cfg).unwrap();
    assert_eq!(out.report.steps, 120);

    cfg.irradiance.max_gap_secs = 2;
    assert!(matches!(run_simulation(&cfg), Err(SimError::Data(_))));
}

#[test]
fn missing_referenced_file_is_a_config_error() {
    let mut cfg = RunConfig::from_toml_str(CLEAR).unwrap();
    cfg.irradiance.scenario = None;
    cfg.irradiance.file = Some("/nonexistent/irradiance.csv".into());
    let err = prepare(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn bad_cluster_sizes_are_a_config_error() {
    let mut cfg = RunConfig::from_toml_str(CLEAR).unwrap();
    cfg.controller.cluster_sizes = vec![4, 4];
    assert_eq!(prepare(&cfg).unwrap_err().exit_code(), 2);
}
