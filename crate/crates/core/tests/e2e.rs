use std::path::{Path, PathBuf};
use std::process::Command;

use hxit::bench::{
    compare_runs, read_csv, run_experiment, ClockMode, ReceiverMode, RunConfig, RunOptions, RunReport, TimingRecord,
};
use hxit::gateway::Backend;
use proptest::prelude::*;

const SLICE: &str = "
sim.n = 64
sim.steps = 5
sim.partitions = 2
gateway.bandwidth = unlimited
pipeline.name = slice
pipeline.stage.0.type = select_fields
pipeline.stage.0.keep = energy
pipeline.stage.1.type = slice
pipeline.stage.1.axis = z
pipeline.stage.1.coordinate = 0.5
render.recipe = slice_image
render.width = 64
render.height = 64
";

fn exe() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_hxit"))
}

fn options(receiver: ReceiverMode) -> RunOptions {
    RunOptions {
        receiver: Some(receiver),
        receiver_exe: Some(exe()),
    }
}

fn ppm_count(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ppm"))
        .count()
}

#[test]
fn hybrid_run_writes_one_row_per_step_and_rank() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(SLICE).unwrap();
    let out = run_experiment(&cfg, Backend::Hybrid, dir.path(), &options(ReceiverMode::InProcess)).unwrap();
    let rows = read_csv(&out.csv_path).unwrap();
    assert_eq!(rows.len(), cfg.sim.steps * cfg.sim.partitions);
    assert_eq!(rows, out.records);
    assert!(rows.iter().all(|r| r.reduce_ms > 0.0));
    // only the rank owning z = 0.5 sends slice cells, but every rank sends a frame
    assert!(rows.iter().all(|r| r.bytes_sent > 0));
    assert!(out.report.reduce_ms > 0.0);
    assert_eq!(ppm_count(dir.path()), cfg.sim.steps);
    assert_eq!(RunReport::load(&out.report_path).unwrap(), out.report);
}

#[test]
fn transit_run_has_no_reduction_and_ships_more() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(SLICE).unwrap();
    let transit = run_experiment(&cfg, Backend::Transit, &dir.path().join("t"), &options(ReceiverMode::InProcess)).unwrap();
    assert!(transit.records.iter().all(|r| r.reduce_ms == 0.0));
    assert_eq!(ppm_count(&dir.path().join("t")), cfg.sim.steps);
    let hybrid = run_experiment(&cfg, Backend::Hybrid, &dir.path().join("h"), &options(ReceiverMode::InProcess)).unwrap();
    assert!(hybrid.report.bytes_per_step * 50.0 < transit.report.bytes_per_step);
    // the receiver reduces transit data, so both produce the same images
    for step in 0..cfg.sim.steps {
        let name = format!("step{step}_slice_image.ppm");
        assert_eq!(
            std::fs::read(dir.path().join("t").join(&name)).unwrap(),
            std::fs::read(dir.path().join("h").join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn inline_run_sends_nothing_and_renders_locally() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(SLICE).unwrap();
    let out = run_experiment(&cfg, Backend::Inline, dir.path(), &RunOptions::default()).unwrap();
    assert!(out.records.iter().all(|r| r.bytes_sent == 0 && r.transfer_ms == 0.0));
    assert_eq!(ppm_count(dir.path()), cfg.sim.steps * cfg.sim.partitions);
}

#[test]
fn subprocess_receiver() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(SLICE).unwrap();
    let out = run_experiment(&cfg, Backend::Hybrid, dir.path(), &options(ReceiverMode::Subprocess)).unwrap();
    assert_eq!(out.records.len(), 10);
    assert!(out.records.iter().all(|r| r.render_ms > 0.0));
    assert_eq!(ppm_count(dir.path()), cfg.sim.steps);
}

#[test]
fn staging_endpoint_run() {
    let dir = tempfile::tempdir().unwrap();
    let staging = dir.path().join("staging");
    let text = format!("{SLICE}gateway.endpoint = file://{}\n", staging.display());
    let cfg = RunConfig::parse(&text).unwrap();
    let out = run_experiment(&cfg, Backend::Hybrid, &dir.path().join("out"), &options(ReceiverMode::InProcess)).unwrap();
    assert_eq!(out.records.len(), 10);
    assert_eq!(ppm_count(&dir.path().join("out")), cfg.sim.steps);
}

#[test]
fn module_errors_abort_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(&SLICE.replace("keep = energy", "keep = vorticity")).unwrap();
    let err = run_experiment(&cfg, Backend::Hybrid, dir.path(), &options(ReceiverMode::InProcess)).unwrap_err();
    let text = format!("{err:#}");
    assert!(text.contains("step 0") && text.contains("rank"), "{text}");
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn cli_run_compare_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("slice.conf");
    std::fs::write(&conf, SLICE.replace("sim.n = 64", "sim.n = 16")).unwrap();
    for mode in ["transit", "hybrid"] {
        let out = Command::new(exe())
            .args(["run", "--mode", mode, "--config"])
            .arg(&conf)
            .arg("--out")
            .arg(dir.path().join(mode))
            .output()
            .unwrap();
        assert!(out.status.success(), "{mode}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8(out.stdout).unwrap().contains("total"));
    }
    let a = dir.path().join("transit/report.json");
    let b = dir.path().join("hybrid/report.json");
    let out = Command::new(exe()).arg("compare").arg(&a).arg(&b).output().unwrap();
    assert!(out.status.success());
    let gain = compare_runs(&RunReport::load(&a).unwrap(), &RunReport::load(&b).unwrap()).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), format!("{gain:.2}%"));

    let out = Command::new(exe()).arg("table").arg(&a).arg(&b).output().unwrap();
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    for row in ["Simulation Time (ms)", "Reduction Time (ms)", "Data Transfer Time (ms)", "Total Time (ms)", "Total Gain"] {
        assert!(table.contains(row), "{table}");
    }
    let out = Command::new(exe()).arg("table").arg(&a).output().unwrap();
    assert!(!out.status.success());
}

fn modeled(sim: f64, reduce: f64, bandwidth: f64) -> ClockMode {
    ClockMode::Modeled {
        sim_ms: sim,
        reduce_ms: Some(reduce),
        bandwidth,
    }
}

fn modeled_record(clock: &ClockMode, reduced: bool, bytes: u64) -> TimingRecord {
    TimingRecord {
        sim_ms: clock.sim_ms(0.0),
        reduce_ms: if reduced { clock.reduce_ms(0.0) } else { 0.0 },
        transfer_ms: clock.transfer_ms(bytes, 0.0),
        bytes_sent: bytes,
        ..Default::default()
    }
}

proptest! {
    #[test]
    fn modeled_accounting_identity(sim in 0.0..1e5f64, reduce in 0.0..1e4f64, bw in 1e3..1e9f64, bytes in 0u64..1 << 40) {
        let clock = modeled(sim, reduce, bw);
        let r = modeled_record(&clock, true, bytes);
        let report = RunReport::from_records("hybrid", "p", "modeled", "w", &[r]).unwrap();
        let expected = sim + reduce + 1000.0 * bytes as f64 / bw;
        prop_assert!((report.total_ms - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn gain_sign_matches_transfer_condition(
        sim in 0.0..1e5f64,
        reduce in 0.0..1e4f64,
        bw in 1e3..1e9f64,
        full in 1u64..1 << 36,
        reduced in 0u64..1 << 36,
    ) {
        let clock = modeled(sim, reduce, bw);
        let transit = RunReport::from_records("transit", "p", "modeled", "w", &[modeled_record(&clock, false, full)]).unwrap();
        let hybrid = RunReport::from_records("hybrid", "p", "modeled", "w", &[modeled_record(&clock, true, reduced)]).unwrap();
        let gain = compare_runs(&transit, &hybrid).unwrap();
        let lhs = reduce + clock.transfer_ms(reduced, 0.0);
        let rhs = clock.transfer_ms(full, 0.0);
        let margin = 1e-9 * (sim + rhs);
        prop_assume!((lhs - rhs).abs() > margin);
        prop_assert_eq!(gain > 0.0, lhs < rhs, "gain {} lhs {} rhs {}", gain, lhs, rhs);
    }
}
