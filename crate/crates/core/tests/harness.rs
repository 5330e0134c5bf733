//! End-to-end checks of runs, result files and the command line.

use std::process::Command;

use flowmob::harness::output::{csv_string, load_csv, rows, write_results, write_run_traces, CSV_NAME};
use flowmob::harness::runner::{run_experiment, run_grid, METRICS};
use flowmob::harness::{run_once, Capture, MapSpec, Scenario, ScenarioSpec, SimConfig};
use flowmob::mobility::TraceFile;
use flowmob::netsim::LTE_POA;

const TRACE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/neighborhood.trace");
const BIN: &str = env!("CARGO_BIN_EXE_flowmob-sim");

fn spec(scenario: Scenario, active: usize) -> (SimConfig, ScenarioSpec) {
    let cfg = SimConfig::default();
    let mut s = ScenarioSpec::from_config(&cfg).unwrap();
    s.scenario = scenario;
    s.active = active;
    s.duration = 40.0;
    s.warmup = 5.0;
    s.seeds = 3;
    (cfg, s)
}

#[test]
fn scenario_isolation() {
    let (cfg, s) = spec(Scenario::LteOnly, 20);
    let out = run_once(&cfg, &s, 1, Capture::default()).unwrap();
    assert_eq!(out.wifi_attach_events, 0);
    assert!(out.packets.iter().all(|p| p.path.poa.is_none_or(|poa| poa == LTE_POA)));
    let (cfg, s) = spec(Scenario::WifiOnly, 20);
    let out = run_once(&cfg, &s, 1, Capture::default()).unwrap();
    assert_eq!(out.lte_data_packets, 0);
    assert!(out.packets.iter().all(|p| p.path.poa != Some(LTE_POA)));
}

#[test]
fn sfmma_places_safety_on_lte() {
    let (cfg, s) = spec(Scenario::Sfmma, 10);
    let out = run_once(&cfg, &s, 2, Capture::default()).unwrap();
    let safety: Vec<_> = out.packets.iter().filter(|p| p.flow.0 == 1 && p.path.poa.is_some()).collect();
    let on_lte = safety.iter().filter(|p| p.path.poa == Some(LTE_POA)).count();
    assert_eq!(on_lte, safety.len());
    // comfort and user traffic uses Wi-Fi when available
    assert!(out.packets.iter().any(|p| p.flow.0 != 1 && p.path.poa.is_some_and(|poa| poa != LTE_POA)));
}

#[test]
fn csv_is_deterministic_and_round_trips() {
    let cfg = SimConfig::default();
    let specs: Vec<ScenarioSpec> = Scenario::ALL
        .iter()
        .flat_map(|sc| {
            [10, 20].map(|n| {
                let (_, mut s) = spec(*sc, n);
                s.duration = 20.0;
                s.seeds = 2;
                s
            })
        })
        .collect();
    let a = csv_string(&rows(&run_grid(&cfg, &specs).unwrap()));
    let b = csv_string(&rows(&run_grid(&cfg, &specs).unwrap()));
    assert_eq!(a, b);
    let cells = run_grid(&cfg, &specs).unwrap();
    let r = rows(&cells);
    assert_eq!(r.len(), 8 * METRICS.len());
    for m in METRICS {
        assert_eq!(r.iter().filter(|row| row.metric == m).count(), 8);
    }
    let dir = tempfile::tempdir().unwrap();
    write_results(dir.path(), &cells).unwrap();
    assert_eq!(load_csv(&dir.path().join(CSV_NAME)).unwrap(), r);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 8);
}

#[test]
fn lte_only_reports_no_handover_time() {
    let (cfg, s) = spec(Scenario::LteOnly, 10);
    let cell = run_experiment(&cfg, &s).unwrap();
    let r = rows(&[cell]);
    let count = r.iter().find(|r| r.metric == "handover_count").unwrap();
    assert_eq!((count.mean, count.n), (Some(0.0), 3));
    let time = r.iter().find(|r| r.metric == "avg_handover_time").unwrap();
    assert_eq!((time.mean, time.n), (None, 0));
}

#[test]
fn trace_map_runs() {
    let (cfg, mut s) = spec(Scenario::Sfmma, 10);
    s.map = MapSpec::parse(&format!("trace:{TRACE}")).unwrap();
    let out = run_once(&cfg, &s, 1, Capture::default()).unwrap();
    assert!(out.metrics.throughput > 0.0);
    s.active = 51;
    s.vehicles = 60;
    assert!(run_once(&cfg, &s, 1, Capture::default()).is_err());
}

#[test]
fn bundled_trace_is_valid() {
    let t = TraceFile::load(std::path::Path::new(TRACE)).unwrap();
    assert_eq!(t.vehicle_count(), 50);
    for v in t.vehicles() {
        let (a, b) = t.span(v).unwrap();
        assert!(a <= 0.0 && b >= 130.0);
        assert!(t.max_speed(v).unwrap() < 16.5);
    }
    assert_eq!(TraceFile::parse(&t.to_text()).unwrap(), t);
}

#[test]
fn traces_are_written() {
    let (cfg, mut s) = spec(Scenario::Sfmma, 3);
    s.duration = 10.0;
    s.warmup = 1.0;
    let out = run_once(&cfg, &s, 1, Capture { event_log: true, bce_dump: true }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_run_traces(dir.path(), &out).unwrap();
    assert_eq!(files.len(), 3);
    let packets = std::fs::read_to_string(&files[0]).unwrap();
    assert_eq!(packets.lines().count(), out.packets.len());
    let events = std::fs::read_to_string(&files[1]).unwrap();
    for line in events.lines() {
        // time, entity, exchange id, step
        let f: Vec<&str> = line.splitn(4, ' ').collect();
        assert_eq!(f.len(), 4, "{line}");
        f[0].parse::<f64>().unwrap();
        f[2].parse::<u64>().unwrap();
    }
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let ok = Command::new(BIN)
        .args(["run", "--scenario", "2", "--active", "3", "--seeds", "2", "--duration", "15", "--packet-trace", "--event-log", "--bce-dump", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));
    assert!(out.join("results.csv").exists() && out.join("summary.json").exists());
    assert!(out.join("traces/packets_s2_seed1.txt").exists());
    assert!(out.join("traces/events_s2_seed2.log").exists());
    assert!(out.join("traces/bce_s2_seed1.txt").exists());

    let bad = Command::new(BIN).args(["run", "--scenario", "7", "--out"]).arg(&out).status().unwrap();
    assert_eq!(bad.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[run]\nbogus = 1\n").unwrap();
    let bad = Command::new(BIN).args(["sweep", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(bad.code(), Some(2));
    let bad = Command::new(BIN).args(["run", "--map", "trace:/no/such/file", "--out"]).arg(&out).status().unwrap();
    assert_eq!(bad.code(), Some(2));

    assert_eq!(Command::new(BIN).args(["validate-trace", TRACE]).status().unwrap().code(), Some(0));
    let broken = dir.path().join("broken.trace");
    std::fs::write(&broken, "t vehicle_id x y\n0 1 0 0\n1 1 500 0\n").unwrap();
    assert_eq!(Command::new(BIN).arg("validate-trace").arg(&broken).status().unwrap().code(), Some(2));
}

#[test]
fn default_config_round_trips_through_cli() {
    let text = Command::new(BIN).arg("default-config").output().unwrap().stdout;
    let cfg = SimConfig::from_toml(std::str::from_utf8(&text).unwrap()).unwrap();
    assert_eq!(cfg, SimConfig::default());
}
