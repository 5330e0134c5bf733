//! Fans runs out over seeds and grid cells and aggregates them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::flow::AppClassKind;
use crate::harness::config::{ConfigError, SimConfig};
use crate::harness::metrics::RunMetrics;
use crate::harness::scenario::{MapSpec, Scenario, ScenarioSpec};
use crate::harness::sim::{run_once, Capture, RunOutput, SimError};
use crate::stats::{summarize, Summary};

/// Metric names in emission order.
pub const METRICS: [&str; 8] = [
    "throughput_kbps",
    "packet_loss_ratio",
    "avg_delay",
    "delay_safety",
    "delay_comfort",
    "delay_user",
    "handover_count",
    "avg_handover_time",
];

/// Value of a named metric in one run; `None` when not applicable.
pub fn metric_value(m: &RunMetrics, name: &str) -> Option<f64> {
    let class = |k: AppClassKind| m.per_class_delay.get(&k).copied().flatten();
    match name {
        "throughput_kbps" => Some(m.throughput),
        "packet_loss_ratio" => Some(m.packet_loss_ratio),
        "avg_delay" => m.avg_delay,
        "delay_safety" => class(AppClassKind::Safety),
        "delay_comfort" => class(AppClassKind::Comfort),
        "delay_user" => class(AppClassKind::User),
        "handover_count" => m.handover_count.map(|c| c as f64),
        "avg_handover_time" => m.avg_handover_time,
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub scenario: u8,
    pub map: String,
    pub load: usize,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    /// Absent when no seed produced a value.
    pub summary: Option<Summary<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunMetrics>,
    pub metrics: Vec<MetricSummary>,
}

impl CellResult {
    pub fn get(&self, metric: &str) -> Option<&Summary<f64>> {
        self.metrics.iter().find(|m| m.metric == metric)?.summary.as_ref()
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.get(metric).map(|s| s.mean)
    }
}

/// Per-seed means aggregated with a Student-t interval at `level`.
pub fn aggregate(spec: &ScenarioSpec, seeds: Vec<u64>, runs: Vec<RunMetrics>, level: f64) -> CellResult {
    let metrics = METRICS
        .iter()
        .map(|name| {
            let xs: Vec<f64> = runs.iter().filter_map(|m| metric_value(m, name)).collect();
            MetricSummary { metric: name.to_string(), summary: summarize(&xs, level) }
        })
        .collect();
    CellResult {
        cell: Cell { scenario: spec.scenario.id(), map: spec.map.label(), load: spec.active, speed: spec.speed },
        seeds,
        runs,
        metrics,
    }
}

/// Runs every seed of `spec` in parallel. Outputs come back in seed order.
pub fn run_seeds(cfg: &SimConfig, spec: &ScenarioSpec, capture: Capture) -> Result<Vec<RunOutput>, SimError> {
    spec.validate()?;
    spec.seed_list().par_iter().map(|seed| run_once(cfg, spec, *seed, capture)).collect()
}

pub fn run_experiment(cfg: &SimConfig, spec: &ScenarioSpec) -> Result<CellResult, SimError> {
    let outs = run_seeds(cfg, spec, Capture::default())?;
    let seeds = outs.iter().map(|o| o.seed).collect();
    let runs = outs.into_iter().map(|o| o.metrics).collect();
    Ok(aggregate(spec, seeds, runs, cfg.protocol.confidence))
}

/// Runs a set of cells, all seeds of all cells in one parallel pool.
/// Results are sorted by scenario, map, load and speed.
pub fn run_grid(cfg: &SimConfig, specs: &[ScenarioSpec]) -> Result<Vec<CellResult>, SimError> {
    for s in specs {
        s.validate()?;
    }
    let jobs: Vec<(usize, u64)> = specs.iter().enumerate().flat_map(|(i, s)| s.seed_list().into_iter().map(move |seed| (i, seed))).collect();
    let outs: Vec<(usize, u64, RunMetrics)> = jobs
        .par_iter()
        .map(|(i, seed)| run_once(cfg, &specs[*i], *seed, Capture::default()).map(|o| (*i, *seed, o.metrics)))
        .collect::<Result<_, _>>()?;
    let mut cells: Vec<CellResult> = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let (seeds, runs): (Vec<u64>, Vec<RunMetrics>) =
                outs.iter().filter(|o| o.0 == i).map(|o| (o.1, o.2.clone())).unzip();
            aggregate(spec, seeds, runs, cfg.protocol.confidence)
        })
        .collect();
    cells.sort_by(|a, b| {
        (a.cell.scenario, &a.cell.map, a.cell.load)
            .cmp(&(b.cell.scenario, &b.cell.map, b.cell.load))
            .then(a.cell.speed.total_cmp(&b.cell.speed))
    });
    Ok(cells)
}

/// The full grid described by the `[sweep]` section: every scenario, load
/// and speed on the Manhattan map, plus every scenario and load on the
/// trace map when one is configured.
pub fn sweep_specs(cfg: &SimConfig) -> Result<Vec<ScenarioSpec>, ConfigError> {
    let r = &cfg.run;
    let base = ScenarioSpec {
        scenario: Scenario::from_id(r.scenario)?,
        active: r.active,
        vehicles: r.vehicles,
        speed: r.speed,
        map: MapSpec::Manhattan,
        duration: r.duration,
        warmup: r.warmup,
        seeds: r.seeds,
        seed_base: r.seed_base,
    };
    let trace = cfg.sweep.trace.as_deref().map(|p| MapSpec::parse(&format!("trace:{p}"))).transpose()?;
    let mut out = Vec::new();
    for id in &cfg.sweep.scenarios {
        let scenario = Scenario::from_id(*id)?;
        for load in &cfg.sweep.loads {
            for speed in &cfg.sweep.speeds {
                out.push(ScenarioSpec { scenario, active: *load, speed: *speed, ..base.clone() });
            }
            if let Some(map) = &trace {
                out.push(ScenarioSpec { scenario, active: *load, map: map.clone(), ..base.clone() });
            }
        }
    }
    Ok(out)
}
