//! Result files: the aggregate CSV, a JSON summary and per-run traces.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::harness::config::ConfigError;
use crate::harness::runner::{CellResult, METRICS};
use crate::harness::sim::RunOutput;

pub const CSV_NAME: &str = "results.csv";
pub const SUMMARY_NAME: &str = "summary.json";

/// One CSV row: a metric of one grid cell aggregated over seeds. Missing
/// values (not applicable, or a single seed for the interval) are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub scenario: u8,
    pub map: String,
    pub load: usize,
    pub speed: f64,
    pub metric: String,
    pub mean: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: usize,
}

pub fn rows(cells: &[CellResult]) -> Vec<Row> {
    let mut out = Vec::new();
    for c in cells {
        for name in METRICS {
            let s = c.get(name);
            out.push(Row {
                scenario: c.cell.scenario,
                map: c.cell.map.clone(),
                load: c.cell.load,
                speed: c.cell.speed,
                metric: name.to_string(),
                mean: s.map(|s| s.mean),
                ci_low: s.and_then(|s| s.ci_low),
                ci_high: s.and_then(|s| s.ci_high),
                n: s.map_or(0, |s| s.n),
            });
        }
    }
    out
}

fn io_err(path: &Path, e: impl ToString) -> ConfigError {
    ConfigError::Io { path: path.to_path_buf(), msg: e.to_string() }
}

pub fn csv_string(rows: &[Row]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialise");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

pub fn parse_csv(text: &str) -> Result<Vec<Row>, ConfigError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ConfigError::Parse(e.to_string()))
}

pub fn load_csv(path: &Path) -> Result<Vec<Row>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_csv(&text)
}

#[derive(Debug, Serialize)]
struct SummaryFile<'a> {
    cells: &'a [CellResult],
}

/// Writes `results.csv` and `summary.json` into `dir`.
pub fn write_results(dir: &Path, cells: &[CellResult]) -> Result<Vec<PathBuf>, ConfigError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let csv_path = dir.join(CSV_NAME);
    fs::write(&csv_path, csv_string(&rows(cells))).map_err(|e| io_err(&csv_path, e))?;
    let json_path = dir.join(SUMMARY_NAME);
    let json = serde_json::to_string_pretty(&SummaryFile { cells }).expect("summary serialises");
    fs::write(&json_path, json + "\n").map_err(|e| io_err(&json_path, e))?;
    Ok(vec![csv_path, json_path])
}

/// Writes the packet trace, event log and BCE dump of one run, the latter
/// two only when captured.
pub fn write_run_traces(dir: &Path, run: &RunOutput) -> Result<Vec<PathBuf>, ConfigError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let stem = format!("s{}_seed{}", run.scenario.id(), run.seed);
    let mut written = Vec::new();
    let mut put = |name: String, lines: Vec<String>| -> Result<(), ConfigError> {
        let path = dir.join(name);
        let mut text = lines.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        written.push(path);
        Ok(())
    };
    put(format!("packets_{stem}.txt"), run.packets.iter().map(|p| p.trace_line()).collect())?;
    if !run.event_log.is_empty() {
        put(format!("events_{stem}.log"), run.event_log.iter().map(|l| l.to_string()).collect())?;
    }
    if !run.bce_dump.is_empty() {
        put(format!("bce_{stem}.txt"), run.bce_dump.clone())?;
    }
    Ok(written)
}
