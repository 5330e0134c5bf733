//! The four compared configurations and the parameters of one experiment.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::flow::{AttachmentId, FlowBindingEntry, FlowTable};
use crate::harness::config::{ConfigError, SimConfig};
use crate::mihf::InterfaceId;
use crate::mobility::TraceFile;

pub const LTE_IF: InterfaceId = AttachmentId(1);
pub const WIFI_IF: InterfaceId = AttachmentId(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// LTE only; no handover.
    LteOnly,
    /// Wi-Fi only; horizontal handovers between access points.
    WifiOnly,
    /// Both radios with per-flow mobility.
    Sfmma,
    /// Both radios, one in use at a time; starts on Wi-Fi and switches
    /// technology on coverage loss.
    SingleInterface,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::LteOnly, Scenario::WifiOnly, Scenario::Sfmma, Scenario::SingleInterface];

    pub fn from_id(id: u8) -> Result<Self, ConfigError> {
        Self::ALL.get(id as usize).copied().ok_or_else(|| ConfigError::Invalid(format!("unknown scenario {id}")))
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn uses_lte(self) -> bool {
        self != Scenario::WifiOnly
    }

    pub fn uses_wifi(self) -> bool {
        self != Scenario::LteOnly
    }

    pub fn performs_handover(self) -> bool {
        self != Scenario::LteOnly
    }

    /// Flow table installed on every node. Scenario 2 uses the configured
    /// table; the others rewrite every preference list.
    pub fn flow_table(self, cfg: &SimConfig) -> FlowTable {
        let prefs = match self {
            Scenario::Sfmma => return cfg.flow_table.clone(),
            Scenario::LteOnly => vec![LTE_IF],
            Scenario::WifiOnly => vec![WIFI_IF],
            Scenario::SingleInterface => vec![WIFI_IF, LTE_IF],
        };
        let entries = cfg.flow_table.entries().iter().map(|e| FlowBindingEntry { preference: prefs.clone(), ..e.clone() }).collect();
        FlowTable::new(entries).expect("rewritten preferences keep the table valid")
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

#[derive(Debug, Clone)]
pub enum MapSpec {
    Manhattan,
    Trace { path: String, trace: Arc<TraceFile> },
}

impl MapSpec {
    /// Parses `manhattan` or `trace:<path>` and loads the trace.
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        if s == "manhattan" {
            return Ok(MapSpec::Manhattan);
        }
        let Some(path) = s.strip_prefix("trace:") else {
            return Err(ConfigError::Invalid(format!("map must be `manhattan` or `trace:<path>`, got `{s}`")));
        };
        let trace = TraceFile::load(std::path::Path::new(path)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(MapSpec::Trace { path: path.to_string(), trace: Arc::new(trace) })
    }

    pub fn label(&self) -> String {
        match self {
            MapSpec::Manhattan => "manhattan".into(),
            MapSpec::Trace { path, .. } => format!("trace:{path}"),
        }
    }
}

impl PartialEq for MapSpec {
    fn eq(&self, other: &Self) -> bool {
        self.label() == other.label()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub active: usize,
    pub vehicles: usize,
    pub speed: f64,
    pub map: MapSpec,
    pub duration: f64,
    pub warmup: f64,
    pub seeds: u32,
    pub seed_base: u64,
}

impl ScenarioSpec {
    /// Spec from the `[run]` section of a config.
    pub fn from_config(cfg: &SimConfig) -> Result<Self, ConfigError> {
        let r = &cfg.run;
        Ok(Self {
            scenario: Scenario::from_id(r.scenario)?,
            active: r.active,
            vehicles: r.vehicles,
            speed: r.speed,
            map: MapSpec::parse(&r.map)?,
            duration: r.duration,
            warmup: r.warmup,
            seeds: r.seeds,
            seed_base: r.seed_base,
        })
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed_base + i).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.active > self.vehicles {
            return bad(format!("{} active senders but only {} vehicles", self.active, self.vehicles));
        }
        if !(self.duration > 0.0) || !(self.warmup >= 0.0) || self.warmup >= self.duration {
            return bad("need 0 <= warmup < duration".into());
        }
        if !(self.speed > 0.0) {
            return bad("speed must be positive".into());
        }
        if self.seeds == 0 {
            return bad("at least one seed is required".into());
        }
        if let MapSpec::Trace { trace, path } = &self.map {
            if trace.vehicle_count() < self.active {
                return bad(format!("{path} has {} vehicles, {} needed", trace.vehicle_count(), self.active));
            }
            for v in trace.vehicles().take(self.active) {
                let (a, b) = trace.span(v).expect("vehicle listed");
                if a > 0.0 || b < self.duration {
                    return bad(format!("{path}: vehicle {v} spans [{a}, {b}], run needs [0, {}]", self.duration));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_per_scenario() {
        let cfg = SimConfig::default();
        for e in Scenario::LteOnly.flow_table(&cfg).entries() {
            assert_eq!(e.preference, vec![LTE_IF]);
        }
        for e in Scenario::WifiOnly.flow_table(&cfg).entries() {
            assert_eq!(e.preference, vec![WIFI_IF]);
        }
        let t = Scenario::Sfmma.flow_table(&cfg);
        assert_eq!(t.entries()[0].preference, vec![LTE_IF, WIFI_IF]);
        assert_eq!(t.entries()[1].preference, vec![WIFI_IF, LTE_IF]);
    }

    #[test]
    fn map_parsing() {
        assert_eq!(MapSpec::parse("manhattan").unwrap(), MapSpec::Manhattan);
        assert!(MapSpec::parse("grid").is_err());
        assert!(MapSpec::parse("trace:/nonexistent/file").is_err());
        assert!(Scenario::from_id(4).is_err());
    }
}
