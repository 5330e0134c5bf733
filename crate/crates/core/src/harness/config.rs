//! Simulation configuration. Every default lives here and can be
//! overridden from a TOML file; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{fallback_flow_table, AppClass, AppClassKind, FlowTable};
use crate::mihf::{Bounds, Technology, Thresholds};
use crate::mobility::ManhattanConfig;
use crate::netsim::{AccessLoad, BackboneConfig, Coverage, LossModel, RadioModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunDefaults {
    pub scenario: u8,
    pub active: usize,
    pub speed: f64,
    /// `manhattan` or `trace:<path>`.
    pub map: String,
    pub seeds: u32,
    pub seed_base: u64,
    pub duration: f64,
    pub warmup: f64,
    pub vehicles: usize,
}

impl Default for RunDefaults {
    fn default() -> Self {
        Self {
            scenario: 2,
            active: 50,
            speed: 10.0,
            map: "manhattan".into(),
            seeds: 10,
            seed_base: 1,
            duration: 120.0,
            warmup: 10.0,
            vehicles: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub scenarios: Vec<u8>,
    pub loads: Vec<usize>,
    pub speeds: Vec<f64>,
    /// Optional trace map swept over `loads` at its own speeds.
    pub trace: Option<String>,
    pub out: String,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![0, 1, 2, 3],
            loads: vec![10, 20, 30, 40, 50],
            speeds: vec![5.0, 10.0, 15.0, 20.0, 25.0],
            trace: None,
            out: "results".into(),
        }
    }
}

/// Access point placement for one map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Placement {
    pub lte_position: (f64, f64),
    pub wifi_aps: Vec<(f64, f64)>,
}

impl Placement {
    fn manhattan() -> Self {
        Self { lte_position: (600.0, 400.0), wifi_aps: vec![(200.0, 200.0), (600.0, 600.0), (1000.0, 200.0)] }
    }

    fn neighborhood() -> Self {
        Self { lte_position: (300.0, 150.0), wifi_aps: vec![(100.0, 150.0), (300.0, 150.0), (500.0, 150.0)] }
    }
}

impl Default for Placement {
    fn default() -> Self {
        Self::manhattan()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioConfig {
    pub base_latency: f64,
    pub attach_delay: f64,
    /// Coverage radius in meters; absent means the whole map.
    pub radius: Option<f64>,
    pub beacon_exponent: f64,
    pub loss: LossModel,
    pub load: AccessLoad,
}

impl RadioConfig {
    fn lte() -> Self {
        Self {
            base_latency: 0.020,
            attach_delay: 0.050,
            radius: None,
            beacon_exponent: 0.0,
            loss: LossModel { p0: 0.0005, alpha: 0.0015, reference_range: 1000.0, ..LossModel::default() },
            load: AccessLoad::Queue { service_rate: 720.0, capacity: 30 },
        }
    }

    fn wifi() -> Self {
        Self {
            base_latency: 0.002,
            attach_delay: 0.030,
            radius: Some(250.0),
            beacon_exponent: 10.0,
            loss: LossModel { p0: 0.0005, alpha: 0.0015, ..LossModel::default() },
            load: AccessLoad::Contention { delay_per_msg_rate: 0.0003, loss_per_msg_rate: 0.00004 },
        }
    }

    pub fn model(&self, technology: Technology) -> RadioModel {
        RadioModel {
            technology,
            coverage: match self.radius {
                Some(radius) => Coverage::Disc { radius },
                None => Coverage::Full,
            },
            base_latency: self.base_latency,
            attach_delay: self.attach_delay,
            loss: self.loss,
            load: self.load,
            beacon_exponent: self.beacon_exponent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Position update and beacon interval.
    pub tick: f64,
    /// Consecutive missed beacons that declare the link down.
    pub beacon_misses: u32,
    /// Time a new Wi-Fi association must stay up before the mobility
    /// manager of scenario 2 acts on it.
    pub sfmma_hold: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { tick: 0.1, beacon_misses: 3, sfmma_hold: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub period: f64,
    pub payload: u32,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppsConfig {
    pub safety: AppConfig,
    pub comfort: AppConfig,
    pub user: AppConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self::of(AppClassKind::Safety)
    }
}

impl AppConfig {
    fn of(kind: AppClassKind) -> Self {
        let c = AppClass::with_defaults(kind);
        Self { period: c.message_period, payload: c.payload_size, port: kind.default_port() }
    }
}

impl Default for AppsConfig {
    fn default() -> Self {
        Self {
            safety: AppConfig::of(AppClassKind::Safety),
            comfort: AppConfig::of(AppClassKind::Comfort),
            user: AppConfig::of(AppClassKind::User),
        }
    }
}

impl AppsConfig {
    pub fn get(&self, kind: AppClassKind) -> &AppConfig {
        match kind {
            AppClassKind::Safety => &self.safety,
            AppClassKind::Comfort => &self.comfort,
            AppClassKind::User => &self.user,
        }
    }

    pub fn classes(&self) -> Result<Vec<AppClass>, ConfigError> {
        AppClassKind::ALL
            .iter()
            .map(|k| {
                let a = self.get(*k);
                AppClass::new(*k, a.period, a.payload).map_err(|e| ConfigError::Invalid(e.to_string()))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub safety: Thresholds,
    pub comfort: Thresholds,
    pub user: Thresholds,
    /// Aggregate thresholds applied by Wi-Fi MAGs to each flow id.
    pub mag: Thresholds,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            safety: Thresholds::for_class(AppClassKind::Safety),
            comfort: Thresholds::for_class(AppClassKind::Comfort),
            user: Thresholds::for_class(AppClassKind::User),
            mag: Thresholds {
                throughput: Bounds::new(0.0, f64::INFINITY),
                packet_loss: Bounds::new(0.0, 0.05),
                delay: Bounds::new(0.0, 0.25),
            },
        }
    }
}

impl ThresholdConfig {
    pub fn for_class(&self, kind: AppClassKind) -> Thresholds {
        match kind {
            AppClassKind::Safety => self.safety,
            AppClassKind::Comfort => self.comfort,
            AppClassKind::User => self.user,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub exchange_timeout: f64,
    pub bce_lifetime: f64,
    /// Flow status window.
    pub window: f64,
    /// Consecutive violating windows before a flow move is requested.
    pub violation_windows: u32,
    pub tunnel_overhead: u32,
    /// Bytes of a signalling message, for serialisation delay only.
    pub signalling_size: u32,
    pub confidence: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            exchange_timeout: 0.5,
            bce_lifetime: 300.0,
            window: 1.0,
            violation_windows: 2,
            tunnel_overhead: 40,
            signalling_size: 64,
            confidence: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub run: RunDefaults,
    pub sweep: SweepConfig,
    pub manhattan: ManhattanConfig,
    pub manhattan_aps: Placement,
    pub trace_aps: Placement,
    pub backbone: BackboneConfig,
    pub lte: RadioConfig,
    pub wifi: RadioConfig,
    pub link: LinkConfig,
    pub apps: AppsConfig,
    pub thresholds: ThresholdConfig,
    pub protocol: ProtocolConfig,
    /// Scenario 2 flow table, interface 1 = LTE, 2 = Wi-Fi.
    pub flow_table: FlowTable,
}

/// Merges `user` into `base` key by key. A table carrying a `kind` tag
/// replaces the base table whole so variant fields do not mix.
fn overlay(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if !u.contains_key("kind") => overlay(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            run: RunDefaults::default(),
            sweep: SweepConfig::default(),
            manhattan: ManhattanConfig::default(),
            manhattan_aps: Placement::manhattan(),
            trace_aps: Placement::neighborhood(),
            backbone: BackboneConfig::default(),
            lte: RadioConfig::lte(),
            wifi: RadioConfig::wifi(),
            link: LinkConfig::default(),
            apps: AppsConfig::default(),
            thresholds: ThresholdConfig::default(),
            protocol: ProtocolConfig::default(),
            flow_table: fallback_flow_table(),
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let user: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let mut merged: toml::Table = toml::from_str(&Self::default().to_toml()).expect("defaults parse");
        overlay(&mut merged, user);
        let cfg: SimConfig = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.into(), msg: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        let r = &self.run;
        if r.scenario > 3 {
            return bad("scenario must be 0..=3");
        }
        if !(r.duration > 0.0) || !(r.warmup >= 0.0) || r.warmup >= r.duration {
            return bad("need 0 <= warmup < duration");
        }
        if r.active > r.vehicles {
            return bad("active senders exceed vehicle count");
        }
        if !(r.speed > 0.0) {
            return bad("speed must be positive");
        }
        if r.seeds == 0 {
            return bad("seeds must be at least 1");
        }
        if self.sweep.scenarios.iter().any(|s| *s > 3) {
            return bad("sweep scenario must be 0..=3");
        }
        self.manhattan.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.manhattan_aps.wifi_aps.is_empty() || self.trace_aps.wifi_aps.is_empty() {
            return bad("each map needs at least one Wi-Fi access point");
        }
        if self.wifi.radius.is_none_or(|r| !(r > 0.0)) {
            return bad("wifi.radius must be positive");
        }
        if self.lte.radius.is_some() {
            return bad("lte covers the whole map; remove lte.radius");
        }
        for (name, rc) in [("lte", &self.lte), ("wifi", &self.wifi)] {
            if rc.base_latency < 0.0 || rc.attach_delay < 0.0 || rc.loss.reference_range <= 0.0 {
                return Err(ConfigError::Invalid(format!("{name}: negative latency or non-positive reference range")));
            }
            if let AccessLoad::Queue { service_rate, capacity } = rc.load {
                if !(service_rate > 0.0) || capacity == 0 {
                    return Err(ConfigError::Invalid(format!("{name}: queue needs positive rate and capacity")));
                }
            }
        }
        if !(self.link.tick > 0.0) || self.link.beacon_misses == 0 || self.link.sfmma_hold < 0.0 {
            return bad("link: tick > 0, beacon_misses >= 1, sfmma_hold >= 0");
        }
        self.apps.classes()?;
        for t in [self.thresholds.safety, self.thresholds.comfort, self.thresholds.user, self.thresholds.mag] {
            t.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let p = &self.protocol;
        if !(p.window > 0.0) || !(p.exchange_timeout > 0.0) || !(p.bce_lifetime > 0.0) || p.violation_windows == 0 {
            return bad("protocol: window, timeout, lifetime must be positive and violation_windows >= 1");
        }
        if p.bce_lifetime <= p.window {
            return bad("protocol.bce_lifetime must exceed the refresh window");
        }
        if !(p.confidence > 0.0 && p.confidence < 1.0) {
            return bad("protocol.confidence must be in (0, 1)");
        }
        for kind in AppClassKind::ALL {
            let port = self.apps.get(kind).port;
            match crate::flow::classify_packet(crate::flow::Transport::Udp, port, &self.flow_table) {
                crate::flow::Classification::Flow(_) => {}
                crate::flow::Classification::NoMatch => {
                    return Err(ConfigError::Invalid(format!("port {port} of {} matches no flow", kind.name())))
                }
            }
        }
        for e in self.flow_table.entries() {
            if e.preference.iter().any(|a| a.0 != 1 && a.0 != 2) {
                return Err(ConfigError::Invalid(format!("flow {} prefers an unknown interface", e.flow_id)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = SimConfig::default();
        let text = cfg.to_toml();
        let back = SimConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        for key in ["[lte.loss]", "[wifi.load]", "[[flow_table]]", "[thresholds.safety.delay]", "sfmma_hold", "tunnel_overhead"] {
            assert!(text.contains(key), "missing {key}");
        }
    }

    #[test]
    fn partial_override() {
        let cfg = SimConfig::from_toml("[run]\nactive = 10\n[wifi]\nradius = 300.0\n").unwrap();
        assert_eq!(cfg.run.active, 10);
        assert_eq!(cfg.wifi.radius, Some(300.0));
        assert_eq!(cfg.wifi.attach_delay, 0.030);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(SimConfig::from_toml("[run]\nscenario = 7\n").is_err());
        assert!(SimConfig::from_toml("[run]\nbogus = 1\n").is_err());
        assert!(SimConfig::from_toml("[run]\nwarmup = 200.0\n").is_err());
        assert!(SimConfig::from_toml("[manhattan]\nturn_probabilities = [0.5, 0.5, 0.5]\n").is_err());
        assert!(SimConfig::from_toml("[apps.user]\nport = 9000\n").is_err());
    }
}
