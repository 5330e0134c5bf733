//! Media independent handover function with the flow-aware information
//! elements: per-interface state, windowed flow status and the per-MAG
//! container held by the LMA.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{AppClassKind, AttachmentId, FlowId};
use crate::ids::{Hnp, MnId, PoaId};

pub type InterfaceId = AttachmentId;

/// Default sliding measurement window, seconds.
pub const DEFAULT_WINDOW: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Technology {
    Lte,
    #[serde(rename = "wave80211p")]
    Wave80211p,
}

impl Technology {
    pub fn name(self) -> &'static str {
        match self {
            Technology::Lte => "lte",
            Technology::Wave80211p => "wifi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LinkStatus {
    Active,
    Inactive,
}

/// IE-Interface record. `status` only changes through [`Mihf::on_link_event`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceEntry {
    pub interface_id: InterfaceId,
    pub technology: Technology,
    pub hnp_list: Vec<Hnp>,
    poa: Option<PoaId>,
    status: LinkStatus,
}

impl InterfaceEntry {
    pub fn new(interface_id: InterfaceId, technology: Technology) -> Self {
        Self { interface_id, technology, hnp_list: Vec::new(), poa: None, status: LinkStatus::Inactive }
    }

    pub fn poa(&self) -> Option<PoaId> {
        self.poa
    }

    pub fn status(&self) -> LinkStatus {
        self.status
    }

    pub fn is_active(&self) -> bool {
        self.status == LinkStatus::Active
    }

    /// Adds a prefix if not already present.
    pub fn add_hnp(&mut self, hnp: Hnp) {
        if !self.hnp_list.contains(&hnp) {
            self.hnp_list.push(hnp);
        }
    }

    pub fn remove_hnp(&mut self, hnp: Hnp) {
        self.hnp_list.retain(|h| *h != hnp);
    }
}

/// One measurement fed into the flow status window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub delivered: bool,
    pub delay: f64,
    pub bits: u64,
}

/// IE-Container-FlowStatus entry. `None` marks "no data" in the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowStatus {
    pub flow_id: FlowId,
    /// bits/second over the window.
    pub throughput: f64,
    pub packet_loss: Option<f64>,
    pub delay: Option<f64>,
    pub window: f64,
}

impl FlowStatus {
    pub fn no_data(flow_id: FlowId, window: f64) -> Self {
        Self { flow_id, throughput: 0.0, packet_loss: None, delay: None, window }
    }

    pub fn has_data(&self) -> bool {
        self.packet_loss.is_some()
    }

    pub fn metric(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Throughput => self.has_data().then_some(self.throughput),
            Metric::PacketLoss => self.packet_loss,
            Metric::Delay => self.delay,
        }
    }
}

/// Sliding-window flow status store, one window per flow.
#[derive(Debug, Clone)]
pub struct StatusStore {
    window: f64,
    samples: BTreeMap<FlowId, VecDeque<(f64, Sample)>>,
}

impl StatusStore {
    pub fn new(window: f64) -> Self {
        assert!(window > 0.0, "window must be positive");
        Self { window, samples: BTreeMap::new() }
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn record_sample(&mut self, flow: FlowId, sample: Sample, now: f64) -> FlowStatus {
        debug_assert!(!sample.delivered || sample.delay >= 0.0);
        self.samples.entry(flow).or_default().push_back((now, sample));
        self.status(flow, now)
    }

    /// Status of `flow` over `(now - window, now]`.
    pub fn status(&mut self, flow: FlowId, now: f64) -> FlowStatus {
        let cutoff = now - self.window;
        let Some(q) = self.samples.get_mut(&flow) else {
            return FlowStatus::no_data(flow, self.window);
        };
        while q.front().is_some_and(|(t, _)| *t <= cutoff) {
            q.pop_front();
        }
        if q.is_empty() {
            return FlowStatus::no_data(flow, self.window);
        }
        let mut lost = 0usize;
        let mut bits = 0u64;
        let mut delay_sum = 0.0;
        let mut delivered = 0usize;
        for (_, s) in q.iter() {
            if s.delivered {
                delivered += 1;
                bits += s.bits;
                delay_sum += s.delay;
            } else {
                lost += 1;
            }
        }
        FlowStatus {
            flow_id: flow,
            throughput: bits as f64 / self.window,
            packet_loss: Some(lost as f64 / q.len() as f64),
            delay: (delivered > 0).then(|| delay_sum / delivered as f64),
            window: self.window,
        }
    }

    pub fn flows(&self) -> impl Iterator<Item = FlowId> + '_ {
        self.samples.keys().copied()
    }
}

pub fn record_sample(store: &mut StatusStore, flow: FlowId, sample: Sample, now: f64) -> FlowStatus {
    store.record_sample(flow, sample, now)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Throughput,
    PacketLoss,
    Delay,
}

impl Metric {
    /// Evaluation precedence when several metrics violate.
    pub const PRECEDENCE: [Metric; 3] = [Metric::PacketLoss, Metric::Delay, Metric::Throughput];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub throughput: Bounds,
    pub packet_loss: Bounds,
    pub delay: Bounds,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MihfError {
    #[error("threshold bounds for {0:?} are inverted")]
    InvertedBounds(Metric),
    #[error("unknown interface {0}")]
    UnknownInterface(InterfaceId),
    #[error("link up on interface {0} without a point of attachment")]
    MissingPoa(InterfaceId),
    #[error("event at {got} precedes previous event at {last}")]
    NonMonotonic { last: f64, got: f64 },
    #[error("requester may not query domain-wide information")]
    UnauthorizedScope,
    #[error("unknown requester")]
    UnknownRequester,
}

impl Thresholds {
    pub fn new(throughput: Bounds, packet_loss: Bounds, delay: Bounds) -> Result<Self, MihfError> {
        let t = Self { throughput, packet_loss, delay };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), MihfError> {
        for m in Metric::PRECEDENCE {
            let b = self.bounds(m);
            if b.lower > b.upper {
                return Err(MihfError::InvertedBounds(m));
            }
        }
        Ok(())
    }

    pub fn bounds(&self, m: Metric) -> Bounds {
        match m {
            Metric::Throughput => self.throughput,
            Metric::PacketLoss => self.packet_loss,
            Metric::Delay => self.delay,
        }
    }

    /// Loss upper 0.05, delay upper = message period, throughput lower 0.
    pub fn for_class(kind: AppClassKind) -> Self {
        Self {
            throughput: Bounds::new(0.0, f64::INFINITY),
            packet_loss: Bounds::new(0.0, 0.05),
            delay: Bounds::new(0.0, kind.default_period()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    WithinBounds,
    AboveUpper(Metric),
    BelowLower(Metric),
}

/// Upper violations win over lower ones; within each, loss, then delay,
/// then throughput. Metrics without data are skipped.
pub fn evaluate_thresholds(status: &FlowStatus, th: &Thresholds) -> Verdict {
    for m in Metric::PRECEDENCE {
        if let Some(v) = status.metric(m) {
            if v > th.bounds(m).upper {
                return Verdict::AboveUpper(m);
            }
        }
    }
    for m in Metric::PRECEDENCE {
        if let Some(v) = status.metric(m) {
            if v < th.bounds(m).lower {
                return Verdict::BelowLower(m);
            }
        }
    }
    Verdict::WithinBounds
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MihEventKind {
    LinkUp,
    LinkDown,
    LinkParametersReport,
    LinkGoingDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MihEvent {
    pub kind: MihEventKind,
    pub interface_id: InterfaceId,
    pub timestamp: f64,
    /// POA reached on LinkUp.
    pub poa: Option<PoaId>,
    pub report: Option<FlowStatus>,
}

impl MihEvent {
    pub fn link_up(interface_id: InterfaceId, poa: PoaId, timestamp: f64) -> Self {
        Self { kind: MihEventKind::LinkUp, interface_id, timestamp, poa: Some(poa), report: None }
    }

    pub fn link_down(interface_id: InterfaceId, timestamp: f64) -> Self {
        Self { kind: MihEventKind::LinkDown, interface_id, timestamp, poa: None, report: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subscriber {
    LinkSelector,
    RequirementManager,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Notification {
    pub subscriber: Subscriber,
    pub event: MihEvent,
}

/// Per-node MIHF state: registered interfaces and event subscribers.
#[derive(Debug, Clone, Default)]
pub struct Mihf {
    interfaces: BTreeMap<InterfaceId, InterfaceEntry>,
    subscribers: Vec<Subscriber>,
    last_event: Option<f64>,
}

impl Mihf {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_interface(&mut self, entry: InterfaceEntry) {
        self.interfaces.insert(entry.interface_id, entry);
    }

    pub fn subscribe(&mut self, s: Subscriber) {
        self.subscribers.push(s);
    }

    pub fn interface(&self, id: InterfaceId) -> Option<&InterfaceEntry> {
        self.interfaces.get(&id)
    }

    pub fn interfaces(&self) -> impl Iterator<Item = &InterfaceEntry> {
        self.interfaces.values()
    }

    /// Mutable access to everything but the link status.
    pub fn hnps_mut(&mut self, id: InterfaceId) -> Option<&mut Vec<Hnp>> {
        self.interfaces.get_mut(&id).map(|e| &mut e.hnp_list)
    }

    pub fn active_map(&self) -> BTreeMap<AttachmentId, bool> {
        self.interfaces.iter().map(|(k, v)| (*k, v.is_active())).collect()
    }

    pub fn on_link_event(&mut self, event: MihEvent) -> Result<Vec<Notification>, MihfError> {
        if let Some(last) = self.last_event {
            if event.timestamp < last {
                return Err(MihfError::NonMonotonic { last, got: event.timestamp });
            }
        }
        let entry = self
            .interfaces
            .get_mut(&event.interface_id)
            .ok_or(MihfError::UnknownInterface(event.interface_id))?;
        match event.kind {
            MihEventKind::LinkUp => {
                let poa = event.poa.ok_or(MihfError::MissingPoa(event.interface_id))?;
                entry.poa = Some(poa);
                entry.status = LinkStatus::Active;
            }
            MihEventKind::LinkDown => {
                entry.poa = None;
                entry.status = LinkStatus::Inactive;
            }
            MihEventKind::LinkParametersReport | MihEventKind::LinkGoingDown => {}
        }
        self.last_event = Some(event.timestamp);
        Ok(self
            .subscribers
            .iter()
            .map(|s| Notification { subscriber: *s, event: event.clone() })
            .collect())
    }
}

/// IE-CONTAINER-MAG: POA information plus the flow statuses seen at that MAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagContainer {
    pub poa_id: PoaId,
    pub link_addr: String,
    pub location: (f64, f64),
    /// Coverage radius in metres; `None` for full-map coverage.
    pub channel_range: Option<f64>,
    pub system_info: Technology,
    pub subnet_info: Vec<Hnp>,
    pub flow_statuses: BTreeMap<FlowId, FlowStatus>,
    pub ip_addr: String,
}

impl MagContainer {
    pub fn new(poa_id: PoaId, technology: Technology, location: (f64, f64), channel_range: Option<f64>) -> Self {
        Self {
            poa_id,
            link_addr: format!("02:00:00:00:00:{:02x}", poa_id.0 & 0xff),
            location,
            channel_range,
            system_info: technology,
            subnet_info: Vec::new(),
            flow_statuses: BTreeMap::new(),
            ip_addr: format!("mag{}", poa_id.0),
        }
    }

    pub fn covers(&self, pos: (f64, f64)) -> bool {
        match self.channel_range {
            None => true,
            Some(r) => {
                let (dx, dy) = (pos.0 - self.location.0, pos.1 - self.location.1);
                (dx * dx + dy * dy).sqrt() <= r
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    LocalLinks,
    DomainWide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Requester {
    Mn(MnId),
    Mag(PoaId),
    Lma,
}

/// Immutable copy of the information visible to one requester.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InfoSnapshot {
    pub containers: Vec<MagContainer>,
    pub interfaces: Vec<InterfaceEntry>,
    pub flow_statuses: Vec<FlowStatus>,
}

impl InfoSnapshot {
    /// One structured record for the debug log.
    pub fn to_log_line(&self, time: f64, requester: Requester) -> String {
        serde_json::json!({ "t": time, "requester": requester, "snapshot": self }).to_string()
    }
}

/// The information service of one LMA domain.
#[derive(Debug, Clone, Default)]
pub struct InformationService {
    containers: BTreeMap<PoaId, MagContainer>,
    mobile_nodes: BTreeMap<MnId, (Vec<InterfaceEntry>, Vec<FlowStatus>)>,
}

impl InformationService {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn upsert_container(&mut self, c: MagContainer) {
        self.containers.insert(c.poa_id, c);
    }

    pub fn container_mut(&mut self, poa: PoaId) -> Option<&mut MagContainer> {
        self.containers.get_mut(&poa)
    }

    pub fn container(&self, poa: PoaId) -> Option<&MagContainer> {
        self.containers.get(&poa)
    }

    pub fn update_mn(&mut self, mn: MnId, interfaces: Vec<InterfaceEntry>, statuses: Vec<FlowStatus>) {
        self.mobile_nodes.insert(mn, (interfaces, statuses));
    }

    pub fn query_information(&self, scope: Scope, requester: Requester) -> Result<InfoSnapshot, MihfError> {
        match requester {
            Requester::Lma => Ok(InfoSnapshot {
                containers: self.containers.values().cloned().collect(),
                ..Default::default()
            }),
            Requester::Mag(poa) => {
                if scope == Scope::DomainWide {
                    return Err(MihfError::UnauthorizedScope);
                }
                let c = self.containers.get(&poa).ok_or(MihfError::UnknownRequester)?;
                Ok(InfoSnapshot { containers: vec![c.clone()], ..Default::default() })
            }
            Requester::Mn(mn) => {
                if scope == Scope::DomainWide {
                    return Err(MihfError::UnauthorizedScope);
                }
                let (ifs, st) = self.mobile_nodes.get(&mn).ok_or(MihfError::UnknownRequester)?;
                Ok(InfoSnapshot { containers: Vec::new(), interfaces: ifs.clone(), flow_statuses: st.clone() })
            }
        }
    }
}
