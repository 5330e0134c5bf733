//! Flow classification and the per-node flow binding table.
//!
//! A flow is identified by a 2-tuple (transport, destination port range).
//! Each entry carries a priority and an ordered list of attachments the
//! flow may use. On a mobile node the attachments are interface ids; on a
//! MAG or LMA they are MAG–LMA binding ids.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FlowId(pub u32);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "flow{}", self.0)
    }
}

/// Interface id (on a mobile node) or binding id (on a MAG/LMA).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttachmentId(pub u32);

impl fmt::Display for AttachmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Udp,
    Tcp,
    Any,
}

impl Transport {
    /// `Any` on either side matches.
    pub fn matches(self, other: Transport) -> bool {
        matches!((self, other), (Transport::Any, _) | (_, Transport::Any)) || self == other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowDescriptor {
    pub transport: Transport,
    pub port_lo: u16,
    pub port_hi: u16,
}

impl FlowDescriptor {
    pub fn new(transport: Transport, port_lo: u16, port_hi: u16) -> Result<Self, FlowError> {
        if port_lo == 0 || port_lo > port_hi {
            return Err(FlowError::InvalidPortRange { lo: port_lo, hi: port_hi });
        }
        Ok(Self { transport, port_lo, port_hi })
    }

    /// Inclusive on both ends.
    pub fn contains(&self, transport: Transport, port: u16) -> bool {
        self.transport.matches(transport) && self.port_lo <= port && port <= self.port_hi
    }

    fn overlaps(&self, other: &FlowDescriptor) -> bool {
        self.transport.matches(other.transport)
            && self.port_lo <= other.port_hi
            && other.port_lo <= self.port_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppClassKind {
    Safety,
    Comfort,
    User,
}

impl AppClassKind {
    pub const ALL: [AppClassKind; 3] = [AppClassKind::Safety, AppClassKind::Comfort, AppClassKind::User];

    pub fn name(self) -> &'static str {
        match self {
            AppClassKind::Safety => "safety",
            AppClassKind::Comfort => "comfort",
            AppClassKind::User => "user",
        }
    }

    /// Message period in seconds at ETSI rates.
    pub fn default_period(self) -> f64 {
        match self {
            AppClassKind::Safety => 0.1,
            AppClassKind::Comfort => 0.5,
            AppClassKind::User => 1.0,
        }
    }

    /// Flow id of this class in the default table.
    pub fn default_flow(self) -> FlowId {
        match self {
            AppClassKind::Safety => FlowId(1),
            AppClassKind::Comfort => FlowId(2),
            AppClassKind::User => FlowId(3),
        }
    }

    pub fn default_port(self) -> u16 {
        match self {
            AppClassKind::Safety => 5001,
            AppClassKind::Comfort => 5101,
            AppClassKind::User => 5201,
        }
    }
}

impl fmt::Display for AppClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Payload size that makes 13 messages/s come out at ~6.94 Kbps per vehicle.
pub const DEFAULT_PAYLOAD_BYTES: u32 = 67;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppClass {
    pub kind: AppClassKind,
    pub message_period: f64,
    pub payload_size: u32,
}

impl AppClass {
    pub fn new(kind: AppClassKind, message_period: f64, payload_size: u32) -> Result<Self, FlowError> {
        if !(message_period > 0.0) || payload_size == 0 {
            return Err(FlowError::InvalidAppClass(kind));
        }
        Ok(Self { kind, message_period, payload_size })
    }

    pub fn with_defaults(kind: AppClassKind) -> Self {
        Self { kind, message_period: kind.default_period(), payload_size: DEFAULT_PAYLOAD_BYTES }
    }

    pub fn rate(&self) -> f64 {
        1.0 / self.message_period
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowBindingEntry {
    pub flow_id: FlowId,
    /// 1 is the highest priority.
    pub priority: u32,
    pub descriptor: FlowDescriptor,
    pub preference: Vec<AttachmentId>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("invalid port range {lo}-{hi}")]
    InvalidPortRange { lo: u16, hi: u16 },
    #[error("invalid application class parameters for {0}")]
    InvalidAppClass(AppClassKind),
    #[error("duplicate flow id {0}")]
    DuplicateFlow(FlowId),
    #[error("flow {0} has priority 0")]
    ZeroPriority(FlowId),
    #[error("flow {0} has an empty preference list")]
    EmptyPreference(FlowId),
    #[error("flow {0} lists attachment {1} twice")]
    DuplicatePreference(FlowId, AttachmentId),
    #[error("flows {0} and {1} have overlapping descriptors")]
    OverlappingDescriptors(FlowId, FlowId),
    #[error("unknown flow {0}")]
    UnknownFlow(FlowId),
}

/// Result of [`FlowTable::classify`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Flow(FlowId),
    NoMatch,
}

/// Result of [`FlowTable::select_attachment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Attachment(AttachmentId),
    NoneAvailable,
}

/// A validated flow binding table. Construction enforces every table
/// invariant, so classification is always a function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FlowBindingEntry>", into = "Vec<FlowBindingEntry>")]
pub struct FlowTable {
    entries: Vec<FlowBindingEntry>,
}

impl FlowTable {
    pub fn new(entries: Vec<FlowBindingEntry>) -> Result<Self, FlowError> {
        let mut ids = BTreeSet::new();
        for e in &entries {
            if !ids.insert(e.flow_id) {
                return Err(FlowError::DuplicateFlow(e.flow_id));
            }
            if e.priority == 0 {
                return Err(FlowError::ZeroPriority(e.flow_id));
            }
            FlowDescriptor::new(e.descriptor.transport, e.descriptor.port_lo, e.descriptor.port_hi)?;
            if e.preference.is_empty() {
                return Err(FlowError::EmptyPreference(e.flow_id));
            }
            let mut seen = BTreeSet::new();
            for a in &e.preference {
                if !seen.insert(*a) {
                    return Err(FlowError::DuplicatePreference(e.flow_id, *a));
                }
            }
        }
        for (i, a) in entries.iter().enumerate() {
            for b in &entries[i + 1..] {
                if a.descriptor.overlaps(&b.descriptor) {
                    return Err(FlowError::OverlappingDescriptors(a.flow_id, b.flow_id));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[FlowBindingEntry] {
        &self.entries
    }

    pub fn get(&self, flow: FlowId) -> Option<&FlowBindingEntry> {
        self.entries.iter().find(|e| e.flow_id == flow)
    }

    pub fn flow_ids(&self) -> impl Iterator<Item = FlowId> + '_ {
        self.entries.iter().map(|e| e.flow_id)
    }

    pub fn classify(&self, transport: Transport, dest_port: u16) -> Classification {
        self.entries
            .iter()
            .find(|e| e.descriptor.contains(transport, dest_port))
            .map_or(Classification::NoMatch, |e| Classification::Flow(e.flow_id))
    }

    /// First attachment of the flow's preference list whose status is active.
    /// Attachments missing from `active` count as inactive.
    pub fn select_attachment(
        &self,
        flow: FlowId,
        active: &BTreeMap<AttachmentId, bool>,
    ) -> Result<Selection, FlowError> {
        let entry = self.get(flow).ok_or(FlowError::UnknownFlow(flow))?;
        Ok(entry
            .preference
            .iter()
            .copied()
            .find(|a| active.get(a).copied().unwrap_or(false))
            .map_or(Selection::NoneAvailable, Selection::Attachment))
    }

    /// Flows ordered by priority, lower flow id first on ties.
    pub fn by_priority(&self) -> Vec<&FlowBindingEntry> {
        let mut v: Vec<_> = self.entries.iter().collect();
        v.sort_by_key(|e| (e.priority, e.flow_id));
        v
    }

    /// Same descriptors and priorities, preferences rewritten per flow.
    pub fn with_preferences(&self, prefs: &BTreeMap<FlowId, Vec<AttachmentId>>) -> Result<Self, FlowError> {
        let entries = self
            .entries
            .iter()
            .map(|e| FlowBindingEntry {
                preference: prefs.get(&e.flow_id).cloned().unwrap_or_else(|| e.preference.clone()),
                ..e.clone()
            })
            .collect();
        Self::new(entries)
    }
}

impl TryFrom<Vec<FlowBindingEntry>> for FlowTable {
    type Error = FlowError;
    fn try_from(v: Vec<FlowBindingEntry>) -> Result<Self, FlowError> {
        Self::new(v)
    }
}

impl From<FlowTable> for Vec<FlowBindingEntry> {
    fn from(t: FlowTable) -> Self {
        t.entries
    }
}

pub fn classify_packet(transport: Transport, dest_port: u16, table: &FlowTable) -> Classification {
    table.classify(transport, dest_port)
}

pub fn select_attachment(
    flow: FlowId,
    table: &FlowTable,
    statuses: &BTreeMap<AttachmentId, bool>,
) -> Result<Selection, FlowError> {
    table.select_attachment(flow, statuses)
}

fn entry(id: u32, priority: u32, lo: u16, hi: u16, pref: &[u32]) -> FlowBindingEntry {
    FlowBindingEntry {
        flow_id: FlowId(id),
        priority,
        descriptor: FlowDescriptor { transport: Transport::Any, port_lo: lo, port_hi: hi },
        preference: pref.iter().map(|&a| AttachmentId(a)).collect(),
    }
}

/// The three-class table: safety 5001-5100 on [1, 2], comfort 5101-5200
/// and user 5201-5300 on [2].
pub fn default_flow_table() -> FlowTable {
    FlowTable::new(vec![
        entry(1, 1, 5001, 5100, &[1, 2]),
        entry(2, 2, 5101, 5200, &[2]),
        entry(3, 2, 5201, 5300, &[2]),
    ])
    .expect("default table is valid")
}

/// Variant of the default table in which comfort and user fall back to
/// interface 1 when interface 2 is down.
pub fn fallback_flow_table() -> FlowTable {
    FlowTable::new(vec![
        entry(1, 1, 5001, 5100, &[1, 2]),
        entry(2, 2, 5101, 5200, &[2, 1]),
        entry(3, 2, 5201, 5300, &[2, 1]),
    ])
    .expect("fallback table is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn statuses(pairs: &[(u32, bool)]) -> BTreeMap<AttachmentId, bool> {
        pairs.iter().map(|&(a, s)| (AttachmentId(a), s)).collect()
    }

    #[test]
    fn classify_examples() {
        let t = default_flow_table();
        assert_eq!(classify_packet(Transport::Udp, 5050, &t), Classification::Flow(FlowId(1)));
        assert_eq!(classify_packet(Transport::Tcp, 5150, &t), Classification::Flow(FlowId(2)));
        assert_eq!(classify_packet(Transport::Udp, 4999, &t), Classification::NoMatch);
        assert_eq!(classify_packet(Transport::Tcp, 5300, &t), Classification::Flow(FlowId(3)));
        assert_eq!(classify_packet(Transport::Tcp, 5301, &t), Classification::NoMatch);
    }

    #[test]
    fn select_examples() {
        let t = default_flow_table();
        let s = select_attachment(FlowId(1), &t, &statuses(&[(1, true), (2, true)])).unwrap();
        assert_eq!(s, Selection::Attachment(AttachmentId(1)));
        let s = select_attachment(FlowId(1), &t, &statuses(&[(1, false), (2, true)])).unwrap();
        assert_eq!(s, Selection::Attachment(AttachmentId(2)));
        let s = select_attachment(FlowId(2), &t, &statuses(&[(2, false)])).unwrap();
        assert_eq!(s, Selection::NoneAvailable);
        assert_eq!(
            select_attachment(FlowId(9), &t, &statuses(&[])),
            Err(FlowError::UnknownFlow(FlowId(9)))
        );
    }

    #[test]
    fn default_table_shape() {
        let t = default_flow_table();
        assert_eq!(t.entries().len(), 3);
        assert_eq!(t.get(FlowId(1)).unwrap().priority, 1);
        assert_eq!(t.get(FlowId(2)).unwrap().preference, vec![AttachmentId(2)]);
        assert_eq!(t.get(FlowId(3)).unwrap().preference, vec![AttachmentId(2)]);
        let p1 = t.get(FlowId(1)).unwrap().priority;
        assert!(p1 < t.get(FlowId(2)).unwrap().priority && p1 < t.get(FlowId(3)).unwrap().priority);
        let order: Vec<_> = t.by_priority().iter().map(|e| e.flow_id.0).collect();
        assert_eq!(order, vec![1, 2, 3]);
    }

    #[test]
    fn rejects_bad_tables() {
        let overlap = vec![entry(1, 1, 5001, 5100, &[1]), entry(2, 1, 5100, 5200, &[1])];
        assert_eq!(FlowTable::new(overlap), Err(FlowError::OverlappingDescriptors(FlowId(1), FlowId(2))));
        // Disjoint transports may share ports.
        let mut a = entry(1, 1, 5001, 5100, &[1]);
        a.descriptor.transport = Transport::Udp;
        let mut b = entry(2, 1, 5001, 5100, &[1]);
        b.descriptor.transport = Transport::Tcp;
        assert!(FlowTable::new(vec![a, b]).is_ok());
        assert_eq!(
            FlowTable::new(vec![entry(1, 1, 5001, 5100, &[])]),
            Err(FlowError::EmptyPreference(FlowId(1)))
        );
        assert_eq!(
            FlowTable::new(vec![entry(1, 1, 5001, 5100, &[2, 2])]),
            Err(FlowError::DuplicatePreference(FlowId(1), AttachmentId(2)))
        );
        assert_eq!(
            FlowTable::new(vec![entry(1, 1, 0, 5100, &[1])]),
            Err(FlowError::InvalidPortRange { lo: 0, hi: 5100 })
        );
        assert!(FlowTable::new(vec![entry(1, 1, 5001, 5100, &[1]), entry(1, 2, 6001, 6100, &[1])]).is_err());
        assert!(AppClass::new(AppClassKind::User, 0.0, 10).is_err());
    }

    #[test]
    fn serde_roundtrip_validates() {
        let t = fallback_flow_table();
        let s = serde_json::to_string(&t).unwrap();
        let back: FlowTable = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        let bad = r#"[{"flow_id":1,"priority":1,"descriptor":{"transport":"any","port_lo":10,"port_hi":20},"preference":[]}]"#;
        assert!(serde_json::from_str::<FlowTable>(bad).is_err());
    }

    proptest! {
        #[test]
        fn covered_ports_always_classify(port in 5001u16..=5300, tcp in any::<bool>()) {
            let t = default_flow_table();
            let tr = if tcp { Transport::Tcp } else { Transport::Udp };
            let c = t.classify(tr, port);
            prop_assert_ne!(c, Classification::NoMatch);
            // determinism
            prop_assert_eq!(c, t.classify(tr, port));
            // exactly one descriptor contains the port
            let hits = t.entries().iter().filter(|e| e.descriptor.contains(tr, port)).count();
            prop_assert_eq!(hits, 1);
        }

        #[test]
        fn selection_respects_order(mask in proptest::collection::vec(any::<bool>(), 2)) {
            let t = fallback_flow_table();
            let st = statuses(&[(1, mask[0]), (2, mask[1])]);
            for e in t.entries() {
                match t.select_attachment(e.flow_id, &st).unwrap() {
                    Selection::Attachment(a) => {
                        let pos = e.preference.iter().position(|x| *x == a).unwrap();
                        prop_assert!(st[&a]);
                        for earlier in &e.preference[..pos] {
                            prop_assert!(!st[earlier]);
                        }
                    }
                    Selection::NoneAvailable => {
                        prop_assert!(e.preference.iter().all(|a| !st[a]));
                    }
                }
            }
        }
    }
}
