//! Flow-exchange state machines for the mobile node, the MAGs and the LMA.
//!
//! Every procedure is split into a pure planning step, which yields the
//! ordered message sequence of the exchange, and a commit step that applies
//! the binding changes. Nothing is mutated until commit, so an aborted
//! exchange leaves flow tables, binding caches and tunnels untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{AttachmentId, FlowId, FlowTable};
use crate::ids::{Hnp, MnId, PoaId};
use crate::mihf::{
    InformationService, InterfaceEntry, InterfaceId, MagContainer, Metric, MihEvent, Mihf, MihfError,
    Notification, StatusStore, Subscriber, Technology, Thresholds, DEFAULT_WINDOW,
};
use crate::pmip::{Entity, LmaState, MagState, MessageKind, PmipError, PmipMessage};

pub type ExchangeId = u64;

/// Exchange timeout in simulated seconds.
pub const DEFAULT_EXCHANGE_TIMEOUT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    MnInitiated,
    MagInitiated,
    LmaInitiated,
    LinkActivation,
    /// Plain layer-3 attachment handover (initial attach, AP change,
    /// single-interface technology switch).
    Attachment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExchangeState {
    Started,
    CandidatesReceived,
    Committing,
    Committed,
    Aborted,
}

impl ExchangeState {
    pub fn is_terminal(self) -> bool {
        matches!(self, ExchangeState::Committed | ExchangeState::Aborted)
    }
}

/// Direction of a MAG threshold crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Overloaded: offload the flow elsewhere.
    AboveUpper,
    /// Idle: volunteer to absorb the flow.
    BelowLower,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExchangeError {
    #[error("unknown mobile node {0}")]
    UnknownMn(MnId),
    #[error("unknown MAG {0}")]
    UnknownMag(PoaId),
    #[error("unknown flow {0}")]
    UnknownFlow(FlowId),
    #[error("an exchange for {0} is already in flight")]
    InFlight(FlowId),
    #[error("interface {0} is not active")]
    InterfaceInactive(InterfaceId),
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("no candidate MAG")]
    NoCandidate,
    #[error("LMA declined the offer")]
    LmaDecline,
    #[error("mobile node has no active interface toward {0}")]
    TargetUnreachable(PoaId),
    #[error("no candidate reply within the exchange timeout")]
    CandidateTimeout,
    #[error("exchange preconditions no longer hold")]
    Stale,
    #[error("exchange {0} is not in flight")]
    NotInFlight(ExchangeId),
    #[error("state cannot move from {from:?} to {to:?}")]
    BadTransition { from: ExchangeState, to: ExchangeState },
    #[error(transparent)]
    Pmip(#[from] PmipError),
    #[error(transparent)]
    Mihf(#[from] MihfError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub id: ExchangeId,
    pub mn: MnId,
    pub flows: Vec<FlowId>,
    pub origin: Origin,
    pub start_time: f64,
    pub target_interface: InterfaceId,
    pub target_poa: PoaId,
    pub state: ExchangeState,
    pub commit_time: Option<f64>,
}

impl ExchangeRecord {
    fn advance(&mut self, to: ExchangeState) -> Result<(), ExchangeError> {
        if self.state.is_terminal() || to < self.state {
            return Err(ExchangeError::BadTransition { from: self.state, to });
        }
        self.state = to;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binding {
    /// LMA rewrites routing only.
    None,
    /// LMA pushes the flow prefix to the target MAG without a PBU.
    Provision,
    /// The target MAG sends a PBU (fresh attach or re-registration).
    Register,
}

/// A planned flow exchange. `messages` is the full ordered sequence of the
/// procedure.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub record: ExchangeRecord,
    pub messages: Vec<PmipMessage>,
    /// Number of leading messages that must complete before candidates are
    /// known (0 when the procedure has no candidate phase).
    pub candidate_phase: usize,
    binding: Binding,
}

impl Exchange {
    pub fn kinds(&self) -> Vec<MessageKind> {
        self.messages.iter().map(|m| m.kind).collect()
    }
}

/// One line of the state-machine transition log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time: f64,
    pub entity: Entity,
    pub exchange: ExchangeId,
    pub step: String,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} {} {} {}", self.time, self.entity, self.exchange, self.step)
    }
}

/// Mobile node: interface table, flow table, measured statuses and the
/// current flow → interface mapping.
#[derive(Debug, Clone)]
pub struct MnState {
    pub mn_id: MnId,
    pub mihf: Mihf,
    pub flow_table: FlowTable,
    pub flow_statuses: StatusStore,
    pub requirements: BTreeMap<FlowId, Thresholds>,
    mapping: BTreeMap<FlowId, InterfaceId>,
    in_flight: BTreeMap<FlowId, ExchangeId>,
    last_commit: BTreeMap<FlowId, f64>,
}

impl MnState {
    pub fn new(mn_id: MnId, interfaces: &[(InterfaceId, Technology)], flow_table: FlowTable) -> Self {
        let mut mihf = Mihf::new();
        for (id, tech) in interfaces {
            mihf.register_interface(InterfaceEntry::new(*id, *tech));
        }
        mihf.subscribe(Subscriber::LinkSelector);
        mihf.subscribe(Subscriber::RequirementManager);
        Self {
            mn_id,
            mihf,
            flow_table,
            flow_statuses: StatusStore::new(DEFAULT_WINDOW),
            requirements: BTreeMap::new(),
            mapping: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            last_commit: BTreeMap::new(),
        }
    }

    pub fn interface_for(&self, tech: Technology) -> Option<&InterfaceEntry> {
        self.mihf.interfaces().find(|e| e.technology == tech)
    }

    pub fn mapping(&self) -> &BTreeMap<FlowId, InterfaceId> {
        &self.mapping
    }

    pub fn in_flight(&self, flow: FlowId) -> bool {
        self.in_flight.contains_key(&flow)
    }

    pub fn last_commit(&self, flow: FlowId) -> Option<f64> {
        self.last_commit.get(&flow).copied()
    }

    /// Interface used for the flow's next uplink packet: the installed
    /// interface if active, else the first active interface of the flow's
    /// preference list that already carries the flow's prefix.
    pub fn uplink_interface(&self, flow: FlowId, flow_hnp: Option<Hnp>) -> Option<InterfaceId> {
        if let Some(i) = self.mapping.get(&flow) {
            if self.mihf.interface(*i).is_some_and(|e| e.is_active()) {
                return Some(*i);
            }
        }
        let hnp = flow_hnp?;
        let entry = self.flow_table.get(flow)?;
        entry.preference.iter().copied().find(|a| {
            self.mihf.interface(*a).is_some_and(|e| e.is_active() && e.hnp_list.contains(&hnp))
        })
    }

    fn rank(&self, flow: FlowId, iface: InterfaceId) -> Option<usize> {
        self.flow_table.get(flow)?.preference.iter().position(|a| *a == iface)
    }
}

/// Protocol state of one PMIPv6 domain: the LMA, its MAGs, the information
/// service and the mobile nodes.
#[derive(Debug, Clone)]
pub struct Domain {
    pub lma: LmaState,
    pub mags: BTreeMap<PoaId, MagState>,
    pub info: InformationService,
    pub mns: BTreeMap<MnId, MnState>,
    in_flight: BTreeMap<ExchangeId, ExchangeRecord>,
    log: Vec<LogRecord>,
    next_exchange: ExchangeId,
    pub logging: bool,
}

impl Domain {
    pub fn new(lma: LmaState) -> Self {
        Self {
            lma,
            mags: BTreeMap::new(),
            info: InformationService::new(),
            mns: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            log: Vec::new(),
            next_exchange: 1,
            logging: true,
        }
    }

    pub fn add_mag(&mut self, container: MagContainer) {
        self.mags.insert(container.poa_id, MagState::new(container.poa_id));
        self.info.upsert_container(container);
    }

    pub fn add_mn(&mut self, mn: MnState) {
        self.mns.insert(mn.mn_id, mn);
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<LogRecord> {
        std::mem::take(&mut self.log)
    }

    fn push_log(&mut self, time: f64, entity: Entity, exchange: ExchangeId, step: impl Into<String>) {
        if self.logging {
            self.log.push(LogRecord { time, entity, exchange, step: step.into() });
        }
    }

    pub fn mag_technology(&self, poa: PoaId) -> Option<Technology> {
        self.info.container(poa).map(|c| c.system_info)
    }

    fn mn(&self, mn: MnId) -> Result<&MnState, ExchangeError> {
        self.mns.get(&mn).ok_or(ExchangeError::UnknownMn(mn))
    }

    fn mn_mut(&mut self, mn: MnId) -> Result<&mut MnState, ExchangeError> {
        self.mns.get_mut(&mn).ok_or(ExchangeError::UnknownMn(mn))
    }

    /// Current uplink interface and POA of a flow.
    pub fn flow_path(&self, mn: MnId, flow: FlowId) -> Option<(InterfaceId, PoaId)> {
        let state = self.mns.get(&mn)?;
        let iface = state.uplink_interface(flow, self.lma.flow_hnp(mn, flow))?;
        let poa = state.mihf.interface(iface)?.poa()?;
        Some((iface, poa))
    }

    /// Interface of `mn` associated with `poa`, if any.
    pub fn reachable_interface(&self, mn: MnId, poa: PoaId) -> Option<InterfaceId> {
        self.mns
            .get(&mn)?
            .mihf
            .interfaces()
            .find(|e| e.is_active() && e.poa() == Some(poa))
            .map(|e| e.interface_id)
    }

    pub fn link_up(&mut self, mn: MnId, iface: InterfaceId, poa: PoaId, now: f64) -> Result<Vec<Notification>, ExchangeError> {
        let n = self.mn_mut(mn)?.mihf.on_link_event(MihEvent::link_up(iface, poa, now))?;
        self.push_log(now, Entity::Mn(mn), 0, format!("LinkUp if{} {}", iface, poa));
        Ok(n)
    }

    /// Link loss: the MAG detects detachment and deregisters the binding.
    /// Flows on the interface fall back per their preference lists.
    pub fn link_down(&mut self, mn: MnId, iface: InterfaceId, now: f64) -> Result<Vec<Notification>, ExchangeError> {
        let state = self.mn_mut(mn)?;
        let poa = state.mihf.interface(iface).ok_or(MihfError::UnknownInterface(iface))?.poa();
        let n = state.mihf.on_link_event(MihEvent::link_down(iface, now))?;
        if let Some(h) = state.mihf.hnps_mut(iface) {
            h.clear();
        }
        state.mapping.retain(|_, i| *i != iface);
        if let Some(poa) = poa {
            if let Some(mag) = self.mags.get_mut(&poa) {
                if mag.on_detach(mn).is_ok() {
                    self.lma.deregister(mn, poa);
                }
            }
        }
        self.push_log(now, Entity::Mn(mn), 0, format!("LinkDown if{}", iface));
        Ok(n)
    }

    fn new_record(&mut self, mn: MnId, flows: Vec<FlowId>, origin: Origin, now: f64, iface: InterfaceId, poa: PoaId) -> ExchangeRecord {
        let id = self.next_exchange;
        self.next_exchange += 1;
        ExchangeRecord {
            id,
            mn,
            flows,
            origin,
            start_time: now,
            target_interface: iface,
            target_poa: poa,
            state: ExchangeState::Started,
            commit_time: None,
        }
    }

    fn check_idle(&self, mn: MnId, flows: &[FlowId]) -> Result<(), ExchangeError> {
        let st = self.mn(mn)?;
        for f in flows {
            if st.flow_table.get(*f).is_none() {
                return Err(ExchangeError::UnknownFlow(*f));
            }
            if st.in_flight(*f) {
                return Err(ExchangeError::InFlight(*f));
            }
        }
        Ok(())
    }

    fn pbu_pba(mn: MnId, mag: PoaId, flows: &[FlowId]) -> [PmipMessage; 2] {
        let mut pbu = PmipMessage::new(MessageKind::Pbu, mn, Entity::Mag(mag), Entity::Lma);
        pbu.flow_hints = flows.to_vec();
        let mut pba = PmipMessage::new(MessageKind::Pba, mn, Entity::Lma, Entity::Mag(mag));
        pba.flow_hints = flows.to_vec();
        [pbu, pba]
    }

    /// Layer-3 attachment of `iface` at the POA it is associated with,
    /// carrying `flows` onto it: PBU, PBA, then the prefix advertisement.
    pub fn plan_attach(&mut self, mn: MnId, iface: InterfaceId, flows: Vec<FlowId>, origin: Origin, now: f64) -> Result<Exchange, ExchangeError> {
        self.check_idle(mn, &flows)?;
        let entry = self.mn(mn)?.mihf.interface(iface).ok_or(MihfError::UnknownInterface(iface))?;
        let poa = match (entry.is_active(), entry.poa()) {
            (true, Some(p)) => p,
            _ => return Err(ExchangeError::InterfaceInactive(iface)),
        };
        let [pbu, pba] = Self::pbu_pba(mn, poa, &flows);
        let notify = PmipMessage::new(MessageKind::MnNotify, mn, Entity::Mag(poa), Entity::Mn(mn));
        let record = self.new_record(mn, flows, origin, now, iface, poa);
        Ok(Exchange { record, messages: vec![pbu, pba, notify], candidate_phase: 0, binding: Binding::Register })
    }

    /// Interface activation: flows ranking the new interface above their
    /// current one move onto it with their existing prefixes. When no flow
    /// prefers it, the exchange is a plain attach without hints.
    pub fn mn_on_interface_activated(&mut self, mn: MnId, iface: InterfaceId, now: f64) -> Result<Exchange, ExchangeError> {
        let st = self.mn(mn)?;
        let mut flows = Vec::new();
        for e in st.flow_table.by_priority() {
            let Some(new_rank) = st.rank(e.flow_id, iface) else { continue };
            let current = st.uplink_interface(e.flow_id, self.lma.flow_hnp(mn, e.flow_id));
            let better = match current {
                None => true,
                Some(c) if c == iface => false,
                Some(c) => st.rank(e.flow_id, c).is_none_or(|r| new_rank < r),
            };
            if better {
                flows.push(e.flow_id);
            }
        }
        flows.sort();
        let origin = if flows.is_empty() { Origin::Attachment } else { Origin::LinkActivation };
        self.plan_attach(mn, iface, flows, origin, now)
    }

    /// Candidate MAGs for moving `flow` of `mn`: MAGs other than the
    /// current one that an active interface of the MN is associated with,
    /// whose technology is in the flow's preference list.
    fn candidates(&self, mn: MnId, flow: FlowId, exclude: PoaId) -> Vec<MagContainer> {
        let Some(st) = self.mns.get(&mn) else { return Vec::new() };
        let Some(entry) = st.flow_table.get(flow) else { return Vec::new() };
        let mut out = Vec::new();
        for iface in &entry.preference {
            let Some(e) = st.mihf.interface(*iface) else { continue };
            if let (true, Some(poa)) = (e.is_active(), e.poa()) {
                if poa != exclude {
                    if let Some(c) = self.info.container(poa) {
                        out.push(c.clone());
                    }
                }
            }
        }
        out
    }

    /// MN-initiated exchange after a requirement violation on `flow`.
    /// Returns an already-aborted exchange when the LMA finds no candidate.
    pub fn mn_on_flow_degraded(&mut self, mn: MnId, flow: FlowId, violation: Metric, now: f64) -> Result<Exchange, ExchangeError> {
        self.check_idle(mn, &[flow])?;
        let (cur_iface, serving) = self.flow_path(mn, flow).ok_or(ExchangeError::NoCandidate)?;
        let m = |k, s, d| PmipMessage::new(k, mn, s, d).with_flow(flow);
        let mut messages = vec![
            m(MessageKind::FlowMoveRequest, Entity::Mn(mn), Entity::Mag(serving)),
            m(MessageKind::FlowMoveRequest, Entity::Mag(serving), Entity::Lma),
            m(MessageKind::FlowMoveCandidates, Entity::Lma, Entity::Mag(serving)),
            m(MessageKind::FlowMoveCandidates, Entity::Mag(serving), Entity::Mn(mn)),
        ];
        let cands = self.candidates(mn, flow, serving);
        let Ok(chosen) = mn_candidate_choice(&cands, flow, violation) else {
            let mut record = self.new_record(mn, vec![flow], Origin::MnInitiated, now, cur_iface, serving);
            record.state = ExchangeState::Aborted;
            self.push_log(now, Entity::Mn(mn), record.id, "Aborted: no candidates");
            return Ok(Exchange { record, messages, candidate_phase: 4, binding: Binding::None });
        };
        let iface = self.reachable_interface(mn, chosen).ok_or(ExchangeError::TargetUnreachable(chosen))?;
        messages.push(m(MessageKind::FlowMoveCommit, Entity::Mn(mn), Entity::Mag(chosen)));
        messages.extend(Self::pbu_pba(mn, chosen, &[flow]));
        messages.push(m(MessageKind::FlowMoveAck, Entity::Mag(chosen), Entity::Mn(mn)));
        let mut record = self.new_record(mn, vec![flow], Origin::MnInitiated, now, iface, chosen);
        record.state = ExchangeState::CandidatesReceived;
        Ok(Exchange { record, messages, candidate_phase: 4, binding: Binding::Register })
    }

    /// MAG-initiated exchange. `mag` is the overloaded serving MAG
    /// (`AboveUpper`) or the idle MAG offering to absorb the flow
    /// (`BelowLower`).
    pub fn mag_on_threshold_violation(
        &mut self,
        mag: PoaId,
        mn: MnId,
        flow: FlowId,
        direction: Direction,
        now: f64,
    ) -> Result<Exchange, ExchangeError> {
        if !self.mags.contains_key(&mag) {
            return Err(ExchangeError::UnknownMag(mag));
        }
        self.check_idle(mn, &[flow])?;
        let (cur_iface, serving) = self.flow_path(mn, flow).ok_or(ExchangeError::NoCandidate)?;
        let m = |k, s, d| PmipMessage::new(k, mn, s, d).with_flow(flow);
        let (target, iface, third) = match direction {
            Direction::AboveUpper => {
                if serving != mag {
                    return Err(ExchangeError::Stale);
                }
                let cands = self.candidates(mn, flow, mag);
                let chosen = mn_candidate_choice(&cands, flow, Metric::PacketLoss).map_err(|_| ExchangeError::NoCandidate)?;
                let iface = self.reachable_interface(mn, chosen).ok_or(ExchangeError::NoCandidate)?;
                (chosen, iface, m(MessageKind::FlowMoveCommit, Entity::Mag(mag), Entity::Mag(chosen)))
            }
            Direction::BelowLower => {
                // The LMA accepts only if the MN can reach the volunteer and
                // the flow prefers it over its current interface.
                let iface = self.reachable_interface(mn, mag).ok_or(ExchangeError::LmaDecline)?;
                let st = self.mn(mn)?;
                let better = match (st.rank(flow, iface), st.rank(flow, cur_iface)) {
                    (Some(a), Some(b)) => a < b,
                    _ => false,
                };
                if serving == mag || !better {
                    return Err(ExchangeError::LmaDecline);
                }
                (mag, iface, m(MessageKind::FlowMoveCommit, Entity::Mag(mag), Entity::Mag(serving)))
            }
        };
        let mut messages = vec![
            m(MessageKind::FlowMoveRequest, Entity::Mag(mag), Entity::Lma),
            m(MessageKind::FlowMoveCandidates, Entity::Lma, Entity::Mag(mag)),
            third,
        ];
        messages.extend(Self::pbu_pba(mn, target, &[flow]));
        messages.push(m(MessageKind::MnNotify, Entity::Mag(target), Entity::Mn(mn)));
        let mut record = self.new_record(mn, vec![flow], Origin::MagInitiated, now, iface, target);
        record.state = ExchangeState::CandidatesReceived;
        Ok(Exchange { record, messages, candidate_phase: 2, binding: Binding::Register })
    }

    /// LMA-initiated move of `flow` to `target`. If the target binding
    /// already holds the flow prefix, only the MN is notified; otherwise the
    /// prefix is first provisioned at the target MAG.
    pub fn lma_initiate_flow_move(&mut self, mn: MnId, flow: FlowId, target: PoaId, now: f64) -> Result<Exchange, ExchangeError> {
        self.check_idle(mn, &[flow])?;
        let iface = self.reachable_interface(mn, target).ok_or(ExchangeError::TargetUnreachable(target))?;
        let bce = self.lma.bce_for(mn, target).ok_or(ExchangeError::TargetUnreachable(target))?;
        let hnp = self.lma.flow_hnp(mn, flow).ok_or(ExchangeError::UnknownFlow(flow))?;
        let m = |k, s, d| PmipMessage::new(k, mn, s, d).with_flow(flow).with_hnps(vec![hnp]);
        let (messages, binding) = if bce.hnp_list.contains(&hnp) {
            (vec![m(MessageKind::MnNotify, Entity::Lma, Entity::Mn(mn))], Binding::None)
        } else {
            (
                vec![
                    m(MessageKind::FlowMoveCommit, Entity::Lma, Entity::Mag(target)),
                    m(MessageKind::FlowMoveAck, Entity::Mag(target), Entity::Lma),
                    m(MessageKind::MnNotify, Entity::Lma, Entity::Mn(mn)),
                ],
                Binding::Provision,
            )
        };
        let record = self.new_record(mn, vec![flow], Origin::LmaInitiated, now, iface, target);
        Ok(Exchange { record, messages, candidate_phase: 0, binding })
    }

    /// Registers the exchange as in flight. Fails if any of its flows
    /// already has an exchange in flight.
    pub fn begin(&mut self, ex: &mut Exchange, now: f64) -> Result<(), ExchangeError> {
        if ex.record.state.is_terminal() {
            return Err(ExchangeError::BadTransition { from: ex.record.state, to: ExchangeState::Committing });
        }
        self.check_idle(ex.record.mn, &ex.record.flows)?;
        let id = ex.record.id;
        let st = self.mn_mut(ex.record.mn)?;
        for f in &ex.record.flows {
            st.in_flight.insert(*f, id);
        }
        self.in_flight.insert(id, ex.record.clone());
        let steps: Vec<String> = ex.messages.iter().map(|m| format!("{} {}->{}", m.kind.name(), m.src, m.dst)).collect();
        let origin = ex.record.origin;
        self.push_log(now, Entity::Mn(ex.record.mn), id, format!("Begin {:?} [{}]", origin, steps.join(", ")));
        Ok(())
    }

    fn release(&mut self, rec: &ExchangeRecord) {
        self.in_flight.remove(&rec.id);
        if let Some(st) = self.mns.get_mut(&rec.mn) {
            for f in &rec.flows {
                if st.in_flight.get(f) == Some(&rec.id) {
                    st.in_flight.remove(f);
                }
            }
        }
    }

    pub fn abort(&mut self, mut ex: Exchange, reason: &ExchangeError, now: f64) -> ExchangeRecord {
        self.release(&ex.record);
        if !ex.record.state.is_terminal() {
            ex.record.state = ExchangeState::Aborted;
        }
        self.push_log(now, Entity::Mn(ex.record.mn), ex.record.id, format!("Aborted: {reason}"));
        ex.record
    }

    /// Applies the exchange. Preconditions are re-checked first; on failure
    /// the exchange is aborted and nothing changes.
    pub fn commit(&mut self, mut ex: Exchange, now: f64) -> Result<ExchangeRecord, ExchangeError> {
        if !self.in_flight.contains_key(&ex.record.id) {
            return Err(ExchangeError::NotInFlight(ex.record.id));
        }
        let (mn, iface, poa) = (ex.record.mn, ex.record.target_interface, ex.record.target_poa);
        let ok = self.reachable_interface(mn, poa) == Some(iface)
            && self.mags.contains_key(&poa)
            && (ex.binding == Binding::Register || self.lma.bce_for(mn, poa).is_some());
        if !ok {
            let err = ExchangeError::Stale;
            self.abort(ex, &err, now);
            return Err(err);
        }
        ex.record.advance(ExchangeState::Committing)?;
        let flows = ex.record.flows.clone();
        match ex.binding {
            Binding::Register => {
                let mag = self.mags.get_mut(&poa).expect("checked");
                let pbu = if mag.is_attached(mn) { mag.rebind(mn, flows.clone())? } else { mag.on_attach(mn, iface, flows.clone())? };
                let (pba, bind) = self.lma.assign_hnp(&pbu, now)?;
                mag.on_pba(&pba)?;
                mag.set_bind(mn, bind);
                let st = self.mns.get_mut(&mn).expect("checked");
                if let Some(h) = st.mihf.hnps_mut(iface) {
                    for p in &pba.hnp_list {
                        if !h.contains(p) {
                            h.push(*p);
                        }
                    }
                }
            }
            Binding::Provision => {
                let bind = self.lma.bce_for(mn, poa).expect("checked").bind_id;
                for f in &flows {
                    let hnp = self.lma.flow_hnp(mn, *f).ok_or(ExchangeError::UnknownFlow(*f))?;
                    self.lma.provision_hnp(bind, hnp)?;
                    self.mags.get_mut(&poa).expect("checked").add_hnp(mn, hnp)?;
                    if let Some(h) = self.mns.get_mut(&mn).expect("checked").mihf.hnps_mut(iface) {
                        if !h.contains(&hnp) {
                            h.push(hnp);
                        }
                    }
                }
            }
            Binding::None => {}
        }
        let bind = self.lma.bce_for(mn, poa).map(|b| b.bind_id);
        for f in &flows {
            if let Some(b) = bind {
                self.lma.prefer_bind(mn, *f, b)?;
            }
        }
        let st = self.mns.get_mut(&mn).expect("checked");
        for f in &flows {
            st.mapping.insert(*f, iface);
            st.last_commit.insert(*f, now);
        }
        ex.record.advance(ExchangeState::Committed)?;
        ex.record.commit_time = Some(now);
        self.release(&ex.record);
        self.push_log(now, Entity::Mn(mn), ex.record.id, format!("Committed {} if{}", poa, iface));
        Ok(ex.record)
    }

    pub fn in_flight_count(&self) -> usize {
        self.in_flight.len()
    }

    /// Installs a flow on an interface without signalling; used when a
    /// node starts an application on an already attached interface.
    pub fn install_flow(&mut self, mn: MnId, flow: FlowId, iface: AttachmentId) -> Result<(), ExchangeError> {
        self.mn_mut(mn)?.mapping.insert(flow, iface);
        Ok(())
    }
}

/// Picks the candidate with the best advertised value of the violated
/// metric for `flow` (lowest loss or delay, highest throughput).
/// Candidates without data for the flow rank last; ties go to the lower
/// POA id.
pub fn mn_candidate_choice(candidates: &[MagContainer], flow: FlowId, violation: Metric) -> Result<PoaId, ExchangeError> {
    let key = |c: &MagContainer| -> (bool, f64, PoaId) {
        let v = c.flow_statuses.get(&flow).and_then(|s| s.metric(violation));
        let score = match (violation, v) {
            (_, None) => 0.0,
            (Metric::Throughput, Some(x)) => -x,
            (_, Some(x)) => x,
        };
        (v.is_none(), score, c.poa_id)
    };
    candidates
        .iter()
        .min_by(|a, b| key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Equal))
        .map(|c| c.poa_id)
        .ok_or(ExchangeError::EmptyCandidates)
}

/// A delivered-or-lost uplink packet as seen by the handover measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveryRecord {
    pub flow: FlowId,
    pub t_sent: f64,
    pub t_delivered: Option<f64>,
    pub via: Option<PoaId>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandoverError {
    #[error("exchange did not commit")]
    NotCommitted,
    #[error("no packet flowed on one side of the handover")]
    Indeterminate,
}

/// Interruption seen at the receiver around a committed exchange:
/// time of the first moved-flow packet delivered through the new
/// attachment minus the last delivery of the node's other traffic before
/// it. Zero when a moved-flow packet sent before the commit arrives after
/// the first new-path one. `log` holds the node's packets only.
pub fn measure_handover(record: &ExchangeRecord, log: &[DeliveryRecord]) -> Result<f64, HandoverError> {
    let commit = match (record.state, record.commit_time) {
        (ExchangeState::Committed, Some(t)) => t,
        _ => return Err(HandoverError::NotCommitted),
    };
    let moved: BTreeSet<FlowId> = record.flows.iter().copied().collect();
    let is_new = |r: &DeliveryRecord| {
        (moved.is_empty() || moved.contains(&r.flow)) && r.via == Some(record.target_poa) && r.t_sent >= commit
    };
    let new_first = log
        .iter()
        .filter(|r| is_new(r))
        .filter_map(|r| r.t_delivered)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))))
        .ok_or(HandoverError::Indeterminate)?;
    let mut old_last: Option<f64> = None;
    for r in log.iter().filter(|r| !is_new(r)) {
        let Some(t) = r.t_delivered else { continue };
        if t > new_first {
            if r.t_sent < commit && (moved.is_empty() || moved.contains(&r.flow)) {
                return Ok(0.0);
            }
            continue;
        }
        old_last = Some(old_last.map_or(t, |o: f64| o.max(t)));
    }
    let old_last = old_last.ok_or(HandoverError::Indeterminate)?;
    Ok((new_first - old_last).max(0.0))
}

/// Expected message kinds of each procedure.
pub mod golden {
    use crate::pmip::MessageKind::{self, *};

    pub const INTERFACE_ACTIVATION: &[MessageKind] = &[Pbu, Pba, MnNotify];
    pub const MN_INITIATED: &[MessageKind] = &[
        FlowMoveRequest,
        FlowMoveRequest,
        FlowMoveCandidates,
        FlowMoveCandidates,
        FlowMoveCommit,
        Pbu,
        Pba,
        FlowMoveAck,
    ];
    pub const MN_INITIATED_NO_CANDIDATE: &[MessageKind] =
        &[FlowMoveRequest, FlowMoveRequest, FlowMoveCandidates, FlowMoveCandidates];
    pub const MAG_INITIATED: &[MessageKind] = &[FlowMoveRequest, FlowMoveCandidates, FlowMoveCommit, Pbu, Pba, MnNotify];
    pub const LMA_REWIRE: &[MessageKind] = &[MnNotify];
    pub const LMA_PROVISION: &[MessageKind] = &[FlowMoveCommit, FlowMoveAck, MnNotify];
}
