//! Simplified proxy mobile IPv6: attachment detection at the MAG, proxy
//! binding update/acknowledgement, HNP assignment, the LMA binding cache
//! and MAG–LMA tunnels. Addresses are opaque identifiers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::FlowId;
use crate::ids::{BindId, Hnp, MnId, PoaId, TunnelId};
use crate::mihf::InterfaceId;

/// Binding lifetime in simulated seconds.
pub const DEFAULT_LIFETIME: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Entity {
    Mn(MnId),
    Mag(PoaId),
    Lma,
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Entity::Mn(m) => write!(f, "{m}"),
            Entity::Mag(p) => write!(f, "MAG@{p}"),
            Entity::Lma => f.write_str("LMA"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Pbu,
    Pba,
    FlowMoveRequest,
    FlowMoveCandidates,
    FlowMoveCommit,
    FlowMoveAck,
    MnNotify,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Pbu => "PBU",
            MessageKind::Pba => "PBA",
            MessageKind::FlowMoveRequest => "FlowMoveRequest",
            MessageKind::FlowMoveCandidates => "FlowMoveCandidates",
            MessageKind::FlowMoveCommit => "FlowMoveCommit",
            MessageKind::FlowMoveAck => "FlowMoveAck",
            MessageKind::MnNotify => "MnNotify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmipMessage {
    pub kind: MessageKind,
    pub seq: u32,
    pub mn_id: MnId,
    pub hnp_list: Vec<Hnp>,
    pub flow_id: Option<FlowId>,
    /// Flows expected to move onto the attaching interface; the LMA answers
    /// with their existing prefixes.
    pub flow_hints: Vec<FlowId>,
    pub src: Entity,
    pub dst: Entity,
}

impl PmipMessage {
    pub fn new(kind: MessageKind, mn_id: MnId, src: Entity, dst: Entity) -> Self {
        Self { kind, seq: 0, mn_id, hnp_list: Vec::new(), flow_id: None, flow_hints: Vec::new(), src, dst }
    }

    pub fn with_flow(mut self, flow: FlowId) -> Self {
        self.flow_id = Some(flow);
        self
    }

    pub fn with_hnps(mut self, hnps: Vec<Hnp>) -> Self {
        self.hnp_list = hnps;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BindingCacheEntry {
    pub mn_id: MnId,
    pub hnp_list: Vec<Hnp>,
    pub serving_mag: PoaId,
    pub tunnel_id: TunnelId,
    pub lifetime: f64,
    pub bind_id: BindId,
    pub registered_at: f64,
}

impl BindingCacheEntry {
    pub fn expires_at(&self) -> f64 {
        self.registered_at + self.lifetime
    }

    /// `time mn bind hnps mag tunnel`, whitespace separated.
    pub fn dump_line(&self, time: f64) -> String {
        let hnps: Vec<String> = self.hnp_list.iter().map(|h| h.to_string()).collect();
        format!(
            "{:.6} {} {} {} {} {}",
            time,
            self.mn_id,
            self.bind_id,
            if hnps.is_empty() { "-".to_string() } else { hnps.join(",") },
            self.serving_mag,
            self.tunnel_id
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmipError {
    #[error("{0} already attached at {1}")]
    AlreadyAttached(MnId, PoaId),
    #[error("{0} not attached at {1}")]
    NotAttached(MnId, PoaId),
    #[error("no binding for {0}")]
    NoBinding(Hnp),
    #[error("PBA seq {0} does not answer an outstanding PBU")]
    UnmatchedPba(u32),
    #[error("expected a {expected:?}, got {got:?}")]
    WrongKind { expected: MessageKind, got: MessageKind },
    #[error("no binding {0}")]
    UnknownBinding(BindId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagBinding {
    pub interface: InterfaceId,
    pub bind_id: Option<BindId>,
    pub hnp_list: Vec<Hnp>,
}

/// MAG side: attached mobile nodes and outstanding PBUs.
#[derive(Debug, Clone)]
pub struct MagState {
    pub poa: PoaId,
    attached: BTreeMap<MnId, MagBinding>,
    outstanding: BTreeMap<u32, MnId>,
    next_seq: u32,
}

impl MagState {
    pub fn new(poa: PoaId) -> Self {
        Self { poa, attached: BTreeMap::new(), outstanding: BTreeMap::new(), next_seq: 1 }
    }

    pub fn is_attached(&self, mn: MnId) -> bool {
        self.attached.contains_key(&mn)
    }

    pub fn binding(&self, mn: MnId) -> Option<&MagBinding> {
        self.attached.get(&mn)
    }

    pub fn attached(&self) -> impl Iterator<Item = (&MnId, &MagBinding)> {
        self.attached.iter()
    }

    /// Detects attachment and emits the PBU towards the LMA.
    pub fn on_attach(
        &mut self,
        mn: MnId,
        interface: InterfaceId,
        flow_hints: Vec<FlowId>,
    ) -> Result<PmipMessage, PmipError> {
        if self.attached.contains_key(&mn) {
            return Err(PmipError::AlreadyAttached(mn, self.poa));
        }
        self.attached.insert(mn, MagBinding { interface, bind_id: None, hnp_list: Vec::new() });
        Ok(self.pbu(mn, flow_hints))
    }

    /// Re-registration PBU for an attached node.
    pub fn refresh(&mut self, mn: MnId) -> Result<PmipMessage, PmipError> {
        self.rebind(mn, Vec::new())
    }

    /// Re-registration PBU carrying flows expected to move onto this binding.
    pub fn rebind(&mut self, mn: MnId, flow_hints: Vec<FlowId>) -> Result<PmipMessage, PmipError> {
        if !self.attached.contains_key(&mn) {
            return Err(PmipError::NotAttached(mn, self.poa));
        }
        Ok(self.pbu(mn, flow_hints))
    }

    fn pbu(&mut self, mn: MnId, flow_hints: Vec<FlowId>) -> PmipMessage {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.outstanding.insert(seq, mn);
        let mut m = PmipMessage::new(MessageKind::Pbu, mn, Entity::Mag(self.poa), Entity::Lma);
        m.seq = seq;
        m.flow_hints = flow_hints;
        m
    }

    pub fn on_pba(&mut self, pba: &PmipMessage) -> Result<(), PmipError> {
        if pba.kind != MessageKind::Pba {
            return Err(PmipError::WrongKind { expected: MessageKind::Pba, got: pba.kind });
        }
        match self.outstanding.remove(&pba.seq) {
            Some(mn) if mn == pba.mn_id => {}
            _ => return Err(PmipError::UnmatchedPba(pba.seq)),
        }
        let b = self.attached.get_mut(&pba.mn_id).ok_or(PmipError::NotAttached(pba.mn_id, self.poa))?;
        for h in &pba.hnp_list {
            if !b.hnp_list.contains(h) {
                b.hnp_list.push(*h);
            }
        }
        Ok(())
    }

    pub fn set_bind(&mut self, mn: MnId, bind: BindId) {
        if let Some(b) = self.attached.get_mut(&mn) {
            b.bind_id = Some(bind);
        }
    }

    pub fn add_hnp(&mut self, mn: MnId, hnp: Hnp) -> Result<(), PmipError> {
        let b = self.attached.get_mut(&mn).ok_or(PmipError::NotAttached(mn, self.poa))?;
        if !b.hnp_list.contains(&hnp) {
            b.hnp_list.push(hnp);
        }
        Ok(())
    }

    pub fn on_detach(&mut self, mn: MnId) -> Result<MagBinding, PmipError> {
        self.outstanding.retain(|_, m| *m != mn);
        self.attached.remove(&mn).ok_or(PmipError::NotAttached(mn, self.poa))
    }
}

pub fn mag_on_attach(
    mag: &mut MagState,
    mn: MnId,
    interface: InterfaceId,
    flow_hints: Vec<FlowId>,
) -> Result<PmipMessage, PmipError> {
    mag.on_attach(mn, interface, flow_hints)
}

/// LMA side: binding cache, tunnels, prefix allocation and the per-MN
/// downlink flow table (flow → ordered bind ids).
#[derive(Debug, Clone)]
pub struct LmaState {
    lifetime: f64,
    bces: BTreeMap<BindId, BindingCacheEntry>,
    tunnels: BTreeMap<TunnelId, BindId>,
    flow_hnp: BTreeMap<(MnId, FlowId), Hnp>,
    flow_binds: BTreeMap<(MnId, FlowId), Vec<BindId>>,
    answered: BTreeSet<(PoaId, u32)>,
    next_hnp: u32,
    next_bind: u32,
    next_tunnel: u32,
}

impl Default for LmaState {
    fn default() -> Self {
        Self::new(DEFAULT_LIFETIME)
    }
}

impl LmaState {
    pub fn new(lifetime: f64) -> Self {
        Self {
            lifetime,
            bces: BTreeMap::new(),
            tunnels: BTreeMap::new(),
            flow_hnp: BTreeMap::new(),
            flow_binds: BTreeMap::new(),
            answered: BTreeSet::new(),
            next_hnp: 1,
            next_bind: 1,
            next_tunnel: 1,
        }
    }

    fn fresh_hnp(&mut self) -> Hnp {
        let h = Hnp(self.next_hnp);
        self.next_hnp += 1;
        h
    }

    pub fn bces(&self) -> impl Iterator<Item = &BindingCacheEntry> {
        self.bces.values()
    }

    pub fn bce(&self, bind: BindId) -> Option<&BindingCacheEntry> {
        self.bces.get(&bind)
    }

    pub fn bce_for(&self, mn: MnId, mag: PoaId) -> Option<&BindingCacheEntry> {
        self.bces.values().find(|b| b.mn_id == mn && b.serving_mag == mag)
    }

    pub fn tunnels(&self) -> impl Iterator<Item = (&TunnelId, &BindId)> {
        self.tunnels.iter()
    }

    pub fn flow_hnp(&self, mn: MnId, flow: FlowId) -> Option<Hnp> {
        self.flow_hnp.get(&(mn, flow)).copied()
    }

    pub fn flow_binds(&self, mn: MnId, flow: FlowId) -> &[BindId] {
        self.flow_binds.get(&(mn, flow)).map_or(&[], |v| v.as_slice())
    }

    /// Binds a flow to a prefix. A flow, once established, keeps its prefix.
    pub fn establish_flow(&mut self, mn: MnId, flow: FlowId, hnp: Hnp) -> Hnp {
        *self.flow_hnp.entry((mn, flow)).or_insert(hnp)
    }

    /// Processes a PBU: refreshes an existing binding or creates one.
    /// Hinted flows that are already established keep their prefix; other
    /// hinted flows get a fresh one. A PBU with no hints for a new binding
    /// gets one fresh prefix.
    pub fn assign_hnp(&mut self, pbu: &PmipMessage, now: f64) -> Result<(PmipMessage, BindId), PmipError> {
        if pbu.kind != MessageKind::Pbu {
            return Err(PmipError::WrongKind { expected: MessageKind::Pbu, got: pbu.kind });
        }
        let Entity::Mag(mag) = pbu.src else {
            return Err(PmipError::WrongKind { expected: MessageKind::Pbu, got: pbu.kind });
        };
        let mn = pbu.mn_id;
        let mut hinted = Vec::new();
        for f in &pbu.flow_hints {
            let h = match self.flow_hnp(mn, *f) {
                Some(h) => h,
                None => {
                    let h = self.fresh_hnp();
                    self.establish_flow(mn, *f, h)
                }
            };
            if !hinted.contains(&h) {
                hinted.push(h);
            }
        }
        let existing = self.bce_for(mn, mag).map(|b| b.bind_id);
        let bind = match existing {
            Some(bind) => {
                let b = self.bces.get_mut(&bind).expect("bind present");
                b.registered_at = now;
                b.lifetime = self.lifetime;
                for h in hinted {
                    if !b.hnp_list.contains(&h) {
                        b.hnp_list.push(h);
                    }
                }
                bind
            }
            None => {
                let hnp_list = if hinted.is_empty() { vec![self.fresh_hnp()] } else { hinted };
                let bind = BindId(self.next_bind);
                self.next_bind += 1;
                let tunnel = TunnelId(self.next_tunnel);
                self.next_tunnel += 1;
                self.tunnels.insert(tunnel, bind);
                self.bces.insert(
                    bind,
                    BindingCacheEntry {
                        mn_id: mn,
                        hnp_list,
                        serving_mag: mag,
                        tunnel_id: tunnel,
                        lifetime: self.lifetime,
                        bind_id: bind,
                        registered_at: now,
                    },
                );
                bind
            }
        };
        for f in &pbu.flow_hints {
            let prefs = self.flow_binds.entry((mn, *f)).or_default();
            prefs.retain(|b| *b != bind);
            prefs.insert(0, bind);
        }
        self.answered.insert((mag, pbu.seq));
        let mut pba = PmipMessage::new(MessageKind::Pba, mn, Entity::Lma, pbu.src);
        pba.seq = pbu.seq;
        pba.hnp_list = self.bces[&bind].hnp_list.clone();
        pba.flow_hints = pbu.flow_hints.clone();
        Ok((pba, bind))
    }

    /// Adds a prefix to an existing binding (LMA-side provisioning).
    pub fn provision_hnp(&mut self, bind: BindId, hnp: Hnp) -> Result<(), PmipError> {
        let b = self.bces.get_mut(&bind).ok_or(PmipError::UnknownBinding(bind))?;
        if !b.hnp_list.contains(&hnp) {
            b.hnp_list.push(hnp);
        }
        Ok(())
    }

    /// Makes `bind` the preferred downlink binding for the flow.
    pub fn prefer_bind(&mut self, mn: MnId, flow: FlowId, bind: BindId) -> Result<(), PmipError> {
        if !self.bces.contains_key(&bind) {
            return Err(PmipError::UnknownBinding(bind));
        }
        let prefs = self.flow_binds.entry((mn, flow)).or_default();
        prefs.retain(|b| *b != bind);
        prefs.insert(0, bind);
        Ok(())
    }

    pub fn refresh(&mut self, mn: MnId, mag: PoaId, now: f64) {
        if let Some(b) = self.bces.values_mut().find(|b| b.mn_id == mn && b.serving_mag == mag) {
            b.registered_at = now;
        }
    }

    /// Downlink forwarding for a packet to `hnp` belonging to `flow`.
    pub fn route_downlink(&self, mn: MnId, hnp: Hnp, flow: FlowId) -> Result<(TunnelId, PoaId), PmipError> {
        let holders: Vec<&BindingCacheEntry> =
            self.bces.values().filter(|b| b.mn_id == mn && b.hnp_list.contains(&hnp)).collect();
        let chosen = match holders.as_slice() {
            [] => return Err(PmipError::NoBinding(hnp)),
            [only] => *only,
            many => self
                .flow_binds(mn, flow)
                .iter()
                .find_map(|p| many.iter().find(|b| b.bind_id == *p).copied())
                .unwrap_or(many[0]),
        };
        Ok((chosen.tunnel_id, chosen.serving_mag))
    }

    fn remove_bind(&mut self, bind: BindId) -> Option<BindingCacheEntry> {
        let b = self.bces.remove(&bind)?;
        self.tunnels.remove(&b.tunnel_id);
        for prefs in self.flow_binds.values_mut() {
            prefs.retain(|p| *p != bind);
        }
        Some(b)
    }

    /// Explicit deregistration (PBU with lifetime 0).
    pub fn deregister(&mut self, mn: MnId, mag: PoaId) -> Option<BindingCacheEntry> {
        let bind = self.bce_for(mn, mag)?.bind_id;
        self.remove_bind(bind)
    }

    pub fn bce_expire(&mut self, now: f64) -> Vec<BindingCacheEntry> {
        let expired: Vec<BindId> = self.bces.values().filter(|b| b.expires_at() <= now).map(|b| b.bind_id).collect();
        expired.into_iter().filter_map(|b| self.remove_bind(b)).collect()
    }

    pub fn dump(&self, time: f64) -> Vec<String> {
        self.bces.values().map(|b| b.dump_line(time)).collect()
    }

    /// Checks binding-cache invariants: unique (mn, mag), tunnel iff BCE.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        for b in self.bces.values() {
            if !seen.insert((b.mn_id, b.serving_mag)) {
                return Err(format!("duplicate BCE for {} at {}", b.mn_id, b.serving_mag));
            }
            if self.tunnels.get(&b.tunnel_id) != Some(&b.bind_id) {
                return Err(format!("BCE {} has no tunnel", b.bind_id));
            }
            if !(b.lifetime > 0.0) {
                return Err(format!("BCE {} has non-positive lifetime", b.bind_id));
            }
        }
        if self.tunnels.len() != self.bces.len() {
            return Err("dangling tunnel".into());
        }
        Ok(())
    }

    pub fn was_answered(&self, mag: PoaId, seq: u32) -> bool {
        self.answered.contains(&(mag, seq))
    }
}

pub fn lma_assign_hnp(lma: &mut LmaState, pbu: &PmipMessage, now: f64) -> Result<(PmipMessage, BindId), PmipError> {
    lma.assign_hnp(pbu, now)
}

pub fn route_downlink(lma: &LmaState, mn: MnId, hnp: Hnp, flow: FlowId) -> Result<(TunnelId, PoaId), PmipError> {
    lma.route_downlink(mn, hnp, flow)
}

pub fn bce_expire(lma: &mut LmaState, now: f64) -> Vec<BindingCacheEntry> {
    lma.bce_expire(now)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::AttachmentId;
    use proptest::prelude::*;

    const MN: MnId = MnId(7);
    const F1: FlowId = FlowId(1);
    const F2: FlowId = FlowId(2);

    fn attach(mag: &mut MagState, lma: &mut LmaState, iface: u32, hints: Vec<FlowId>, now: f64) -> (PmipMessage, BindId) {
        let pbu = mag.on_attach(MN, AttachmentId(iface), hints).unwrap();
        let (pba, bind) = lma.assign_hnp(&pbu, now).unwrap();
        mag.on_pba(&pba).unwrap();
        mag.set_bind(MN, bind);
        (pba, bind)
    }

    #[test]
    fn attach_emits_pbu() {
        let mut mag = MagState::new(PoaId(1));
        let pbu = mag_on_attach(&mut mag, MN, AttachmentId(2), vec![]).unwrap();
        assert_eq!(pbu.kind, MessageKind::Pbu);
        assert_eq!(pbu.mn_id, MN);
        assert_eq!(pbu.dst, Entity::Lma);
        assert_eq!(mag_on_attach(&mut mag, MN, AttachmentId(2), vec![]), Err(PmipError::AlreadyAttached(MN, PoaId(1))));
    }

    #[test]
    fn fresh_and_hinted_prefixes() {
        let mut lma = LmaState::default();
        let mut lte = MagState::new(PoaId(0));
        let mut wifi = MagState::new(PoaId(1));
        // new MN, no flows
        let (pba, _) = attach(&mut wifi, &mut lma, 2, vec![], 0.0);
        assert_eq!(pba.hnp_list.len(), 1);
        assert_eq!(lma.bces().count(), 1);
        wifi.on_detach(MN).unwrap();
        lma.deregister(MN, PoaId(1));
        // flows established on the Wi-Fi side
        let (pba, _) = attach(&mut wifi, &mut lma, 2, vec![F1, F2], 1.0);
        let hnp1 = lma.flow_hnp(MN, F1).unwrap();
        assert!(pba.hnp_list.contains(&hnp1));
        // activation of LTE with a pending flow-1 move carries the hint
        let pbu = lte.on_attach(MN, AttachmentId(1), vec![F1]).unwrap();
        assert_eq!(pbu.flow_hints, vec![F1]);
        let (pba, _) = lma.assign_hnp(&pbu, 2.0).unwrap();
        assert_eq!(pba.hnp_list, vec![hnp1]);
        assert_eq!(pba.seq, pbu.seq);
    }

    #[test]
    fn reregistration_refreshes() {
        let mut lma = LmaState::new(10.0);
        let mut mag = MagState::new(PoaId(1));
        let (pba, bind) = attach(&mut mag, &mut lma, 2, vec![F1], 0.0);
        let pbu = mag.refresh(MN).unwrap();
        let (pba2, bind2) = lma.assign_hnp(&pbu, 8.0).unwrap();
        assert_eq!(bind, bind2);
        assert_eq!(pba.hnp_list, pba2.hnp_list);
        assert_eq!(lma.bce(bind).unwrap().expires_at(), 18.0);
        mag.on_pba(&pba2).unwrap();
        assert_eq!(mag.on_pba(&pba2), Err(PmipError::UnmatchedPba(pba2.seq)));
        assert!(lma.was_answered(PoaId(1), pbu.seq));
    }

    #[test]
    fn downlink_routing() {
        let mut lma = LmaState::default();
        let mut wifi = MagState::new(PoaId(1));
        let mut lte = MagState::new(PoaId(0));
        let (_, wb) = attach(&mut wifi, &mut lma, 2, vec![F1], 0.0);
        let hnp1 = lma.flow_hnp(MN, F1).unwrap();
        let t_wifi = lma.bce(wb).unwrap().tunnel_id;
        assert_eq!(route_downlink(&lma, MN, hnp1, F1), Ok((t_wifi, PoaId(1))));
        // HNP1 also bound at LTE; flow 1 prefers the LTE bind
        let (_, lb) = attach(&mut lte, &mut lma, 1, vec![F1], 1.0);
        let t_lte = lma.bce(lb).unwrap().tunnel_id;
        assert_eq!(route_downlink(&lma, MN, hnp1, F1), Ok((t_lte, PoaId(0))));
        lma.prefer_bind(MN, F1, wb).unwrap();
        assert_eq!(route_downlink(&lma, MN, hnp1, F1), Ok((t_wifi, PoaId(1))));
        assert_eq!(route_downlink(&lma, MN, Hnp(99), F1), Err(PmipError::NoBinding(Hnp(99))));
        lma.check_invariants().unwrap();
    }

    #[test]
    fn expiry() {
        let mut lma = LmaState::new(5.0);
        assert!(bce_expire(&mut lma, 100.0).is_empty());
        let mut wifi = MagState::new(PoaId(1));
        let (_, b) = attach(&mut wifi, &mut lma, 2, vec![F2], 0.0);
        assert!(bce_expire(&mut lma, 4.0).is_empty());
        let removed = bce_expire(&mut lma, 5.0);
        assert_eq!(removed.len(), 1);
        assert_eq!(removed[0].bind_id, b);
        assert_eq!(lma.tunnels().count(), 0);
        let hnp2 = lma.flow_hnp(MN, F2).unwrap();
        assert_eq!(route_downlink(&lma, MN, hnp2, F2), Err(PmipError::NoBinding(hnp2)));
        assert!(lma.flow_binds(MN, F2).is_empty());
        lma.check_invariants().unwrap();
    }

    #[test]
    fn dump_format() {
        let mut lma = LmaState::default();
        let mut wifi = MagState::new(PoaId(2));
        attach(&mut wifi, &mut lma, 2, vec![F1], 0.0);
        assert_eq!(lma.dump(1.5), vec!["1.500000 MN7 B1 HNP1 POA2 T1".to_string()]);
    }

    proptest! {
        // Random attach/detach/refresh sequences keep prefixes stable and
        // bindings unique.
        #[test]
        fn hnp_stability_and_uniqueness(ops in proptest::collection::vec((0u32..4, 0u8..3, proptest::bool::ANY), 1..60)) {
            let mut lma = LmaState::default();
            let mut mags: Vec<MagState> = (0..4).map(|p| MagState::new(PoaId(p))).collect();
            let mut first: BTreeMap<FlowId, Hnp> = BTreeMap::new();
            for (i, (mag_ix, op, f2)) in ops.into_iter().enumerate() {
                let now = i as f64;
                let mag = &mut mags[mag_ix as usize];
                let flows = if f2 { vec![F1, F2] } else { vec![F1] };
                match op {
                    0 => if let Ok(pbu) = mag.on_attach(MN, AttachmentId(mag_ix), flows) {
                        let (pba, bind) = lma.assign_hnp(&pbu, now).unwrap();
                        mag.on_pba(&pba).unwrap();
                        mag.set_bind(MN, bind);
                    },
                    1 => if mag.on_detach(MN).is_ok() { lma.deregister(MN, mag.poa); },
                    _ => if let Ok(pbu) = mag.refresh(MN) {
                        let (pba, _) = lma.assign_hnp(&pbu, now).unwrap();
                        mag.on_pba(&pba).unwrap();
                    },
                }
                lma.check_invariants().map_err(TestCaseError::fail)?;
                for f in [F1, F2] {
                    if let Some(h) = lma.flow_hnp(MN, f) {
                        let prev = *first.entry(f).or_insert(h);
                        prop_assert_eq!(prev, h);
                    }
                }
            }
        }
    }
}
