//! One simulation run: vehicles, radios and the protocol domain driven by
//! the event scheduler.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::entities::{Direction, Domain, Exchange, ExchangeError, ExchangeId, ExchangeRecord, ExchangeState, LogRecord, MnState, Origin};
use crate::flow::{classify_packet, AppClass, Classification, FlowId, Transport};
use crate::harness::config::{ConfigError, SimConfig};
use crate::harness::metrics::{compute_metrics, RunMetrics};
use crate::harness::scenario::{MapSpec, Scenario, ScenarioSpec, LTE_IF, WIFI_IF};
use crate::ids::{MnId, PoaId};
use crate::mihf::{evaluate_thresholds, InterfaceId, MagContainer, Sample, StatusStore, Technology, Thresholds, Verdict};
use crate::mobility::{manhattan_place, manhattan_step, trace_position, ManhattanConfig, TraceFile, VehicleState};
use crate::netsim::radio::distance;
use crate::netsim::rng::{substream, Purpose};
use crate::netsim::{deliver, Disposition, EventKind, Hop, LossCause, Outcome, Packet, PathTrace, RadioModel, Scheduler, Topology, LTE_POA};
use crate::pmip::{Entity, LmaState, PmipMessage};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invariant violated at t={time}: {msg}")]
    Invariant { time: f64, msg: String },
}

impl SimError {
    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> u8 {
        match self {
            SimError::Config(_) => 2,
            SimError::Invariant { .. } => 3,
        }
    }
}

/// Optional artefacts collected alongside the metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Capture {
    pub event_log: bool,
    pub bce_dump: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub seed: u64,
    pub metrics: RunMetrics,
    pub packets: Vec<Packet>,
    /// Committed handovers inside the measurement interval.
    pub handovers: Vec<ExchangeRecord>,
    pub aborted_exchanges: u64,
    pub wifi_attach_events: u64,
    pub lte_data_packets: u64,
    pub events_processed: u64,
    pub event_log: Vec<LogRecord>,
    pub bce_dump: Vec<String>,
    pub measure_from: f64,
    pub measure_to: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum WifiState {
    Idle,
    Associating { poa: PoaId, gen: u64 },
    Up { poa: PoaId, misses: u32, since: f64, announced: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LteState {
    Down,
    Attaching { gen: u64 },
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ev {
    Tick,
    Window,
    Send { v: usize, class: usize },
    Arrive { packet: usize },
    WifiUp { v: usize, gen: u64 },
    LteUp { v: usize, gen: u64 },
    Commit { id: ExchangeId },
}

enum Motion {
    Grid(VehicleState),
    Trace(u32),
}

struct Vehicle {
    mn: MnId,
    motion: Motion,
    pos: (f64, f64),
    speed: f64,
    rng_mob: ChaCha8Rng,
    rng_loss: ChaCha8Rng,
    rng_beacon: ChaCha8Rng,
    wifi: WifiState,
    lte: LteState,
    gen: u64,
    last_wifi: Option<PoaId>,
    violations: BTreeMap<FlowId, u32>,
}

struct World<'a> {
    cfg: &'a SimConfig,
    scenario: Scenario,
    duration: f64,
    warmup: f64,
    topo: Topology,
    lte: RadioModel,
    wifi: RadioModel,
    domain: Domain,
    vehicles: Vec<Vehicle>,
    manhattan: &'a ManhattanConfig,
    trace: Option<&'a TraceFile>,
    classes: Vec<AppClass>,
    class_flow: Vec<FlowId>,
    flow_rate: BTreeMap<FlowId, f64>,
    thresholds: BTreeMap<FlowId, Thresholds>,
    packets: Vec<Packet>,
    load: BTreeMap<PoaId, f64>,
    mag_stats: BTreeMap<PoaId, StatusStore>,
    mag_violations: BTreeMap<(PoaId, FlowId), u32>,
    pending: BTreeMap<ExchangeId, (usize, Exchange)>,
    handovers: Vec<ExchangeRecord>,
    aborted: u64,
    wifi_attach_events: u64,
    lte_data_packets: u64,
    mag_path: BTreeMap<PoaId, Vec<usize>>,
    cn_path: Vec<usize>,
}

type Sched = Scheduler<Ev>;

impl<'a> World<'a> {
    fn new(cfg: &'a SimConfig, spec: &'a ScenarioSpec, seed: u64) -> Result<Self, SimError> {
        spec.validate()?;
        let scenario = spec.scenario;
        let (placement, extent, trace) = match &spec.map {
            MapSpec::Manhattan => (&cfg.manhattan_aps, cfg.manhattan.extent(), None),
            MapSpec::Trace { trace, .. } => {
                let ((_, _), (x1, y1)) = trace.extent();
                (&cfg.trace_aps, (x1, y1), Some(trace.as_ref()))
            }
        };
        let topo = Topology::standard(cfg.backbone, placement.lte_position, &placement.wifi_aps, extent);
        topo.check_invariants().map_err(|msg| SimError::Invariant { time: 0.0, msg })?;
        let mut domain = Domain::new(LmaState::new(cfg.protocol.bce_lifetime));
        domain.logging = true;
        for ap in topo.access_points() {
            let range = match ap.technology {
                Technology::Lte => None,
                Technology::Wave80211p => cfg.wifi.radius,
            };
            domain.add_mag(MagContainer::new(ap.poa, ap.technology, ap.position, range));
        }
        let table = scenario.flow_table(cfg);
        let classes = cfg.apps.classes()?;
        let mut class_flow = Vec::new();
        let mut flow_rate = BTreeMap::new();
        let mut thresholds = BTreeMap::new();
        for c in &classes {
            let port = cfg.apps.get(c.kind).port;
            let Classification::Flow(f) = classify_packet(Transport::Udp, port, &table) else {
                return Err(ConfigError::Invalid(format!("port {port} matches no flow")).into());
            };
            class_flow.push(f);
            *flow_rate.entry(f).or_insert(0.0) += c.rate();
            thresholds.insert(f, cfg.thresholds.for_class(c.kind));
        }
        let mut interfaces = Vec::new();
        if scenario.uses_lte() {
            interfaces.push((LTE_IF, Technology::Lte));
        }
        if scenario.uses_wifi() {
            interfaces.push((WIFI_IF, Technology::Wave80211p));
        }
        let trace_ids: Vec<u32> = trace.map(|t| t.vehicles().collect()).unwrap_or_default();
        let mut vehicles = Vec::new();
        #[allow(clippy::needless_range_loop)]
        for i in 0..spec.active {
            let mn = MnId(i as u32 + 1);
            let mut state = MnState::new(mn, &interfaces, table.clone());
            state.flow_statuses = StatusStore::new(cfg.protocol.window);
            state.requirements = thresholds.clone();
            domain.add_mn(state);
            let vi = i as u32;
            let mut rng_place = substream(seed, vi, Purpose::Placement);
            let (motion, pos) = match trace {
                None => {
                    let s = manhattan_place(&cfg.manhattan, spec.speed, &mut rng_place);
                    (Motion::Grid(s), s.position)
                }
                Some(t) => {
                    let id = trace_ids[i];
                    let p = trace_position(t, id, 0.0).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                    (Motion::Trace(id), p)
                }
            };
            vehicles.push(Vehicle {
                mn,
                motion,
                pos,
                speed: if trace.is_some() { 0.0 } else { spec.speed },
                rng_mob: substream(seed, vi, Purpose::Mobility),
                rng_loss: substream(seed, vi, Purpose::Loss),
                rng_beacon: substream(seed, vi, Purpose::Beacon),
                wifi: WifiState::Idle,
                lte: LteState::Down,
                gen: 0,
                last_wifi: None,
                violations: BTreeMap::new(),
            });
        }
        let mut mag_path = BTreeMap::new();
        let mut mag_stats = BTreeMap::new();
        for ap in topo.access_points() {
            mag_path.insert(ap.poa, topo.path(ap.node, topo.lma).expect("checked tree"));
            mag_stats.insert(ap.poa, StatusStore::new(cfg.protocol.window));
        }
        let cn_path = topo.path(topo.lma, topo.cn).expect("checked tree");
        Ok(Self {
            cfg,
            scenario,
            duration: spec.duration,
            warmup: spec.warmup,
            lte: cfg.lte.model(Technology::Lte),
            wifi: cfg.wifi.model(Technology::Wave80211p),
            topo,
            domain,
            vehicles,
            manhattan: &cfg.manhattan,
            trace,
            classes,
            class_flow,
            flow_rate,
            thresholds,
            packets: Vec::new(),
            load: BTreeMap::new(),
            mag_stats,
            mag_violations: BTreeMap::new(),
            pending: BTreeMap::new(),
            handovers: Vec::new(),
            aborted: 0,
            wifi_attach_events: 0,
            lte_data_packets: 0,
            mag_path,
            cn_path,
        })
    }

    fn invariant(&self, time: f64, msg: impl Into<String>) -> SimError {
        SimError::Invariant { time, msg: msg.into() }
    }

    fn radio(&self, poa: PoaId) -> &RadioModel {
        if poa == LTE_POA {
            &self.lte
        } else {
            &self.wifi
        }
    }

    fn ap_position(&self, poa: PoaId) -> (f64, f64) {
        self.topo.access_point(poa).expect("known POA").position
    }

    // ---- mobility and links ----

    fn move_vehicle(&mut self, v: usize, t: f64) -> Result<(), SimError> {
        let dt = self.cfg.link.tick;
        let trace = self.trace;
        let veh = &mut self.vehicles[v];
        match &mut veh.motion {
            Motion::Grid(s) => {
                if t > 0.0 {
                    veh.pos = manhattan_step(self.manhattan, s, dt, &mut veh.rng_mob);
                }
            }
            Motion::Trace(id) => {
                let p = trace_position(trace.expect("trace mode"), *id, t).map_err(|e| SimError::Invariant { time: t, msg: e.to_string() })?;
                if t > 0.0 {
                    veh.speed = distance(p, veh.pos) / dt;
                }
                veh.pos = p;
            }
        }
        Ok(())
    }

    fn tick(&mut self, s: &mut Sched, t: f64) -> Result<(), SimError> {
        for v in 0..self.vehicles.len() {
            self.move_vehicle(v, t)?;
            if self.scenario.uses_wifi() {
                self.wifi_tick(s, v, t)?;
            }
            if self.scenario == Scenario::SingleInterface {
                let veh = &self.vehicles[v];
                if veh.wifi == WifiState::Idle && veh.lte == LteState::Down {
                    self.lte_start(s, v, t);
                }
            }
        }
        self.recompute_load();
        let next = t + self.cfg.link.tick;
        if next < self.duration {
            s.schedule(next, EventKind::PositionUpdate, Ev::Tick).expect("future");
        }
        Ok(())
    }

    fn wifi_tick(&mut self, s: &mut Sched, v: usize, t: f64) -> Result<(), SimError> {
        let radius = self.wifi.radius().expect("disc coverage");
        match self.vehicles[v].wifi {
            WifiState::Up { poa, misses, since, announced } => {
                let d = distance(self.vehicles[v].pos, self.ap_position(poa));
                let lost = if d > radius {
                    true
                } else {
                    let q = self.wifi.beacon_miss(d);
                    let miss = self.vehicles[v].rng_beacon.gen::<f64>() < q;
                    let misses = if miss { misses + 1 } else { 0 };
                    self.vehicles[v].wifi = WifiState::Up { poa, misses, since, announced };
                    misses >= self.cfg.link.beacon_misses
                };
                if lost {
                    self.wifi_lost(s, v, t)?;
                    self.wifi_scan(s, v, t)?;
                    if self.scenario == Scenario::SingleInterface && self.vehicles[v].wifi == WifiState::Idle {
                        self.lte_start(s, v, t);
                    }
                } else if !announced && t - since >= self.cfg.link.sfmma_hold - 1e-9 {
                    self.wifi_announce(s, v, t)?;
                }
            }
            WifiState::Associating { poa, .. } => {
                if distance(self.vehicles[v].pos, self.ap_position(poa)) > radius {
                    self.vehicles[v].wifi = WifiState::Idle;
                    self.vehicles[v].gen += 1;
                }
            }
            WifiState::Idle => self.wifi_scan(s, v, t)?,
        }
        Ok(())
    }

    /// Listens for beacons and starts associating with the chosen AP.
    fn wifi_scan(&mut self, s: &mut Sched, v: usize, t: f64) -> Result<(), SimError> {
        let pos = self.vehicles[v].pos;
        let mut heard: Vec<(f64, PoaId)> = Vec::new();
        for i in 0..self.topo.wifi.len() {
            let ap = &self.topo.wifi[i];
            let d = distance(pos, ap.position);
            if !crate::netsim::coverage_check(&self.wifi, pos, ap.position) {
                continue;
            }
            let q = self.wifi.beacon_miss(d);
            if self.vehicles[v].rng_beacon.gen::<f64>() >= q {
                heard.push((d, ap.poa));
            }
        }
        if heard.is_empty() {
            return Ok(());
        }
        let sticky = self.scenario == Scenario::Sfmma;
        let poa = match self.vehicles[v].last_wifi {
            Some(p) if sticky && heard.iter().any(|h| h.1 == p) => p,
            _ => heard.iter().min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))).expect("non-empty").1,
        };
        if self.scenario == Scenario::SingleInterface {
            self.lte_stop(v, t)?;
        }
        let veh = &mut self.vehicles[v];
        veh.gen += 1;
        veh.wifi = WifiState::Associating { poa, gen: veh.gen };
        self.wifi_attach_events += 1;
        s.schedule(t + self.wifi.attach_delay, EventKind::LinkCheck, Ev::WifiUp { v, gen: veh.gen }).expect("future");
        Ok(())
    }

    fn wifi_up(&mut self, s: &mut Sched, v: usize, gen: u64, t: f64) -> Result<(), SimError> {
        let WifiState::Associating { poa, gen: g } = self.vehicles[v].wifi else { return Ok(()) };
        if g != gen {
            return Ok(());
        }
        self.vehicles[v].wifi = WifiState::Up { poa, misses: 0, since: t, announced: false };
        if self.scenario != Scenario::Sfmma || self.cfg.link.sfmma_hold <= 0.0 {
            self.wifi_announce(s, v, t)?;
        }
        Ok(())
    }

    /// Reports the Wi-Fi link up to the node and starts the layer-3
    /// procedure of the scenario.
    fn wifi_announce(&mut self, s: &mut Sched, v: usize, t: f64) -> Result<(), SimError> {
        let WifiState::Up { poa, misses, since, .. } = self.vehicles[v].wifi else { return Ok(()) };
        self.vehicles[v].wifi = WifiState::Up { poa, misses, since, announced: true };
        self.vehicles[v].last_wifi = Some(poa);
        let mn = self.vehicles[v].mn;
        self.domain.link_up(mn, WIFI_IF, poa, t).map_err(|e| self.invariant(t, e.to_string()))?;
        let ex = match self.scenario {
            Scenario::Sfmma => self.domain.mn_on_interface_activated(mn, WIFI_IF, t),
            _ => self.domain.plan_attach(mn, WIFI_IF, self.class_flow_set(), Origin::Attachment, t),
        };
        self.start_exchange(s, v, ex, t)
    }

    fn wifi_lost(&mut self, _s: &mut Sched, v: usize, t: f64) -> Result<(), SimError> {
        let WifiState::Up { announced, .. } = self.vehicles[v].wifi else { return Ok(()) };
        self.vehicles[v].wifi = WifiState::Idle;
        self.vehicles[v].gen += 1;
        if announced {
            self.abort_pending(v, WIFI_IF, t);
            let mn = self.vehicles[v].mn;
            self.domain.link_down(mn, WIFI_IF, t).map_err(|e| self.invariant(t, e.to_string()))?;
        }
        Ok(())
    }

    fn lte_start(&mut self, s: &mut Sched, v: usize, t: f64) {
        let veh = &mut self.vehicles[v];
        if veh.lte != LteState::Down {
            return;
        }
        veh.gen += 1;
        veh.lte = LteState::Attaching { gen: veh.gen };
        s.schedule(t + self.lte.attach_delay, EventKind::LinkCheck, Ev::LteUp { v, gen: veh.gen }).expect("future");
    }

    fn lte_stop(&mut self, v: usize, t: f64) -> Result<(), SimError> {
        match self.vehicles[v].lte {
            LteState::Down => {}
            LteState::Attaching { .. } => self.vehicles[v].lte = LteState::Down,
            LteState::Up => {
                self.vehicles[v].lte = LteState::Down;
                self.abort_pending(v, LTE_IF, t);
                let mn = self.vehicles[v].mn;
                self.domain.link_down(mn, LTE_IF, t).map_err(|e| self.invariant(t, e.to_string()))?;
            }
        }
        Ok(())
    }

    fn lte_up(&mut self, s: &mut Sched, v: usize, gen: u64, t: f64) -> Result<(), SimError> {
        if self.vehicles[v].lte != (LteState::Attaching { gen }) {
            return Ok(());
        }
        self.vehicles[v].lte = LteState::Up;
        let mn = self.vehicles[v].mn;
        self.domain.link_up(mn, LTE_IF, LTE_POA, t).map_err(|e| self.invariant(t, e.to_string()))?;
        let ex = match self.scenario {
            Scenario::Sfmma => self.domain.mn_on_interface_activated(mn, LTE_IF, t),
            _ => self.domain.plan_attach(mn, LTE_IF, self.class_flow_set(), Origin::Attachment, t),
        };
        self.start_exchange(s, v, ex, t)
    }

    fn class_flow_set(&self) -> Vec<FlowId> {
        let mut f = self.class_flow.clone();
        f.sort();
        f.dedup();
        f
    }

    // ---- exchanges ----

    fn hop_latency(&self, m: &PmipMessage, target: PoaId) -> f64 {
        let size = self.cfg.protocol.signalling_size;
        let wired = |p: PoaId| self.topo.path_delay(&self.mag_path[&p], size);
        let air = |p: PoaId| self.radio(p).base_latency;
        match (m.src, m.dst) {
            (Entity::Mn(_), Entity::Mag(p)) | (Entity::Mag(p), Entity::Mn(_)) => air(p),
            (Entity::Mag(p), Entity::Lma) | (Entity::Lma, Entity::Mag(p)) => wired(p),
            (Entity::Mag(a), Entity::Mag(b)) => wired(a) + wired(b),
            (Entity::Lma, Entity::Mn(_)) | (Entity::Mn(_), Entity::Lma) => wired(target) + air(target),
            _ => 0.0,
        }
    }

    fn start_exchange(&mut self, s: &mut Sched, v: usize, ex: Result<Exchange, ExchangeError>, t: f64) -> Result<(), SimError> {
        let mut ex = match ex {
            Ok(ex) => ex,
            Err(ExchangeError::InFlight(_) | ExchangeError::NoCandidate | ExchangeError::LmaDecline | ExchangeError::InterfaceInactive(_)) => {
                return Ok(())
            }
            Err(ExchangeError::TargetUnreachable(_) | ExchangeError::Stale | ExchangeError::EmptyCandidates) => return Ok(()),
            Err(e) => return Err(self.invariant(t, format!("planning failed: {e}"))),
        };
        if ex.record.state == ExchangeState::Aborted {
            self.aborted += 1;
            return Ok(());
        }
        let target = ex.record.target_poa;
        let lat: Vec<f64> = ex.messages.iter().map(|m| self.hop_latency(m, target)).collect();
        let candidate_latency: f64 = lat[..ex.candidate_phase].iter().sum();
        if candidate_latency > self.cfg.protocol.exchange_timeout {
            self.aborted += 1;
            return Ok(());
        }
        if self.domain.begin(&mut ex, t).is_err() {
            return Ok(());
        }
        let total: f64 = lat.iter().sum();
        let id = ex.record.id;
        self.pending.insert(id, (v, ex));
        s.schedule(t + total, EventKind::Timer, Ev::Commit { id }).expect("future");
        Ok(())
    }

    fn abort_pending(&mut self, v: usize, iface: InterfaceId, t: f64) {
        let ids: Vec<ExchangeId> = self
            .pending
            .iter()
            .filter(|(_, (pv, ex))| *pv == v && ex.record.target_interface == iface)
            .map(|(id, _)| *id)
            .collect();
        for id in ids {
            let (_, ex) = self.pending.remove(&id).expect("listed");
            self.domain.abort(ex, &ExchangeError::Stale, t);
            self.aborted += 1;
        }
    }

    fn commit(&mut self, id: ExchangeId, t: f64) -> Result<(), SimError> {
        let Some((v, ex)) = self.pending.remove(&id) else { return Ok(()) };
        match self.domain.commit(ex, t) {
            Ok(rec) => {
                for f in &rec.flows {
                    self.vehicles[v].violations.remove(f);
                }
                if t >= self.warmup && t < self.duration && self.scenario.performs_handover() {
                    self.handovers.push(rec);
                }
                Ok(())
            }
            Err(ExchangeError::Stale) => {
                self.aborted += 1;
                Ok(())
            }
            Err(e) => Err(self.invariant(t, format!("commit failed: {e}"))),
        }
    }

    // ---- traffic ----

    fn recompute_load(&mut self) {
        self.load.clear();
        for veh in &self.vehicles {
            for (f, rate) in &self.flow_rate {
                if let Some((_, poa)) = self.domain.flow_path(veh.mn, *f) {
                    *self.load.entry(poa).or_insert(0.0) += rate;
                }
            }
        }
    }

    fn send(&mut self, s: &mut Sched, v: usize, class: usize, t: f64) {
        let c = self.classes[class];
        if t + c.message_period < self.duration {
            s.schedule(t + c.message_period, EventKind::Timer, Ev::Send { v, class }).expect("future");
        }
        let flow = self.class_flow[class];
        let mn = self.vehicles[v].mn;
        let mut packet = Packet {
            id: self.packets.len() as u64,
            mn,
            flow,
            class: c.kind,
            dest_port: self.cfg.apps.get(c.kind).port,
            size: c.payload_size,
            t_sent: t,
            disposition: Disposition::InFlight,
            path: PathTrace::default(),
        };
        let route = self.domain.flow_path(mn, flow).and_then(|(iface, poa)| {
            let bound = self.domain.mags.get(&poa)?.binding(mn)?.bind_id.is_some();
            let tunnel = self.domain.lma.bce_for(mn, poa)?.tunnel_id;
            bound.then_some((iface, poa, tunnel))
        });
        let Some((iface, poa, tunnel)) = route else {
            packet.disposition = Disposition::Lost(LossCause::Disconnected);
            self.record(&packet, t);
            self.packets.push(packet);
            return;
        };
        packet.path = PathTrace { interface: Some(iface), poa: Some(poa), tunnel: Some(tunnel) };
        if poa == LTE_POA {
            self.lte_data_packets += 1;
        }
        let radio = *self.radio(poa);
        let veh = &self.vehicles[v];
        let d = distance(veh.pos, self.ap_position(poa));
        let lambda = self.load.get(&poa).copied().unwrap_or(0.0);
        let mut hops = vec![
            Hop { latency: radio.base_latency, capacity_bps: None, loss: radio.loss.probability(d, veh.speed), loss_cause: LossCause::Radio, extra_delay_mean: 0.0, overhead: 0 },
            Hop { latency: 0.0, capacity_bps: None, loss: radio.load.loss(lambda), loss_cause: LossCause::Congestion, extra_delay_mean: radio.load.mean_delay(lambda), overhead: 0 },
        ];
        let overhead = self.cfg.protocol.tunnel_overhead;
        for l in &self.mag_path[&poa] {
            let link = self.topo.links[*l];
            hops.push(Hop::wired(link.latency, link.capacity_bps, overhead));
        }
        for l in &self.cn_path {
            let link = self.topo.links[*l];
            hops.push(Hop::wired(link.latency, link.capacity_bps, 0));
        }
        let out = deliver(c.payload_size, &hops, &mut self.vehicles[v].rng_loss);
        let idx = self.packets.len();
        match out {
            Outcome::Delivered { delay } => {
                s.schedule(t + delay, EventKind::PacketArrival, Ev::Arrive { packet: idx }).expect("future");
            }
            Outcome::Lost(cause) => {
                packet.disposition = Disposition::Lost(cause);
                self.record(&packet, t);
            }
        }
        self.packets.push(packet);
    }

    fn arrive(&mut self, idx: usize, t: f64) {
        self.packets[idx].disposition = Disposition::Delivered(t);
        let p = self.packets[idx].clone();
        self.record(&p, t);
    }

    /// Feeds a packet outcome into the node's and the MAG's flow status.
    fn record(&mut self, p: &Packet, t: f64) {
        let sample = Sample {
            delivered: p.is_delivered(),
            delay: p.t_delivered().map_or(0.0, |d| d - p.t_sent),
            bits: p.size as u64 * 8,
        };
        if let Some(mn) = self.domain.mns.get_mut(&p.mn) {
            mn.flow_statuses.record_sample(p.flow, sample, t);
        }
        if let Some(poa) = p.path.poa {
            if let Some(st) = self.mag_stats.get_mut(&poa) {
                st.record_sample(p.flow, sample, t);
            }
        }
    }

    // ---- periodic protocol work ----

    fn window(&mut self, s: &mut Sched, t: f64) -> Result<(), SimError> {
        let attached: Vec<(PoaId, MnId)> =
            self.domain.mags.iter().flat_map(|(p, m)| m.attached().map(move |(mn, _)| (*p, *mn))).collect();
        for (poa, mn) in attached {
            self.domain.lma.refresh(mn, poa, t);
        }
        let expired = self.domain.lma.bce_expire(t);
        if !expired.is_empty() {
            return Err(self.invariant(t, format!("{} bindings expired while attached", expired.len())));
        }
        self.domain.lma.check_invariants().map_err(|m| self.invariant(t, m))?;
        self.update_information_service(t);
        if self.scenario == Scenario::Sfmma {
            self.mn_requirements(s, t)?;
            self.mag_thresholds(s, t)?;
        }
        let next = t + self.cfg.protocol.window;
        if next < self.duration {
            s.schedule(next, EventKind::Timer, Ev::Window).expect("future");
        }
        Ok(())
    }

    fn update_information_service(&mut self, t: f64) {
        let flows = self.class_flow_set();
        for (poa, store) in self.mag_stats.iter_mut() {
            if let Some(c) = self.domain.info.container_mut(*poa) {
                for f in &flows {
                    c.flow_statuses.insert(*f, store.status(*f, t));
                }
            }
        }
    }

    fn mn_requirements(&mut self, s: &mut Sched, t: f64) -> Result<(), SimError> {
        let need = self.cfg.protocol.violation_windows;
        let flows = self.class_flow_set();
        for v in 0..self.vehicles.len() {
            let mn = self.vehicles[v].mn;
            for f in &flows {
                let status = self.domain.mns.get_mut(&mn).expect("added").flow_statuses.status(*f, t);
                let verdict = evaluate_thresholds(&status, &self.thresholds[f]);
                let count = self.vehicles[v].violations.entry(*f).or_insert(0);
                let metric = match verdict {
                    Verdict::AboveUpper(m) => {
                        *count += 1;
                        m
                    }
                    _ => {
                        *count = 0;
                        continue;
                    }
                };
                if *count < need {
                    continue;
                }
                *count = 0;
                let st = &self.domain.mns[&mn];
                if st.in_flight(*f) || st.last_commit(*f).is_some_and(|c| t - c < need as f64 * self.cfg.protocol.window) {
                    continue;
                }
                let ex = self.domain.mn_on_flow_degraded(mn, *f, metric, t);
                self.start_exchange(s, v, ex, t)?;
            }
        }
        Ok(())
    }

    fn mag_thresholds(&mut self, s: &mut Sched, t: f64) -> Result<(), SimError> {
        let need = self.cfg.protocol.violation_windows;
        let th = self.cfg.thresholds.mag;
        let flows = self.class_flow_set();
        let wifi: Vec<PoaId> = self.topo.wifi.iter().map(|a| a.poa).collect();
        for poa in wifi {
            let mut healthy = true;
            for f in &flows {
                let status = self.mag_stats.get_mut(&poa).expect("known").status(*f, t);
                let count = self.mag_violations.entry((poa, *f)).or_insert(0);
                match evaluate_thresholds(&status, &th) {
                    Verdict::AboveUpper(_) => {
                        healthy = false;
                        *count += 1;
                    }
                    _ => *count = 0,
                }
                if *count < need {
                    continue;
                }
                *count = 0;
                // Offload the lowest-numbered node whose flow runs here.
                let victim = self.vehicles.iter().position(|veh| {
                    self.domain.flow_path(veh.mn, *f).is_some_and(|(_, p)| p == poa) && !self.domain.mns[&veh.mn].in_flight(*f)
                });
                if let Some(v) = victim {
                    let ex = self.domain.mag_on_threshold_violation(poa, self.vehicles[v].mn, *f, Direction::AboveUpper, t);
                    self.start_exchange(s, v, ex, t)?;
                }
            }
            if !healthy {
                continue;
            }
            // A healthy MAG offers to take back flows that prefer it.
            let holddown = need as f64 * self.cfg.protocol.window * 5.0;
            for v in 0..self.vehicles.len() {
                let mn = self.vehicles[v].mn;
                if !matches!(self.vehicles[v].wifi, WifiState::Up { poa: p, announced: true, .. } if p == poa) {
                    continue;
                }
                for f in &flows {
                    let st = &self.domain.mns[&mn];
                    let recent = st.last_commit(*f).is_some_and(|c| t - c < holddown);
                    let elsewhere = self.domain.flow_path(mn, *f).is_some_and(|(_, p)| p != poa);
                    if recent || !elsewhere || st.in_flight(*f) {
                        continue;
                    }
                    let ex = self.domain.mag_on_threshold_violation(poa, mn, *f, Direction::BelowLower, t);
                    self.start_exchange(s, v, ex, t)?;
                }
            }
        }
        Ok(())
    }

    fn handle(&mut self, s: &mut Sched, ev: Ev, t: f64) -> Result<(), SimError> {
        match ev {
            Ev::Tick => self.tick(s, t),
            Ev::Window => self.window(s, t),
            Ev::Send { v, class } => {
                self.send(s, v, class, t);
                Ok(())
            }
            Ev::Arrive { packet } => {
                self.arrive(packet, t);
                Ok(())
            }
            Ev::WifiUp { v, gen } => self.wifi_up(s, v, gen, t),
            Ev::LteUp { v, gen } => self.lte_up(s, v, gen, t),
            Ev::Commit { id } => self.commit(id, t),
        }
    }
}

/// Runs one seed of a scenario.
pub fn run_once(cfg: &SimConfig, spec: &ScenarioSpec, seed: u64, capture: Capture) -> Result<RunOutput, SimError> {
    let mut w = World::new(cfg, spec, seed)?;
    w.domain.logging = capture.event_log;
    let mut s: Sched = Scheduler::new();
    s.schedule(0.0, EventKind::PositionUpdate, Ev::Tick).expect("fresh");
    s.schedule(cfg.protocol.window, EventKind::Timer, Ev::Window).expect("fresh");
    for v in 0..w.vehicles.len() {
        if w.scenario == Scenario::LteOnly || w.scenario == Scenario::Sfmma {
            w.lte_start(&mut s, v, 0.0);
        }
        let mut rng = substream(seed, v as u32, Purpose::Traffic);
        for (i, c) in w.classes.iter().enumerate() {
            let phase = rng.gen::<f64>() * c.message_period;
            if phase < w.duration {
                s.schedule(phase, EventKind::Timer, Ev::Send { v, class: i }).expect("fresh");
            }
        }
    }
    let mut failure = None;
    // Run past the end so packets in flight reach a disposition.
    let drain = spec.duration + 10.0;
    s.run_until(drain, |s, ev| {
        if failure.is_none() {
            if let Err(e) = w.handle(s, ev.payload, ev.time) {
                failure = Some(e);
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some(p) = w.packets.iter().find(|p| p.disposition == Disposition::InFlight) {
        return Err(w.invariant(drain, format!("packet {} has no disposition", p.id)));
    }
    let bce_dump = if capture.bce_dump { w.domain.lma.dump(spec.duration) } else { Vec::new() };
    let handovers = w.handovers.clone();
    let mut metrics = compute_metrics(&w.packets, Some(&handovers), spec.warmup, spec.duration);
    if !w.scenario.performs_handover() {
        metrics.avg_handover_time = None;
    }
    Ok(RunOutput {
        scenario: w.scenario,
        seed,
        metrics,
        handovers,
        aborted_exchanges: w.aborted,
        wifi_attach_events: w.wifi_attach_events,
        lte_data_packets: w.lte_data_packets,
        events_processed: s.processed(),
        event_log: w.domain.take_log(),
        bce_dump,
        measure_from: spec.warmup,
        measure_to: spec.duration,
        packets: std::mem::take(&mut w.packets),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(scenario: Scenario) -> (SimConfig, ScenarioSpec) {
        let cfg = SimConfig::default();
        let mut s = ScenarioSpec::from_config(&cfg).unwrap();
        s.scenario = scenario;
        s.active = 4;
        s.duration = 15.0;
        s.warmup = 1.0;
        (cfg, s)
    }

    #[test]
    fn every_packet_gets_a_disposition() {
        for sc in Scenario::ALL {
            let (cfg, s) = spec(sc);
            let out = run_once(&cfg, &s, 3, Capture::default()).unwrap();
            assert!(out.packets.iter().all(|p| p.disposition != Disposition::InFlight));
            assert_eq!(out.metrics.sent, out.metrics.delivered + out.metrics.lost);
        }
    }

    #[test]
    fn same_seed_same_packets() {
        let (cfg, s) = spec(Scenario::Sfmma);
        let a = run_once(&cfg, &s, 9, Capture::default()).unwrap();
        let b = run_once(&cfg, &s, 9, Capture::default()).unwrap();
        assert_eq!(a.packets, b.packets);
        let c = run_once(&cfg, &s, 10, Capture::default()).unwrap();
        assert_ne!(a.packets, c.packets);
    }

    #[test]
    fn capture_flags() {
        let (cfg, s) = spec(Scenario::Sfmma);
        let quiet = run_once(&cfg, &s, 1, Capture::default()).unwrap();
        assert!(quiet.event_log.is_empty() && quiet.bce_dump.is_empty());
        let loud = run_once(&cfg, &s, 1, Capture { event_log: true, bce_dump: true }).unwrap();
        assert!(!loud.event_log.is_empty());
        assert!(!loud.bce_dump.is_empty());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(SimError::Config(ConfigError::Invalid("x".into())).exit_code(), 2);
        assert_eq!(SimError::Invariant { time: 1.0, msg: "x".into() }.exit_code(), 3);
    }
}
