//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::process::ExitCode;

use flowmob::entities::{Direction, Domain, MnState, Origin};
use flowmob::flow::{classify_packet, default_flow_table, AppClassKind, fallback_flow_table, AttachmentId, Classification, FlowId, Transport};
use flowmob::harness::output::{csv_string, rows};
use flowmob::harness::runner::{run_grid, run_seeds};
use flowmob::harness::{Capture, CellResult, MapSpec, RunOutput, Scenario, ScenarioSpec, SimConfig};
use flowmob::ids::{MnId, PoaId};
use flowmob::mihf::{MagContainer, Metric, Technology};
use flowmob::pmip::{LmaState, MessageKind};

const TRACE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/neighborhood.trace");

/// SFMMA row of the real-map throughput table, Kbps, for 10..50 senders.
const REFERENCE_THROUGHPUT: [(usize, f64); 5] = [(10, 69.42), (20, 138.84), (30, 208.22), (40, 277.54), (50, 346.92)];
const THROUGHPUT_TOL: f64 = 0.02;
const SPREAD_TOL: f64 = 0.01;
const HO_TIME_RANGE: (f64, f64) = (0.02, 0.15);
const LOSS_FACTOR: f64 = 0.5;
const SPEED_LOSS_FACTOR: f64 = 1.3;
const SPEEDS: [f64; 5] = [5.0, 10.0, 15.0, 20.0, 25.0];

struct Report {
    lines: Vec<(u32, bool, String)>,
}

impl Report {
    fn add(&mut self, id: u32, pass: bool, detail: String) {
        println!("criterion {id}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id, pass, detail));
    }
}

fn spec(cfg: &SimConfig, sc: u8, active: usize, speed: f64, map: &MapSpec) -> ScenarioSpec {
    let mut s = ScenarioSpec::from_config(cfg).unwrap();
    s.scenario = Scenario::from_id(sc).unwrap();
    s.active = active;
    s.speed = speed;
    s.map = map.clone();
    s
}

fn find<'a>(cells: &'a [CellResult], sc: u8, map: &MapSpec, load: usize, speed: f64) -> &'a CellResult {
    cells
        .iter()
        .find(|c| c.cell.scenario == sc && c.cell.map == map.label() && c.cell.load == load && c.cell.speed == speed)
        .expect("cell was run")
}

fn criterion_1(cells: &[CellResult], trace: &MapSpec, r: &mut Report) {
    let mut pass = true;
    let mut detail = Vec::new();
    for (load, reference) in REFERENCE_THROUGHPUT {
        let means: Vec<f64> = (0..4).map(|sc| find(cells, sc, trace, load, 10.0).mean("throughput_kbps").unwrap()).collect();
        let sfmma = means[2];
        let err = (sfmma - reference).abs() / reference;
        let hi = means.iter().cloned().fold(f64::MIN, f64::max);
        let lo = means.iter().cloned().fold(f64::MAX, f64::min);
        let spread = (hi - lo) / hi;
        pass &= err <= THROUGHPUT_TOL && spread <= SPREAD_TOL;
        detail.push(format!("{load}: {sfmma:.2} vs {reference} ({:+.2}%), spread {:.2}%", 100.0 * (sfmma - reference) / reference, 100.0 * spread));
    }
    r.add(1, pass, detail.join("; "));
}

fn criterion_2(cells: &[CellResult], r: &mut Report) {
    let m = MapSpec::Manhattan;
    let s = |sc| find(cells, sc, &m, 30, 10.0).get("handover_count").copied().unwrap();
    let (s1, s2, s3) = (s(1), s(2), s(3));
    let disjoint = |a: flowmob::Summary, b: flowmob::Summary| a.ci_high.unwrap() < b.ci_low.unwrap();
    let pass = s2.mean < s1.mean && s1.mean < s3.mean && disjoint(s2, s1) && disjoint(s1, s3);
    r.add(
        2,
        pass,
        format!(
            "counts 2={:.1}±{:.1} 1={:.1}±{:.1} 3={:.1}±{:.1}; differences {:.1} and {:.1} (reference 18 and 8, not gating)",
            s2.mean,
            s2.half_width().unwrap(),
            s1.mean,
            s1.half_width().unwrap(),
            s3.mean,
            s3.half_width().unwrap(),
            s1.mean - s2.mean,
            s3.mean - s1.mean
        ),
    );
}

fn criterion_3(cells: &[CellResult], r: &mut Report) {
    let m = MapSpec::Manhattan;
    let mut pass = true;
    let mut detail = Vec::new();
    let mut sfmma_all = Vec::new();
    for v in SPEEDS {
        let t = |sc| find(cells, sc, &m, 30, v).mean("avg_handover_time").unwrap();
        let (t1, t2, t3) = (t(1), t(2), t(3));
        sfmma_all.extend(find(cells, 2, &m, 30, v).runs.iter().filter_map(|run| run.avg_handover_time));
        pass &= t2 < t1 && t2 < t3;
        detail.push(format!("{v} m/s: 2={t2:.4} 1={t1:.4} 3={t3:.4}"));
    }
    let mean = sfmma_all.iter().sum::<f64>() / sfmma_all.len() as f64;
    pass &= mean >= HO_TIME_RANGE.0 && mean <= HO_TIME_RANGE.1;
    r.add(3, pass, format!("SFMMA mean {mean:.4} s; {}", detail.join("; ")));
}

fn criterion_4(cells: &[CellResult], r: &mut Report) {
    let m = MapSpec::Manhattan;
    let loss = |sc, v| find(cells, sc, &m, 50, v).mean("packet_loss_ratio").unwrap();
    let best_other = [0, 1, 3].map(|sc| loss(sc, 10.0)).into_iter().fold(f64::MAX, f64::min);
    let sfmma = loss(2, 10.0);
    let mean_at = |v| (0..4).map(|sc| loss(sc, v)).sum::<f64>() / 4.0;
    let (l15, l25) = (mean_at(15.0), mean_at(25.0));
    let pass = sfmma <= LOSS_FACTOR * best_other && l25 >= SPEED_LOSS_FACTOR * l15;
    r.add(
        4,
        pass,
        format!(
            "SFMMA {sfmma:.5} vs best other {best_other:.5} (reduction {:.0}%); mean loss 25 m/s {l25:.4} = {:.2} x 15 m/s {l15:.4}",
            100.0 * (1.0 - sfmma / best_other),
            l25 / l15
        ),
    );
}

fn criterion_5(cells: &[CellResult], r: &mut Report) {
    let m = MapSpec::Manhattan;
    let mut pass = true;
    let mut detail = Vec::new();
    for load in [40, 50] {
        let d = |sc| find(cells, sc, &m, load, 10.0).mean("avg_delay").unwrap();
        let ok = (0..4).all(|sc| d(2) <= d(sc));
        pass &= ok;
        detail.push(format!("{load} active: 2={:.4} 0={:.4} 1={:.4} 3={:.4}", d(2), d(0), d(1), d(3)));
    }
    // every SFMMA run of the suite, every class below its message period
    let mut worst = [0.0f64; 3];
    for c in cells.iter().filter(|c| c.cell.scenario == 2) {
        for run in &c.runs {
            for (i, (_, d)) in run.per_class_delay.iter().enumerate() {
                worst[i] = worst[i].max(d.unwrap_or(0.0));
            }
        }
    }
    let periods = [0.1, 0.5, 1.0];
    pass &= worst.iter().zip(periods).all(|(w, p)| *w < p);
    detail.push(format!("worst SFMMA class delays safety {:.4} comfort {:.4} user {:.4}", worst[0], worst[1], worst[2]));
    r.add(5, pass, detail.join("; "));
}

fn kinds(ex: &flowmob::entities::Exchange) -> Vec<MessageKind> {
    ex.messages.iter().map(|m| m.kind).collect()
}

const MN: MnId = MnId(1);
const LTE: AttachmentId = AttachmentId(1);
const WIFI: AttachmentId = AttachmentId(2);

fn micro_domain() -> Domain {
    let mut d = Domain::new(LmaState::default());
    d.add_mag(MagContainer::new(PoaId(0), Technology::Lte, (0.0, 0.0), None));
    d.add_mag(MagContainer::new(PoaId(1), Technology::Wave80211p, (0.0, 0.0), Some(250.0)));
    d.add_mn(MnState::new(MN, &[(LTE, Technology::Lte), (WIFI, Technology::Wave80211p)], fallback_flow_table()));
    d
}

fn commit(d: &mut Domain, mut ex: flowmob::entities::Exchange, t: f64) {
    d.begin(&mut ex, t).unwrap();
    d.commit(ex, t + 0.05).unwrap();
}

/// Flow 1 on LTE, flows 2 and 3 on Wi-Fi.
fn both_up() -> Domain {
    let mut d = micro_domain();
    d.link_up(MN, LTE, PoaId(0), 0.0).unwrap();
    let ex = d.plan_attach(MN, LTE, vec![FlowId(1), FlowId(2), FlowId(3)], Origin::Attachment, 0.0).unwrap();
    commit(&mut d, ex, 0.0);
    d.link_up(MN, WIFI, PoaId(1), 1.0).unwrap();
    let ex = d.mn_on_interface_activated(MN, WIFI, 1.0).unwrap();
    commit(&mut d, ex, 1.0);
    d
}

fn criterion_6(r: &mut Report) {
    use MessageKind::*;
    let mut results = Vec::new();

    let mut d = micro_domain();
    d.link_up(MN, WIFI, PoaId(1), 0.0).unwrap();
    let ex = d.mn_on_interface_activated(MN, WIFI, 0.0).unwrap();
    results.push(("activation", kinds(&ex) == [Pbu, Pba, MnNotify]));

    let mut d = both_up();
    let ex = d.mn_on_flow_degraded(MN, FlowId(3), Metric::Delay, 2.0).unwrap();
    results.push((
        "mn-initiated",
        kinds(&ex)
            == [FlowMoveRequest, FlowMoveRequest, FlowMoveCandidates, FlowMoveCandidates, FlowMoveCommit, Pbu, Pba, FlowMoveAck],
    ));

    let mut d = both_up();
    let ex = d.mag_on_threshold_violation(PoaId(1), MN, FlowId(2), Direction::AboveUpper, 2.0).unwrap();
    let upper = kinds(&ex) == [FlowMoveRequest, FlowMoveCandidates, FlowMoveCommit, Pbu, Pba, MnNotify];
    commit(&mut d, ex, 2.0);
    results.push(("mag-upper", upper));
    let ex = d.mag_on_threshold_violation(PoaId(1), MN, FlowId(2), Direction::BelowLower, 3.0).unwrap();
    results.push(("mag-lower", kinds(&ex) == [FlowMoveRequest, FlowMoveCandidates, FlowMoveCommit, Pbu, Pba, MnNotify]));

    let mut d = both_up();
    let ex = d.lma_initiate_flow_move(MN, FlowId(2), PoaId(0), 2.0).unwrap();
    results.push(("lma-rewire", kinds(&ex) == [MnNotify]));
    let ex = d.lma_initiate_flow_move(MN, FlowId(1), PoaId(1), 2.0).unwrap();
    results.push(("lma-provision", kinds(&ex) == [FlowMoveCommit, FlowMoveAck, MnNotify]));

    let pass = results.iter().all(|(_, ok)| *ok);
    let detail = results.iter().map(|(n, ok)| format!("{n} {}", if *ok { "ok" } else { "MISMATCH" })).collect::<Vec<_>>().join(", ");
    r.add(6, pass, detail);
}

/// Recomputes the reported metrics of a run from its packets.
fn recompute_matches(o: &RunOutput) -> bool {
    let window: Vec<_> = o.packets.iter().filter(|p| p.t_sent >= o.measure_from && p.t_sent < o.measure_to).collect();
    let sent = window.len() as u64;
    let mut delivered = 0u64;
    let mut delay = 0.0;
    let mut bits = 0u64;
    for p in &window {
        if let Some(t) = p.t_delivered() {
            delivered += 1;
            delay += t - p.t_sent;
            bits += u64::from(p.size) * 8;
        }
    }
    let m = &o.metrics;
    let loss = if sent == 0 { 0.0 } else { (sent - delivered) as f64 / sent as f64 };
    let thr = bits as f64 / (o.measure_to - o.measure_from) / 1000.0;
    // handovers counted from the event log, not from the exchange records
    let count = if o.scenario == Scenario::LteOnly {
        0
    } else {
        o.event_log.iter().filter(|l| l.step.starts_with("Committed") && l.time >= o.measure_from && l.time < o.measure_to).count() as u64
    };
    m.sent == sent
        && m.delivered == delivered
        && m.lost == sent - delivered
        && m.packet_loss_ratio == loss
        && m.throughput == thr
        && m.avg_delay == (delivered > 0).then(|| delay / delivered as f64)
        && m.handover_count == Some(count)
}

fn criterion_7(cfg: &SimConfig, trace: &MapSpec, r: &mut Report) {
    let mut failures = Vec::new();
    let mut runs = 0;
    for map in [MapSpec::Manhattan, trace.clone()] {
        for sc in 0..4 {
            let mut s = spec(cfg, sc, 20, 15.0, &map);
            s.seeds = 2;
            let outs = run_seeds(cfg, &s, Capture { event_log: true, bce_dump: true }).unwrap();
            for o in &outs {
                runs += 1;
                if o.metrics.sent != o.metrics.delivered + o.metrics.lost || o.packets.iter().any(|p| !p.is_delivered() && !p.is_lost()) {
                    failures.push(format!("conservation s{sc} seed{}", o.seed));
                }
                if !recompute_matches(o) {
                    failures.push(format!("recomputation s{sc} seed{}", o.seed));
                }
                // one binding per (node, MAG) in the final cache
                let keys: Vec<(String, String)> = o
                    .bce_dump
                    .iter()
                    .map(|l| {
                        let f: Vec<&str> = l.split_whitespace().collect();
                        (f[1].to_string(), f[4].to_string())
                    })
                    .collect();
                if keys.iter().collect::<BTreeSet<_>>().len() != keys.len() {
                    failures.push(format!("bce uniqueness s{sc} seed{}", o.seed));
                }
            }
            let again = run_seeds(cfg, &s, Capture::default()).unwrap();
            let csv = |outs: &[RunOutput]| {
                let cell = flowmob::harness::runner::aggregate(&s, outs.iter().map(|o| o.seed).collect(), outs.iter().map(|o| o.metrics.clone()).collect(), 0.95);
                csv_string(&rows(&[cell]))
            };
            if csv(&outs) != csv(&again) {
                failures.push(format!("replay s{sc}"));
            }
        }
    }

    // HNP stability and atomicity on a scripted sequence of moves
    let mut d = both_up();
    let hnps: Vec<_> = (1..=3).map(|f| d.lma.flow_hnp(MN, FlowId(f))).collect();
    let ex = d.mag_on_threshold_violation(PoaId(1), MN, FlowId(2), Direction::AboveUpper, 2.0).unwrap();
    commit(&mut d, ex, 2.0);
    let ex = d.lma_initiate_flow_move(MN, FlowId(1), PoaId(1), 3.0).unwrap();
    commit(&mut d, ex, 3.0);
    if (1..=3).map(|f| d.lma.flow_hnp(MN, FlowId(f))).collect::<Vec<_>>() != hnps {
        failures.push("hnp stability".into());
    }
    let mut ex = d.mn_on_flow_degraded(MN, FlowId(3), Metric::PacketLoss, 4.0).unwrap();
    d.begin(&mut ex, 4.0).unwrap();
    d.link_down(MN, LTE, 4.01).unwrap();
    let mid = format!("{:?}{:?}", d.lma, d.mns[&MN].mapping());
    if d.commit(ex, 4.05).is_ok() || format!("{:?}{:?}", d.lma, d.mns[&MN].mapping()) != mid {
        failures.push("atomicity".into());
    }
    if let Err(e) = d.lma.check_invariants() {
        failures.push(format!("lma invariants: {e}"));
    }

    // classification over every UDP and TCP port: at most one entry
    // matches, the classifier returns it, and every class port matches
    for table in [default_flow_table(), fallback_flow_table()] {
        for port in 0..=u16::MAX {
            for tr in [Transport::Udp, Transport::Tcp] {
                let hits: Vec<FlowId> = table.entries().iter().filter(|e| e.descriptor.contains(tr, port)).map(|e| e.flow_id).collect();
                let ok = match classify_packet(tr, port, &table) {
                    Classification::Flow(f) => hits == [f],
                    Classification::NoMatch => hits.is_empty(),
                };
                if !ok {
                    failures.push(format!("classification {tr:?}/{port}"));
                }
            }
        }
        for kind in AppClassKind::ALL {
            if !matches!(classify_packet(Transport::Udp, kind.default_port(), &table), Classification::Flow(_)) {
                failures.push(format!("class {kind:?} unclassified"));
            }
        }
    }

    let pass = failures.is_empty();
    r.add(7, pass, if pass { format!("{runs} runs checked, scripted protocol properties hold") } else { failures.join(", ") });
}

fn main() -> ExitCode {
    let cfg = SimConfig::default();
    let trace = MapSpec::parse(&format!("trace:{TRACE}")).expect("bundled trace loads");
    let m = MapSpec::Manhattan;
    let mut specs = Vec::new();
    for sc in 0..4 {
        for (load, _) in REFERENCE_THROUGHPUT {
            specs.push(spec(&cfg, sc, load, 10.0, &trace));
        }
        for v in SPEEDS {
            specs.push(spec(&cfg, sc, 30, v, &m));
        }
        for v in [10.0, 15.0, 25.0] {
            specs.push(spec(&cfg, sc, 50, v, &m));
        }
        specs.push(spec(&cfg, sc, 40, 10.0, &m));
    }
    let cells = run_grid(&cfg, &specs).expect("acceptance grid runs");
    let mut r = Report { lines: Vec::new() };
    criterion_1(&cells, &trace, &mut r);
    criterion_2(&cells, &mut r);
    criterion_3(&cells, &mut r);
    criterion_4(&cells, &mut r);
    criterion_5(&cells, &mut r);
    criterion_6(&mut r);
    criterion_7(&cfg, &trace, &mut r);
    let failed = r.lines.iter().filter(|l| !l.1).count();
    println!("acceptance: {} passed, {failed} failed", r.lines.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
