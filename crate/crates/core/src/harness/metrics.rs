//! Per-run metrics computed from the packet log and handover records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::entities::{measure_handover, DeliveryRecord, ExchangeRecord};
use crate::flow::AppClassKind;
use crate::ids::MnId;
use crate::netsim::Packet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Mean handover interruption over measurable handovers; `None` when
    /// not applicable or nothing was measurable.
    pub avg_handover_time: Option<f64>,
    /// `None` for configurations that never hand over.
    pub handover_count: Option<u64>,
    pub packet_loss_ratio: f64,
    /// `None` when nothing was delivered.
    pub avg_delay: Option<f64>,
    pub per_class_delay: BTreeMap<AppClassKind, Option<f64>>,
    /// Application throughput at the correspondent node in Kbps.
    pub throughput: f64,
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
}

/// Packets sent inside the measurement interval `[from, to)`.
pub fn measured<'a>(packets: &'a [Packet], from: f64, to: f64) -> impl Iterator<Item = &'a Packet> + 'a {
    packets.iter().filter(move |p| p.t_sent >= from && p.t_sent < to)
}

/// Delivered application bits of packets sent in `[from, to)`, per
/// second, in Kbps.
pub fn compute_throughput(packets: &[Packet], from: f64, to: f64) -> f64 {
    let bits: u64 = measured(packets, from, to).filter(|p| p.is_delivered()).map(|p| p.size as u64 * 8).sum();
    bits as f64 / (to - from) / 1000.0
}

/// Mean end-to-end delay of delivered packets per class.
pub fn compute_per_class_delay<'a>(packets: impl IntoIterator<Item = &'a Packet>) -> BTreeMap<AppClassKind, Option<f64>> {
    let mut acc: BTreeMap<AppClassKind, (f64, u64)> = AppClassKind::ALL.iter().map(|k| (*k, (0.0, 0))).collect();
    for p in packets {
        if let Some(t) = p.t_delivered() {
            let e = acc.entry(p.class).or_insert((0.0, 0));
            e.0 += t - p.t_sent;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, (n > 0).then(|| s / n as f64))).collect()
}

pub fn delivery_records<'a>(packets: impl IntoIterator<Item = &'a Packet>) -> BTreeMap<MnId, Vec<DeliveryRecord>> {
    let mut out: BTreeMap<MnId, Vec<DeliveryRecord>> = BTreeMap::new();
    for p in packets {
        out.entry(p.mn).or_default().push(DeliveryRecord {
            flow: p.flow,
            t_sent: p.t_sent,
            t_delivered: p.t_delivered(),
            via: p.path.poa,
        });
    }
    out
}

/// Interruption of each handover; `None` where it cannot be measured.
pub fn handover_times(records: &[ExchangeRecord], packets: &[Packet]) -> Vec<Option<f64>> {
    let logs = delivery_records(packets);
    records
        .iter()
        .map(|r| logs.get(&r.mn).and_then(|l| measure_handover(r, l).ok()))
        .collect()
}

/// All metrics of one run. `handovers` holds the committed handovers
/// inside the measurement interval; pass `None` for configurations
/// without handover.
pub fn compute_metrics(packets: &[Packet], handovers: Option<&[ExchangeRecord]>, from: f64, to: f64) -> RunMetrics {
    let mut sent = 0u64;
    let mut delivered = 0u64;
    let mut delay_sum = 0.0;
    for p in measured(packets, from, to) {
        sent += 1;
        if let Some(t) = p.t_delivered() {
            delivered += 1;
            delay_sum += t - p.t_sent;
        }
    }
    let lost = sent - delivered;
    let (avg_handover_time, handover_count) = match handovers {
        None => (None, None),
        Some(h) => {
            let times: Vec<f64> = handover_times(h, packets).into_iter().flatten().collect();
            let avg = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);
            (avg, Some(h.len() as u64))
        }
    };
    RunMetrics {
        avg_handover_time,
        handover_count,
        packet_loss_ratio: if sent == 0 { 0.0 } else { lost as f64 / sent as f64 },
        avg_delay: (delivered > 0).then(|| delay_sum / delivered as f64),
        per_class_delay: compute_per_class_delay(measured(packets, from, to)),
        throughput: compute_throughput(packets, from, to),
        sent,
        delivered,
        lost,
    }
}
