//! Data packets, their dispositions, and the per-hop delivery model.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::flow::{AppClassKind, FlowId};
use crate::ids::{MnId, PoaId, TunnelId};
use crate::mihf::InterfaceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossCause {
    /// No usable attachment when the packet was sent.
    Disconnected,
    /// Wireless loss draw.
    Radio,
    /// Dropped by access-link load.
    Congestion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Disposition {
    InFlight,
    Delivered(f64),
    Lost(LossCause),
}

/// Attachment and tunnel a packet used.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PathTrace {
    pub interface: Option<InterfaceId>,
    pub poa: Option<PoaId>,
    pub tunnel: Option<TunnelId>,
}

impl fmt::Display for PathTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.interface, self.poa) {
            (Some(i), Some(p)) => {
                write!(f, "if{}/{}", i, p)?;
                if let Some(t) = self.tunnel {
                    write!(f, "/{}", t)?;
                }
                Ok(())
            }
            _ => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    pub mn: MnId,
    pub flow: FlowId,
    pub class: AppClassKind,
    pub dest_port: u16,
    /// Application payload in bytes.
    pub size: u32,
    pub t_sent: f64,
    pub disposition: Disposition,
    pub path: PathTrace,
}

impl Packet {
    pub fn t_delivered(&self) -> Option<f64> {
        match self.disposition {
            Disposition::Delivered(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_delivered(&self) -> bool {
        matches!(self.disposition, Disposition::Delivered(_))
    }

    pub fn is_lost(&self) -> bool {
        matches!(self.disposition, Disposition::Lost(_))
    }

    /// `time packet_id flow disposition path`, with time the send time.
    pub fn trace_line(&self) -> String {
        let disp = match self.disposition {
            Disposition::InFlight => "inflight".to_string(),
            Disposition::Delivered(t) => format!("delivered@{t:.6}"),
            Disposition::Lost(c) => format!("lost:{c:?}"),
        };
        format!("{:.6} {} {} {} {} {}", self.t_sent, self.id, self.mn, self.flow, disp, self.path)
    }
}

/// One hop of a path. `extra_delay` is a random component added on top of
/// the deterministic latency (queueing or contention).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hop {
    pub latency: f64,
    pub capacity_bps: Option<f64>,
    pub loss: f64,
    pub loss_cause: LossCause,
    pub extra_delay_mean: f64,
    /// Bytes added on this hop (tunnel header).
    pub overhead: u32,
}

impl Hop {
    pub fn wired(latency: f64, capacity_bps: f64, overhead: u32) -> Self {
        Self { latency, capacity_bps: Some(capacity_bps), loss: 0.0, loss_cause: LossCause::Radio, extra_delay_mean: 0.0, overhead }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Delivered { delay: f64 },
    Lost(LossCause),
}

/// Walks the hops in order. Each lossy hop consumes one uniform draw and
/// each hop with random delay one more, whether or not an earlier hop
/// dropped the packet, so the draw count per packet is fixed.
pub fn deliver<R: Rng + ?Sized>(size: u32, hops: &[Hop], rng: &mut R) -> Outcome {
    let mut delay = 0.0;
    let mut lost = None;
    for h in hops {
        let u: f64 = rng.gen();
        if lost.is_none() && u < h.loss {
            lost = Some(h.loss_cause);
        }
        delay += h.latency;
        if let Some(c) = h.capacity_bps {
            delay += (size + h.overhead) as f64 * 8.0 / c;
        }
        if h.extra_delay_mean > 0.0 {
            let v: f64 = rng.gen();
            delay += -h.extra_delay_mean * (1.0 - v).ln();
        }
    }
    match lost {
        Some(c) => Outcome::Lost(c),
        None => Outcome::Delivered { delay },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::rng::{substream, Purpose};

    #[test]
    fn wired_arithmetic() {
        let mut rng = substream(1, 0, Purpose::Loss);
        let out = deliver(64, &[Hop::wired(0.010, 100e6, 0)], &mut rng);
        match out {
            Outcome::Delivered { delay } => assert!((delay - 0.010_005_12).abs() < 1e-12),
            _ => panic!("wired hop lost a packet"),
        }
    }

    #[test]
    fn empirical_loss_within_binomial_band() {
        // Oracle: Binomial(n, p) mean ± 3σ.
        let p = 0.035;
        let n = 10_000;
        let hop = Hop { latency: 0.002, capacity_bps: None, loss: p, loss_cause: LossCause::Radio, extra_delay_mean: 0.0, overhead: 0 };
        let mut rng = substream(42, 1, Purpose::Loss);
        let lost = (0..n).filter(|_| matches!(deliver(67, &[hop], &mut rng), Outcome::Lost(_))).count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((lost - n as f64 * p).abs() <= 3.0 * sigma, "lost {lost}");
    }

    #[test]
    fn coupled_draws_make_loss_monotone() {
        let mk = |p| Hop { latency: 0.0, capacity_bps: None, loss: p, loss_cause: LossCause::Radio, extra_delay_mean: 0.001, overhead: 0 };
        let count = |p| {
            let mut rng = substream(9, 2, Purpose::Loss);
            (0..5000).filter(|_| matches!(deliver(67, &[mk(p), mk(0.01)], &mut rng), Outcome::Lost(_))).count()
        };
        assert!(count(0.02) <= count(0.05));
        assert!(count(0.05) <= count(0.2));
    }

    #[test]
    fn trace_line_format() {
        let p = Packet {
            id: 5,
            mn: MnId(3),
            flow: FlowId(2),
            class: AppClassKind::Comfort,
            dest_port: 5101,
            size: 67,
            t_sent: 1.5,
            disposition: Disposition::Lost(LossCause::Disconnected),
            path: PathTrace::default(),
        };
        assert_eq!(p.trace_line(), "1.500000 5 MN3 flow2 lost:Disconnected -");
    }
}
