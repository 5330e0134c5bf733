//! Radio coverage, per-packet loss and access-link load models.

use serde::{Deserialize, Serialize};

use crate::mihf::Technology;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Coverage {
    Full,
    Disc { radius: f64 },
}

/// Wireless loss probability
/// `p = p0 + alpha·(d/r)² + beta·max(0, v − knee)/step`, clamped to [0, 1].
/// For full-coverage radios `r` is a nominal reference range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossModel {
    pub p0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub speed_knee: f64,
    pub speed_step: f64,
    pub reference_range: f64,
}

impl Default for LossModel {
    fn default() -> Self {
        Self { p0: 0.005, alpha: 0.03, beta: 0.04, speed_knee: 20.0, speed_step: 5.0, reference_range: 250.0 }
    }
}

impl LossModel {
    pub fn probability(&self, distance: f64, speed: f64) -> f64 {
        let r = (distance / self.reference_range).min(1.0);
        let s = (speed - self.speed_knee).max(0.0) / self.speed_step;
        (self.p0 + self.alpha * r * r + self.beta * s).clamp(0.0, 1.0)
    }
}

/// Delay and loss added by other traffic sharing the access link, as a
/// function of the offered message rate through the access point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AccessLoad {
    /// No load dependence.
    None,
    /// Contention: mean extra delay and collision loss grow linearly with
    /// the offered rate.
    Contention { delay_per_msg_rate: f64, loss_per_msg_rate: f64 },
    /// M/M/1/K queue with `service_rate` msg/s and room for `capacity`
    /// messages.
    Queue { service_rate: f64, capacity: u32 },
}

impl AccessLoad {
    /// Mean extra delay in seconds at offered rate `lambda` msg/s.
    pub fn mean_delay(&self, lambda: f64) -> f64 {
        match *self {
            AccessLoad::None => 0.0,
            AccessLoad::Contention { delay_per_msg_rate, .. } => delay_per_msg_rate * lambda.max(0.0),
            AccessLoad::Queue { service_rate, capacity } => mm1k_sojourn(lambda, service_rate, capacity),
        }
    }

    /// Probability that a message is dropped by load at rate `lambda`.
    pub fn loss(&self, lambda: f64) -> f64 {
        match *self {
            AccessLoad::None => 0.0,
            AccessLoad::Contention { loss_per_msg_rate, .. } => (loss_per_msg_rate * lambda.max(0.0)).min(1.0),
            AccessLoad::Queue { service_rate, capacity } => mm1k_blocking(lambda, service_rate, capacity),
        }
    }
}

/// Probability that an arrival finds an M/M/1/K system full.
pub fn mm1k_blocking(lambda: f64, mu: f64, k: u32) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    let rho = lambda / mu;
    let k = k as i32;
    if (rho - 1.0).abs() < 1e-9 {
        return 1.0 / (k as f64 + 1.0);
    }
    (1.0 - rho) * rho.powi(k) / (1.0 - rho.powi(k + 1))
}

/// Mean sojourn time of an admitted message in M/M/1/K (Little's law on
/// the mean occupancy).
pub fn mm1k_sojourn(lambda: f64, mu: f64, k: u32) -> f64 {
    if lambda <= 0.0 {
        return 1.0 / mu;
    }
    let rho = lambda / mu;
    let kf = k as f64;
    let occupancy = if (rho - 1.0).abs() < 1e-9 {
        kf / 2.0
    } else {
        rho / (1.0 - rho) - (kf + 1.0) * rho.powi(k as i32 + 1) / (1.0 - rho.powi(k as i32 + 1))
    };
    occupancy / (lambda * (1.0 - mm1k_blocking(lambda, mu, k)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioModel {
    pub technology: Technology,
    pub coverage: Coverage,
    pub base_latency: f64,
    pub attach_delay: f64,
    pub loss: LossModel,
    pub load: AccessLoad,
    /// Exponent `k` of the beacon miss probability `(d/r)^k` inside a disc.
    pub beacon_exponent: f64,
}

impl RadioModel {
    pub fn lte_default() -> Self {
        Self {
            technology: Technology::Lte,
            coverage: Coverage::Full,
            base_latency: 0.020,
            attach_delay: 0.050,
            loss: LossModel { reference_range: 1000.0, ..LossModel::default() },
            load: AccessLoad::None,
            beacon_exponent: 0.0,
        }
    }

    pub fn wifi_default() -> Self {
        Self {
            technology: Technology::Wave80211p,
            coverage: Coverage::Disc { radius: 250.0 },
            base_latency: 0.002,
            attach_delay: 0.030,
            loss: LossModel::default(),
            load: AccessLoad::None,
            beacon_exponent: 10.0,
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match self.coverage {
            Coverage::Full => None,
            Coverage::Disc { radius } => Some(radius),
        }
    }

    /// Probability that one beacon from an AP at `distance` is missed.
    pub fn beacon_miss(&self, distance: f64) -> f64 {
        match self.coverage {
            Coverage::Full => 0.0,
            Coverage::Disc { radius } if distance > radius => 1.0,
            Coverage::Disc { radius } => (distance / radius).powf(self.beacon_exponent),
        }
    }
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Whether a node at `mn` is inside the coverage of an AP at `ap`. The
/// disc boundary is inclusive.
pub fn coverage_check(radio: &RadioModel, mn: (f64, f64), ap: (f64, f64)) -> bool {
    match radio.coverage {
        Coverage::Full => true,
        Coverage::Disc { radius } => distance(mn, ap) <= radius,
    }
}
