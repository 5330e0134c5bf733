//! Periodic per-class message generation.

use rand::Rng;

use crate::flow::AppClass;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub time: f64,
    pub class_index: usize,
}

/// Send times of every message a vehicle emits in `[start, end)`. Each
/// class starts at a uniform random phase within its period. Inactive
/// vehicles emit nothing.
pub fn generate_traffic<R: Rng + ?Sized>(active: bool, classes: &[AppClass], start: f64, end: f64, rng: &mut R) -> Vec<Emission> {
    if !active {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (i, c) in classes.iter().enumerate() {
        let phase = rng.gen::<f64>() * c.message_period;
        let mut k = 0u64;
        loop {
            let t = start + phase + k as f64 * c.message_period;
            if t >= end {
                break;
            }
            out.push(Emission { time: t, class_index: i });
            k += 1;
        }
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.class_index.cmp(&b.class_index)));
    out
}

/// Offered message rate of one active vehicle.
pub fn offered_rate(classes: &[AppClass]) -> f64 {
    classes.iter().map(|c| c.rate()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::AppClassKind;
    use crate::netsim::rng::{substream, Purpose};

    fn classes() -> Vec<AppClass> {
        AppClassKind::ALL.iter().map(|k| AppClass::with_defaults(*k)).collect()
    }

    #[test]
    fn ten_second_counts() {
        for seed in 0..20 {
            let e = generate_traffic(true, &classes(), 0.0, 10.0, &mut substream(seed, 0, Purpose::Traffic));
            let count = |i| e.iter().filter(|x| x.class_index == i).count();
            assert_eq!((count(0), count(1), count(2)), (100, 20, 10));
            assert!(e.windows(2).all(|w| w[0].time <= w[1].time));
        }
    }

    #[test]
    fn inactive_emits_nothing() {
        assert!(generate_traffic(false, &classes(), 0.0, 10.0, &mut substream(0, 0, Purpose::Traffic)).is_empty());
    }

    #[test]
    fn offered_load_is_thirteen() {
        assert!((offered_rate(&classes()) - 13.0).abs() < 1e-12);
    }
}
