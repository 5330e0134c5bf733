//! Vehicle positions: a Manhattan grid model and replay of position traces.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Grid of `rows` × `cols` blocks, so `rows + 1` horizontal and `cols + 1`
/// vertical streets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManhattanConfig {
    pub rows: u32,
    pub cols: u32,
    pub block_size: f64,
    /// Probabilities of going straight, left, right at an intersection.
    pub turn_probabilities: [f64; 3],
}

impl Default for ManhattanConfig {
    fn default() -> Self {
        Self { rows: 4, cols: 6, block_size: 200.0, turn_probabilities: [0.5, 0.25, 0.25] }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MobilityError {
    #[error("turn probabilities must be non-negative and sum to 1")]
    BadTurnProbabilities,
    #[error("grid must have at least one row and column with positive block size")]
    BadGrid,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("vehicle {vehicle}: times not strictly increasing at t={t}")]
    NonIncreasing { vehicle: u32, t: f64 },
    #[error("vehicle {vehicle}: implied speed {speed:.1} m/s exceeds {max} m/s at t={t}")]
    TooFast { vehicle: u32, t: f64, speed: f64, max: f64 },
    #[error("t={t} outside the trace span of vehicle {vehicle}")]
    OutOfSpan { vehicle: u32, t: f64 },
    #[error("unknown vehicle {0}")]
    UnknownVehicle(u32),
    #[error("trace has no records")]
    Empty,
    #[error("{0}")]
    Io(String),
}

impl ManhattanConfig {
    pub fn validate(&self) -> Result<(), MobilityError> {
        let p = self.turn_probabilities;
        if p.iter().any(|x| !(*x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(MobilityError::BadTurnProbabilities);
        }
        if self.rows == 0 || self.cols == 0 || !(self.block_size > 0.0) {
            return Err(MobilityError::BadGrid);
        }
        Ok(())
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.cols as f64 * self.block_size, self.rows as f64 * self.block_size)
    }

    /// Whether a point lies on a street.
    pub fn on_grid(&self, p: (f64, f64)) -> bool {
        let (w, h) = self.extent();
        let on = |v: f64| {
            let r = v / self.block_size;
            (r - r.round()).abs() * self.block_size < 1e-6
        };
        p.0 >= -1e-6 && p.0 <= w + 1e-6 && p.1 >= -1e-6 && p.1 <= h + 1e-6 && (on(p.0) || on(p.1))
    }
}

/// Heading along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Heading {
    East,
    North,
    West,
    South,
}

impl Heading {
    fn vector(self) -> (f64, f64) {
        match self {
            Heading::East => (1.0, 0.0),
            Heading::North => (0.0, 1.0),
            Heading::West => (-1.0, 0.0),
            Heading::South => (0.0, -1.0),
        }
    }

    fn left(self) -> Self {
        match self {
            Heading::East => Heading::North,
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
        }
    }

    fn reverse(self) -> Self {
        self.left().left()
    }

    fn right(self) -> Self {
        self.left().reverse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: (f64, f64),
    pub heading: Heading,
    pub speed: f64,
}

/// Outcome of one intersection decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Straight,
    Left,
    Right,
}

fn sample_turn<R: Rng + ?Sized>(p: [f64; 3], rng: &mut R) -> Turn {
    let u: f64 = rng.gen();
    if u < p[0] {
        Turn::Straight
    } else if u < p[0] + p[1] {
        Turn::Left
    } else {
        Turn::Right
    }
}

fn inside(cfg: &ManhattanConfig, p: (f64, f64), h: Heading) -> bool {
    let (w, ht) = cfg.extent();
    let (dx, dy) = h.vector();
    let q = (p.0 + dx * 1e-3, p.1 + dy * 1e-3);
    q.0 >= 0.0 && q.0 <= w && q.1 >= 0.0 && q.1 <= ht
}

/// Heading after an intersection. A heading that would leave the map is
/// reflected.
fn choose_heading<R: Rng + ?Sized>(cfg: &ManhattanConfig, p: (f64, f64), h: Heading, rng: &mut R) -> Heading {
    let want = match sample_turn(cfg.turn_probabilities, rng) {
        Turn::Straight => h,
        Turn::Left => h.left(),
        Turn::Right => h.right(),
    };
    if inside(cfg, p, want) {
        want
    } else {
        want.reverse()
    }
}

/// A random on-grid start: a uniform point on a uniformly chosen street,
/// heading along it.
pub fn manhattan_place<R: Rng + ?Sized>(cfg: &ManhattanConfig, speed: f64, rng: &mut R) -> VehicleState {
    let (w, h) = cfg.extent();
    let horizontal = rng.gen::<f64>() < w * (cfg.rows + 1) as f64 / (w * (cfg.rows + 1) as f64 + h * (cfg.cols + 1) as f64);
    let (position, heading) = if horizontal {
        let row = rng.gen_range(0..=cfg.rows) as f64 * cfg.block_size;
        let x = rng.gen::<f64>() * w;
        ((x, row), if rng.gen() { Heading::East } else { Heading::West })
    } else {
        let col = rng.gen_range(0..=cfg.cols) as f64 * cfg.block_size;
        let y = rng.gen::<f64>() * h;
        ((col, y), if rng.gen() { Heading::North } else { Heading::South })
    };
    let mut s = VehicleState { position, heading, speed };
    if !inside(cfg, s.position, s.heading) {
        s.heading = s.heading.reverse();
    }
    s
}

/// Advances a vehicle by `speed·dt` along the grid, resampling its heading
/// at each intersection it reaches.
pub fn manhattan_step<R: Rng + ?Sized>(cfg: &ManhattanConfig, state: &mut VehicleState, dt: f64, rng: &mut R) -> (f64, f64) {
    let mut remaining = state.speed * dt;
    let b = cfg.block_size;
    while remaining > 1e-12 {
        let (dx, dy) = state.heading.vector();
        let along = if dx != 0.0 { state.position.0 } else { state.position.1 };
        let dir = dx + dy;
        // distance to the next intersection ahead
        let k = along / b;
        let next = if dir > 0.0 { (k + 1e-9).floor() + 1.0 } else { (k - 1e-9).ceil() - 1.0 } * b;
        let gap = (next - along).abs();
        if remaining < gap {
            state.position.0 += dx * remaining;
            state.position.1 += dy * remaining;
            remaining = 0.0;
        } else {
            if dx != 0.0 {
                state.position.0 = next;
            } else {
                state.position.1 = next;
            }
            remaining -= gap;
            state.heading = choose_heading(cfg, state.position, state.heading, rng);
        }
    }
    state.position
}

/// Parsed position trace: per-vehicle records sorted by time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceFile {
    records: BTreeMap<u32, Vec<(f64, f64, f64)>>,
}

/// Implied-speed sanity bound in m/s.
pub const MAX_TRACE_SPEED: f64 = 50.0;

impl TraceFile {
    /// Parses `t vehicle_id x y` lines. Blank lines and `#` comments are
    /// skipped; a first line that does not parse as numbers is taken as a
    /// header.
    pub fn parse(text: &str) -> Result<Self, MobilityError> {
        let mut records: BTreeMap<u32, Vec<(f64, f64, f64)>> = BTreeMap::new();
        let mut first = true;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parsed = (|| -> Option<(f64, u32, f64, f64)> {
                if fields.len() != 4 {
                    return None;
                }
                Some((fields[0].parse().ok()?, fields[1].parse().ok()?, fields[2].parse().ok()?, fields[3].parse().ok()?))
            })();
            let was_first = std::mem::replace(&mut first, false);
            match parsed {
                Some((t, v, x, y)) if t.is_finite() && x.is_finite() && y.is_finite() => {
                    records.entry(v).or_default().push((t, x, y))
                }
                _ if was_first => continue,
                _ => return Err(MobilityError::Parse { line: i + 1, msg: format!("expected `t vehicle_id x y`, got `{line}`") }),
            }
        }
        if records.is_empty() {
            return Err(MobilityError::Empty);
        }
        for v in records.values_mut() {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        let trace = Self { records };
        trace.validate()?;
        Ok(trace)
    }

    pub fn load(path: &Path) -> Result<Self, MobilityError> {
        let text = std::fs::read_to_string(path).map_err(|e| MobilityError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), MobilityError> {
        for (v, recs) in &self.records {
            for w in recs.windows(2) {
                let (t0, x0, y0) = w[0];
                let (t1, x1, y1) = w[1];
                if t1 <= t0 {
                    return Err(MobilityError::NonIncreasing { vehicle: *v, t: t1 });
                }
                let speed = (x1 - x0).hypot(y1 - y0) / (t1 - t0);
                if speed > MAX_TRACE_SPEED {
                    return Err(MobilityError::TooFast { vehicle: *v, t: t1, speed, max: MAX_TRACE_SPEED });
                }
            }
        }
        Ok(())
    }

    pub fn vehicles(&self) -> impl Iterator<Item = u32> + '_ {
        self.records.keys().copied()
    }

    pub fn vehicle_count(&self) -> usize {
        self.records.len()
    }

    pub fn record_count(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn span(&self, vehicle: u32) -> Option<(f64, f64)> {
        let r = self.records.get(&vehicle)?;
        Some((r.first()?.0, r.last()?.0))
    }

    /// Bounding box of all positions.
    pub fn extent(&self) -> ((f64, f64), (f64, f64)) {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (_, x, y) in self.records.values().flatten() {
            lo = (lo.0.min(*x), lo.1.min(*y));
            hi = (hi.0.max(*x), hi.1.max(*y));
        }
        (lo, hi)
    }

    /// Highest speed implied by consecutive records of a vehicle.
    pub fn max_speed(&self, vehicle: u32) -> Option<f64> {
        let r = self.records.get(&vehicle)?;
        Some(r.windows(2).map(|w| (w[1].1 - w[0].1).hypot(w[1].2 - w[0].2) / (w[1].0 - w[0].0)).fold(0.0, f64::max))
    }

    /// Writes the trace back in the canonical format with a header.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<(f64, u32, f64, f64)> =
            self.records.iter().flat_map(|(v, r)| r.iter().map(move |(t, x, y)| (*t, *v, *x, *y))).collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut s = String::from("t vehicle_id x y\n");
        for (t, v, x, y) in rows {
            s.push_str(&format!("{t} {v} {x:.2} {y:.2}\n"));
        }
        s
    }

    pub fn insert(&mut self, vehicle: u32, t: f64, x: f64, y: f64) {
        self.records.entry(vehicle).or_default().push((t, x, y));
    }
}

/// Position of `vehicle` at `t`, interpolated linearly between the
/// bracketing records.
pub fn trace_position(trace: &TraceFile, vehicle: u32, t: f64) -> Result<(f64, f64), MobilityError> {
    let recs = trace.records.get(&vehicle).ok_or(MobilityError::UnknownVehicle(vehicle))?;
    let (first, last) = (recs[0], recs[recs.len() - 1]);
    if t < first.0 || t > last.0 {
        return Err(MobilityError::OutOfSpan { vehicle, t });
    }
    let i = recs.partition_point(|r| r.0 <= t);
    if i == 0 {
        return Ok((first.1, first.2));
    }
    let a = recs[i - 1];
    if a.0 == t || i == recs.len() {
        return Ok((a.1, a.2));
    }
    let b = recs[i];
    let f = (t - a.0) / (b.0 - a.0);
    Ok((a.1 + f * (b.1 - a.1), a.2 + f * (b.2 - a.2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::rng::{substream, Purpose};
    use proptest::prelude::*;

    #[test]
    fn mid_segment_displacement() {
        let cfg = ManhattanConfig::default();
        let mut s = VehicleState { position: (50.0, 200.0), heading: Heading::East, speed: 10.0 };
        let mut rng = substream(1, 0, Purpose::Mobility);
        assert_eq!(manhattan_step(&cfg, &mut s, 0.1, &mut rng), (51.0, 200.0));
    }

    #[test]
    fn straight_only_stays_on_row() {
        let cfg = ManhattanConfig { turn_probabilities: [1.0, 0.0, 0.0], ..Default::default() };
        let mut s = VehicleState { position: (10.0, 400.0), heading: Heading::East, speed: 15.0 };
        let mut rng = substream(2, 0, Purpose::Mobility);
        for _ in 0..5000 {
            manhattan_step(&cfg, &mut s, 0.1, &mut rng);
            assert!((s.position.1 - 400.0).abs() < 1e-9);
            assert!(s.position.0 >= 0.0 && s.position.0 <= 1200.0);
        }
    }

    #[test]
    fn turn_frequencies_match_configuration() {
        let p = [0.5, 0.25, 0.25];
        let mut rng = substream(3, 0, Purpose::Mobility);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[match sample_turn(p, &mut rng) {
                Turn::Straight => 0,
                Turn::Left => 1,
                Turn::Right => 2,
            }] += 1;
        }
        for i in 0..3 {
            assert!((counts[i] as f64 / n as f64 - p[i]).abs() < 0.02);
        }
    }

    #[test]
    fn corner_reflection() {
        let cfg = ManhattanConfig::default();
        let mut rng = substream(4, 0, Purpose::Mobility);
        for _ in 0..200 {
            let h = choose_heading(&cfg, (1200.0, 800.0), Heading::East, &mut rng);
            assert!(h == Heading::West || h == Heading::South);
        }
    }

    #[test]
    fn invalid_probabilities() {
        let cfg = ManhattanConfig { turn_probabilities: [0.5, 0.5, 0.5], ..Default::default() };
        assert_eq!(cfg.validate(), Err(MobilityError::BadTurnProbabilities));
    }

    proptest! {
        #[test]
        fn confined_and_continuous(seed in 0u64..1000, speed in 5.0f64..25.0) {
            let cfg = ManhattanConfig::default();
            let mut rng = substream(seed, 0, Purpose::Placement);
            let mut s = manhattan_place(&cfg, speed, &mut rng);
            prop_assert!(cfg.on_grid(s.position));
            for _ in 0..500 {
                let before = s.position;
                manhattan_step(&cfg, &mut s, 0.1, &mut rng);
                prop_assert!(cfg.on_grid(s.position), "{:?}", s.position);
                let moved = (s.position.0 - before.0).abs() + (s.position.1 - before.1).abs();
                prop_assert!(moved <= speed * 0.1 + 1e-6);
            }
        }
    }

    const TRACE: &str = "t vehicle_id x y\n0 1 0 0\n1 1 10 0\n2 1 10 10\n0 2 5 5\n";

    #[test]
    fn trace_interpolation() {
        let tr = TraceFile::parse(TRACE).unwrap();
        assert_eq!(tr.vehicle_count(), 2);
        assert_eq!(trace_position(&tr, 1, 1.0).unwrap(), (10.0, 0.0));
        assert_eq!(trace_position(&tr, 1, 0.5).unwrap(), (5.0, 0.0));
        assert_eq!(trace_position(&tr, 1, 2.0).unwrap(), (10.0, 10.0));
        assert_eq!(trace_position(&tr, 1, -0.1), Err(MobilityError::OutOfSpan { vehicle: 1, t: -0.1 }));
        assert_eq!(trace_position(&tr, 9, 0.0), Err(MobilityError::UnknownVehicle(9)));
    }

    #[test]
    fn trace_validation() {
        assert!(TraceFile::parse("0 1 0 0\n1 1 1 1\n").is_ok());
        assert!(matches!(TraceFile::parse("0 1 0 0\n0 1 1 1\n"), Err(MobilityError::NonIncreasing { .. })));
        assert!(matches!(TraceFile::parse("0 1 0 0\n1 1 100 0\n"), Err(MobilityError::TooFast { .. })));
        assert!(matches!(TraceFile::parse("0 1 0 0\nfoo\n"), Err(MobilityError::Parse { line: 2, .. })));
        assert_eq!(TraceFile::parse("t id x y\n"), Err(MobilityError::Empty));
    }

    #[test]
    fn trace_round_trip() {
        let tr = TraceFile::parse(TRACE).unwrap();
        assert_eq!(TraceFile::parse(&tr.to_text()).unwrap(), tr);
    }
}
