//! Generates the bundled neighborhood trace:
//! `cargo run --example gen_trace -- fixtures/neighborhood.trace`

use flowmob::mobility::{manhattan_place, manhattan_step, ManhattanConfig, TraceFile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VEHICLES: u32 = 50;
const END: f64 = 130.0;
const STEP: f64 = 0.1; // must stay 1/10 s, sample times are i / 10
const SAMPLE_EVERY: u32 = 5;

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "fixtures/neighborhood.trace".into());
    let grid = ManhattanConfig { rows: 3, cols: 6, block_size: 100.0, turn_probabilities: [0.4, 0.3, 0.3] };
    let mut rng = ChaCha8Rng::seed_from_u64(2013);
    let mut trace = TraceFile::default();
    for v in 1..=VEHICLES {
        let speed = rng.gen_range(10.0..16.0);
        let mut state = manhattan_place(&grid, speed, &mut rng);
        let steps = (END / STEP).round() as u32;
        for i in 0..=steps {
            if i > 0 {
                manhattan_step(&grid, &mut state, STEP, &mut rng);
            }
            if i % SAMPLE_EVERY == 0 {
                let (x, y) = state.position;
                trace.insert(v, f64::from(i) / 10.0, x, y);
            }
        }
    }
    trace.validate().expect("generated trace is valid");
    std::fs::write(&out, trace.to_text()).expect("write trace");
    eprintln!("{out}: {} vehicles, {} records", trace.vehicle_count(), trace.record_count());
}
