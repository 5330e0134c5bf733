//! Named random substreams derived from one master seed.
//!
//! Each (vehicle, purpose) pair gets its own ChaCha stream, so adding a
//! vehicle or drawing more for one purpose leaves every other stream
//! untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Purpose {
    Placement = 0,
    Mobility = 1,
    Traffic = 2,
    Loss = 3,
    Beacon = 4,
    Delay = 5,
}

/// Stream index used for draws not tied to one vehicle.
pub const GLOBAL: u32 = u32::MAX;

pub fn substream(master: u64, vehicle: u32, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((vehicle as u64) << 8) | purpose as u64);
    rng
}
