//! Deterministic discrete-event network core.

pub mod packet;
pub mod radio;
pub mod rng;
pub mod scheduler;
pub mod topology;
pub mod traffic;

pub use packet::{deliver, Disposition, Hop, LossCause, Outcome, Packet, PathTrace};
pub use radio::{coverage_check, AccessLoad, Coverage, LossModel, RadioModel};
pub use scheduler::{run_until, schedule, EventHandle, EventKind, PastEvent, RunStats, Scheduler, SimEvent};
pub use topology::{AccessPoint, BackboneConfig, Topology, LTE_POA};
pub use traffic::{generate_traffic, offered_rate, Emission};
