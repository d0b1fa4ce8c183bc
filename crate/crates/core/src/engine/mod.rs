//! Discrete-event engine: scenario files, the event queue, single runs and
//! parameter sweeps.

mod queue;
mod scenario;
mod sweep;
mod world;

pub use queue::{to_secs, to_sim, Ev, EventQueue, SimTime};
pub use scenario::{BaselineSection, MobilitySection, RoadSection, Scenario, Workload};
pub use sweep::*;
pub use world::{build_mobility, build_network, measure_tti, rng_stream, run, train_on_prerun, RunOutput, World};
