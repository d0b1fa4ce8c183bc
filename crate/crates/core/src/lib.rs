//! Region-based dynamic clustering for vehicular ad-hoc networks: a
//! deterministic discrete-event simulator, the trajectory-similarity model
//! that feeds its thresholds, comparison schemes and evaluation metrics.

pub mod baselines;
pub mod engine;
pub mod error;
pub mod events;
pub mod metrics;
pub mod protocol;
pub mod radio;
pub mod road;
pub mod types;
pub mod srp;
