use std::path::PathBuf;

use thiserror::Error;

use crate::types::VehicleId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("timestamp {got} is not after the previous sample at {last}")]
    NonMonotonic { last: f64, got: f64 },
    #[error("trajectory max length must be at least 1")]
    ZeroCapacity,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TtiError {
    #[error("no road segment carries traffic; travel time index undefined")]
    NoTraffic,
    #[error("segment {segment} has non-positive observed speed {speed}")]
    NonPositiveSpeed { segment: u32, speed: f64 },
    #[error("observed speed vector has {got} entries, network has {expected} segments")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("road network file: {0}")]
    Parse(String),
    #[error("segment {segment} references missing intersection {intersection}")]
    MissingIntersection { segment: u32, intersection: u32 },
    #[error("segment {0} has invalid geometry or attributes")]
    InvalidSegment(u32),
    #[error("road network is not connected")]
    Disconnected,
    #[error("road network is empty")]
    Empty,
    #[error("io error reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace point ({x}, {y}) of vehicle {vehicle} is {distance:.1} m from the nearest segment (tolerance {tolerance} m)")]
    OffMap {
        vehicle: u32,
        x: f64,
        y: f64,
        distance: f64,
        tolerance: f64,
    },
    #[error("io error reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SrpError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence is empty")]
    EmptySequence,
    #[error("trajectory has {got} samples, at least {needed} required")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("empty training dataset")]
    EmptyDataset,
    #[error("smoothing parameter must be positive, got {0}")]
    InvalidGamma(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error("competitive threshold needs at least one member")]
    EmptyRegion,
    #[error("aggregation threshold needs at least two cores, got {0}")]
    TooFewCores(usize),
    #[error("cooperative thresholds must be positive")]
    NonPositiveWeight,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadioError {
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error("no route from {from} to {to}")]
    NoRoute { from: VehicleId, to: VehicleId },
    #[error("packet ttl expired")]
    TtlExpired,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no attached vehicles")]
    NoVehicles,
    #[error("malformed event log at line {line}: {message}")]
    MalformedLog { line: usize, message: String },
}

/// Field-level configuration diagnostics.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration: {field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Srp(#[from] SrpError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{count} invariant violation(s); first: {first}")]
    InvariantViolation { count: usize, first: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
