//! Shared vocabulary: identifiers, planar vectors, vehicle state snapshots,
//! trajectories, regions and the protocol configuration.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, TrajectoryError};

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Dense vehicle identifier assigned at spawn.
    VehicleId
);
id_type!(RegionId);
id_type!(SegmentId);
id_type!(IntersectionId);

/// A 2-vector in meters or meters per second.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3-D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n == 0.0 {
            Vec2::ZERO
        } else {
            self * (1.0 / n)
        }
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

/// Role of a vehicle in the region hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VehicleRole {
    Ordinary,
    Core,
    Gateway,
    Unattached,
}

impl VehicleRole {
    /// Ordinary and gateway vehicles are region members.
    pub fn is_member(self) -> bool {
        matches!(self, VehicleRole::Ordinary | VehicleRole::Gateway)
    }

    pub fn is_attached(self) -> bool {
        !matches!(self, VehicleRole::Unattached)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VehicleRole::Ordinary => "ordinary",
            VehicleRole::Core => "core",
            VehicleRole::Gateway => "gateway",
            VehicleRole::Unattached => "unattached",
        }
    }
}

/// Kinematic and role snapshot of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub vehicle_id: VehicleId,
    pub role: VehicleRole,
    pub segment_id: SegmentId,
    /// Velocity in m/s.
    pub speed: Vec2,
    /// Acceleration in m/s².
    pub acceleration: Vec2,
    /// +1 when driving the same way as the current core, -1 otherwise.
    /// Stays +1 while no core is assigned.
    pub heading_sign: i8,
    pub position: Vec2,
    /// Fraction of the current segment already travelled, in [0, 1].
    pub segment_progress: f64,
    /// Last travel time index value the vehicle has heard.
    pub tti: f64,
    pub timestamp: f64,
}

impl VehicleState {
    pub fn new(vehicle_id: VehicleId, position: Vec2, speed: Vec2, timestamp: f64) -> Self {
        Self {
            vehicle_id,
            role: VehicleRole::Unattached,
            segment_id: SegmentId(0),
            speed,
            acceleration: Vec2::ZERO,
            heading_sign: 1,
            position,
            segment_progress: 0.0,
            tti: 1.0,
            timestamp,
        }
    }

    pub fn speed_magnitude(&self) -> f64 {
        self.speed.norm()
    }
}

/// Euclidean norm of the velocity difference.
pub fn relative_speed(a: &VehicleState, b: &VehicleState) -> f64 {
    (a.speed - b.speed).norm()
}

/// Euclidean distance between the two positions.
pub fn relative_distance(a: &VehicleState, b: &VehicleState) -> f64 {
    a.position.distance(b.position)
}

/// Bounded history of a vehicle's states; the oldest sample is evicted
/// once `max_length` is reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub vehicle_id: VehicleId,
    samples: VecDeque<VehicleState>,
    max_length: usize,
}

impl Trajectory {
    pub fn new(vehicle_id: VehicleId, max_length: usize) -> Result<Self, TrajectoryError> {
        if max_length == 0 {
            return Err(TrajectoryError::ZeroCapacity);
        }
        Ok(Self {
            vehicle_id,
            samples: VecDeque::with_capacity(max_length),
            max_length,
        })
    }

    /// Appends a sample whose timestamp must be strictly later than the last one.
    pub fn push(&mut self, state: VehicleState) -> Result<(), TrajectoryError> {
        if let Some(last) = self.samples.back() {
            if !(state.timestamp > last.timestamp) {
                return Err(TrajectoryError::NonMonotonic {
                    last: last.timestamp,
                    got: state.timestamp,
                });
            }
        }
        if self.samples.len() == self.max_length {
            self.samples.pop_front();
        }
        self.samples.push_back(state);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_length(&self) -> usize {
        self.max_length
    }

    pub fn samples(&self) -> impl DoubleEndedIterator<Item = &VehicleState> + ExactSizeIterator {
        self.samples.iter()
    }

    pub fn last(&self) -> Option<&VehicleState> {
        self.samples.back()
    }

    /// Samples as `(state, time)` pairs.
    pub fn timed(&self) -> impl Iterator<Item = (&VehicleState, f64)> {
        self.samples.iter().map(|s| (s, s.timestamp))
    }
}

/// A region: one core vehicle plus its members. Gateways are the members
/// that currently hear at least two cores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: RegionId,
    pub core_id: VehicleId,
    pub member_ids: BTreeSet<VehicleId>,
    pub gateway_ids: BTreeSet<VehicleId>,
    pub created_at: f64,
    pub dissolved_at: Option<f64>,
}

impl Region {
    pub fn new(region_id: RegionId, core_id: VehicleId, created_at: f64) -> Self {
        Self {
            region_id,
            core_id,
            member_ids: BTreeSet::new(),
            gateway_ids: BTreeSet::new(),
            created_at,
            dissolved_at: None,
        }
    }

    pub fn is_alive(&self) -> bool {
        self.dissolved_at.is_none()
    }

    /// Structural invariants: core is not a member and gateways are members.
    pub fn check(&self) -> Result<(), String> {
        if self.member_ids.contains(&self.core_id) {
            return Err(format!(
                "region {}: core {} listed as member",
                self.region_id, self.core_id
            ));
        }
        if let Some(g) = self.gateway_ids.difference(&self.member_ids).next() {
            return Err(format!(
                "region {}: gateway {} is not a member",
                self.region_id, g
            ));
        }
        Ok(())
    }
}

/// How the replacement core is chosen among candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompetitiveMode {
    /// argmax of λ·exp(-mean scaled distance): favours central candidates.
    #[default]
    Centered,
    /// argmax of λ·mean distance, as the formula is printed.
    Verbatim,
}

/// Scale factors applied to distances and speeds before they enter the
/// exponentials of the threshold formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub distance: f64,
    pub speed: f64,
}

impl Scaling {
    pub const UNIT: Scaling = Scaling {
        distance: 1.0,
        speed: 1.0,
    };

    pub fn dist(&self, meters: f64) -> f64 {
        meters / self.distance
    }

    pub fn speed(&self, mps: f64) -> f64 {
        mps / self.speed
    }
}

fn default_zeta() -> f64 {
    2.0
}
fn default_interval() -> f64 {
    1.0
}
fn default_tti_threshold() -> f64 {
    1.5
}
fn default_range() -> f64 {
    250.0
}
fn half() -> f64 {
    0.5
}
fn default_retries() -> u32 {
    3
}
fn default_approach() -> f64 {
    50.0
}
fn default_absorb_patience() -> u32 {
    4
}
fn default_member_timeout() -> f64 {
    3.0
}
fn default_core_timeout() -> f64 {
    2.5
}
fn yes() -> bool {
    true
}

/// Protocol timing, thresholds and switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// Interaction wait interval ζ, seconds.
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    #[serde(default = "default_interval")]
    pub updating_interval: f64,
    #[serde(default = "default_tti_threshold")]
    pub tti_congestion_threshold: f64,
    #[serde(default = "default_range")]
    pub comm_range: f64,
    #[serde(default = "half")]
    pub overlap_agg_fraction: f64,
    #[serde(default = "half")]
    pub replacement_loss_fraction: f64,
    #[serde(default = "half")]
    pub decomposition_threshold: f64,
    #[serde(default = "half")]
    pub speed_change_fraction: f64,
    /// Silent READ rounds before an unattached vehicle founds its own region.
    #[serde(default = "default_retries")]
    pub max_read_retries: u32,
    /// Distance to the stop line at which the intersection test runs, meters.
    #[serde(default = "default_approach")]
    pub approach_radius: f64,
    #[serde(default)]
    pub competitive_mode: CompetitiveMode,
    /// Distance normaliser for the exponentials; defaults to `comm_range`.
    #[serde(default)]
    pub distance_scale: Option<f64>,
    /// Speed normaliser for the exponentials; defaults to the scenario max speed.
    #[serde(default)]
    pub speed_scale: Option<f64>,
    /// A core drops members it has not heard from for this long, seconds.
    #[serde(default = "default_member_timeout")]
    pub member_timeout: f64,
    /// A member detaches after missing its core's status for this long, seconds.
    #[serde(default = "default_core_timeout")]
    pub core_timeout: f64,
    /// A memberless core yields to a populated core it keeps hearing.
    #[serde(default = "yes")]
    pub absorb_singletons: bool,
    /// Consecutive memberless checks before a core yields.
    #[serde(default = "default_absorb_patience")]
    pub absorb_patience: u32,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            zeta: default_zeta(),
            updating_interval: default_interval(),
            tti_congestion_threshold: default_tti_threshold(),
            comm_range: default_range(),
            overlap_agg_fraction: half(),
            replacement_loss_fraction: half(),
            decomposition_threshold: half(),
            speed_change_fraction: half(),
            max_read_retries: default_retries(),
            approach_radius: default_approach(),
            competitive_mode: CompetitiveMode::Centered,
            distance_scale: None,
            speed_scale: None,
            member_timeout: default_member_timeout(),
            core_timeout: default_core_timeout(),
            absorb_singletons: true,
            absorb_patience: default_absorb_patience(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("protocol.zeta", self.zeta),
            ("protocol.updating_interval", self.updating_interval),
            ("protocol.comm_range", self.comm_range),
            ("protocol.tti_congestion_threshold", self.tti_congestion_threshold),
            ("protocol.approach_radius", self.approach_radius),
            ("protocol.member_timeout", self.member_timeout),
            ("protocol.core_timeout", self.core_timeout),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::new(field, format!("must be > 0, got {v}")));
            }
        }
        let fractions = [
            ("protocol.overlap_agg_fraction", self.overlap_agg_fraction),
            ("protocol.replacement_loss_fraction", self.replacement_loss_fraction),
            ("protocol.decomposition_threshold", self.decomposition_threshold),
            ("protocol.speed_change_fraction", self.speed_change_fraction),
        ];
        for (field, v) in fractions {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ConfigError::new(field, format!("must lie in (0, 1], got {v}")));
            }
        }
        for (field, v) in [
            ("protocol.distance_scale", self.distance_scale),
            ("protocol.speed_scale", self.speed_scale),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(ConfigError::new(field, format!("must be > 0, got {v}")));
                }
            }
        }
        if self.max_read_retries == 0 {
            return Err(ConfigError::new("protocol.max_read_retries", "must be >= 1"));
        }
        Ok(())
    }

    pub fn scaling(&self, max_speed: f64) -> Scaling {
        Scaling {
            distance: self.distance_scale.unwrap_or(self.comm_range),
            speed: self.speed_scale.unwrap_or(max_speed),
        }
    }

    pub fn is_congested(&self, tti: f64) -> bool {
        tti > self.tti_congestion_threshold
    }
}
