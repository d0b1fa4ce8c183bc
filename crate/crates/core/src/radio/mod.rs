//! Abstract V2V link layer: range-limited delivery with distance-dependent
//! loss, per-sender serialisation, carrier sense with random backoff,
//! airtime collisions between hidden transmitters, and the
//! protocol message vocabulary. Routing over it lives in [`routing`].

pub mod routing;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, RadioError};
use crate::srp::FEATURES;
use crate::types::{RegionId, VehicleId, VehicleState, Vec2};

fn d_range() -> f64 {
    250.0
}
fn d_reliable() -> f64 {
    150.0
}
fn d_delay() -> f64 {
    0.005
}
fn d_rate() -> f64 {
    6e6
}
fn d_control() -> usize {
    200
}
fn d_data() -> usize {
    1024
}
fn d_retries() -> u32 {
    3
}
fn d_backoff() -> f64 {
    0.002
}
fn d_hops() -> u32 {
    16
}
fn d_slot() -> f64 {
    13e-6
}
fn d_window() -> u32 {
    15
}
fn yes() -> bool {
    true
}

/// Link parameters. Loss is zero up to `reliable_range`, rises linearly to
/// one at `comm_range` and stays one beyond.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeliveryModel {
    #[serde(default = "d_range")]
    pub comm_range: f64,
    #[serde(default = "d_reliable")]
    pub reliable_range: f64,
    /// Fixed per-hop latency, seconds.
    #[serde(default = "d_delay")]
    pub base_delay: f64,
    /// Bits per second.
    #[serde(default = "d_rate")]
    pub data_rate: f64,
    #[serde(default = "d_control")]
    pub control_bytes: usize,
    #[serde(default = "d_data")]
    pub data_bytes: usize,
    /// Extra unicast attempts after a failed one.
    #[serde(default = "d_retries")]
    pub mac_retries: u32,
    /// Backoff before retry `k` is `backoff * 2^k`, seconds.
    #[serde(default = "d_backoff")]
    pub backoff: f64,
    /// A reception fails when another transmitter in range of the receiver
    /// is on air at an overlapping time.
    #[serde(default = "yes")]
    pub collisions: bool,
    /// Defer while a transmitter within range is on air.
    #[serde(default = "yes")]
    pub carrier_sense: bool,
    /// Backoff slot, seconds; each access waits a uniform number of slots
    /// in `0..=contention_window`.
    #[serde(default = "d_slot")]
    pub slot_time: f64,
    #[serde(default = "d_window")]
    pub contention_window: u32,
    #[serde(default = "d_hops")]
    pub hop_budget: u32,
}

impl Default for DeliveryModel {
    fn default() -> Self {
        Self {
            comm_range: d_range(),
            reliable_range: d_reliable(),
            base_delay: d_delay(),
            data_rate: d_rate(),
            control_bytes: d_control(),
            data_bytes: d_data(),
            mac_retries: d_retries(),
            backoff: d_backoff(),
            collisions: true,
            carrier_sense: true,
            slot_time: d_slot(),
            contention_window: d_window(),
            hop_budget: d_hops(),
        }
    }
}

impl DeliveryModel {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("radio.comm_range", self.comm_range),
            ("radio.data_rate", self.data_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::new(field, format!("must be > 0, got {v}")));
            }
        }
        if !(self.reliable_range >= 0.0 && self.reliable_range <= self.comm_range) {
            return Err(ConfigError::new(
                "radio.reliable_range",
                "must lie in [0, comm_range]",
            ));
        }
        if !(self.base_delay >= 0.0 && self.backoff >= 0.0 && self.slot_time >= 0.0) {
            return Err(ConfigError::new("radio.base_delay", "delays must be >= 0"));
        }
        if self.control_bytes == 0 || self.data_bytes == 0 {
            return Err(ConfigError::new("radio.data_bytes", "message sizes must be > 0"));
        }
        if self.hop_budget == 0 {
            return Err(ConfigError::new("radio.hop_budget", "must be >= 1"));
        }
        Ok(())
    }

    pub fn loss_probability(&self, distance: f64) -> f64 {
        if distance <= self.reliable_range {
            0.0
        } else if distance >= self.comm_range {
            1.0
        } else {
            (distance - self.reliable_range) / (self.comm_range - self.reliable_range)
        }
    }

    /// Expected time to move one data packet across a link, counting every
    /// attempt, the backoffs between them, and whole rounds of retries that
    /// fail. `None` when the link never delivers. Contention is ignored.
    pub fn expected_hop_delay(&self, distance: f64) -> Option<f64> {
        let loss = self.loss_probability(distance);
        if loss >= 1.0 || distance > self.comm_range {
            return None;
        }
        let attempt = self.airtime(self.data_bytes) + self.base_delay;
        let mut round = attempt;
        let mut reach = 1.0;
        for k in 0..self.mac_retries {
            reach *= loss;
            round += reach * (attempt + self.backoff * 2f64.powi(k as i32));
        }
        Some(round / (1.0 - reach * loss))
    }

    pub fn airtime(&self, bytes: usize) -> f64 {
        bytes as f64 * 8.0 / self.data_rate
    }

    pub fn size_of(&self, kind: MessageKind) -> usize {
        match kind {
            MessageKind::DataPacket => self.data_bytes,
            _ => self.control_bytes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageKind {
    Read,
    Roger,
    CoopRequest,
    CoopAgreement,
    ReplaceRequest,
    RegionChangeBroadcast,
    DataPacket,
    CoreBeacon,
    MemberUpdate,
    MergeRequest,
    Leave,
    Hello,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Read => "read",
            MessageKind::Roger => "roger",
            MessageKind::CoopRequest => "coop_request",
            MessageKind::CoopAgreement => "coop_agreement",
            MessageKind::ReplaceRequest => "replace_request",
            MessageKind::RegionChangeBroadcast => "region_change",
            MessageKind::DataPacket => "data",
            MessageKind::CoreBeacon => "core_beacon",
            MessageKind::MemberUpdate => "member_update",
            MessageKind::MergeRequest => "merge_request",
            MessageKind::Leave => "leave",
            MessageKind::Hello => "hello",
        }
    }
}

/// Normalised feature rows of a vehicle's recent history.
pub type History = Vec<[f64; FEATURES]>;

/// What a core advertises about itself.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreInfo {
    pub core: VehicleId,
    pub region: RegionId,
    pub state: VehicleState,
    pub history: History,
    pub member_count: usize,
    /// Heading after the core's next intersection.
    pub next_heading: Vec2,
    pub heading: Vec2,
}

/// A core a member can hear, as reported to its own core.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeardCore {
    pub core: VehicleId,
    pub region: RegionId,
    pub position: Vec2,
    pub heading: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub source: VehicleId,
    pub destination: VehicleId,
    pub created_at: f64,
    pub hops: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Read {
        state: VehicleState,
        history: History,
        heading: Vec2,
    },
    Roger(CoreInfo),
    CoopRequest {
        region: RegionId,
        state: VehicleState,
        history: History,
        heading: Vec2,
    },
    CoopAgreement {
        region: RegionId,
    },
    ReplaceRequest {
        region: RegionId,
        /// Members handed over to the new core.
        roster: Vec<VehicleId>,
    },
    RegionChangeBroadcast {
        region: RegionId,
        core: VehicleId,
    },
    DataPacket(Packet),
    CoreBeacon(CoreInfo),
    MemberUpdate {
        region: RegionId,
        state: VehicleState,
        history: History,
        heard: Vec<HeardCore>,
        /// Aggregation threshold, present when the member hears two or more cores.
        aggregation: Option<f64>,
    },
    MergeRequest {
        region: RegionId,
        absorbed: RegionId,
        absorbed_core: VehicleId,
        /// Consecutive overlapping periods observed before firing.
        streak: u32,
    },
    Leave {
        region: RegionId,
    },
    Hello,
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Read { .. } => MessageKind::Read,
            Payload::Roger(_) => MessageKind::Roger,
            Payload::CoopRequest { .. } => MessageKind::CoopRequest,
            Payload::CoopAgreement { .. } => MessageKind::CoopAgreement,
            Payload::ReplaceRequest { .. } => MessageKind::ReplaceRequest,
            Payload::RegionChangeBroadcast { .. } => MessageKind::RegionChangeBroadcast,
            Payload::DataPacket(_) => MessageKind::DataPacket,
            Payload::CoreBeacon(_) => MessageKind::CoreBeacon,
            Payload::MemberUpdate { .. } => MessageKind::MemberUpdate,
            Payload::MergeRequest { .. } => MessageKind::MergeRequest,
            Payload::Leave { .. } => MessageKind::Leave,
            Payload::Hello => MessageKind::Hello,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dest {
    /// Every vehicle within range.
    Broadcast,
    Unicast(VehicleId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: VehicleId,
    pub dest: Dest,
    pub payload: Payload,
    pub sent_at: f64,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }
}

/// All vehicles within `range` of `who` (inclusive), excluding itself, in id order.
pub fn neighbors(positions: &[Vec2], who: VehicleId, range: f64) -> Result<Vec<VehicleId>, RadioError> {
    let me = *positions
        .get(who.0 as usize)
        .ok_or(RadioError::UnknownVehicle(who))?;
    Ok(positions
        .iter()
        .enumerate()
        .filter(|&(i, p)| i != who.0 as usize && me.distance(*p) <= range)
        .map(|(i, _)| VehicleId(i as u32))
        .collect())
}

/// Neighbour lists for every vehicle.
pub fn neighbor_table(positions: &[Vec2], range: f64) -> Vec<Vec<VehicleId>> {
    let n = positions.len();
    let mut out = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if positions[i].distance(positions[j]) <= range {
                out[i].push(VehicleId(j as u32));
                out[j].push(VehicleId(i as u32));
            }
        }
    }
    for l in &mut out {
        l.sort();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OnAir {
    sender: VehicleId,
    start: f64,
    end: f64,
    position: Vec2,
}

/// Per-sender serialisation and a short memory of recent transmissions for
/// collision checks.
#[derive(Debug, Clone, Default)]
pub struct Channel {
    free_at: Vec<f64>,
    on_air: VecDeque<OnAir>,
}

impl Channel {
    pub fn new(vehicles: usize) -> Self {
        Self {
            free_at: vec![0.0; vehicles],
            on_air: VecDeque::new(),
        }
    }

    /// Books the sender's transmitter for `airtime` seconds starting no
    /// earlier than `earliest`; returns the on-air interval.
    pub fn reserve(&mut self, sender: VehicleId, position: Vec2, earliest: f64, airtime: f64) -> (f64, f64) {
        let slot = &mut self.free_at[sender.0 as usize];
        let start = earliest.max(*slot);
        let end = start + airtime;
        *slot = end;
        // keep roughly sorted by start; exact order is irrelevant to the overlap test
        self.on_air.push_back(OnAir {
            sender,
            start,
            end,
            position,
        });
        (start, end)
    }

    /// Like [`Channel::reserve`], but the sender first defers past every
    /// booked transmission within `sense_range` that would overlap its own,
    /// drawing a fresh backoff after each deferral.
    pub fn reserve_sensed(
        &mut self,
        sender: VehicleId,
        position: Vec2,
        earliest: f64,
        airtime: f64,
        sense_range: f64,
        mut backoff: impl FnMut() -> f64,
    ) -> (f64, f64) {
        let mut start = earliest.max(self.free_at[sender.0 as usize]) + backoff();
        while let Some(busy_until) = self
            .on_air
            .iter()
            .filter(|t| {
                t.sender != sender
                    && t.start < start + airtime
                    && t.end > start
                    && t.position.distance(position) <= sense_range
            })
            .map(|t| t.end)
            .max_by(f64::total_cmp)
        {
            start = busy_until + backoff();
        }
        self.reserve(sender, position, start, airtime)
    }

    /// Whether a reception at `receiver` of `sender`'s `[start, end)`
    /// transmission overlaps another transmitter in `range` of the receiver.
    pub fn collides(&self, sender: VehicleId, receiver: Vec2, start: f64, end: f64, range: f64) -> bool {
        self.on_air.iter().any(|t| {
            t.sender != sender
                && t.start < end
                && t.end > start
                && t.position.distance(receiver) <= range
        })
    }

    /// Forgets transmissions that ended before `before`.
    pub fn prune(&mut self, before: f64) {
        self.on_air.retain(|t| t.end >= before);
    }
}
