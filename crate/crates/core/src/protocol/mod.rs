//! Region protocol: thresholds, ground-truth membership registry and the
//! per-vehicle state machine.

mod rcms;
mod registry;
mod thresholds;

pub use rcms::{OverlapDebounce, Rcms};
pub use registry::Registry;
pub use thresholds::{
    aggregation_threshold, competitive_threshold, cooperative_threshold, decomposition_value,
};

use ndarray::Array2;

use crate::events::EventLog;
use crate::radio::{Dest, History, Payload};
use crate::road::MotionSnapshot;
use crate::srp::{Similarity, FEATURES};
use crate::types::{Trajectory, VehicleId, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Timer {
    /// End of the wait for ROGER replies.
    ReadTimeout,
    /// A handover request went unanswered.
    ReplaceTimeout,
}

/// What a protocol handler may see and do. Vehicles read only their own
/// motion and history; everything else arrives in messages.
pub struct Ctx<'a> {
    pub now: f64,
    /// Last broadcast travel time index.
    pub tti: f64,
    pub motion: &'a [MotionSnapshot],
    pub histories: &'a [Trajectory],
    pub similarity: &'a Similarity,
    pub registry: &'a mut Registry,
    pub log: &'a mut EventLog,
    pub outbox: &'a mut Vec<(VehicleId, Dest, Payload)>,
    pub timers: &'a mut Vec<(f64, VehicleId, Timer)>,
}

impl Ctx<'_> {
    pub fn send(&mut self, from: VehicleId, dest: Dest, payload: Payload) {
        self.outbox.push((from, dest, payload));
    }

    pub fn timer(&mut self, at: f64, v: VehicleId, timer: Timer) {
        self.timers.push((at, v, timer));
    }

    /// Current state of `v` as it would report it.
    pub fn state(&self, v: VehicleId, heading_sign: i8) -> VehicleState {
        state_of(v, &self.motion[v.0 as usize], heading_sign, self.tti, self.now, self.registry)
    }

    /// Normalised feature rows of `v`'s recorded history.
    pub fn history(&self, v: VehicleId) -> History {
        let seq = self
            .similarity
            .normalizer()
            .sequence(self.histories[v.0 as usize].samples());
        let skip = seq.nrows().saturating_sub(self.similarity.window());
        seq.rows()
            .into_iter()
            .skip(skip)
            .map(|r| std::array::from_fn(|i| r[i]))
            .collect()
    }

    /// Trajectory similarity of two advertised histories; 1 when either is
    /// too short to compare.
    pub fn lambda(&self, core: &History, ordinary: &History) -> f64 {
        let a = to_array(core);
        let b = to_array(ordinary);
        self.similarity.score_features(a.view(), b.view()).unwrap_or(1.0)
    }
}

pub fn state_of(
    v: VehicleId,
    m: &MotionSnapshot,
    heading_sign: i8,
    tti: f64,
    now: f64,
    registry: &Registry,
) -> VehicleState {
    let mut s = VehicleState::new(v, m.position, m.velocity, now);
    s.role = registry.role(v);
    s.segment_id = m.segment;
    s.acceleration = m.acceleration;
    s.heading_sign = heading_sign;
    s.segment_progress = m.progress;
    s.tti = tti;
    s
}

pub fn to_array(h: &History) -> Array2<f64> {
    Array2::from_shape_fn((h.len(), FEATURES), |(i, j)| h[i][j])
}
