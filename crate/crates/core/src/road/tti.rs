use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::RoadNetwork;
use crate::error::TtiError;

/// Network-wide travel time index: weighted actual travel time over
/// weighted free-flow travel time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficIndex {
    pub value: f64,
    pub computed_at: f64,
}

/// `mean_speeds[i]` is the mean observed speed on segment `i`, or `None`
/// when the segment carried no vehicle; empty segments are left out of
/// both sums.
pub fn compute_tti(
    network: &RoadNetwork,
    mean_speeds: &[Option<f64>],
    computed_at: f64,
) -> Result<TrafficIndex, TtiError> {
    if mean_speeds.len() != network.segments().len() {
        return Err(TtiError::LengthMismatch {
            expected: network.segments().len(),
            got: mean_speeds.len(),
        });
    }
    let mut actual = 0.0;
    let mut free = 0.0;
    let mut any = false;
    for (seg, speed) in network.segments().iter().zip(mean_speeds) {
        let Some(speed) = *speed else { continue };
        if !(speed > 0.0) {
            return Err(TtiError::NonPositiveSpeed {
                segment: seg.segment_id.0,
                speed,
            });
        }
        any = true;
        actual += seg.length / speed * seg.weight;
        free += seg.length / seg.free_flow_speed * seg.weight;
    }
    if !any {
        return Err(TtiError::NoTraffic);
    }
    Ok(TrafficIndex {
        value: actual / free,
        computed_at,
    })
}

/// Per-segment speed samples pooled over the last `span` observations.
/// Pooling every vehicle-sample on a segment yields its space-mean speed,
/// so a briefly stopped queue weighs in by how long it actually stands.
#[derive(Debug, Clone)]
pub struct SpeedWindow {
    span: usize,
    frames: VecDeque<Vec<(f64, usize)>>,
}

impl SpeedWindow {
    pub fn new(span: usize) -> Self {
        Self {
            span: span.max(1),
            frames: VecDeque::new(),
        }
    }

    /// `frame[i]` is the speed sum and vehicle count on segment `i`.
    pub fn push(&mut self, frame: Vec<(f64, usize)>) {
        if self.frames.len() == self.span {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn mean_speeds(&self) -> Vec<Option<f64>> {
        let n = self.frames.front().map_or(0, Vec::len);
        (0..n)
            .map(|i| {
                let (sum, count) = self
                    .frames
                    .iter()
                    .fold((0.0, 0usize), |(s, c), f| (s + f[i].0, c + f[i].1));
                (count > 0).then(|| sum / count as f64)
            })
            .collect()
    }
}
