//! Road network, traffic index, vehicle mobility and trace ingestion.

mod mobility;
mod trace;
mod tti;

pub use mobility::{
    Direction, Kinematics, Mobility, MobilityConfig, MobilityModel, MotionSnapshot, SignalPlan,
    TraceReplay, TurnProbabilities,
};
pub use trace::{load_trace, parse_trace, write_trace, TraceOptions};
pub use tti::{compute_tti, SpeedWindow, TrafficIndex};

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::NetworkError;
use crate::types::{IntersectionId, SegmentId, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intersection {
    pub id: IntersectionId,
    pub x: f64,
    pub y: f64,
    #[serde(skip)]
    pub segments: Vec<SegmentId>,
}

impl Intersection {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

fn one() -> f64 {
    1.0
}
fn two() -> u32 {
    2
}

/// A two-way road segment between two intersections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSegment {
    #[serde(rename = "id")]
    pub segment_id: SegmentId,
    pub from: IntersectionId,
    pub to: IntersectionId,
    /// Meters.
    pub length: f64,
    /// Road-hierarchy weight in the travel time index.
    #[serde(default = "one")]
    pub weight: f64,
    /// m/s.
    pub free_flow_speed: f64,
    #[serde(default = "two")]
    pub lanes_per_direction: u32,
}

impl RoadSegment {
    pub fn endpoints(&self) -> (IntersectionId, IntersectionId) {
        (self.from, self.to)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(rename = "intersection", default)]
    intersections: Vec<Intersection>,
    #[serde(rename = "segment", default)]
    segments: Vec<RoadSegment>,
}

/// Immutable road graph. Intersection and segment ids equal their index.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    intersections: Vec<Intersection>,
    segments: Vec<RoadSegment>,
    min: Vec2,
    max: Vec2,
}

impl RoadNetwork {
    pub fn new(
        mut intersections: Vec<Intersection>,
        segments: Vec<RoadSegment>,
    ) -> Result<Self, NetworkError> {
        if intersections.is_empty() || segments.is_empty() {
            return Err(NetworkError::Empty);
        }
        intersections.sort_by_key(|i| i.id);
        for (k, i) in intersections.iter_mut().enumerate() {
            if i.id.0 as usize != k {
                return Err(NetworkError::Parse(format!(
                    "intersection ids must be dense from 0, found {}",
                    i.id
                )));
            }
            i.segments.clear();
        }
        let mut segments = segments;
        segments.sort_by_key(|s| s.segment_id);
        for (k, s) in segments.iter().enumerate() {
            if s.segment_id.0 as usize != k {
                return Err(NetworkError::Parse(format!(
                    "segment ids must be dense from 0, found {}",
                    s.segment_id
                )));
            }
            for end in [s.from, s.to] {
                if end.0 as usize >= intersections.len() {
                    return Err(NetworkError::MissingIntersection {
                        segment: s.segment_id.0,
                        intersection: end.0,
                    });
                }
            }
            if s.from == s.to
                || !(s.length > 0.0)
                || !(s.free_flow_speed > 0.0)
                || !(s.weight > 0.0)
                || s.lanes_per_direction == 0
            {
                return Err(NetworkError::InvalidSegment(s.segment_id.0));
            }
        }
        for s in &segments {
            intersections[s.from.0 as usize].segments.push(s.segment_id);
            intersections[s.to.0 as usize].segments.push(s.segment_id);
        }
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for i in &intersections {
            min = Vec2::new(min.x.min(i.x), min.y.min(i.y));
            max = Vec2::new(max.x.max(i.x), max.y.max(i.y));
        }
        let net = Self {
            intersections,
            segments,
            min,
            max,
        };
        if !net.is_connected() {
            return Err(NetworkError::Disconnected);
        }
        Ok(net)
    }

    /// Square grid of two-way segments with `block` meter spacing.
    pub fn grid(
        extent: f64,
        block: f64,
        lanes_per_direction: u32,
        free_flow_speed: f64,
    ) -> Result<Self, NetworkError> {
        if !(block > 0.0 && extent >= block) {
            return Err(NetworkError::Parse(format!(
                "grid needs extent >= block > 0, got extent {extent}, block {block}"
            )));
        }
        let n = (extent / block).round() as u32 + 1;
        let mut intersections = Vec::new();
        for row in 0..n {
            for col in 0..n {
                intersections.push(Intersection {
                    id: IntersectionId(row * n + col),
                    x: col as f64 * block,
                    y: row as f64 * block,
                    segments: Vec::new(),
                });
            }
        }
        let mut segments = Vec::new();
        let mut push = |from: u32, to: u32| {
            let id = SegmentId(segments.len() as u32);
            segments.push(RoadSegment {
                segment_id: id,
                from: IntersectionId(from),
                to: IntersectionId(to),
                length: block,
                weight: 1.0,
                free_flow_speed,
                lanes_per_direction,
            });
        };
        for row in 0..n {
            for col in 0..n {
                let id = row * n + col;
                if col + 1 < n {
                    push(id, id + 1);
                }
                if row + 1 < n {
                    push(id, id + n);
                }
            }
        }
        Self::new(intersections, segments)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, NetworkError> {
        let file: NetworkFile =
            toml::from_str(text).map_err(|e| NetworkError::Parse(e.to_string()))?;
        Self::new(file.intersections, file.segments)
    }

    pub fn load(path: &Path) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let file = NetworkFile {
            intersections: self.intersections.clone(),
            segments: self.segments.clone(),
        };
        toml::to_string(&file).expect("network serialises")
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.intersections.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for s in &self.intersections[i].segments {
                let seg = &self.segments[s.0 as usize];
                for next in [seg.from.0 as usize, seg.to.0 as usize] {
                    if !seen[next] {
                        seen[next] = true;
                        queue.push_back(next);
                    }
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn segments(&self) -> &[RoadSegment] {
        &self.segments
    }

    pub fn intersections(&self) -> &[Intersection] {
        &self.intersections
    }

    pub fn segment(&self, id: SegmentId) -> &RoadSegment {
        &self.segments[id.0 as usize]
    }

    pub fn intersection(&self, id: IntersectionId) -> &Intersection {
        &self.intersections[id.0 as usize]
    }

    pub fn segment_endpoints(&self, id: SegmentId) -> (Vec2, Vec2) {
        let s = self.segment(id);
        (
            self.intersection(s.from).position(),
            self.intersection(s.to).position(),
        )
    }

    /// Bounding box of all intersections.
    pub fn extent(&self) -> (Vec2, Vec2) {
        (self.min, self.max)
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    /// Nearest-segment projection: `(segment, progress in [0,1], distance)`.
    pub fn project(&self, p: Vec2) -> (SegmentId, f64, f64) {
        let mut best = (SegmentId(0), 0.0, f64::INFINITY);
        for s in &self.segments {
            let (a, b) = self.segment_endpoints(s.segment_id);
            let ab = b - a;
            let len2 = ab.dot(ab);
            let t = if len2 == 0.0 {
                0.0
            } else {
                ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
            };
            let d = p.distance(a + ab * t);
            if d < best.2 {
                best = (s.segment_id, t, d);
            }
        }
        best
    }
}
