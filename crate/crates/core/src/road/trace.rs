//! Trace files: `vehicle_id,timestamp_s,x_m,y_m,speed_mps`, one row per fix.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::RoadNetwork;
use crate::error::TraceError;
use crate::types::{Trajectory, VehicleId, VehicleState, Vec2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    /// Points farther than this from every segment are rejected, meters.
    pub off_map_tolerance: f64,
    /// Resample each vehicle onto a regular grid with this spacing, seconds.
    /// `None` keeps the raw fixes.
    pub resample_interval: Option<f64>,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            off_map_tolerance: 25.0,
            resample_interval: None,
        }
    }
}

#[derive(Debug, serde::Deserialize, serde::Serialize)]
struct Row {
    vehicle_id: u32,
    timestamp_s: f64,
    x_m: f64,
    y_m: f64,
    speed_mps: f64,
}

pub fn load_trace(
    path: &Path,
    network: &RoadNetwork,
    options: TraceOptions,
) -> Result<Vec<Trajectory>, TraceError> {
    let file = std::fs::File::open(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(file, network, options)
}

pub fn parse_trace(
    reader: impl Read,
    network: &RoadNetwork,
    options: TraceOptions,
) -> Result<Vec<Trajectory>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut fixes: BTreeMap<u32, Vec<(f64, Vec2, f64)>> = BTreeMap::new();
    for (k, row) in rdr.deserialize::<Row>().enumerate() {
        // header is line 1
        let line = k + 2;
        let row = row.map_err(|e| TraceError::Parse {
            line,
            message: e.to_string(),
        })?;
        let values = [row.timestamp_s, row.x_m, row.y_m, row.speed_mps];
        if values.iter().any(|v| !v.is_finite()) || row.speed_mps < 0.0 {
            return Err(TraceError::Parse {
                line,
                message: "non-finite value or negative speed".into(),
            });
        }
        let list = fixes.entry(row.vehicle_id).or_default();
        if let Some(&(last, _, _)) = list.last() {
            if !(row.timestamp_s > last) {
                return Err(TraceError::Parse {
                    line,
                    message: format!(
                        "vehicle {}: timestamp {} not after {}",
                        row.vehicle_id, row.timestamp_s, last
                    ),
                });
            }
        }
        let p = Vec2::new(row.x_m, row.y_m);
        let (_, _, distance) = network.project(p);
        if distance > options.off_map_tolerance {
            return Err(TraceError::OffMap {
                vehicle: row.vehicle_id,
                x: row.x_m,
                y: row.y_m,
                distance,
                tolerance: options.off_map_tolerance,
            });
        }
        list.push((row.timestamp_s, p, row.speed_mps));
    }
    let mut out = Vec::with_capacity(fixes.len());
    for (id, raw) in fixes {
        let samples = match options.resample_interval {
            Some(dt) => resample(&raw, dt),
            None => raw,
        };
        out.push(build_trajectory(VehicleId(id), &samples, network));
    }
    Ok(out)
}

/// Linear interpolation of position and speed onto `t0, t0 + dt, ...`.
fn resample(raw: &[(f64, Vec2, f64)], dt: f64) -> Vec<(f64, Vec2, f64)> {
    let t0 = raw[0].0;
    let t_end = raw[raw.len() - 1].0;
    let mut out = Vec::new();
    let mut k = 0;
    let mut step = 0u64;
    loop {
        let t = t0 + step as f64 * dt;
        if t > t_end + 1e-9 {
            break;
        }
        while k + 1 < raw.len() && raw[k + 1].0 < t {
            k += 1;
        }
        let sample = if k + 1 < raw.len() {
            let (ta, pa, sa) = raw[k];
            let (tb, pb, sb) = raw[k + 1];
            let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            (t, pa + (pb - pa) * w, sa + (sb - sa) * w)
        } else {
            (t, raw[k].1, raw[k].2)
        };
        out.push(sample);
        step += 1;
    }
    out
}

fn build_trajectory(id: VehicleId, samples: &[(f64, Vec2, f64)], network: &RoadNetwork) -> Trajectory {
    let mut traj = Trajectory::new(id, samples.len().max(1)).expect("nonzero capacity");
    let mut prev_velocity: Option<(f64, Vec2)> = None;
    let steps: Vec<Vec2> = samples.windows(2).map(|w| w[1].1 - w[0].1).collect();
    let moving = |d: &&Vec2| d.norm() > 0.0;
    let mut last_dir = Vec2::ZERO;
    for (i, &(t, p, speed)) in samples.iter().enumerate() {
        // a fix followed by a stop keeps the direction it was travelling in
        let dir = steps
            .get(i)
            .filter(moving)
            .copied()
            .or_else(|| (last_dir.norm() > 0.0).then_some(last_dir))
            .or_else(|| steps[i.min(steps.len())..].iter().find(moving).copied())
            .unwrap_or(Vec2::ZERO);
        last_dir = dir;
        let velocity = dir.normalized() * speed;
        let acceleration = match prev_velocity {
            Some((tp, vp)) => (velocity - vp) * (1.0 / (t - tp)),
            None => Vec2::ZERO,
        };
        prev_velocity = Some((t, velocity));
        let (segment, progress, _) = network.project(p);
        let mut state = VehicleState::new(id, p, velocity, t);
        state.acceleration = acceleration;
        state.segment_id = segment;
        state.segment_progress = progress;
        traj.push(state).expect("timestamps checked while parsing");
    }
    traj
}

/// Writes trajectories in the trace format, vehicles in the given order.
pub fn write_trace(writer: impl Write, trajectories: &[Trajectory]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for traj in trajectories {
        for s in traj.samples() {
            w.serialize(Row {
                vehicle_id: traj.vehicle_id.0,
                timestamp_s: s.timestamp,
                x_m: s.position.x,
                y_m: s.position.y,
                speed_mps: s.speed_magnitude(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> RoadNetwork {
        RoadNetwork::grid(1000.0, 500.0, 2, 20.0).unwrap()
    }

    const HEADER: &str = "vehicle_id,timestamp_s,x_m,y_m,speed_mps\n";

    #[test]
    fn empty_file_gives_empty_set() {
        let t = parse_trace(HEADER.as_bytes(), &grid(), TraceOptions::default()).unwrap();
        assert!(t.is_empty());
        let t = parse_trace("".as_bytes(), &grid(), TraceOptions::default()).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn decreasing_timestamps_rejected() {
        let text = format!("{HEADER}1,5.0,10,0,10\n1,4.0,20,0,10\n");
        let err = parse_trace(text.as_bytes(), &grid(), TraceOptions::default()).unwrap_err();
        assert!(matches!(err, TraceError::Parse { line: 3, .. }));
    }

    #[test]
    fn off_map_point_rejected() {
        let text = format!("{HEADER}1,0.0,250,250,10\n");
        let err = parse_trace(text.as_bytes(), &grid(), TraceOptions::default()).unwrap_err();
        assert!(matches!(err, TraceError::OffMap { vehicle: 1, .. }));
    }

    #[test]
    fn three_rows_round_trip() {
        let text = format!("{HEADER}7,0.0,0.0,0.0,10.0\n7,2.5,25.0,0.0,10.0\n7,5.0,50.0,0.0,10.0\n");
        let t = parse_trace(text.as_bytes(), &grid(), TraceOptions::default()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].len(), 3);
        assert_eq!(t[0].vehicle_id, VehicleId(7));
        let v = t[0].samples().nth(1).unwrap().speed;
        assert_eq!(v, Vec2::new(10.0, 0.0));
        let mut out = Vec::new();
        write_trace(&mut out, &t).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn stopping_fix_keeps_its_speed() {
        let text = format!("{HEADER}2,0.0,0.0,0.0,10.0\n2,1.0,10.0,0.0,4.0\n2,2.0,10.0,0.0,0.0\n2,3.0,10.0,0.0,0.0\n");
        let t = parse_trace(text.as_bytes(), &grid(), TraceOptions::default()).unwrap();
        let speeds: Vec<Vec2> = t[0].samples().map(|s| s.speed).collect();
        assert_eq!(speeds[1], Vec2::new(4.0, 0.0));
        let mut out = Vec::new();
        write_trace(&mut out, &t).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn resampling_interpolates() {
        let text = format!("{HEADER}1,0.0,0.0,0.0,10.0\n1,3.0,30.0,0.0,16.0\n");
        let opts = TraceOptions {
            resample_interval: Some(1.0),
            ..Default::default()
        };
        let t = parse_trace(text.as_bytes(), &grid(), opts).unwrap();
        let xs: Vec<f64> = t[0].samples().map(|s| s.position.x).collect();
        let speeds: Vec<f64> = t[0].samples().map(|s| s.speed_magnitude()).collect();
        assert_eq!(xs, vec![0.0, 10.0, 20.0, 30.0]);
        assert_eq!(speeds, vec![10.0, 12.0, 14.0, 16.0]);
    }
}
