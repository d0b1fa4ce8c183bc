//! Evaluation quantities, computed from the event log alone so a persisted
//! log reproduces the live numbers exactly.

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::MetricsError;
use crate::events::{EventKind, EventLog};
use crate::types::{RegionId, Vec2};

/// Counts attached vehicles within `range` of at least two distinct cores.
/// `attached` holds positions of every vehicle in a region, cores included.
/// Returns `(overlapped, attached)`.
pub fn overlap_counts(attached: &[Vec2], cores: &[Vec2], range: f64) -> (usize, usize) {
    let overlapped = attached
        .iter()
        .filter(|p| cores.iter().filter(|c| c.distance(**p) <= range).count() >= 2)
        .count();
    (overlapped, attached.len())
}

pub fn overlap_rate(attached: &[Vec2], cores: &[Vec2], range: f64) -> Result<f64, MetricsError> {
    let (hit, total) = overlap_counts(attached, cores, range);
    if total == 0 {
        return Err(MetricsError::NoVehicles);
    }
    Ok(hit as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRow {
    pub tick: u64,
    pub time: f64,
    pub overlap: Option<f64>,
    pub tti: Option<f64>,
    pub regions: usize,
    /// Constructions plus replacements since warm-up, up to this tick.
    pub reconstructions: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricLedger {
    pub warm_up: f64,
    pub ticks: Vec<TickRow>,
    /// Seconds from creation to dissolution or merge, for regions ending
    /// after warm-up.
    pub lifetimes: Vec<f64>,
    /// Ages of regions still alive at the end; excluded from the mean.
    pub censored: Vec<f64>,
    pub constructions: usize,
    pub replacements: usize,
    pub packets_sent: usize,
    pub packets_delivered: usize,
    pub delays: Vec<f64>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl MetricLedger {
    pub fn from_log(log: &EventLog, warm_up: f64) -> Result<Self, MetricsError> {
        let mut m = MetricLedger {
            warm_up,
            ..Default::default()
        };
        let mut alive: BTreeMap<RegionId, f64> = BTreeMap::new();
        let mut end = 0.0f64;
        for (i, e) in log.events().iter().enumerate() {
            let bad = |message: String| MetricsError::MalformedLog { line: i + 2, message };
            let measured = e.time >= warm_up;
            end = end.max(e.time);
            match e.kind {
                EventKind::RegionCreated => {
                    let r = e.region.ok_or_else(|| bad("region_created without region".into()))?;
                    if alive.insert(r, e.time).is_some() {
                        return Err(bad(format!("{r} created twice")));
                    }
                    if measured {
                        m.constructions += 1;
                    }
                }
                EventKind::RegionDissolved => {
                    let r = e.region.ok_or_else(|| bad("region_dissolved without region".into()))?;
                    let born = alive
                        .remove(&r)
                        .ok_or_else(|| bad(format!("{r} dissolved but never created")))?;
                    if measured {
                        m.lifetimes.push(e.time - born);
                    }
                }
                EventKind::CoreReplaced if measured => m.replacements += 1,
                EventKind::PacketSent if measured => m.packets_sent += 1,
                EventKind::PacketDelivered if measured => {
                    m.packets_delivered += 1;
                    let delay = e.num("delay").ok_or_else(|| bad("packet_delivered without delay".into()))?;
                    m.delays.push(delay);
                }
                EventKind::Tick => {
                    let num = |k: &str| e.num(k).ok_or_else(|| bad(format!("tick without {k}")));
                    let attached = num("attached")?;
                    let overlapped = num("overlapped")?;
                    m.ticks.push(TickRow {
                        tick: num("tick")? as u64,
                        time: e.time,
                        overlap: (attached > 0.0).then(|| overlapped / attached),
                        tti: e.num("tti"),
                        regions: alive.len(),
                        reconstructions: m.constructions + m.replacements,
                    });
                }
                _ => {}
            }
        }
        m.censored = alive.values().map(|&born| end - born).collect();
        Ok(m)
    }

    fn measured_ticks(&self) -> impl Iterator<Item = &TickRow> {
        self.ticks.iter().filter(move |t| t.time >= self.warm_up)
    }

    pub fn mean_lifetime(&self) -> Option<f64> {
        mean(self.lifetimes.iter().copied())
    }

    pub fn reconstruction_count(&self) -> usize {
        self.constructions + self.replacements
    }

    pub fn mean_overlap(&self) -> Option<f64> {
        mean(self.measured_ticks().filter_map(|t| t.overlap))
    }

    pub fn mean_tti(&self) -> Option<f64> {
        mean(self.measured_ticks().filter_map(|t| t.tti))
    }

    /// Delivered over generated packets; absent when nothing was sent.
    pub fn dpdr(&self) -> Option<f64> {
        (self.packets_sent > 0).then(|| self.packets_delivered as f64 / self.packets_sent as f64)
    }

    pub fn interaction_delay(&self) -> Option<f64> {
        mean(self.delays.iter().copied())
    }

    /// Whole-run scalars by metric name; absent values are left out.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("lifetime_count", self.lifetimes.len() as f64),
            ("censored_count", self.censored.len() as f64),
            ("reconstruction_count", self.reconstruction_count() as f64),
            ("reconstruction_construct", self.constructions as f64),
            ("reconstruction_replace", self.replacements as f64),
            ("packets_sent", self.packets_sent as f64),
            ("packets_delivered", self.packets_delivered as f64),
        ];
        let optional = [
            ("mean_lifetime", self.mean_lifetime()),
            ("mean_censored_age", mean(self.censored.iter().copied())),
            ("overlap_rate", self.mean_overlap()),
            ("dpdr", self.dpdr()),
            ("interaction_delay", self.interaction_delay()),
            ("mean_tti", self.mean_tti()),
        ];
        out.extend(optional.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))));
        out.sort_by_key(|(k, _)| *k);
        out
    }

    /// Rows of `tick,scheme,seed,metric,value`: per-tick series, then the
    /// whole-run scalars on the last tick.
    pub fn write_csv(&self, mut w: impl Write, scheme: &str, seed: u64, header: bool) -> io::Result<()> {
        if header {
            writeln!(w, "tick,scheme,seed,metric,value")?;
        }
        for t in &self.ticks {
            let mut row = |metric: &str, v: f64| writeln!(w, "{},{scheme},{seed},{metric},{v:?}", t.tick);
            if let Some(o) = t.overlap {
                row("overlap_rate", o)?;
            }
            if let Some(x) = t.tti {
                row("tti", x)?;
            }
            row("region_count", t.regions as f64)?;
            row("reconstruction_count", t.reconstructions as f64)?;
        }
        let last = self.ticks.last().map_or(0, |t| t.tick);
        for (metric, v) in self.scalars() {
            writeln!(w, "{last},{scheme},{seed},run_{metric},{v:?}")?;
        }
        Ok(())
    }
}

/// Mean and percentile bootstrap interval at the given confidence level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
    pub n: usize,
}

pub fn bootstrap(samples: &[f64], resamples: usize, confidence: f64, seed: u64) -> Option<Interval> {
    let n = samples.len();
    let m = mean(samples.iter().copied())?;
    if n == 1 {
        return Some(Interval {
            mean: m,
            low: m,
            high: m,
            n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - confidence) / 2.0;
    let at = |q: f64| means[((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    Some(Interval {
        mean: m,
        low: at(alpha),
        high: at(1.0 - alpha),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detail;
    use crate::types::VehicleId;

    fn p(x: f64, y: f64) -> Vec2 {
        Vec2::new(x, y)
    }

    #[test]
    fn overlap_examples() {
        let cores = [p(0.0, 0.0)];
        let att = [p(0.0, 0.0), p(100.0, 0.0), p(200.0, 0.0)];
        assert_eq!(overlap_rate(&att, &cores, 250.0), Ok(0.0));
        let cores = [p(0.0, 0.0), p(100.0, 0.0)];
        let att = [p(0.0, 0.0), p(100.0, 0.0), p(50.0, 10.0)];
        assert_eq!(overlap_rate(&att, &cores, 250.0), Ok(1.0));
        assert_eq!(overlap_rate(&[], &cores, 250.0), Err(MetricsError::NoVehicles));
    }

    #[test]
    fn ten_vehicle_two_region_layout() {
        let cores = [p(0.0, 0.0), p(400.0, 0.0)];
        let att = [
            p(0.0, 0.0),
            p(400.0, 0.0),
            p(-100.0, 0.0),
            p(100.0, 0.0),
            p(160.0, 0.0),
            p(200.0, 0.0),
            p(240.0, 50.0),
            p(300.0, 0.0),
            p(500.0, 0.0),
            p(200.0, 160.0),
        ];
        // pairwise-range count: within 250 m of both (0,0) and (400,0)
        let mut expected = 0;
        for a in &att {
            let d0 = (a.x * a.x + a.y * a.y).sqrt();
            let d1 = ((a.x - 400.0).powi(2) + a.y * a.y).sqrt();
            if d0 <= 250.0 && d1 <= 250.0 {
                expected += 1;
            }
        }
        assert_eq!(expected, 3);
        assert_eq!(overlap_counts(&att, &cores, 250.0), (3, 10));
    }

    #[test]
    fn single_region_lifetime() {
        let mut log = EventLog::new();
        let (v, r) = (Some(VehicleId(0)), Some(RegionId(0)));
        log.push(0.0, EventKind::RegionCreated, v, r, detail!("tag" = "construct"));
        log.push(100.0, EventKind::RegionDissolved, v, r, detail!("reason" = "x"));
        let m = MetricLedger::from_log(&log, 0.0).unwrap();
        assert_eq!(m.lifetimes, vec![100.0]);
        assert_eq!(m.dpdr(), None);
        assert!(!m.scalars().iter().any(|(k, _)| *k == "dpdr"));
    }

    fn tick(log: &mut EventLog, k: u64, attached: usize, overlapped: usize, tti: f64) {
        log.push(
            k as f64,
            EventKind::Tick,
            None,
            None,
            detail!("tick" = k, "attached" = attached, "overlapped" = overlapped, "tti" = tti),
        );
    }

    /// Twenty events, metrics tabulated by hand below.
    fn synthetic() -> EventLog {
        let mut log = EventLog::new();
        let v = |i| Some(VehicleId(i));
        let r = |i| Some(RegionId(i));
        log.push(0.0, EventKind::RegionCreated, v(0), r(0), detail!("tag" = "construct"));
        log.push(1.0, EventKind::RegionCreated, v(1), r(1), detail!("tag" = "construct"));
        tick(&mut log, 2, 4, 0, 1.2);
        log.push(3.0, EventKind::RegionDissolved, v(1), r(1), detail!("reason" = "absorbed"));
        tick(&mut log, 4, 4, 2, 1.4);
        // warm-up ends at 5
        log.push(5.0, EventKind::PacketSent, v(2), None, detail!("packet" = 0usize));
        tick(&mut log, 6, 5, 1, 1.6);
        log.push(6.5, EventKind::PacketDelivered, v(3), None, detail!("packet" = 0usize, "delay" = 0.25));
        log.push(7.0, EventKind::RegionCreated, v(4), r(2), detail!("tag" = "construct"));
        log.push(7.0, EventKind::PacketSent, v(2), None, detail!("packet" = 1usize));
        log.push(7.5, EventKind::PacketSent, v(2), None, detail!("packet" = 2usize));
        tick(&mut log, 8, 6, 3, 1.8);
        log.push(8.2, EventKind::PacketDropped, v(2), None, detail!("packet" = 1usize));
        log.push(8.5, EventKind::PacketDelivered, v(5), None, detail!("packet" = 2usize, "delay" = 1.0));
        log.push(9.0, EventKind::CoreReplaced, v(6), r(0), detail!("old" = VehicleId(0)));
        log.push(10.0, EventKind::Merged, v(6), r(0), detail!("absorbed" = RegionId(2)));
        log.push(10.0, EventKind::RegionDissolved, v(4), r(2), detail!("reason" = "merged"));
        tick(&mut log, 10, 6, 0, 2.0);
        log.push(11.0, EventKind::Joined, v(7), r(0), String::new());
        tick(&mut log, 12, 0, 0, 2.2);
        assert_eq!(log.len(), 20);
        log
    }

    #[test]
    fn synthetic_log_matches_hand_tabulation() {
        let m = MetricLedger::from_log(&synthetic(), 5.0).unwrap();
        // region 1 ended before warm-up; region 2 lived 7..10
        assert_eq!(m.lifetimes, vec![3.0]);
        // region 0 alive from 0 to the last event at 12
        assert_eq!(m.censored, vec![12.0]);
        assert_eq!((m.constructions, m.replacements), (1, 1));
        assert_eq!(m.dpdr(), Some(2.0 / 3.0));
        assert_eq!(m.interaction_delay(), Some(0.625));
        // ticks 6, 8, 10 measured; tick 12 has no attached vehicles
        let want = (1.0 / 5.0 + 3.0 / 6.0 + 0.0) / 3.0;
        assert!((m.mean_overlap().unwrap() - want).abs() < 1e-15);
        assert!((m.mean_tti().unwrap() - (1.6 + 1.8 + 2.0 + 2.2) / 4.0).abs() < 1e-15);
        let regions: Vec<usize> = m.ticks.iter().map(|t| t.regions).collect();
        assert_eq!(regions, vec![2, 1, 1, 2, 1, 1]);
        let recon: Vec<usize> = m.ticks.iter().map(|t| t.reconstructions).collect();
        assert_eq!(recon, vec![0, 0, 0, 1, 2, 2]);
    }

    #[test]
    fn persisted_log_reproduces_metrics() {
        let log = synthetic();
        let live = MetricLedger::from_log(&log, 5.0).unwrap();
        let back = MetricLedger::from_log(&EventLog::parse(&log.to_text()).unwrap(), 5.0).unwrap();
        assert_eq!(live, back);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        live.write_csv(&mut a, "rcms", 1, true).unwrap();
        back.write_csv(&mut b, "rcms", 1, true).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("tick,scheme,seed,metric,value\n2,rcms,1,overlap_rate,0.0\n"));
        assert!(text.contains("12,rcms,1,run_dpdr,0.6666666666666666\n"));
    }

    #[test]
    fn inconsistent_logs_are_rejected() {
        let mut log = EventLog::new();
        log.push(1.0, EventKind::RegionDissolved, None, Some(RegionId(3)), String::new());
        assert!(matches!(
            MetricLedger::from_log(&log, 0.0),
            Err(MetricsError::MalformedLog { line: 2, .. })
        ));
    }

    #[test]
    fn bootstrap_intervals() {
        let one = bootstrap(&[3.5], 1000, 0.95, 1).unwrap();
        assert_eq!((one.mean, one.low, one.high), (3.5, 3.5, 3.5));
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let iv = bootstrap(&xs, 2000, 0.95, 7).unwrap();
        assert!(iv.low < iv.mean && iv.mean < iv.high);
        // normal approximation: sd/sqrt(n) = 14.43/7.07 ~ 2.04, so ~ +-4
        assert!((iv.high - iv.low - 8.0).abs() < 1.5, "{iv:?}");
        assert_eq!(bootstrap(&xs, 2000, 0.95, 7), Some(iv));
        assert_eq!(bootstrap(&[], 10, 0.95, 7), None);
    }

    #[test]
    fn fractions_stay_in_unit_interval() {
        let m = MetricLedger::from_log(&synthetic(), 0.0).unwrap();
        for t in &m.ticks {
            if let Some(o) = t.overlap {
                assert!((0.0..=1.0).contains(&o));
            }
        }
        assert!(m.dpdr().unwrap() <= 1.0);
        assert!(m.lifetimes.iter().all(|&l| l >= 0.0));
        assert!(m.ticks.windows(2).all(|w| w[0].reconstructions <= w[1].reconstructions));
    }
}
