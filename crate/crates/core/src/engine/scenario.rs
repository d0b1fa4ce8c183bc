//! Scenario files: every run parameter in one TOML document. Unknown keys
//! are rejected; relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{Router, Scheme};
use crate::error::ConfigError;
use crate::radio::DeliveryModel;
use crate::road::{MobilityConfig, SignalPlan, TurnProbabilities};
use crate::srp::SrpConfig;
use crate::types::ProtocolConfig;

fn d_count() -> usize {
    100
}
fn d_max_speed() -> f64 {
    20.0
}
fn d_duration() -> f64 {
    300.0
}
fn d_warm_up() -> f64 {
    50.0
}
fn d_extent() -> f64 {
    1000.0
}
fn d_block() -> f64 {
    250.0
}
fn d_lanes() -> u32 {
    1
}
fn d_min_speed() -> f64 {
    10.0
}
fn d_accel() -> f64 {
    2.5
}
fn d_spacing() -> f64 {
    7.5
}
fn d_tolerance() -> f64 {
    25.0
}
fn d_tti_window() -> f64 {
    60.0
}
fn d_window() -> f64 {
    20.0
}
fn d_ttl() -> f64 {
    10.0
}
fn d_lifetime() -> f64 {
    5.0
}

/// Road network: a file, or a square grid generated on the fly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSection {
    #[serde(default)]
    pub network: Option<PathBuf>,
    #[serde(default = "d_extent")]
    pub extent: f64,
    #[serde(default = "d_block")]
    pub block: f64,
    #[serde(default = "d_lanes")]
    pub lanes: u32,
    /// Free-flow speed of generated segments; defaults to the middle of the
    /// speed range.
    #[serde(default)]
    pub free_flow_speed: Option<f64>,
}

impl Default for RoadSection {
    fn default() -> Self {
        Self {
            network: None,
            extent: d_extent(),
            block: d_block(),
            lanes: d_lanes(),
            free_flow_speed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilitySection {
    #[serde(default = "d_min_speed")]
    pub min_speed: f64,
    #[serde(default = "d_accel")]
    pub max_accel: f64,
    #[serde(default = "d_spacing")]
    pub min_spacing: f64,
    #[serde(default)]
    pub turns: TurnProbabilities,
    #[serde(default)]
    pub signals: SignalPlan,
    /// Replay this trace instead of synthetic motion; the vehicle count
    /// then comes from the trace.
    #[serde(default)]
    pub trace: Option<PathBuf>,
    #[serde(default)]
    pub trace_resample: Option<f64>,
    #[serde(default = "d_tolerance")]
    pub off_map_tolerance: f64,
    /// Span over which segment speeds are pooled for the travel time
    /// index, seconds.
    #[serde(default = "d_tti_window")]
    pub tti_window: f64,
}

impl Default for MobilitySection {
    fn default() -> Self {
        Self {
            min_speed: d_min_speed(),
            max_accel: d_accel(),
            min_spacing: d_spacing(),
            turns: TurnProbabilities::default(),
            signals: SignalPlan::default(),
            trace: None,
            trace_resample: None,
            tti_window: d_tti_window(),
            off_map_tolerance: d_tolerance(),
        }
    }
}

/// Data packets: `packet_count` packets spread evenly over `window`
/// seconds from `start` (warm-up end by default), random distinct
/// source/destination pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    #[serde(default)]
    pub packet_count: usize,
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default = "d_window")]
    pub window: f64,
    /// Packets older than this are dropped, seconds.
    #[serde(default = "d_ttl")]
    pub ttl: f64,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            packet_count: 0,
            start: None,
            window: d_window(),
            ttl: d_ttl(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    /// Links predicted to break sooner than this do not count for the
    /// stability-gated clusterer, seconds.
    #[serde(default = "d_lifetime")]
    pub min_link_lifetime: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            min_link_lifetime: d_lifetime(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_count")]
    pub vehicle_count: usize,
    #[serde(default = "d_max_speed")]
    pub max_speed: f64,
    #[serde(default = "d_duration")]
    pub sim_duration: f64,
    #[serde(default = "d_warm_up")]
    pub warm_up: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub router: Router,
    #[serde(default)]
    pub road: RoadSection,
    #[serde(default)]
    pub mobility: MobilitySection,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub radio: DeliveryModel,
    #[serde(default)]
    pub srp: SrpConfig,
    #[serde(default)]
    pub workload: Workload,
    #[serde(default)]
    pub baseline: BaselineSection,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            vehicle_count: d_count(),
            max_speed: d_max_speed(),
            sim_duration: d_duration(),
            warm_up: d_warm_up(),
            scheme: Scheme::default(),
            router: Router::default(),
            road: RoadSection::default(),
            mobility: MobilitySection::default(),
            protocol: ProtocolConfig::default(),
            radio: DeliveryModel::default(),
            srp: SrpConfig::default(),
            workload: Workload::default(),
            baseline: BaselineSection::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl Scenario {
    /// Parses and validates; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .and_then(|sp| text.get(sp))
                .map(|t| t.trim().to_string())
                .filter(|t| !t.is_empty() && t.len() < 64)
                .unwrap_or_else(|| "scenario".into());
            ConfigError::new(field, e.message().to_string())
        })?;
        if let Some(base) = base_dir {
            resolve(base, &mut s.road.network);
            resolve(base, &mut s.mobility.trace);
            resolve(base, &mut s.srp.checkpoint);
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("scenario", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::new(field, format!("must be > 0, got {v}")))
            }
        };
        if self.vehicle_count == 0 && self.mobility.trace.is_none() {
            return Err(ConfigError::new("vehicle_count", "must be >= 1"));
        }
        positive("max_speed", self.max_speed)?;
        positive("sim_duration", self.sim_duration)?;
        if !(self.warm_up >= 0.0 && self.warm_up < self.sim_duration) {
            return Err(ConfigError::new(
                "warm_up",
                format!("must lie in [0, sim_duration), got {}", self.warm_up),
            ));
        }
        if !(self.mobility.min_speed > 0.0 && self.mobility.min_speed <= self.max_speed) {
            return Err(ConfigError::new("mobility.min_speed", "must lie in (0, max_speed]"));
        }
        positive("mobility.max_accel", self.mobility.max_accel)?;
        positive("mobility.tti_window", self.mobility.tti_window)?;
        positive("mobility.min_spacing", self.mobility.min_spacing)?;
        positive("mobility.signals.cycle", self.mobility.signals.cycle)?;
        if !(0.0..=1.0).contains(&self.mobility.signals.green_fraction) {
            return Err(ConfigError::new("mobility.signals.green_fraction", "must lie in [0, 1]"));
        }
        let t = self.mobility.turns;
        let total = t.straight + t.left + t.right + t.uturn;
        if [t.straight, t.left, t.right, t.uturn].iter().any(|p| *p < 0.0) || !(total > 0.0) {
            return Err(ConfigError::new("mobility.turns", "probabilities must be >= 0 with a positive sum"));
        }
        if let Some(r) = self.mobility.trace_resample {
            positive("mobility.trace_resample", r)?;
        }
        if self.road.network.is_none() {
            positive("road.extent", self.road.extent)?;
            positive("road.block", self.road.block)?;
            if self.road.extent < self.road.block {
                return Err(ConfigError::new("road.extent", "must be >= road.block"));
            }
            if self.road.lanes == 0 {
                return Err(ConfigError::new("road.lanes", "must be >= 1"));
            }
            if let Some(f) = self.road.free_flow_speed {
                positive("road.free_flow_speed", f)?;
            }
        }
        self.protocol.validate()?;
        self.radio.validate()?;
        self.srp.validate()?;
        if self.protocol.comm_range != self.radio.comm_range {
            return Err(ConfigError::new(
                "protocol.comm_range",
                format!(
                    "must equal radio.comm_range ({} vs {})",
                    self.protocol.comm_range, self.radio.comm_range
                ),
            ));
        }
        positive("workload.window", self.workload.window)?;
        positive("workload.ttl", self.workload.ttl)?;
        positive("baseline.min_link_lifetime", self.baseline.min_link_lifetime)?;
        Ok(())
    }

    pub fn mobility_config(&self) -> MobilityConfig {
        MobilityConfig {
            min_speed: self.mobility.min_speed,
            max_speed: self.max_speed,
            max_accel: self.mobility.max_accel,
            min_spacing: self.mobility.min_spacing,
            turns: self.mobility.turns,
            signals: self.mobility.signals,
        }
    }

    pub fn free_flow_speed(&self) -> f64 {
        self.road
            .free_flow_speed
            .unwrap_or((self.mobility.min_speed + self.max_speed) / 2.0)
    }

    pub fn packet_start(&self) -> f64 {
        self.workload.start.unwrap_or(self.warm_up)
    }

    /// Clustering scheme and router behind a comparison label.
    pub fn with_label(&self, label: &str) -> Result<Self, ConfigError> {
        let (scheme, router) = match label {
            "rcms" => (Scheme::Rcms, Router::Rcms),
            "vmasc_like" => (Scheme::VmascLike, self.router),
            "msca_like" => (Scheme::MscaLike, self.router),
            "cbdrp_like" => (Scheme::VmascLike, Router::CbdrpLike),
            "gpsr_like" => (Scheme::VmascLike, Router::GpsrLike),
            other => {
                return Err(ConfigError::new(
                    "schemes",
                    format!("unknown scheme `{other}` (rcms, vmasc_like, msca_like, cbdrp_like, gpsr_like)"),
                ))
            }
        };
        let mut s = self.clone();
        s.scheme = scheme;
        s.router = if scheme == Scheme::Rcms { Router::Rcms } else { router };
        if scheme != Scheme::Rcms && s.router == Router::Rcms {
            s.router = Router::CbdrpLike;
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let s = Scenario::from_toml_str("", None).unwrap();
        assert_eq!(s, Scenario::default());
        let back = Scenario::from_toml_str(&s.to_toml_string(), None).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = Scenario::from_toml_str("vehicle_count = 5\nbogus = 1\n", None).unwrap_err();
        assert!(e.message.contains("unknown field"), "{e}");
        assert_eq!(e.field, "bogus");
        assert!(Scenario::from_toml_str("[protocol]\nzetta = 2.0\n", None).is_err());
    }

    #[test]
    fn field_level_diagnostics() {
        let e = Scenario::from_toml_str("sim_duration = 10.0\nwarm_up = 20.0\n", None).unwrap_err();
        assert_eq!(e.field, "warm_up");
        let e = Scenario::from_toml_str("vehicle_count = 0\n", None).unwrap_err();
        assert_eq!(e.field, "vehicle_count");
        let e = Scenario::from_toml_str("[radio]\ncomm_range = 300.0\n", None).unwrap_err();
        assert_eq!(e.field, "protocol.comm_range");
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let s = Scenario::from_toml_str("[road]\nnetwork = \"net.toml\"\n", Some(Path::new("/data/x"))).unwrap();
        assert_eq!(s.road.network, Some(PathBuf::from("/data/x/net.toml")));
    }

    #[test]
    fn labels_map_to_scheme_and_router() {
        let s = Scenario::default();
        let g = s.with_label("gpsr_like").unwrap();
        assert_eq!((g.scheme, g.router), (Scheme::VmascLike, Router::GpsrLike));
        let m = s.with_label("msca_like").unwrap();
        assert_eq!((m.scheme, m.router), (Scheme::MscaLike, Router::CbdrpLike));
        let r = g.with_label("rcms").unwrap();
        assert_eq!((r.scheme, r.router), (Scheme::Rcms, Router::Rcms));
        assert!(s.with_label("olsr").is_err());
    }
}
