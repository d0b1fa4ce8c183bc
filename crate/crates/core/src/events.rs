//! Append-only event log. One line per event:
//! `time,event_kind,vehicle_id,region_id,detail`, with empty fields for
//! absent ids and `;`-separated `key=value` pairs in `detail`.
//! Floats are written in shortest round-trip form, so parsing a written log
//! reproduces the in-memory events exactly.

use std::fmt;
use std::io::{self, BufRead, Write};

use crate::error::MetricsError;
use crate::types::{RegionId, VehicleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    RegionCreated,
    RegionDissolved,
    CoreReplaced,
    Joined,
    Left,
    Merged,
    StaleAgreement,
    Tick,
    PacketSent,
    PacketDelivered,
    PacketDropped,
}

impl EventKind {
    pub const ALL: [EventKind; 11] = [
        EventKind::RegionCreated,
        EventKind::RegionDissolved,
        EventKind::CoreReplaced,
        EventKind::Joined,
        EventKind::Left,
        EventKind::Merged,
        EventKind::StaleAgreement,
        EventKind::Tick,
        EventKind::PacketSent,
        EventKind::PacketDelivered,
        EventKind::PacketDropped,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::RegionCreated => "region_created",
            EventKind::RegionDissolved => "region_dissolved",
            EventKind::CoreReplaced => "core_replaced",
            EventKind::Joined => "joined",
            EventKind::Left => "left",
            EventKind::Merged => "merged",
            EventKind::StaleAgreement => "stale_agreement",
            EventKind::Tick => "tick",
            EventKind::PacketSent => "packet_sent",
            EventKind::PacketDelivered => "packet_delivered",
            EventKind::PacketDropped => "packet_dropped",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub vehicle: Option<VehicleId>,
    pub region: Option<RegionId>,
    pub detail: String,
}

impl Event {
    /// Value of `key` in the detail field.
    pub fn field(&self, key: &str) -> Option<&str> {
        self.detail.split(';').find_map(|kv| {
            let (k, v) = kv.split_once('=')?;
            (k == key).then_some(v)
        })
    }

    pub fn num(&self, key: &str) -> Option<f64> {
        self.field(key)?.parse().ok()
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?},{},", self.time, self.kind.as_str())?;
        if let Some(v) = self.vehicle {
            write!(f, "{v}")?;
        }
        f.write_str(",")?;
        if let Some(r) = self.region {
            write!(f, "{r}")?;
        }
        write!(f, ",{}", self.detail)
    }
}

pub const HEADER: &str = "time,event_kind,vehicle_id,region_id,detail";

/// Builds the detail string from key/value pairs.
#[macro_export]
macro_rules! detail {
    () => { String::new() };
    ($($k:literal = $v:expr),+ $(,)?) => {{
        let mut s = String::new();
        $(
            if !s.is_empty() { s.push(';'); }
            s.push_str($k);
            s.push('=');
            s.push_str(&$crate::events::fmt_value(&$v));
        )+
        s
    }};
}

/// Shortest round-trip formatting for numbers, `Display` otherwise.
pub fn fmt_value<T: LogValue + ?Sized>(v: &T) -> String {
    v.log_repr()
}

pub trait LogValue {
    fn log_repr(&self) -> String;
}

impl LogValue for f64 {
    fn log_repr(&self) -> String {
        format!("{self:?}")
    }
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl LogValue for $t {
            fn log_repr(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
display_value!(u32, u64, usize, i64, str, String, &str, VehicleId, RegionId);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        time: f64,
        kind: EventKind,
        vehicle: Option<VehicleId>,
        region: Option<RegionId>,
        detail: String,
    ) {
        debug_assert!(!detail.contains(',') && !detail.contains('\n'));
        self.events.push(Event {
            time,
            kind,
            vehicle,
            region,
            detail,
        });
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "{HEADER}")?;
        for e in &self.events {
            writeln!(w, "{e}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("log is utf-8")
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, MetricsError> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|e| MetricsError::MalformedLog {
                line: n,
                message: e.to_string(),
            })?;
            if n == 1 && line == HEADER || line.trim().is_empty() {
                continue;
            }
            events.push(parse_line(n, &line)?);
        }
        Ok(Self { events })
    }

    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        Self::read_from(text.as_bytes())
    }
}

fn parse_line(n: usize, line: &str) -> Result<Event, MetricsError> {
    let bad = |m: String| MetricsError::MalformedLog { line: n, message: m };
    let mut parts = line.splitn(5, ',');
    let mut next = || parts.next().ok_or_else(|| bad("expected 5 fields".into()));
    let time: f64 = next()?
        .parse()
        .map_err(|e| bad(format!("time: {e}")))?;
    if !time.is_finite() || time < 0.0 {
        return Err(bad(format!("invalid time {time}")));
    }
    let k = next()?;
    let kind = EventKind::parse(k).ok_or_else(|| bad(format!("unknown event kind `{k}`")))?;
    let id = |s: &str, what: &str| -> Result<Option<u32>, MetricsError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|e| bad(format!("{what}: {e}")))
        }
    };
    let vehicle = id(next()?, "vehicle_id")?.map(VehicleId);
    let region = id(next()?, "region_id")?.map(RegionId);
    let detail = next()?.to_string();
    Ok(Event {
        time,
        kind,
        vehicle,
        region,
        detail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut log = EventLog::new();
        log.push(0.1 + 0.2, EventKind::RegionCreated, Some(VehicleId(3)), Some(RegionId(0)), detail!("tag" = "construct"));
        log.push(7.0, EventKind::Tick, None, None, detail!("attached" = 5usize, "tti" = 1.0 / 3.0));
        log.push(9.5, EventKind::Left, Some(VehicleId(1)), Some(RegionId(0)), String::new());
        let text = log.to_text();
        assert!(text.starts_with(HEADER));
        let back = EventLog::parse(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.events()[1].num("tti"), Some(1.0 / 3.0));
        assert_eq!(back.events()[0].field("tag"), Some("construct"));
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn malformed_lines_are_reported() {
        let text = format!("{HEADER}\n1.0,tick,,,\n2.0,bogus,,,\n");
        assert_eq!(
            EventLog::parse(&text).unwrap_err(),
            MetricsError::MalformedLog {
                line: 3,
                message: "unknown event kind `bogus`".into()
            }
        );
        assert!(EventLog::parse("x,tick,,,").is_err());
        assert!(EventLog::parse("1.0,tick").is_err());
    }
}
