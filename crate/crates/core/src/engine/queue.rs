//! Pending simulation events in a total order: time, then kind priority,
//! then vehicle id, then insertion order.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::protocol::Timer;
use crate::types::VehicleId;

/// Simulation time in microseconds.
pub type SimTime = u64;

pub fn to_sim(seconds: f64) -> SimTime {
    (seconds * 1e6).round().max(0.0) as SimTime
}

pub fn to_secs(t: SimTime) -> f64 {
    t as f64 / 1e6
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ev {
    Tick(u64),
    Deliver(u64),
    Timer(VehicleId, Timer),
    Periodic(VehicleId),
    PacketGen(usize),
}

impl Ev {
    fn priority(&self) -> u8 {
        match self {
            Ev::Tick(_) => 0,
            Ev::Deliver(_) => 1,
            Ev::Timer(..) => 2,
            Ev::Periodic(_) => 3,
            Ev::PacketGen(_) => 4,
        }
    }
}

type Key = (SimTime, u8, u32, u64);

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    key: Key,
    ev: Ev,
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Entry>>,
    seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// `vehicle` orders equal-time, equal-kind events.
    pub fn push(&mut self, at: SimTime, vehicle: VehicleId, ev: Ev) {
        let key = (at, ev.priority(), vehicle.0, self.seq);
        self.seq += 1;
        self.heap.push(Reverse(Entry { key, ev }));
    }

    pub fn pop(&mut self) -> Option<(SimTime, Ev)> {
        self.heap.pop().map(|Reverse(e)| (e.key.0, e.ev))
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|Reverse(e)| e.key.0)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn documented_tie_order() {
        let mut q = EventQueue::new();
        q.push(10, VehicleId(2), Ev::Periodic(VehicleId(2)));
        q.push(10, VehicleId(1), Ev::Periodic(VehicleId(1)));
        q.push(10, VehicleId(9), Ev::Deliver(7));
        q.push(10, VehicleId(0), Ev::Tick(1));
        q.push(5, VehicleId(5), Ev::PacketGen(0));
        q.push(10, VehicleId(1), Ev::Periodic(VehicleId(1)));
        let order: Vec<Ev> = std::iter::from_fn(|| q.pop().map(|(_, e)| e)).collect();
        assert_eq!(
            order,
            vec![
                Ev::PacketGen(0),
                Ev::Tick(1),
                Ev::Deliver(7),
                Ev::Periodic(VehicleId(1)),
                Ev::Periodic(VehicleId(1)),
                Ev::Periodic(VehicleId(2)),
            ]
        );
    }

    proptest! {
        #[test]
        fn pops_in_nondecreasing_key_order(items in prop::collection::vec((0u64..50, 0u32..4, 0u8..5), 1..60)) {
            let mut q = EventQueue::new();
            for (i, &(t, v, k)) in items.iter().enumerate() {
                let v = VehicleId(v);
                let ev = match k {
                    0 => Ev::Tick(i as u64),
                    1 => Ev::Deliver(i as u64),
                    2 => Ev::Timer(v, Timer::ReadTimeout),
                    3 => Ev::Periodic(v),
                    _ => Ev::PacketGen(i),
                };
                q.push(t, v, ev);
            }
            let mut last: Option<(SimTime, u8)> = None;
            while let Some((t, ev)) = q.pop() {
                let key = (t, ev.priority());
                if let Some(prev) = last {
                    prop_assert!(prev <= key);
                }
                last = Some(key);
            }
        }
    }

    #[test]
    fn time_conversion() {
        assert_eq!(to_sim(1.5), 1_500_000);
        assert_eq!(to_secs(to_sim(0.005)), 0.005);
    }
}
