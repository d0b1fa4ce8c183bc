//! One simulated run: mobility ticks, message delivery over the shared
//! channel, protocol or baseline clustering, data packets and the per-tick
//! validators.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::queue::{to_secs, to_sim, Ev, EventQueue, SimTime};
use super::scenario::Scenario;
use crate::baselines::{msca_like_step, vmasc_like_step, Kin, Router, Scheme};
use crate::detail;
use crate::error::{ConfigError, RunError};
use crate::events::{EventKind, EventLog};
use crate::metrics::{overlap_counts, MetricLedger};
use crate::protocol::{state_of, Ctx, Rcms, Registry, Timer};
use crate::radio::routing::{greedy_next_hop, head_next_hop, overlay_path_avoiding, NodeView};
use crate::radio::{neighbor_table, Channel, Dest, Packet, Payload};
use crate::road::{
    compute_tti, load_trace, SpeedWindow, Mobility, MobilityModel, MotionSnapshot, RoadNetwork, TraceOptions,
    TraceReplay,
};
use crate::srp::{self, load_checkpoint, Normalizer, Similarity, SrpMode, SrpModel};
use crate::types::{Trajectory, VehicleId, VehicleRole, Vec2};

mod stream {
    pub const MOBILITY: u64 = 1;
    pub const LOSS: u64 = 2;
    pub const BACKOFF: u64 = 3;
    pub const WORKLOAD: u64 = 4;
    pub const PHASE: u64 = 5;
    pub const PRERUN: u64 = 6;
    pub const MODEL: u64 = 7;
}

/// Independent random stream `k` of a run seed.
pub fn rng_stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k);
    r
}

/// Travel time indices below this speed treat a queue as crawling rather
/// than stopped, m/s.
const SPEED_FLOOR: f64 = 1.0;
const MAX_VIOLATIONS: usize = 1000;
/// Hello-learned neighbours expire after this many updating intervals.
const HELLO_FRESHNESS: f64 = 1.5;

#[derive(Debug)]
pub struct RunOutput {
    pub log: EventLog,
    pub ledger: MetricLedger,
    /// Validator messages, first ones only.
    pub violations: Vec<String>,
    pub vehicle_count: usize,
    /// Model trained on the pre-run, with its per-epoch losses.
    pub trained: Option<(Arc<SrpModel>, Vec<f64>)>,
}

impl RunOutput {
    pub fn metrics_csv(&self, scheme: &str, seed: u64) -> String {
        let mut buf = Vec::new();
        self.ledger
            .write_csv(&mut buf, scheme, seed, true)
            .expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn into_result(self) -> Result<Self, RunError> {
        match self.violations.first() {
            Some(first) => Err(RunError::InvariantViolation {
                count: self.violations.len(),
                first: first.clone(),
            }),
            None => Ok(self),
        }
    }
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunOutput, RunError> {
    World::new(scenario.clone())?.run_to_end()
}

pub fn build_network(sc: &Scenario) -> Result<RoadNetwork, RunError> {
    Ok(match &sc.road.network {
        Some(path) => RoadNetwork::load(path)?,
        None => RoadNetwork::grid(sc.road.extent, sc.road.block, sc.road.lanes, sc.free_flow_speed())?,
    })
}

pub fn build_mobility(sc: &Scenario, network: Arc<RoadNetwork>, stream_id: u64) -> Result<Box<dyn Mobility>, RunError> {
    match &sc.mobility.trace {
        Some(path) => {
            let options = TraceOptions {
                off_map_tolerance: sc.mobility.off_map_tolerance,
                resample_interval: sc.mobility.trace_resample,
            };
            let tracks = load_trace(path, &network, options)?;
            if tracks.is_empty() {
                return Err(ConfigError::new("mobility.trace", "trace has no vehicles").into());
            }
            Ok(Box::new(TraceReplay::new(network, &tracks)))
        }
        None => {
            let seed = rng_stream(sc.seed, stream_id).next_u64();
            Ok(Box::new(MobilityModel::spawn(
                network,
                sc.mobility_config(),
                sc.vehicle_count,
                seed,
            )))
        }
    }
}

/// Travel time index over pooled segment speeds.
struct TtiMeter {
    window: SpeedWindow,
}

impl TtiMeter {
    fn new(sc: &Scenario) -> Self {
        let span = (sc.mobility.tti_window / sc.protocol.updating_interval).round() as usize;
        Self {
            window: SpeedWindow::new(span),
        }
    }

    fn observe(&mut self, mobility: &dyn Mobility, at: f64) -> Option<f64> {
        self.window.push(mobility.segment_speed_samples());
        let speeds: Vec<Option<f64>> = self
            .window
            .mean_speeds()
            .into_iter()
            .map(|s| s.map(|v| v.max(SPEED_FLOOR)))
            .collect();
        compute_tti(mobility.network(), &speeds, at).ok().map(|t| t.value)
    }
}

/// Mean travel time index of a mobility-only run over the measurement
/// window.
pub fn measure_tti(sc: &Scenario) -> Result<f64, RunError> {
    let network = Arc::new(build_network(sc)?);
    let mut mobility = build_mobility(sc, network, stream::MOBILITY)?;
    let dt = sc.protocol.updating_interval;
    let ticks = (sc.sim_duration / dt).floor() as u64;
    let (mut sum, mut count) = (0.0, 0usize);
    let mut meter = TtiMeter::new(sc);
    for k in 0..=ticks {
        if k > 0 {
            mobility.step(dt);
        }
        let t = k as f64 * dt;
        let tti = meter.observe(mobility.as_ref(), t);
        if t >= sc.warm_up {
            if let Some(v) = tti {
                sum += v;
                count += 1;
            }
        }
    }
    Ok(if count > 0 { sum / count as f64 } else { 1.0 })
}

/// Trains a forecaster on trajectories from a mobility-only pre-run of
/// `warm_up` seconds (at least 60).
pub fn train_on_prerun(sc: &Scenario, network: Arc<RoadNetwork>) -> Result<(SrpModel, Vec<f64>), RunError> {
    let cfg = &sc.srp;
    let normalizer = Normalizer::for_scenario(sc.max_speed, sc.mobility.max_accel);
    let mut mobility = build_mobility(sc, network, stream::PRERUN)?;
    let n = mobility.vehicle_count();
    let dt = sc.protocol.updating_interval;
    let steps = (sc.warm_up.max(60.0) / dt).ceil() as usize;
    let mut tracks: Vec<Vec<[f64; srp::FEATURES]>> = vec![Vec::new(); n];
    let mut tti = 1.0;
    let mut meter = TtiMeter::new(sc);
    for k in 0..=steps {
        if k > 0 {
            mobility.step(dt);
        }
        let t = k as f64 * dt;
        tti = meter.observe(mobility.as_ref(), t).unwrap_or(tti);
        for (v, track) in tracks.iter_mut().enumerate() {
            let m = mobility.snapshot(v);
            let mut s = crate::types::VehicleState::new(VehicleId(v as u32), m.position, m.velocity, t);
            s.acceleration = m.acceleration;
            s.segment_id = m.segment;
            s.segment_progress = m.progress;
            s.tti = tti;
            track.push(normalizer.apply(srp::raw_features(&s)));
        }
    }
    let mut data = Vec::new();
    for track in &tracks {
        let rows = ndarray::Array2::from_shape_fn((track.len(), srp::FEATURES), |(i, j)| track[i][j]);
        data.extend(srp::windows(rows.view(), cfg.seq_len, cfg.horizon));
    }
    const MAX_EXAMPLES: usize = 256;
    if data.len() > MAX_EXAMPLES {
        let stride = data.len() as f64 / MAX_EXAMPLES as f64;
        data = (0..MAX_EXAMPLES)
            .map(|i| data[(i as f64 * stride) as usize].clone())
            .collect();
    }
    let seed = rng_stream(sc.seed, stream::MODEL).next_u64();
    let mut model = SrpModel::new(cfg.hidden, cfg.seq_len, cfg.horizon, normalizer, seed)?;
    let losses = srp::train(&mut model, &data, &cfg.train_config())?;
    Ok((model, losses))
}

#[derive(Debug)]
struct Tx {
    from: VehicleId,
    dest: Dest,
    payload: Payload,
    start: f64,
    end: f64,
    attempt: u32,
    receivers: Vec<VehicleId>,
}

pub struct World {
    sc: Scenario,
    n: usize,
    queue: EventQueue,
    now: SimTime,
    end: SimTime,
    interval: f64,
    mobility: Box<dyn Mobility>,
    tti_meter: TtiMeter,
    motion: Vec<MotionSnapshot>,
    positions: Vec<Vec2>,
    neighbors: Vec<Vec<VehicleId>>,
    histories: Vec<Trajectory>,
    tti: f64,
    registry: Registry,
    log: EventLog,
    rcms: Option<Rcms>,
    similarity: Similarity,
    trained: Option<(Arc<SrpModel>, Vec<f64>)>,
    channel: Channel,
    txs: BTreeMap<u64, Tx>,
    next_tx: u64,
    loss_rng: ChaCha8Rng,
    backoff_rng: ChaCha8Rng,
    packets: Vec<(VehicleId, VehicleId)>,
    carried: Vec<(VehicleId, Packet)>,
    /// Last time each vehicle heard a hello from each neighbour.
    hellos: Vec<BTreeMap<VehicleId, f64>>,
    /// Per packet: its holder and the next hops that failed from there.
    failed_hops: BTreeMap<u64, (VehicleId, Vec<VehicleId>)>,
    phases: Vec<SimTime>,
    violations: Vec<String>,
    outbox: Vec<(VehicleId, Dest, Payload)>,
    timers: Vec<(f64, VehicleId, Timer)>,
}

impl World {
    pub fn new(sc: Scenario) -> Result<Self, RunError> {
        sc.validate()?;
        let network = Arc::new(build_network(&sc)?);
        let mobility = build_mobility(&sc, network.clone(), stream::MOBILITY)?;
        let n = mobility.vehicle_count();
        let (similarity, trained) = match sc.srp.mode {
            SrpMode::History => (
                Similarity::history(
                    Normalizer::for_scenario(sc.max_speed, sc.mobility.max_accel),
                    sc.srp.seq_len,
                ),
                None,
            ),
            SrpMode::Checkpoint => {
                let path = sc.srp.checkpoint.as_ref().expect("validated");
                let model = Arc::new(load_checkpoint(path)?);
                (Similarity::with_model(model, sc.srp.compare), None)
            }
            SrpMode::Train => {
                let (model, losses) = train_on_prerun(&sc, network)?;
                let model = Arc::new(model);
                (
                    Similarity::with_model(model.clone(), sc.srp.compare),
                    Some((model, losses)),
                )
            }
        };
        let keep = similarity.window().max(2);
        let histories = (0..n)
            .map(|v| Trajectory::new(VehicleId(v as u32), keep).expect("capacity >= 2"))
            .collect();
        let interval = sc.protocol.updating_interval;
        let mut phase_rng = rng_stream(sc.seed, stream::PHASE);
        let period = to_sim(interval).max(1);
        let phases = (0..n).map(|_| phase_rng.random_range(0..period)).collect();

        let mut queue = EventQueue::new();
        queue.push(0, VehicleId(0), Ev::Tick(0));
        let mut packets = Vec::new();
        if n >= 2 {
            let mut wl = rng_stream(sc.seed, stream::WORKLOAD);
            let count = sc.workload.packet_count;
            for i in 0..count {
                let src = wl.random_range(0..n as u32);
                let mut dst = wl.random_range(0..n as u32 - 1);
                if dst >= src {
                    dst += 1;
                }
                let at = sc.packet_start() + sc.workload.window * i as f64 / count as f64;
                queue.push(to_sim(at), VehicleId(src), Ev::PacketGen(i));
                packets.push((VehicleId(src), VehicleId(dst)));
            }
        }
        let rcms = (sc.scheme == Scheme::Rcms).then(|| Rcms::new(sc.protocol.clone(), sc.max_speed, n));
        Ok(Self {
            n,
            queue,
            now: 0,
            end: to_sim(sc.sim_duration),
            interval,
            mobility,
            tti_meter: TtiMeter::new(&sc),
            motion: Vec::new(),
            positions: Vec::new(),
            neighbors: Vec::new(),
            histories,
            tti: 1.0,
            registry: Registry::new(n),
            log: EventLog::new(),
            rcms,
            similarity,
            trained,
            channel: Channel::new(n),
            txs: BTreeMap::new(),
            next_tx: 0,
            loss_rng: rng_stream(sc.seed, stream::LOSS),
            backoff_rng: rng_stream(sc.seed, stream::BACKOFF),
            packets,
            carried: Vec::new(),
            hellos: vec![BTreeMap::new(); n],
            failed_hops: BTreeMap::new(),
            phases,
            violations: Vec::new(),
            outbox: Vec::new(),
            timers: Vec::new(),
            sc,
        })
    }

    pub fn vehicle_count(&self) -> usize {
        self.n
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn time(&self) -> f64 {
        to_secs(self.now)
    }

    /// Processes events up to and including time `until` seconds.
    pub fn run_until(&mut self, until: f64) {
        let until = to_sim(until).min(self.end);
        while self.queue.peek_time().is_some_and(|t| t <= until) {
            let (t, ev) = self.queue.pop().expect("peeked");
            self.now = t;
            self.handle(ev);
        }
    }

    pub fn run_to_end(mut self) -> Result<RunOutput, RunError> {
        self.run_until(self.sc.sim_duration);
        let ledger = MetricLedger::from_log(&self.log, self.sc.warm_up)?;
        Ok(RunOutput {
            log: self.log,
            ledger,
            violations: self.violations,
            vehicle_count: self.n,
            trained: self.trained,
        })
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Tick(k) => self.tick(k),
            Ev::Deliver(id) => self.deliver(id),
            Ev::Timer(v, timer) => self.with_protocol(|p, ctx| p.on_timer(v, timer, ctx)),
            Ev::Periodic(v) => {
                if self.rcms.is_some() {
                    self.with_protocol(|p, ctx| p.on_periodic(v, ctx));
                } else {
                    self.transmit(v, Dest::Broadcast, Payload::Hello, 0, self.now);
                }
            }
            Ev::PacketGen(i) => {
                let (src, dst) = self.packets[i];
                let now = to_secs(self.now);
                self.log.push(
                    now,
                    EventKind::PacketSent,
                    Some(src),
                    None,
                    detail!("packet" = i, "destination" = dst),
                );
                let packet = Packet {
                    id: i as u64,
                    source: src,
                    destination: dst,
                    created_at: now,
                    hops: 0,
                };
                self.forward(src, packet);
            }
        }
    }

    fn with_protocol(&mut self, f: impl FnOnce(&mut Rcms, &mut Ctx)) {
        let Some(rcms) = self.rcms.as_mut() else {
            return;
        };
        let mut ctx = Ctx {
            now: to_secs(self.now),
            tti: self.tti,
            motion: &self.motion,
            histories: &self.histories,
            similarity: &self.similarity,
            registry: &mut self.registry,
            log: &mut self.log,
            outbox: &mut self.outbox,
            timers: &mut self.timers,
        };
        f(rcms, &mut ctx);
        self.flush();
    }

    fn flush(&mut self) {
        for (at, v, timer) in std::mem::take(&mut self.timers) {
            self.queue.push(to_sim(at).max(self.now), v, Ev::Timer(v, timer));
        }
        for (from, dest, payload) in std::mem::take(&mut self.outbox) {
            self.transmit(from, dest, payload, 0, self.now);
        }
    }

    fn transmit(&mut self, from: VehicleId, dest: Dest, payload: Payload, attempt: u32, earliest: SimTime) {
        let radio = &self.sc.radio;
        let airtime = radio.airtime(radio.size_of(payload.kind()));
        let position = self.positions[from.0 as usize];
        let earliest = to_secs(earliest);
        let (start, end) = if radio.carrier_sense {
            let (slot, window) = (radio.slot_time, radio.contention_window);
            let rng = &mut self.backoff_rng;
            self.channel.reserve_sensed(from, position, earliest, airtime, radio.comm_range, || {
                rng.random_range(0..=window) as f64 * slot
            })
        } else {
            self.channel.reserve(from, position, earliest, airtime)
        };
        let receivers = match dest {
            Dest::Broadcast => self.neighbors[from.0 as usize].clone(),
            Dest::Unicast(to) => vec![to],
        };
        let id = self.next_tx;
        self.next_tx += 1;
        let at = to_sim(end + radio.base_delay);
        self.txs.insert(
            id,
            Tx {
                from,
                dest,
                payload,
                start,
                end,
                attempt,
                receivers,
            },
        );
        self.queue.push(at, from, Ev::Deliver(id));
    }

    fn deliver(&mut self, id: u64) {
        let tx = self.txs.remove(&id).expect("pending transmission");
        let radio = &self.sc.radio;
        let from = self.positions[tx.from.0 as usize];
        let mut received = Vec::new();
        for &r in &tx.receivers {
            let at = self.positions[r.0 as usize];
            let d = from.distance(at);
            let coin: f64 = self.loss_rng.random();
            let mut ok = d <= radio.comm_range && coin >= radio.loss_probability(d);
            if ok && radio.collisions {
                ok = !self.channel.collides(tx.from, at, tx.start, tx.end, radio.comm_range);
            }
            if ok {
                received.push(r);
            }
        }
        if let Dest::Unicast(_) = tx.dest {
            if received.is_empty() {
                self.unicast_failed(tx);
                return;
            }
        }
        for r in received {
            match &tx.payload {
                Payload::DataPacket(p) => self.forward(r, p.clone()),
                Payload::Hello => {
                    self.hellos[r.0 as usize].insert(tx.from, to_secs(self.now));
                }
                payload => self.with_protocol(|proto, ctx| proto.on_receive(r, tx.from, payload, ctx)),
            }
        }
    }

    fn unicast_failed(&mut self, tx: Tx) {
        let radio = &self.sc.radio;
        if tx.attempt < radio.mac_retries {
            let wait = to_sim(radio.backoff * 2f64.powi(tx.attempt as i32));
            self.transmit(tx.from, tx.dest, tx.payload, tx.attempt + 1, self.now + wait);
            return;
        }
        if let (Payload::DataPacket(mut p), Dest::Unicast(next)) = (tx.payload, tx.dest) {
            p.hops -= 1;
            if self.sc.router == Router::GpsrLike {
                self.carried.push((tx.from, p));
            } else {
                // route around the failed neighbour
                let entry = self.failed_hops.entry(p.id).or_insert((tx.from, Vec::new()));
                if entry.0 != tx.from {
                    *entry = (tx.from, Vec::new());
                }
                entry.1.push(next);
                self.forward(tx.from, p);
            }
        }
    }

    fn drop_packet(&mut self, holder: VehicleId, p: &Packet, reason: &str) {
        self.failed_hops.remove(&p.id);
        self.log.push(
            to_secs(self.now),
            EventKind::PacketDropped,
            Some(holder),
            None,
            detail!("packet" = p.id, "reason" = reason, "hops" = p.hops),
        );
    }

    fn node_views(&self) -> Vec<NodeView> {
        (0..self.n)
            .map(|i| {
                let v = VehicleId(i as u32);
                NodeView {
                    position: self.positions[i],
                    role: self.registry.role(v),
                    region: self.registry.region_of(v),
                    core: self.registry.core_for(v),
                }
            })
            .collect()
    }

    /// Neighbours whose hello arrived within the freshness window.
    fn beacon_neighbors(&self, v: VehicleId) -> Vec<VehicleId> {
        let now = to_secs(self.now);
        let window = HELLO_FRESHNESS * self.sc.protocol.updating_interval;
        self.hellos[v.0 as usize]
            .iter()
            .filter(|(_, &t)| now - t <= window)
            .map(|(&u, _)| u)
            .collect()
    }

    fn next_hop(&self, holder: VehicleId, p: &Packet) -> Option<VehicleId> {
        let dst = p.destination;
        let avoid: &[VehicleId] = match self.failed_hops.get(&p.id) {
            Some((h, failed)) if *h == holder => failed,
            _ => &[],
        };
        match self.sc.router {
            Router::Rcms => overlay_path_avoiding(&self.node_views(), &self.sc.radio, holder, dst, avoid)
                .ok()
                .and_then(|path| path.get(1).copied()),
            Router::CbdrpLike => {
                let mut nbrs = self.beacon_neighbors(holder);
                nbrs.retain(|v| !avoid.contains(v));
                head_next_hop(&self.node_views(), &nbrs, holder, dst, p.hops == 0)
            }
            Router::GpsrLike => greedy_next_hop(&self.positions, &self.beacon_neighbors(holder), holder, dst),
        }
    }

    fn forward(&mut self, holder: VehicleId, mut p: Packet) {
        let now = to_secs(self.now);
        if holder == p.destination {
            self.failed_hops.remove(&p.id);
            self.log.push(
                now,
                EventKind::PacketDelivered,
                Some(holder),
                None,
                detail!("packet" = p.id, "hops" = p.hops, "delay" = now - p.created_at),
            );
            return;
        }
        if now - p.created_at > self.sc.workload.ttl {
            return self.drop_packet(holder, &p, "ttl");
        }
        if p.hops >= self.sc.radio.hop_budget {
            return self.drop_packet(holder, &p, "hop_budget");
        }
        match self.next_hop(holder, &p) {
            Some(next) => {
                p.hops += 1;
                self.transmit(holder, Dest::Unicast(next), Payload::DataPacket(p), 0, self.now);
            }
            None if self.sc.router == Router::GpsrLike => self.carried.push((holder, p)),
            None => self.drop_packet(holder, &p, "no_route"),
        }
    }

    fn refresh_topology(&mut self) {
        self.motion = (0..self.n).map(|v| self.mobility.snapshot(v)).collect();
        self.positions = self.motion.iter().map(|m| m.position).collect();
        self.neighbors = neighbor_table(&self.positions, self.sc.radio.comm_range);
    }

    fn tick(&mut self, k: u64) {
        let t = to_secs(self.now);
        if k > 0 {
            self.mobility.step(self.interval);
        }
        self.refresh_topology();
        let tick_tti = self.tti_meter.observe(self.mobility.as_ref(), t);
        if let Some(v) = tick_tti {
            self.tti = v;
        }
        for v in 0..self.n {
            let id = VehicleId(v as u32);
            let sign = self.rcms.as_ref().map_or(1, |p| p.heading_sign(id));
            let s = state_of(id, &self.motion[v], sign, self.tti, t, &self.registry);
            self.histories[v].push(s).expect("tick times increase");
        }
        if self.sc.scheme != Scheme::Rcms {
            self.cluster_baseline(t);
        }

        let mut attached = Vec::new();
        let mut cores = Vec::new();
        for v in 0..self.n {
            let role = self.registry.role(VehicleId(v as u32));
            if role.is_attached() {
                attached.push(self.positions[v]);
            }
            if role == VehicleRole::Core {
                cores.push(self.positions[v]);
            }
        }
        let (overlapped, attached) = overlap_counts(&attached, &cores, self.sc.radio.comm_range);
        let mut d = detail!(
            "tick" = k,
            "attached" = attached,
            "overlapped" = overlapped,
            "regions" = self.registry.region_count()
        );
        if let Some(v) = tick_tti {
            d.push_str(&format!(";tti={v:?}"));
        }
        self.log.push(t, EventKind::Tick, None, None, d);
        self.validate(t);

        for (holder, p) in std::mem::take(&mut self.carried) {
            self.forward(holder, p);
        }
        self.channel.prune(t - 1.0);

        let base = self.now;
        for v in 0..self.n {
            let id = VehicleId(v as u32);
            self.queue.push(base + self.phases[v], id, Ev::Periodic(id));
        }
        let next = to_sim((k + 1) as f64 * self.interval);
        if next <= self.end {
            self.queue.push(next, VehicleId(0), Ev::Tick(k + 1));
        }
    }

    fn validate(&mut self, t: f64) {
        let mut errs = self.registry.validate();
        if let Some(rcms) = &self.rcms {
            let (mut outbox, mut timers) = (Vec::new(), Vec::new());
            let ctx = Ctx {
                now: t,
                tti: self.tti,
                motion: &self.motion,
                histories: &self.histories,
                similarity: &self.similarity,
                registry: &mut self.registry,
                log: &mut self.log,
                outbox: &mut outbox,
                timers: &mut timers,
            };
            errs.extend(rcms.validate(&ctx));
        }
        let count = self.registry.region_count();
        if count > self.n {
            errs.push(format!("{count} regions for {} vehicles", self.n));
        }
        for e in errs {
            if self.violations.len() < MAX_VIOLATIONS {
                self.violations.push(format!("t={t}: {e}"));
            }
        }
    }

    /// Elects baseline heads from the current kinematics and mirrors the
    /// result into the registry.
    fn cluster_baseline(&mut self, t: f64) {
        let range = self.sc.radio.comm_range;
        let kin: Vec<Kin> = self
            .motion
            .iter()
            .map(|m| Kin {
                position: m.position,
                velocity: m.velocity,
                heading: m.heading,
            })
            .collect();
        let incumbents: BTreeSet<VehicleId> = self.registry.regions().map(|r| r.core_id).collect();
        let a = match self.sc.scheme {
            Scheme::MscaLike => msca_like_step(&kin, range, self.sc.baseline.min_link_lifetime, &incumbents),
            _ => vmasc_like_step(&kin, range, &incumbents),
        };
        let heads = a.heads();
        let reg = &mut self.registry;
        let log = &mut self.log;
        let lost: Vec<_> = reg
            .regions()
            .filter(|r| !heads.contains(&r.core_id))
            .map(|r| r.region_id)
            .collect();
        for r in lost {
            reg.dissolve(r, t, "head_lost", log);
        }
        for v in 0..self.n {
            let id = VehicleId(v as u32);
            if reg.role(id).is_member() && reg.core_for(id) != Some(a.head_of[v]) {
                reg.leave(id, t, "reassigned", log);
            }
        }
        for &h in &heads {
            if reg.role(h) != VehicleRole::Core {
                reg.create(h, t, "construct", log);
            }
        }
        for v in 0..self.n {
            let id = VehicleId(v as u32);
            let head = a.head_of[v];
            if head != id && reg.role(id) == VehicleRole::Unattached {
                let r = reg.region_of(head).expect("head leads a region");
                reg.join(id, r, t, log);
            }
        }
        let head_pos: Vec<Vec2> = heads.iter().map(|h| self.positions[h.0 as usize]).collect();
        for v in 0..self.n {
            let id = VehicleId(v as u32);
            if reg.role(id).is_member() {
                let p = self.positions[v];
                let reach = head_pos.iter().filter(|h| h.distance(p) <= range).count();
                reg.set_gateway(id, reach >= 2);
                let core = reg.core_for(id).expect("member has a core");
                if self.positions[core.0 as usize].distance(p) > range {
                    self.violations.push(format!("t={t}: {id} is out of range of its head {core}"));
                }
            }
        }
    }
}
