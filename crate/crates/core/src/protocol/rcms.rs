//! Per-vehicle region state machine: construction by READ/ROGER exchange,
//! member upkeep and core replacement, aggregation of overlapping regions
//! and decomposition at intersections.
//!
//! Vehicles learn about each other only through delivered messages. Region
//! level transitions (takeover, merge, dissolution) are applied to every
//! affected vehicle at the moment the deciding message is delivered, so the
//! registry never passes through an inconsistent state.

use std::collections::{BTreeMap, BTreeSet};

use super::thresholds::{
    aggregation_threshold, competitive_threshold, cooperative_threshold, decomposition_value,
};
use super::{Ctx, Timer};
use crate::radio::{CoreInfo, Dest, HeardCore, History, Payload};
use crate::types::{
    relative_distance, ProtocolConfig, RegionId, Scaling, VehicleId, VehicleRole, VehicleState, Vec2,
};

/// Consecutive-period gate for region aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapDebounce {
    streak: u32,
    required: u32,
}

impl Default for OverlapDebounce {
    fn default() -> Self {
        Self::new(2)
    }
}

impl OverlapDebounce {
    pub fn new(required: u32) -> Self {
        Self {
            streak: 0,
            required: required.max(1),
        }
    }

    /// Records one period; returns whether the gate is open.
    pub fn observe(&mut self, overlapping: bool) -> bool {
        self.streak = if overlapping { self.streak + 1 } else { 0 };
        self.streak >= self.required
    }

    pub fn streak(&self) -> u32 {
        self.streak
    }

    pub fn reset(&mut self) {
        self.streak = 0;
    }
}

#[derive(Debug, Clone)]
struct Heard {
    info: CoreInfo,
    at: f64,
}

#[derive(Debug, Clone)]
struct MemberInfo {
    last_heard: f64,
    state: Option<VehicleState>,
    history: History,
    heard: Vec<HeardCore>,
    aggregation: Option<f64>,
}

#[derive(Debug, Clone)]
struct CoreState {
    roster: BTreeMap<VehicleId, MemberInfo>,
    prev_roster: BTreeSet<VehicleId>,
    next_check: f64,
    debounce: BTreeMap<RegionId, OverlapDebounce>,
    empty_checks: u32,
    replace_deadline: Option<f64>,
}

impl CoreState {
    fn new(now: f64, zeta: f64) -> Self {
        Self {
            roster: BTreeMap::new(),
            prev_roster: BTreeSet::new(),
            next_check: now + zeta,
            debounce: BTreeMap::new(),
            empty_checks: 0,
            replace_deadline: None,
        }
    }

    fn with_roster(now: f64, zeta: f64, members: impl IntoIterator<Item = VehicleId>) -> Self {
        let mut s = Self::new(now, zeta);
        for m in members {
            s.roster.insert(
                m,
                MemberInfo {
                    last_heard: now,
                    state: None,
                    history: Vec::new(),
                    heard: Vec::new(),
                    aggregation: None,
                },
            );
        }
        s.prev_roster = s.roster.keys().copied().collect();
        s
    }
}

#[derive(Debug, Clone)]
struct Node {
    heading_sign: i8,
    // unattached
    read_deadline: Option<f64>,
    silent_rounds: u32,
    rogers: BTreeMap<VehicleId, CoreInfo>,
    deferred: bool,
    join: Option<(VehicleId, RegionId, f64)>,
    // member
    core_info: Option<CoreInfo>,
    last_core_heard: f64,
    heard: BTreeMap<VehicleId, Heard>,
    gateway_cores: usize,
    last_update_at: f64,
    last_update_speed: f64,
    decided_visit: Option<u64>,
    candidate_core: bool,
    // core
    core: Option<CoreState>,
}

impl Node {
    fn new() -> Self {
        Self {
            heading_sign: 1,
            read_deadline: None,
            silent_rounds: 0,
            rogers: BTreeMap::new(),
            deferred: false,
            join: None,
            core_info: None,
            last_core_heard: f64::NEG_INFINITY,
            heard: BTreeMap::new(),
            gateway_cores: 0,
            last_update_at: f64::NEG_INFINITY,
            last_update_speed: 0.0,
            decided_visit: None,
            candidate_core: false,
            core: None,
        }
    }

    fn reset_unattached(&mut self) {
        let heard = std::mem::take(&mut self.heard);
        *self = Self::new();
        self.heard = heard;
    }

    fn become_member(&mut self, now: f64) {
        self.read_deadline = None;
        self.silent_rounds = 0;
        self.rogers.clear();
        self.join = None;
        self.deferred = false;
        self.core = None;
        self.last_core_heard = now;
        self.gateway_cores = 0;
        self.decided_visit = None;
    }
}

fn same_direction(a: Vec2, b: Vec2) -> bool {
    a.dot(b) > 1e-9
}

/// The region protocol for every vehicle of a run.
#[derive(Debug, Clone)]
pub struct Rcms {
    cfg: ProtocolConfig,
    scaling: Scaling,
    nodes: Vec<Node>,
    violations: Vec<String>,
}

impl Rcms {
    pub fn new(cfg: ProtocolConfig, max_speed: f64, vehicles: usize) -> Self {
        Self {
            scaling: cfg.scaling(max_speed),
            cfg,
            nodes: vec![Node::new(); vehicles],
            violations: Vec::new(),
        }
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.cfg
    }

    pub fn heading_sign(&self, v: VehicleId) -> i8 {
        self.nodes[v.0 as usize].heading_sign
    }

    /// Whether `v` has a READ outstanding.
    pub fn waiting(&self, v: VehicleId) -> bool {
        self.nodes[v.0 as usize].read_deadline.is_some()
    }

    /// Cores `v` heard within the last refresh window.
    pub fn known_cores(&self, v: VehicleId) -> usize {
        self.nodes[v.0 as usize].gateway_cores
    }

    fn node(&mut self, v: VehicleId) -> &mut Node {
        &mut self.nodes[v.0 as usize]
    }

    fn congested(&self, ctx: &Ctx) -> bool {
        self.cfg.is_congested(ctx.tti)
    }

    fn core_info(&self, v: VehicleId, ctx: &Ctx) -> CoreInfo {
        let m = &ctx.motion[v.0 as usize];
        let region = ctx.registry.region_of(v).expect("core has a region");
        CoreInfo {
            core: v,
            region,
            state: ctx.state(v, 1),
            history: ctx.history(v),
            member_count: self.nodes[v.0 as usize]
                .core
                .as_ref()
                .map_or(0, |c| c.roster.len()),
            next_heading: m.next_heading,
            heading: m.heading,
        }
    }

    /// Periodic work, once per updating interval per vehicle.
    pub fn on_periodic(&mut self, v: VehicleId, ctx: &mut Ctx) {
        match ctx.registry.role(v) {
            VehicleRole::Unattached => self.unattached_periodic(v, ctx),
            VehicleRole::Core => self.core_periodic(v, ctx),
            VehicleRole::Ordinary | VehicleRole::Gateway => self.member_periodic(v, ctx),
        }
    }

    pub fn on_timer(&mut self, v: VehicleId, timer: Timer, ctx: &mut Ctx) {
        match timer {
            Timer::ReadTimeout => self.read_timeout(v, ctx),
            Timer::ReplaceTimeout => {
                let now = ctx.now;
                let pending = self.nodes[v.0 as usize]
                    .core
                    .as_ref()
                    .and_then(|c| c.replace_deadline)
                    .is_some_and(|d| d <= now);
                if pending && ctx.registry.role(v) == VehicleRole::Core {
                    let r = ctx.registry.region_of(v).expect("core has a region");
                    self.dissolve(r, "replace_failed", ctx);
                }
            }
        }
    }

    fn unattached_periodic(&mut self, v: VehicleId, ctx: &mut Ctx) {
        let now = ctx.now;
        let zeta = self.cfg.zeta;
        let node = self.node(v);
        if node.join.is_some_and(|(_, _, d)| d <= now) {
            node.join = None;
        }
        if node.read_deadline.is_some() || node.join.is_some() {
            return;
        }
        node.read_deadline = Some(now + zeta);
        node.rogers.clear();
        node.deferred = false;
        node.heading_sign = 1;
        let heading = ctx.motion[v.0 as usize].heading;
        let payload = Payload::Read {
            state: ctx.state(v, 1),
            history: ctx.history(v),
            heading,
        };
        ctx.send(v, Dest::Broadcast, payload);
        ctx.timer(now + zeta, v, Timer::ReadTimeout);
    }

    fn read_timeout(&mut self, v: VehicleId, ctx: &mut Ctx) {
        let now = ctx.now;
        if ctx.registry.role(v) != VehicleRole::Unattached {
            self.node(v).read_deadline = None;
            return;
        }
        let congested = self.congested(ctx);
        let me = ctx.state(v, 1);
        let my_hist = ctx.history(v);
        let (retries, zeta) = (self.cfg.max_read_retries, self.cfg.zeta);
        let (threshold, scaling) = (self.cfg.tti_congestion_threshold, self.scaling);
        let node = self.node(v);
        if node.read_deadline.is_none_or(|d| d > now) {
            return;
        }
        node.read_deadline = None;
        let rogers = std::mem::take(&mut node.rogers);
        for info in rogers.values() {
            node.heard.insert(
                info.core,
                Heard {
                    info: info.clone(),
                    at: now,
                },
            );
        }
        if rogers.is_empty() {
            node.silent_rounds += 1;
            if node.silent_rounds >= retries && !node.deferred {
                self.promote(v, ctx);
            }
            return;
        }
        node.silent_rounds = 0;
        let pick = if rogers.len() == 1 {
            rogers.values().next().unwrap()
        } else {
            let mut best: Option<(f64, &CoreInfo)> = None;
            for info in rogers.values() {
                let lambda = if congested {
                    ctx.lambda(&info.history, &my_hist)
                } else {
                    1.0
                };
                let tau = cooperative_threshold(&me, &info.state, ctx.tti, lambda, threshold, scaling);
                // BTreeMap order makes the first maximum the lowest core id
                if best.is_none_or(|(b, _)| tau > b) {
                    best = Some((tau, info));
                }
            }
            best.unwrap().1
        };
        let (core, region) = (pick.core, pick.region);
        self.node(v).join = Some((core, region, now + zeta));
        let heading = ctx.motion[v.0 as usize].heading;
        ctx.send(
            v,
            Dest::Unicast(core),
            Payload::CoopRequest {
                region,
                state: me,
                history: my_hist,
                heading,
            },
        );
    }

    fn promote(&mut self, v: VehicleId, ctx: &mut Ctx) {
        let now = ctx.now;
        ctx.registry.create(v, now, "construct", ctx.log);
        let zeta = self.cfg.zeta;
        let node = self.node(v);
        node.become_member(now);
        node.heading_sign = 1;
        node.core = Some(CoreState::new(now, zeta));
        let info = self.core_info(v, ctx);
        ctx.send(v, Dest::Broadcast, Payload::CoreBeacon(info));
    }

    fn leave(&mut self, v: VehicleId, reason: &str, ctx: &mut Ctx) {
        let region = ctx.registry.region_of(v);
        let core = ctx.registry.core_for(v);
        if ctx.registry.leave(v, ctx.now, reason, ctx.log) {
            if let (Some(region), Some(core)) = (region, core) {
                ctx.send(v, Dest::Unicast(core), Payload::Leave { region });
            }
            self.node(v).reset_unattached();
        }
    }

    fn dissolve(&mut self, r: RegionId, reason: &str, ctx: &mut Ctx) {
        for u in ctx.registry.dissolve(r, ctx.now, reason, ctx.log) {
            self.node(u).reset_unattached();
        }
    }

    fn member_periodic(&mut self, v: VehicleId, ctx: &mut Ctx) {
        let now = ctx.now;
        let cfg = self.cfg.clone();
        if now - self.nodes[v.0 as usize].last_core_heard > cfg.core_timeout {
            self.leave(v, "core_lost", ctx);
            return;
        }
        let region = ctx.registry.region_of(v).expect("member has a region");
        let congested = cfg.is_congested(ctx.tti);
        let me = ctx.state(v, self.nodes[v.0 as usize].heading_sign);
        let my_hist = ctx.history(v);
        let motion = ctx.motion[v.0 as usize];
        let window = 1.5 * cfg.updating_interval;

        // gateway bookkeeping
        let node = &mut self.nodes[v.0 as usize];
        node.heard
            .retain(|_, h| now - h.at <= window.max(cfg.core_timeout));
        let fresh: Vec<CoreInfo> = node
            .heard
            .values()
            .filter(|h| now - h.at <= window)
            .map(|h| h.info.clone())
            .collect();
        let count = fresh.len();
        node.gateway_cores = count;
        ctx.registry.set_gateway(v, count >= 2);
        let aggregation = (count >= 2)
            .then(|| {
                let cores: Vec<(VehicleState, f64)> = fresh
                    .iter()
                    .map(|c| {
                        let lambda = if congested {
                            ctx.lambda(&c.history, &my_hist)
                        } else {
                            1.0
                        };
                        let tau = cooperative_threshold(
                            &me,
                            &c.state,
                            ctx.tti,
                            lambda,
                            cfg.tti_congestion_threshold,
                            self.scaling,
                        );
                        (c.state, tau.max(f64::MIN_POSITIVE))
                    })
                    .collect();
                aggregation_threshold(&me, &cores, self.scaling).ok()
            })
            .flatten();

        // intersection test
        let node = &mut self.nodes[v.0 as usize];
        if motion.distance_to_exit <= cfg.approach_radius && node.decided_visit != Some(motion.segment_visit) {
            node.decided_visit = Some(motion.segment_visit);
            if let Some(core) = &node.core_info {
                let core_next = if core.state.segment_id == motion.segment && core.heading.dot(motion.heading) > 0.9 {
                    core.next_heading
                } else {
                    core.heading
                };
                if motion.next_heading.dot(core_next) < 0.9 {
                    self.leave(v, "turn", ctx);
                    return;
                }
                if decomposition_value(&core.state, &me, self.scaling) > cfg.decomposition_threshold {
                    self.leave(v, "diverge", ctx);
                    return;
                }
            }
        }

        // state update to the core
        let speed = me.speed_magnitude();
        let due = if congested {
            let base = node.last_update_speed.max(1.0);
            (speed - node.last_update_speed).abs() > cfg.speed_change_fraction * base
                || now - node.last_update_at >= 2.0 * cfg.updating_interval - 1e-9
        } else {
            true
        };
        if !due {
            return;
        }
        node.last_update_at = now;
        node.last_update_speed = speed;
        let own = node.core_info.as_ref().map(|c| c.core);
        let heard: Vec<HeardCore> = fresh
            .iter()
            .filter(|c| Some(c.core) != own && c.region != region)
            .map(|c| HeardCore {
                core: c.core,
                region: c.region,
                position: c.state.position,
                heading: c.heading,
            })
            .collect();
        let Some(core) = ctx.registry.core_for(v) else {
            return;
        };
        ctx.send(
            v,
            Dest::Unicast(core),
            Payload::MemberUpdate {
                region,
                state: me,
                history: my_hist,
                heard,
                aggregation,
            },
        );
    }

    fn core_periodic(&mut self, v: VehicleId, ctx: &mut Ctx) {
        let info = self.core_info(v, ctx);
        ctx.send(v, Dest::Broadcast, Payload::CoreBeacon(info));
        let now = ctx.now;
        let zeta = self.cfg.zeta;
        let cs = self.nodes[v.0 as usize].core.as_mut().expect("core state");
        if now + 1e-9 < cs.next_check || cs.replace_deadline.is_some() {
            return;
        }
        cs.next_check = now + zeta;
        self.core_check(v, ctx);
    }

    fn core_check(&mut self, v: VehicleId, ctx: &mut Ctx) {
        let now = ctx.now;
        let cfg = self.cfg.clone();
        let region = ctx.registry.region_of(v).expect("core has a region");
        let congested = cfg.is_congested(ctx.tti);
        let timeout = cfg.member_timeout + if congested { cfg.updating_interval } else { 0.0 };
        let cs = self.nodes[v.0 as usize].core.as_mut().expect("core state");
        cs.roster.retain(|_, m| now - m.last_heard <= timeout);
        let survivors: BTreeSet<VehicleId> = cs.roster.keys().copied().collect();
        let before = cs.prev_roster.len();
        let lost = cs.prev_roster.difference(&survivors).count();
        cs.prev_roster = survivors;
        if before > 0 && lost as f64 > cfg.replacement_loss_fraction * before as f64 {
            self.replace(v, region, ctx);
            return;
        }
        if self.aggregate(v, region, ctx) {
            return;
        }
        self.absorb_if_alone(v, region, ctx);
    }

    fn replace(&mut self, v: VehicleId, region: RegionId, ctx: &mut Ctx) {
        let cfg = self.cfg.clone();
        let cs = self.nodes[v.0 as usize].core.as_ref().expect("core state");
        let survivors: Vec<(VehicleId, VehicleState, History)> = cs
            .roster
            .iter()
            .filter_map(|(&id, m)| m.state.map(|s| (id, s, m.history.clone())))
            .collect();
        let mut best: Option<(f64, VehicleId)> = None;
        for (i, (id, s, h)) in survivors.iter().enumerate() {
            let others: Vec<&(VehicleId, VehicleState, History)> = survivors
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, o)| o)
                .collect();
            let linked = others
                .iter()
                .filter(|o| relative_distance(s, &o.1) <= cfg.comm_range)
                .count();
            if 2 * linked < others.len() {
                continue;
            }
            let score = if others.is_empty() {
                1.0
            } else {
                let lambda = others.iter().map(|o| ctx.lambda(h, &o.2)).sum::<f64>() / others.len() as f64;
                let states: Vec<VehicleState> = others.iter().map(|o| o.1).collect();
                competitive_threshold(s, &states, lambda, cfg.competitive_mode, self.scaling)
                    .expect("others nonempty")
            };
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, *id));
            }
        }
        match best {
            None => self.dissolve(region, "no_candidate", ctx),
            Some((_, winner)) => {
                let roster: Vec<VehicleId> = cs.roster.keys().copied().filter(|&m| m != winner).collect();
                let deadline = ctx.now + cfg.zeta;
                self.nodes[v.0 as usize].core.as_mut().unwrap().replace_deadline = Some(deadline);
                ctx.timer(deadline, v, Timer::ReplaceTimeout);
                ctx.send(v, Dest::Unicast(winner), Payload::ReplaceRequest { region, roster });
            }
        }
    }

    /// Observes overlap with every neighbouring region and fires at most one
    /// merge. Returns whether a merge request went out.
    fn aggregate(&mut self, v: VehicleId, region: RegionId, ctx: &mut Ctx) -> bool {
        let now = ctx.now;
        let cfg = self.cfg.clone();
        let congested = cfg.is_congested(ctx.tti);
        let me = ctx.motion[v.0 as usize];
        let window = 1.5 * cfg.updating_interval;
        let direct: BTreeMap<VehicleId, (Vec2, Vec2)> = self.nodes[v.0 as usize]
            .heard
            .values()
            .filter(|h| now - h.at <= window)
            .map(|h| (h.info.core, (h.info.state.position, h.info.heading)))
            .collect();
        let cs = self.nodes[v.0 as usize].core.as_mut().expect("core state");
        let gateways: Vec<(&VehicleId, &MemberInfo)> =
            cs.roster.iter().filter(|(_, m)| !m.heard.is_empty()).collect();
        // neighbour region -> (its core, gateways hearing it, best position/heading estimate)
        let mut seen: BTreeMap<RegionId, (VehicleId, usize, Vec2, Vec2)> = BTreeMap::new();
        for (_, m) in &gateways {
            for h in &m.heard {
                if h.region == region {
                    continue;
                }
                let e = seen
                    .entry(h.region)
                    .or_insert((h.core, 0, h.position, h.heading));
                e.1 += 1;
            }
        }
        let mut fire: Option<(RegionId, VehicleId, u32)> = None;
        let total = gateways.len();
        for (&other, &(other_core, hits, pos, heading)) in &seen {
            let (pos, heading) = direct.get(&other_core).copied().unwrap_or((pos, heading));
            let overlapping = hits as f64 > cfg.overlap_agg_fraction * total as f64;
            let gate = cs.debounce.entry(other).or_default();
            let open = gate.observe(overlapping);
            let streak = gate.streak();
            let close = me.position.distance(pos) <= cfg.comm_range / 2.0;
            let aligned = congested || same_direction(me.heading, heading);
            if open && close && aligned && fire.is_none() {
                fire = Some((other, other_core, streak));
            }
        }
        cs.debounce.retain(|r, g| {
            if !seen.contains_key(r) {
                g.reset();
            }
            seen.contains_key(r)
        });
        let Some((absorbed, absorbed_core, streak)) = fire else {
            return false;
        };
        let pick = cs
            .roster
            .iter()
            .filter(|(_, m)| m.heard.iter().any(|h| h.region == absorbed))
            .filter_map(|(&id, m)| m.aggregation.map(|a| (a, id)))
            .fold(None, |best: Option<(f64, VehicleId)>, (a, id)| match best {
                Some((b, _)) if b >= a => best,
                _ => Some((a, id)),
            });
        let Some((_, gateway)) = pick else {
            return false;
        };
        cs.debounce.remove(&absorbed);
        ctx.send(
            v,
            Dest::Unicast(gateway),
            Payload::MergeRequest {
                region,
                absorbed,
                absorbed_core,
                streak,
            },
        );
        true
    }

    fn absorb_if_alone(&mut self, v: VehicleId, region: RegionId, ctx: &mut Ctx) {
        if !self.cfg.absorb_singletons {
            return;
        }
        let now = ctx.now;
        let window = 1.5 * self.cfg.updating_interval;
        let congested = self.congested(ctx);
        let me = ctx.motion[v.0 as usize];
        let node = &mut self.nodes[v.0 as usize];
        let cs = node.core.as_mut().expect("core state");
        if !cs.roster.is_empty() || ctx.registry.region(region).is_some_and(|r| !r.member_ids.is_empty()) {
            cs.empty_checks = 0;
            return;
        }
        cs.empty_checks += 1;
        if cs.empty_checks < self.cfg.absorb_patience {
            return;
        }
        let populated = node.heard.values().any(|h| {
            now - h.at <= window
                && h.info.region != region
                && h.info.member_count > 0
                && (congested || same_direction(me.heading, h.info.heading))
        });
        if populated {
            self.dissolve(region, "absorbed", ctx);
        }
    }

    pub fn on_receive(&mut self, v: VehicleId, sender: VehicleId, payload: &Payload, ctx: &mut Ctx) {
        let now = ctx.now;
        let role = ctx.registry.role(v);
        match payload {
            Payload::Read { heading, .. } => match role {
                VehicleRole::Core => {
                    let mine = ctx.motion[v.0 as usize].heading;
                    if self.congested(ctx) || same_direction(mine, *heading) {
                        let info = self.core_info(v, ctx);
                        ctx.send(v, Dest::Broadcast, Payload::Roger(info));
                    }
                }
                VehicleRole::Unattached => {
                    let mine = ctx.motion[v.0 as usize].heading;
                    let congested = self.congested(ctx);
                    let node = self.node(v);
                    if sender < v && node.read_deadline.is_some() && (congested || same_direction(mine, *heading)) {
                        node.deferred = true;
                    }
                }
                _ => {}
            },
            Payload::Roger(info) => {
                let mine = ctx.motion[v.0 as usize].heading;
                let congested = self.congested(ctx);
                let node = self.node(v);
                node.heard.insert(
                    info.core,
                    Heard {
                        info: info.clone(),
                        at: now,
                    },
                );
                if role == VehicleRole::Unattached
                    && node.read_deadline.is_some()
                    && (congested || same_direction(mine, info.heading))
                {
                    node.rogers.insert(info.core, info.clone());
                }
            }
            Payload::CoopRequest {
                region,
                state,
                history,
                ..
            } => {
                if ctx.registry.leads(v, *region) {
                    let cs = self.node(v).core.as_mut().expect("core state");
                    cs.roster.insert(
                        sender,
                        MemberInfo {
                            last_heard: now,
                            state: Some(*state),
                            history: history.clone(),
                            heard: Vec::new(),
                            aggregation: None,
                        },
                    );
                    ctx.send(v, Dest::Unicast(sender), Payload::CoopAgreement { region: *region });
                }
            }
            Payload::CoopAgreement { region } => {
                let expected = self.nodes[v.0 as usize]
                    .join
                    .is_some_and(|(c, r, _)| c == sender && r == *region);
                if role == VehicleRole::Unattached
                    && expected
                    && ctx.registry.leads(sender, *region)
                    && ctx.registry.join(v, *region, now, ctx.log)
                {
                    let mine = ctx.motion[v.0 as usize].heading;
                    let node = self.node(v);
                    node.become_member(now);
                    if let Some(h) = node.heard.get(&sender) {
                        node.heading_sign = if same_direction(mine, h.info.heading) { 1 } else { -1 };
                        node.core_info = Some(h.info.clone());
                    }
                } else if role != VehicleRole::Unattached
                    || ctx.registry.region_of(v) != Some(*region)
                {
                    ctx.log.push(
                        now,
                        crate::events::EventKind::StaleAgreement,
                        Some(v),
                        Some(*region),
                        crate::detail!("core" = sender),
                    );
                }
            }
            Payload::ReplaceRequest { region, roster } => {
                if ctx.registry.leads(sender, *region)
                    && ctx.registry.is_member_of(v, *region)
                    && ctx.registry.replace_core(*region, v, now, ctx.log)
                {
                    let zeta = self.cfg.zeta;
                    let mut members: BTreeSet<VehicleId> = roster.iter().copied().collect();
                    members.insert(sender);
                    members.retain(|&m| ctx.registry.is_member_of(m, *region));
                    let old = self.node(sender);
                    old.become_member(now);
                    old.candidate_core = true;
                    old.heading_sign = 1;
                    let me = self.node(v);
                    me.become_member(now);
                    me.core = Some(CoreState::with_roster(now, zeta, members));
                    me.core_info = None;
                    ctx.send(v, Dest::Broadcast, Payload::RegionChangeBroadcast { region: *region, core: v });
                }
            }
            Payload::RegionChangeBroadcast { region, core } => {
                if role.is_member() && ctx.registry.region_of(v) == Some(*region) {
                    let node = self.node(v);
                    node.last_core_heard = now;
                    if node.core_info.as_ref().is_some_and(|c| c.core != *core) {
                        node.core_info = None;
                    }
                }
            }
            Payload::CoreBeacon(info) => {
                let mine = ctx.motion[v.0 as usize].heading;
                let congested = self.congested(ctx);
                let node = self.node(v);
                node.heard.insert(
                    info.core,
                    Heard {
                        info: info.clone(),
                        at: now,
                    },
                );
                // a beacon heard while waiting answers the READ like a ROGER
                if role == VehicleRole::Unattached
                    && node.read_deadline.is_some()
                    && (congested || same_direction(mine, info.heading))
                {
                    node.rogers.insert(info.core, info.clone());
                }
                if role.is_member() && ctx.registry.region_of(v) == Some(info.region) && ctx.registry.leads(info.core, info.region) {
                    node.last_core_heard = now;
                    node.heading_sign = if same_direction(mine, info.heading) { 1 } else { -1 };
                    node.core_info = Some(info.clone());
                }
            }
            Payload::MemberUpdate {
                region,
                state,
                history,
                heard,
                aggregation,
            } => {
                if ctx.registry.leads(v, *region) {
                    let cs = self.node(v).core.as_mut().expect("core state");
                    cs.roster.insert(
                        sender,
                        MemberInfo {
                            last_heard: now,
                            state: Some(*state),
                            history: history.clone(),
                            heard: heard.clone(),
                            aggregation: *aggregation,
                        },
                    );
                }
            }
            Payload::MergeRequest {
                region,
                absorbed,
                absorbed_core,
                streak,
            } => {
                if *streak < 2 {
                    self.violations
                        .push(format!("t={now}: merge of {absorbed} into {region} after {streak} period(s)"));
                }
                if !(ctx.registry.leads(sender, *region)
                    && ctx.registry.leads(*absorbed_core, *absorbed)
                    && ctx.registry.is_member_of(v, *region))
                {
                    return;
                }
                let Some(moved) = ctx.registry.merge(*region, *absorbed, v, now, *streak, ctx.log) else {
                    return;
                };
                let zeta = self.cfg.zeta;
                let members: Vec<VehicleId> = ctx
                    .registry
                    .region(*region)
                    .map(|r| r.member_ids.iter().copied().collect())
                    .unwrap_or_default();
                for u in moved {
                    if u == v {
                        continue;
                    }
                    let n = self.node(u);
                    let was_core = n.core.is_some();
                    n.become_member(now);
                    n.core_info = None;
                    if was_core {
                        n.candidate_core = true;
                    }
                }
                let me = self.node(v);
                me.become_member(now);
                me.core = Some(CoreState::with_roster(now, zeta, members));
                me.core_info = None;
                ctx.send(v, Dest::Broadcast, Payload::RegionChangeBroadcast { region: *region, core: v });
            }
            Payload::Leave { region } => {
                if ctx.registry.leads(v, *region) {
                    if let Some(cs) = self.node(v).core.as_mut() {
                        cs.roster.remove(&sender);
                        cs.prev_roster.remove(&sender);
                    }
                    ctx.send(v, Dest::Broadcast, Payload::RegionChangeBroadcast { region: *region, core: v });
                }
            }
            Payload::DataPacket(_) | Payload::Hello => {}
        }
    }

    /// Protocol-level invariants on top of the registry's.
    pub fn validate(&self, ctx: &Ctx) -> Vec<String> {
        let mut errs = self.violations.clone();
        for (i, n) in self.nodes.iter().enumerate() {
            let v = VehicleId(i as u32);
            let role = ctx.registry.role(v);
            if n.read_deadline.is_some() && role != VehicleRole::Unattached {
                errs.push(format!("{v} has a READ outstanding while {role:?}"));
            }
            if (role == VehicleRole::Core) != n.core.is_some() {
                errs.push(format!("{v} core state disagrees with role {role:?}"));
            }
            if role == VehicleRole::Gateway && n.gateway_cores < 2 {
                errs.push(format!("{v} is a gateway hearing {} core(s)", n.gateway_cores));
            }
        }
        errs
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;
    use crate::events::{EventKind, EventLog};
    use crate::protocol::Registry;
    use crate::road::MotionSnapshot;
    use crate::srp::{Normalizer, Similarity};
    use crate::types::{SegmentId, Trajectory};
    use proptest::prelude::*;

    fn east(x: f64, y: f64, speed: f64) -> MotionSnapshot {
        let heading = Vec2::new(1.0, 0.0);
        MotionSnapshot {
            position: Vec2::new(x, y),
            velocity: Vec2::new(speed, 0.0),
            acceleration: Vec2::ZERO,
            heading,
            segment: SegmentId(0),
            progress: 0.5,
            distance_to_exit: 1000.0,
            next_heading: heading,
            segment_visit: 0,
        }
    }

    /// Lossless, instantaneous radio over fixed positions.
    struct Bench {
        rcms: Rcms,
        motion: Vec<MotionSnapshot>,
        histories: Vec<Trajectory>,
        similarity: Similarity,
        registry: Registry,
        log: EventLog,
        timers: Vec<(f64, VehicleId, Timer)>,
        now: f64,
        tti: f64,
        range: f64,
        /// Offset of each vehicle's periodic handler within the interval.
        phase: Vec<f64>,
    }

    impl Bench {
        fn new(cfg: ProtocolConfig, motion: Vec<MotionSnapshot>) -> Self {
            let n = motion.len();
            Self {
                range: cfg.comm_range,
                rcms: Rcms::new(cfg, 30.0, n),
                histories: (0..n).map(|i| Trajectory::new(VehicleId(i as u32), 20).unwrap()).collect(),
                similarity: Similarity::history(Normalizer::for_scenario(30.0, 3.0), 10),
                registry: Registry::new(n),
                log: EventLog::new(),
                timers: Vec::new(),
                now: 0.0,
                tti: 1.0,
                phase: vec![0.0; n],
                motion,
            }
        }

        fn with(&mut self, f: impl FnOnce(&mut Rcms, &mut Ctx)) {
            let mut outbox = Vec::new();
            let mut ctx = Ctx {
                now: self.now,
                tti: self.tti,
                motion: &self.motion,
                histories: &self.histories,
                similarity: &self.similarity,
                registry: &mut self.registry,
                log: &mut self.log,
                outbox: &mut outbox,
                timers: &mut self.timers,
            };
            f(&mut self.rcms, &mut ctx);
            let mut queue: VecDeque<_> = outbox.drain(..).collect();
            while let Some((from, dest, payload)) = queue.pop_front() {
                let at = self.motion[from.0 as usize].position;
                let to: Vec<VehicleId> = match dest {
                    Dest::Broadcast => (0..self.motion.len() as u32).map(VehicleId).filter(|&u| u != from).collect(),
                    Dest::Unicast(u) => vec![u],
                };
                for u in to {
                    if self.motion[u.0 as usize].position.distance(at) > self.range {
                        continue;
                    }
                    let mut ctx = Ctx {
                        now: self.now,
                        tti: self.tti,
                        motion: &self.motion,
                        histories: &self.histories,
                        similarity: &self.similarity,
                        registry: &mut self.registry,
                        log: &mut self.log,
                        outbox: &mut outbox,
                        timers: &mut self.timers,
                    };
                    self.rcms.on_receive(u, from, &payload, &mut ctx);
                    queue.extend(outbox.drain(..));
                }
            }
        }

        /// Fires due timers, then every vehicle's periodic handler.
        fn round(&mut self, t: f64) {
            self.now = t;
            loop {
                self.timers.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let Some(i) = self.timers.iter().position(|&(at, _, _)| at <= t + 1e-9) else {
                    break;
                };
                let (_, v, timer) = self.timers.remove(i);
                self.with(|r, ctx| r.on_timer(v, timer, ctx));
            }
            for i in 0..self.motion.len() {
                let k = t - self.phase[i];
                if k > -1e-9 && (k - k.round()).abs() < 1e-9 {
                    self.with(|r, ctx| r.on_periodic(VehicleId(i as u32), ctx));
                }
            }
            let errs = self.registry.validate();
            assert!(errs.is_empty(), "{errs:?}");
        }

        fn run(&mut self, from: f64, to: f64) {
            let mut t = from;
            while t <= to + 1e-9 {
                self.round(t);
                t += 0.25;
            }
        }

        fn promote(&mut self, v: u32) {
            self.with(|r, ctx| r.promote(VehicleId(v), ctx));
        }

        fn role(&self, v: u32) -> VehicleRole {
            self.registry.role(VehicleId(v))
        }

        fn count(&self, kind: EventKind) -> usize {
            self.log.events().iter().filter(|e| e.kind == kind).count()
        }
    }

    #[test]
    fn lone_vehicle_promotes_after_three_silent_rounds() {
        let mut b = Bench::new(ProtocolConfig::default(), vec![east(0.0, 0.0, 10.0)]);
        b.run(0.0, 5.0);
        assert_eq!(b.role(0), VehicleRole::Unattached);
        b.run(6.0, 6.0);
        assert_eq!(b.role(0), VehicleRole::Core);
    }

    #[test]
    fn neighbours_form_one_region() {
        let motion = vec![east(0.0, 0.0, 10.0), east(50.0, 0.0, 10.0)];
        let mut b = Bench::new(ProtocolConfig::default(), motion);
        b.phase[1] = 0.5;
        b.run(0.0, 12.0);
        assert_eq!(b.role(0), VehicleRole::Core);
        assert_eq!(b.role(1), VehicleRole::Ordinary);
        assert_eq!(b.registry.region_count(), 1);
        assert_eq!(b.registry.core_for(VehicleId(1)), Some(VehicleId(0)));
    }

    #[test]
    fn joins_existing_core() {
        let motion = vec![east(0.0, 0.0, 10.0), east(100.0, 0.0, 10.0)];
        let mut b = Bench::new(ProtocolConfig::default(), motion);
        b.promote(0);
        b.run(0.0, 2.0);
        assert_eq!(b.role(1), VehicleRole::Ordinary);
        assert_eq!(b.registry.region_of(VehicleId(1)), b.registry.region_of(VehicleId(0)));
    }

    #[test]
    fn oncoming_vehicle_is_not_answered_in_smooth_traffic() {
        let mut oncoming = east(100.0, 5.0, 10.0);
        oncoming.heading = Vec2::new(-1.0, 0.0);
        oncoming.velocity = Vec2::new(-10.0, 0.0);
        oncoming.next_heading = oncoming.heading;
        let mut b = Bench::new(ProtocolConfig::default(), vec![east(0.0, 0.0, 10.0), oncoming]);
        b.promote(0);
        b.run(0.0, 6.0);
        assert_eq!(b.role(1), VehicleRole::Core);
        assert_eq!(b.registry.region_count(), 2);

        let mut b = Bench::new(ProtocolConfig::default(), vec![east(0.0, 0.0, 10.0), oncoming]);
        b.tti = 2.0;
        b.promote(0);
        b.run(0.0, 2.0);
        assert_eq!(b.role(1), VehicleRole::Ordinary);
    }

    fn coop(me: &MotionSnapshot, core: &MotionSnapshot) -> f64 {
        let s = |m: &MotionSnapshot| VehicleState::new(VehicleId(0), m.position, m.velocity, 0.0);
        let cfg = ProtocolConfig::default();
        cooperative_threshold(&s(me), &s(core), 1.0, 1.0, cfg.tti_congestion_threshold, cfg.scaling(30.0))
    }

    #[test]
    fn picks_the_most_cooperative_core() {
        let motion = vec![east(0.0, 0.0, 14.0), east(160.0, 0.0, 10.5), east(100.0, 0.0, 10.0)];
        assert!(coop(&motion[2], &motion[1]) > coop(&motion[2], &motion[0]));
        let mut b = Bench::new(ProtocolConfig::default(), motion);
        b.promote(0);
        b.promote(1);
        b.run(0.0, 2.0);
        assert_eq!(b.registry.core_for(VehicleId(2)), Some(VehicleId(1)));
    }

    #[test]
    fn tie_goes_to_the_lower_core_id() {
        let motion = vec![east(50.0, 0.0, 10.0), east(150.0, 0.0, 10.0), east(100.0, 0.0, 10.0)];
        assert_eq!(coop(&motion[2], &motion[0]), coop(&motion[2], &motion[1]));
        let mut b = Bench::new(ProtocolConfig::default(), motion);
        b.promote(0);
        b.promote(1);
        b.run(0.0, 2.0);
        assert_eq!(b.registry.core_for(VehicleId(2)), Some(VehicleId(0)));
    }

    /// A core with ten members, `lost` of which drive out of range.
    fn lose_members(lost: usize) -> Bench {
        let mut motion = vec![east(0.0, 0.0, 10.0)];
        motion.extend((1..=10).map(|i| east(10.0 * i as f64, 3.0, 10.0)));
        let mut cfg = ProtocolConfig::default();
        cfg.absorb_singletons = false;
        let mut b = Bench::new(cfg, motion);
        b.promote(0);
        b.run(0.0, 6.0);
        assert!((1..=10).all(|i| b.registry.core_for(VehicleId(i)) == Some(VehicleId(0))));
        assert_eq!(b.count(EventKind::CoreReplaced), 0);
        for i in 1..=lost {
            b.motion[i].position = Vec2::new(5000.0 + 1000.0 * i as f64, 0.0);
        }
        b.run(7.0, 16.0);
        b
    }

    #[test]
    fn one_lost_member_keeps_the_core() {
        let b = lose_members(1);
        assert_eq!(b.count(EventKind::CoreReplaced), 0);
        assert_eq!(b.role(0), VehicleRole::Core);
    }

    #[test]
    fn majority_lost_hands_the_region_over() {
        let b = lose_members(6);
        assert_eq!(b.count(EventKind::CoreReplaced), 1);
        let region = b.registry.region_of(VehicleId(0)).unwrap();
        let core = b.registry.core_of(region).unwrap();
        assert!((7..=10).contains(&core.0), "new core {core}");
        assert_eq!(b.role(0), VehicleRole::Ordinary);
    }

    #[test]
    fn voluntary_leaves_do_not_trigger_replacement() {
        let mut motion = vec![east(0.0, 0.0, 10.0)];
        motion.extend((1..=4).map(|i| east(10.0 * i as f64, 3.0, 10.0)));
        let mut b = Bench::new(ProtocolConfig::default(), motion);
        b.promote(0);
        b.run(0.0, 6.0);
        for i in 1..=3 {
            b.motion[i].distance_to_exit = 20.0;
            b.motion[i].next_heading = Vec2::new(0.0, 1.0);
        }
        b.run(7.0, 7.0);
        assert!((1..=3).all(|i| b.role(i) == VehicleRole::Unattached));
        let turns = b
            .log
            .events()
            .iter()
            .filter(|e| e.kind == EventKind::Left && e.detail.contains("turn"))
            .count();
        assert_eq!(turns, 3);
        b.run(8.0, 12.0);
        assert_eq!(b.count(EventKind::CoreReplaced), 0);
        assert_eq!(b.role(0), VehicleRole::Core);
    }

    #[test]
    fn member_following_the_core_stays() {
        let motion = vec![east(0.0, 0.0, 10.0), east(40.0, 3.0, 10.0)];
        let mut b = Bench::new(ProtocolConfig::default(), motion);
        b.promote(0);
        b.run(0.0, 3.0);
        b.motion[1].distance_to_exit = 20.0;
        b.run(4.0, 6.0);
        assert_eq!(b.role(1), VehicleRole::Ordinary);
        assert_eq!(b.count(EventKind::Left), 0);
    }

    /// Two cores `gap` apart, each with one member in the middle hearing both.
    fn overlapping(gap: f64) -> Bench {
        let motion = vec![
            east(0.0, 0.0, 10.0),
            east(gap, 0.0, 10.0),
            east(gap / 2.0 - 5.0, 3.0, 10.0),
            east(gap / 2.0 + 5.0, 3.0, 10.0),
        ];
        let mut cfg = ProtocolConfig::default();
        cfg.absorb_singletons = false;
        let mut b = Bench::new(cfg, motion);
        b.promote(0);
        b.promote(1);
        b.run(0.0, 20.0);
        b
    }

    #[test]
    fn close_overlapping_regions_merge() {
        let b = overlapping(100.0);
        assert!(b.count(EventKind::Merged) >= 1);
        assert_eq!(b.registry.region_count(), 1);
    }

    #[test]
    fn distant_cores_do_not_merge() {
        let b = overlapping(200.0);
        assert_eq!(b.count(EventKind::Merged), 0);
        assert_eq!(b.registry.region_count(), 2);
    }

    #[test]
    fn memberless_core_yields_to_populated_region() {
        let motion = vec![east(0.0, 0.0, 10.0), east(200.0, 0.0, 10.0), east(30.0, 3.0, 10.0)];
        let mut b = Bench::new(ProtocolConfig::default(), motion);
        b.promote(0);
        b.promote(1);
        b.run(0.0, 30.0);
        assert!(b.log.events().iter().any(|e| e.kind == EventKind::RegionDissolved && e.detail.contains("absorbed")));
        assert_eq!(b.registry.core_for(VehicleId(1)), Some(VehicleId(0)));
    }

    #[test]
    fn validator_is_clean_after_a_busy_run() {
        let motion: Vec<_> = (0..8).map(|i| east(35.0 * i as f64, 3.0 * (i % 2) as f64, 9.0 + i as f64 * 0.3)).collect();
        let mut b = Bench::new(ProtocolConfig::default(), motion);
        b.run(0.0, 20.0);
        let mut outbox = Vec::new();
        let ctx = Ctx {
            now: b.now,
            tti: b.tti,
            motion: &b.motion,
            histories: &b.histories,
            similarity: &b.similarity,
            registry: &mut b.registry,
            log: &mut b.log,
            outbox: &mut outbox,
            timers: &mut b.timers,
        };
        assert_eq!(b.rcms.validate(&ctx), Vec::<String>::new());
        assert!(b.registry.region_count() >= 1);
    }

    proptest! {
        #[test]
        fn debounce_opens_after_required_consecutive_overlaps(
            required in 1u32..5,
            obs in prop::collection::vec(any::<bool>(), 0..40),
        ) {
            let mut d = OverlapDebounce::new(required);
            for (i, &o) in obs.iter().enumerate() {
                let trailing = obs[..=i].iter().rev().take_while(|&&x| x).count() as u32;
                prop_assert_eq!(d.observe(o), trailing >= required);
                prop_assert_eq!(d.streak(), trailing);
            }
        }
    }
}
