//! Ground-truth region membership. Every change goes through here so the
//! event log and the global invariants stay in step with the protocol.

use std::collections::BTreeMap;

use crate::detail;
use crate::events::{EventKind, EventLog};
use crate::types::{Region, RegionId, VehicleId, VehicleRole};

#[derive(Debug, Clone)]
pub struct Registry {
    regions: BTreeMap<RegionId, Region>,
    roles: Vec<VehicleRole>,
    membership: Vec<Option<RegionId>>,
    next_region: u32,
}

impl Registry {
    pub fn new(vehicles: usize) -> Self {
        Self {
            regions: BTreeMap::new(),
            roles: vec![VehicleRole::Unattached; vehicles],
            membership: vec![None; vehicles],
            next_region: 0,
        }
    }

    pub fn vehicle_count(&self) -> usize {
        self.roles.len()
    }

    pub fn role(&self, v: VehicleId) -> VehicleRole {
        self.roles[v.0 as usize]
    }

    pub fn region_of(&self, v: VehicleId) -> Option<RegionId> {
        self.membership[v.0 as usize]
    }

    pub fn region(&self, r: RegionId) -> Option<&Region> {
        self.regions.get(&r)
    }

    /// Alive regions in id order.
    pub fn regions(&self) -> impl Iterator<Item = &Region> {
        self.regions.values()
    }

    pub fn region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn core_of(&self, r: RegionId) -> Option<VehicleId> {
        self.regions.get(&r).map(|g| g.core_id)
    }

    /// Core of the region `v` belongs to (itself for a core).
    pub fn core_for(&self, v: VehicleId) -> Option<VehicleId> {
        self.region_of(v).and_then(|r| self.core_of(r))
    }

    /// Whether `core` currently leads `region`.
    pub fn leads(&self, core: VehicleId, region: RegionId) -> bool {
        self.core_of(region) == Some(core)
    }

    pub fn is_member_of(&self, v: VehicleId, region: RegionId) -> bool {
        self.role(v).is_member() && self.region_of(v) == Some(region)
    }

    fn set(&mut self, v: VehicleId, role: VehicleRole, region: Option<RegionId>) {
        self.roles[v.0 as usize] = role;
        self.membership[v.0 as usize] = region;
    }

    /// Makes an unattached vehicle the core of a fresh region.
    pub fn create(&mut self, core: VehicleId, now: f64, tag: &str, log: &mut EventLog) -> RegionId {
        assert_eq!(self.role(core), VehicleRole::Unattached, "{core} is already attached");
        let id = RegionId(self.next_region);
        self.next_region += 1;
        self.regions.insert(id, Region::new(id, core, now));
        self.set(core, VehicleRole::Core, Some(id));
        log.push(now, EventKind::RegionCreated, Some(core), Some(id), detail!("tag" = tag));
        id
    }

    /// Attaches an unattached vehicle to an alive region as an ordinary member.
    pub fn join(&mut self, v: VehicleId, r: RegionId, now: f64, log: &mut EventLog) -> bool {
        if self.role(v) != VehicleRole::Unattached {
            return false;
        }
        let Some(region) = self.regions.get_mut(&r) else {
            return false;
        };
        region.member_ids.insert(v);
        self.set(v, VehicleRole::Ordinary, Some(r));
        log.push(now, EventKind::Joined, Some(v), Some(r), String::new());
        true
    }

    /// Detaches a member.
    pub fn leave(&mut self, v: VehicleId, now: f64, reason: &str, log: &mut EventLog) -> bool {
        if !self.role(v).is_member() {
            return false;
        }
        let r = self.region_of(v).expect("member has a region");
        let region = self.regions.get_mut(&r).expect("member region alive");
        region.member_ids.remove(&v);
        region.gateway_ids.remove(&v);
        self.set(v, VehicleRole::Unattached, None);
        log.push(now, EventKind::Left, Some(v), Some(r), detail!("reason" = reason));
        true
    }

    pub fn set_gateway(&mut self, v: VehicleId, gateway: bool) {
        if !self.role(v).is_member() {
            return;
        }
        let r = self.region_of(v).expect("member has a region");
        let region = self.regions.get_mut(&r).expect("member region alive");
        if gateway {
            region.gateway_ids.insert(v);
            self.roles[v.0 as usize] = VehicleRole::Gateway;
        } else {
            region.gateway_ids.remove(&v);
            self.roles[v.0 as usize] = VehicleRole::Ordinary;
        }
    }

    /// Hands the region to one of its members; the former core stays on as
    /// an ordinary member.
    pub fn replace_core(&mut self, r: RegionId, new_core: VehicleId, now: f64, log: &mut EventLog) -> bool {
        if !self.is_member_of(new_core, r) {
            return false;
        }
        let region = self.regions.get_mut(&r).expect("checked alive");
        let old = region.core_id;
        region.member_ids.remove(&new_core);
        region.gateway_ids.remove(&new_core);
        region.member_ids.insert(old);
        region.core_id = new_core;
        self.set(new_core, VehicleRole::Core, Some(r));
        self.set(old, VehicleRole::Ordinary, Some(r));
        log.push(now, EventKind::CoreReplaced, Some(new_core), Some(r), detail!("old" = old));
        true
    }

    /// Ends a region; every vehicle in it becomes unattached.
    pub fn dissolve(&mut self, r: RegionId, now: f64, reason: &str, log: &mut EventLog) -> Vec<VehicleId> {
        let Some(region) = self.regions.remove(&r) else {
            return Vec::new();
        };
        let mut out = vec![region.core_id];
        out.extend(region.member_ids.iter().copied());
        for &v in &out {
            self.set(v, VehicleRole::Unattached, None);
        }
        log.push(
            now,
            EventKind::RegionDissolved,
            Some(region.core_id),
            Some(r),
            detail!("reason" = reason, "lifetime" = now - region.created_at),
        );
        out
    }

    /// Folds `absorbed` into `surviving` under `new_core`, a member of
    /// `surviving`. Both former cores become ordinary members. Returns the
    /// vehicles whose region or core changed.
    pub fn merge(
        &mut self,
        surviving: RegionId,
        absorbed: RegionId,
        new_core: VehicleId,
        now: f64,
        streak: u32,
        log: &mut EventLog,
    ) -> Option<Vec<VehicleId>> {
        if surviving == absorbed
            || !self.regions.contains_key(&absorbed)
            || !self.is_member_of(new_core, surviving)
        {
            return None;
        }
        let gone = self.regions.remove(&absorbed).expect("checked alive");
        let region = self.regions.get_mut(&surviving).expect("checked alive");
        let old_core = region.core_id;
        region.member_ids.remove(&new_core);
        region.gateway_ids.remove(&new_core);
        region.member_ids.insert(old_core);
        region.member_ids.insert(gone.core_id);
        region.member_ids.extend(gone.member_ids.iter().copied());
        region.core_id = new_core;
        // gateway status is re-derived by each member under the new core
        region.gateway_ids.clear();
        let moved: Vec<VehicleId> = region.member_ids.iter().copied().collect();
        for &v in &moved {
            self.roles[v.0 as usize] = VehicleRole::Ordinary;
            self.membership[v.0 as usize] = Some(surviving);
        }
        self.set(new_core, VehicleRole::Core, Some(surviving));
        log.push(
            now,
            EventKind::Merged,
            Some(new_core),
            Some(surviving),
            detail!("absorbed" = gone.region_id, "streak" = streak),
        );
        log.push(
            now,
            EventKind::RegionDissolved,
            Some(gone.core_id),
            Some(absorbed),
            detail!("reason" = "merged", "lifetime" = now - gone.created_at),
        );
        let mut out = moved;
        out.push(new_core);
        Some(out)
    }

    /// Checks the global membership invariants; returns one message per
    /// violation.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut seen = vec![0u32; self.roles.len()];
        for region in self.regions.values() {
            if let Err(e) = region.check() {
                errs.push(e);
            }
            let r = region.region_id;
            let c = region.core_id;
            seen[c.0 as usize] += 1;
            if self.role(c) != VehicleRole::Core || self.region_of(c) != Some(r) {
                errs.push(format!("core {c} of {r} has role {:?} in {:?}", self.role(c), self.region_of(c)));
            }
            for &m in &region.member_ids {
                seen[m.0 as usize] += 1;
                if !self.role(m).is_member() || self.region_of(m) != Some(r) {
                    errs.push(format!("member {m} of {r} has role {:?} in {:?}", self.role(m), self.region_of(m)));
                }
                let gw = region.gateway_ids.contains(&m);
                if gw != (self.role(m) == VehicleRole::Gateway) {
                    errs.push(format!("gateway flag of {m} in {r} disagrees with its role"));
                }
            }
        }
        for (i, &count) in seen.iter().enumerate() {
            let v = VehicleId(i as u32);
            let attached = self.role(v).is_attached();
            if count > 1 {
                errs.push(format!("{v} appears in {count} regions"));
            }
            if attached != (count == 1) {
                errs.push(format!("{v} is {:?} but listed in {count} regions", self.role(v)));
            }
            if attached != self.region_of(v).is_some() {
                errs.push(format!("{v} role {:?} with region {:?}", self.role(v), self.region_of(v)));
            }
        }
        errs
    }
}
