//! Simplified comparison clusterers. Both elect heads centrally once per
//! tick from the true kinematics, then the engine reconciles the result
//! into the region registry so the same metrics apply.
//!
//! Election is greedy in priority order: current heads first, then by the
//! scheme's metric, then by id. A vehicle becomes a head when no head chosen
//! before it is a neighbour, so heads are never neighbours and every vehicle
//! ends up next to exactly one chosen head.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::types::{VehicleId, Vec2};

/// Clustering scheme of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Rcms,
    VmascLike,
    MscaLike,
}

/// Data packet forwarding of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Router {
    #[default]
    Rcms,
    CbdrpLike,
    GpsrLike,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Rcms => "rcms",
            Scheme::VmascLike => "vmasc_like",
            Scheme::MscaLike => "msca_like",
        }
    }
}

impl Router {
    pub fn as_str(self) -> &'static str {
        match self {
            Router::Rcms => "rcms",
            Router::CbdrpLike => "cbdrp_like",
            Router::GpsrLike => "gpsr_like",
        }
    }
}

/// Kinematics the clusterers look at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kin {
    pub position: Vec2,
    pub velocity: Vec2,
    pub heading: Vec2,
}

/// Head per vehicle; heads map to themselves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub head_of: Vec<VehicleId>,
}

impl Assignment {
    pub fn heads(&self) -> BTreeSet<VehicleId> {
        self.head_of
            .iter()
            .enumerate()
            .filter(|&(i, h)| h.0 as usize == i)
            .map(|(_, &h)| h)
            .collect()
    }
}

fn directional_neighbors(kin: &[Kin], range: f64) -> Vec<Vec<usize>> {
    let n = kin.len();
    let mut out = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if kin[i].position.distance(kin[j].position) <= range
                && kin[i].heading.dot(kin[j].heading) > 1e-9
            {
                out[i].push(j);
                out[j].push(i);
            }
        }
    }
    out
}

/// Time until two vehicles drift out of range at constant velocity;
/// infinite when they never do, zero when already apart.
pub fn link_lifetime(a: &Kin, b: &Kin, range: f64) -> f64 {
    let p = b.position - a.position;
    let v = b.velocity - a.velocity;
    let c = p.dot(p) - range * range;
    if c > 0.0 {
        return 0.0;
    }
    let vv = v.dot(v);
    if vv < 1e-12 {
        return f64::INFINITY;
    }
    let pv = p.dot(v);
    // positive root of |p + v t|^2 = range^2
    (-pv + (pv * pv - vv * c).sqrt()) / vv
}

fn elect(
    n: usize,
    nbrs: &[Vec<usize>],
    metric: &[f64],
    incumbents: &BTreeSet<VehicleId>,
    affinity: impl Fn(usize, usize) -> f64,
) -> Assignment {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ia = !incumbents.contains(&VehicleId(a as u32));
        let ib = !incumbents.contains(&VehicleId(b as u32));
        ia.cmp(&ib)
            .then(metric[a].total_cmp(&metric[b]))
            .then(a.cmp(&b))
    });
    let mut is_head = vec![false; n];
    for &v in &order {
        if !nbrs[v].iter().any(|&u| is_head[u]) {
            is_head[v] = true;
        }
    }
    let head_of = (0..n)
        .map(|v| {
            if is_head[v] {
                return VehicleId(v as u32);
            }
            let best = nbrs[v]
                .iter()
                .copied()
                .filter(|&h| is_head[h])
                .min_by(|&a, &b| affinity(v, a).total_cmp(&affinity(v, b)).then(a.cmp(&b)))
                .expect("greedy election covers every vehicle");
            VehicleId(best as u32)
        })
        .collect();
    Assignment { head_of }
}

/// Relative-mobility clustering: the metric is the mean relative speed to
/// same-direction neighbours; members pick the head they move most alike.
pub fn vmasc_like_step(kin: &[Kin], range: f64, incumbents: &BTreeSet<VehicleId>) -> Assignment {
    let nbrs = directional_neighbors(kin, range);
    let rel = |a: usize, b: usize| (kin[a].velocity - kin[b].velocity).norm();
    let metric: Vec<f64> = (0..kin.len())
        .map(|v| {
            if nbrs[v].is_empty() {
                0.0
            } else {
                nbrs[v].iter().map(|&u| rel(v, u)).sum::<f64>() / nbrs[v].len() as f64
            }
        })
        .collect();
    elect(kin.len(), &nbrs, &metric, incumbents, rel)
}

/// Centre-position clustering over stable links: only same-direction
/// neighbours whose predicted link lifetime reaches `min_lifetime` count.
/// The metric is the mean distance to those neighbours; members pick the
/// head with the longest link lifetime.
pub fn msca_like_step(
    kin: &[Kin],
    range: f64,
    min_lifetime: f64,
    incumbents: &BTreeSet<VehicleId>,
) -> Assignment {
    let mut nbrs = directional_neighbors(kin, range);
    for (v, list) in nbrs.iter_mut().enumerate() {
        list.retain(|&u| link_lifetime(&kin[v], &kin[u], range) >= min_lifetime);
    }
    let metric: Vec<f64> = (0..kin.len())
        .map(|v| {
            if nbrs[v].is_empty() {
                0.0
            } else {
                nbrs[v]
                    .iter()
                    .map(|&u| kin[v].position.distance(kin[u].position))
                    .sum::<f64>()
                    / nbrs[v].len() as f64
            }
        })
        .collect();
    elect(kin.len(), &nbrs, &metric, incumbents, |v, h| {
        -link_lifetime(&kin[v], &kin[h], range)
    })
}
