//! Next-hop selection for data packets.
//!
//! The region router runs a shortest expected-delay search over the region
//! overlay on the current topology snapshot. The baseline routers are
//! greedy geographic variants over the neighbours the caller passes in.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use super::DeliveryModel;
use crate::error::RadioError;
use crate::types::{RegionId, VehicleId, VehicleRole, Vec2};

/// Per-vehicle cluster view used by the routers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeView {
    pub position: Vec2,
    pub role: VehicleRole,
    pub region: Option<RegionId>,
    /// Core (or cluster head) the vehicle belongs to; itself for cores.
    pub core: Option<VehicleId>,
}

/// Whether `a` may hand a packet to `b` on the region overlay. Inside a
/// region traffic passes through the core; vehicles of different regions
/// may hand over directly. An unattached vehicle is a region of its own.
fn overlay_link(nodes: &[NodeView], a: usize, b: usize) -> bool {
    let (na, nb) = (&nodes[a], &nodes[b]);
    match (na.region, nb.region) {
        (Some(ra), Some(rb)) if ra == rb => {
            na.core == Some(VehicleId(b as u32)) || nb.core == Some(VehicleId(a as u32))
        }
        _ => true,
    }
}

#[derive(PartialEq)]
struct Entry {
    cost: f64,
    hops: u32,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, o: &Self) -> Ordering {
        // min-heap on (cost, hops, node)
        o.cost
            .total_cmp(&self.cost)
            .then(o.hops.cmp(&self.hops))
            .then(o.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Minimum expected-delay path over the region overlay, including
/// both endpoints. `[src]` when `src == dst`.
pub fn overlay_path(
    nodes: &[NodeView],
    model: &DeliveryModel,
    src: VehicleId,
    dst: VehicleId,
) -> Result<Vec<VehicleId>, RadioError> {
    overlay_path_avoiding(nodes, model, src, dst, &[])
}

/// As [`overlay_path`], never using `avoid` as the first hop.
pub fn overlay_path_avoiding(
    nodes: &[NodeView],
    model: &DeliveryModel,
    src: VehicleId,
    dst: VehicleId,
    avoid: &[VehicleId],
) -> Result<Vec<VehicleId>, RadioError> {
    let n = nodes.len();
    let (s, d) = (src.0 as usize, dst.0 as usize);
    for v in [src, dst] {
        if v.0 as usize >= n {
            return Err(RadioError::UnknownVehicle(v));
        }
    }
    if s == d {
        return Ok(vec![src]);
    }
    let mut best = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    best[s] = 0.0;
    heap.push(Entry {
        cost: 0.0,
        hops: 0,
        node: s,
    });
    while let Some(Entry { cost, hops, node }) = heap.pop() {
        if cost > best[node] {
            continue;
        }
        if node == d {
            break;
        }
        // only the endpoints may be passed through if they are plain members
        for next in 0..n {
            if next == node || node == s && avoid.contains(&VehicleId(next as u32)) {
                continue;
            }
            let Some(w) = model.expected_hop_delay(nodes[node].position.distance(nodes[next].position)) else {
                continue;
            };
            if !overlay_link(nodes, node, next) {
                continue;
            }
            let c = cost + w;
            if c < best[next] {
                best[next] = c;
                prev[next] = node;
                heap.push(Entry {
                    cost: c,
                    hops: hops + 1,
                    node: next,
                });
            }
        }
    }
    if !best[d].is_finite() {
        return Err(RadioError::NoRoute { from: src, to: dst });
    }
    let mut path = vec![dst];
    let mut at = d;
    while at != s {
        at = prev[at];
        path.push(VehicleId(at as u32));
    }
    path.reverse();
    Ok(path)
}

/// Hop count of the shortest overlay path found by breadth-first search,
/// ignoring link quality.
pub fn overlay_hops(nodes: &[NodeView], range: f64, src: VehicleId, dst: VehicleId) -> Option<usize> {
    let (s, d) = (src.0 as usize, dst.0 as usize);
    let mut dist = vec![usize::MAX; nodes.len()];
    dist[s] = 0;
    let mut q = VecDeque::from([s]);
    while let Some(u) = q.pop_front() {
        if u == d {
            return Some(dist[u]);
        }
        for v in 0..nodes.len() {
            if dist[v] == usize::MAX
                && nodes[u].position.distance(nodes[v].position) <= range
                && overlay_link(nodes, u, v)
            {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    None
}

/// Greedy geographic next hop: the neighbour closest to the destination
/// among those strictly closer than the holder. The destination itself wins
/// when in range. `None` means no progress is possible.
pub fn greedy_next_hop(
    positions: &[Vec2],
    neighbors: &[VehicleId],
    holder: VehicleId,
    dst: VehicleId,
) -> Option<VehicleId> {
    if neighbors.contains(&dst) {
        return Some(dst);
    }
    let target = positions[dst.0 as usize];
    let mut best = positions[holder.0 as usize].distance(target);
    let mut pick = None;
    for &v in neighbors {
        let d = positions[v.0 as usize].distance(target);
        if d < best {
            best = d;
            pick = Some(v);
        }
    }
    pick
}

/// Cluster-head directional forwarding: a member hands the packet to its
/// head first; afterwards forwarding is greedy with heads preferred among
/// the neighbours that make progress.
pub fn head_next_hop(
    nodes: &[NodeView],
    neighbors: &[VehicleId],
    holder: VehicleId,
    dst: VehicleId,
    first_hop: bool,
) -> Option<VehicleId> {
    if neighbors.contains(&dst) {
        return Some(dst);
    }
    let me = &nodes[holder.0 as usize];
    if first_hop && me.role != VehicleRole::Core {
        return me.core.filter(|c| neighbors.contains(c));
    }
    let target = nodes[dst.0 as usize].position;
    let mine = me.position.distance(target);
    let progress = |v: &VehicleId| nodes[v.0 as usize].position.distance(target) < mine;
    let closest = |heads_only: bool| {
        neighbors
            .iter()
            .filter(|v| progress(v))
            .filter(|v| !heads_only || nodes[v.0 as usize].role == VehicleRole::Core)
            .min_by(|a, b| {
                let da = nodes[a.0 as usize].position.distance(target);
                let db = nodes[b.0 as usize].position.distance(target);
                da.total_cmp(&db).then(a.cmp(b))
            })
            .copied()
    };
    closest(true).or_else(|| closest(false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radio::neighbors;
    use proptest::prelude::{prop_assert_eq, proptest};

    fn node(x: f64, y: f64, role: VehicleRole, region: Option<u32>, core: Option<u32>) -> NodeView {
        NodeView {
            position: Vec2::new(x, y),
            role,
            region: region.map(RegionId),
            core: core.map(VehicleId),
        }
    }

    fn lossless() -> DeliveryModel {
        DeliveryModel {
            reliable_range: 250.0,
            ..Default::default()
        }
    }

    #[test]
    fn same_vehicle_is_zero_hops() {
        let nodes = [node(0.0, 0.0, VehicleRole::Core, Some(0), Some(0))];
        let p = overlay_path(&nodes, &lossless(), VehicleId(0), VehicleId(0)).unwrap();
        assert_eq!(p, vec![VehicleId(0)]);
    }

    #[test]
    fn intra_region_goes_through_core() {
        use VehicleRole::*;
        let nodes = [
            node(0.0, 0.0, Core, Some(0), Some(0)),
            node(50.0, 0.0, Ordinary, Some(0), Some(0)),
            node(-60.0, 0.0, Ordinary, Some(0), Some(0)),
        ];
        let p = overlay_path(&nodes, &lossless(), VehicleId(1), VehicleId(2)).unwrap();
        assert_eq!(p, vec![VehicleId(1), VehicleId(0), VehicleId(2)]);
    }

    #[test]
    fn two_regions_through_border_vehicle() {
        use VehicleRole::*;
        // A(0) at 0, B(1) at 400; gateway 2 at 200 belongs to A.
        // Source 3 at -100 in A, destination 4 at 500 in B.
        let nodes = [
            node(0.0, 0.0, Core, Some(0), Some(0)),
            node(400.0, 0.0, Core, Some(1), Some(1)),
            node(200.0, 0.0, Gateway, Some(0), Some(0)),
            node(-100.0, 0.0, Ordinary, Some(0), Some(0)),
            node(500.0, 0.0, Ordinary, Some(1), Some(1)),
        ];
        let p = overlay_path(&nodes, &lossless(), VehicleId(3), VehicleId(4)).unwrap();
        assert_eq!(
            p,
            [3, 0, 2, 1, 4].map(VehicleId).to_vec(),
        );
        assert_eq!(overlay_hops(&nodes, 250.0, VehicleId(3), VehicleId(4)), Some(4));
        // a plain border member hands over across regions just the same
        let mut border = nodes;
        border[2].role = Ordinary;
        assert_eq!(
            overlay_path(&border, &lossless(), VehicleId(3), VehicleId(4)).unwrap(),
            [3, 0, 2, 1, 4].map(VehicleId).to_vec(),
        );
        // with no cross-region pair in range the overlay is split
        let mut cut = nodes;
        cut[2].position = Vec2::new(-200.0, 0.0);
        assert!(overlay_path(&cut, &lossless(), VehicleId(3), VehicleId(4)).is_err());
        assert_eq!(overlay_hops(&cut, 250.0, VehicleId(3), VehicleId(4)), None);
    }

    #[test]
    fn avoided_first_hop_is_routed_around() {
        use VehicleRole::*;
        let nodes = [
            node(0.0, 0.0, Unattached, None, None),
            node(100.0, 0.0, Unattached, None, None),
            node(100.0, 50.0, Unattached, None, None),
            node(200.0, 0.0, Unattached, None, None),
        ];
        let direct = overlay_path(&nodes, &lossless(), VehicleId(0), VehicleId(3)).unwrap();
        assert_eq!(direct, [0, 3].map(VehicleId).to_vec());
        let p = overlay_path_avoiding(&nodes, &lossless(), VehicleId(0), VehicleId(3), &[VehicleId(3)]).unwrap();
        assert_eq!(p, [0, 1, 3].map(VehicleId).to_vec());
        let all = [1, 2, 3].map(VehicleId);
        assert!(overlay_path_avoiding(&nodes, &lossless(), VehicleId(0), VehicleId(3), &all).is_err());
    }

    #[test]
    fn unattached_source_uses_attached_neighbour() {
        use VehicleRole::*;
        let nodes = [
            node(0.0, 0.0, Core, Some(0), Some(0)),
            node(100.0, 0.0, Ordinary, Some(0), Some(0)),
            node(200.0, 0.0, Unattached, None, None),
            node(600.0, 0.0, Unattached, None, None),
        ];
        let p = overlay_path(&nodes, &lossless(), VehicleId(2), VehicleId(0)).unwrap();
        assert_eq!(p, vec![VehicleId(2), VehicleId(0)]);
        let err = overlay_path(&nodes, &lossless(), VehicleId(3), VehicleId(0)).unwrap_err();
        assert_eq!(
            err,
            RadioError::NoRoute {
                from: VehicleId(3),
                to: VehicleId(0)
            }
        );
    }

    #[test]
    fn delay_weight_prefers_short_reliable_links() {
        use VehicleRole::*;
        // core 0 reaches core 3 directly at 240 m (lossy) or via gateway 1 (two 120 m hops)
        let nodes = [
            node(0.0, 0.0, Core, Some(0), Some(0)),
            node(120.0, 0.0, Gateway, Some(0), Some(0)),
            node(-10.0, 0.0, Ordinary, Some(0), Some(0)),
            node(240.0, 0.0, Core, Some(1), Some(3)),
        ];
        let p = overlay_path(&nodes, &DeliveryModel::default(), VehicleId(0), VehicleId(3)).unwrap();
        assert_eq!(p, vec![VehicleId(0), VehicleId(1), VehicleId(3)]);
    }

    #[test]
    fn greedy_line_delivers_hop_by_hop() {
        let pos: Vec<Vec2> = (0..6).map(|i| Vec2::new(i as f64 * 200.0, 0.0)).collect();
        let mut at = VehicleId(0);
        let mut hops = 0;
        while at != VehicleId(5) {
            let nb = neighbors(&pos, at, 250.0).unwrap();
            at = greedy_next_hop(&pos, &nb, at, VehicleId(5)).unwrap();
            hops += 1;
        }
        assert_eq!(hops, 5);
    }

    #[test]
    fn greedy_void_returns_none() {
        // destination behind a gap; the only neighbour is farther away
        let pos = [Vec2::new(0.0, 0.0), Vec2::new(-100.0, 0.0), Vec2::new(600.0, 0.0)];
        let nb = neighbors(&pos, VehicleId(0), 250.0).unwrap();
        assert_eq!(greedy_next_hop(&pos, &nb, VehicleId(0), VehicleId(2)), None);
    }

    #[test]
    fn greedy_matches_geographic_oracle_on_six_nodes() {
        // hand-built topology; the oracle picks the neighbour minimising the
        // remaining distance, repeated until arrival
        let pos = [
            Vec2::new(0.0, 0.0),
            Vec2::new(150.0, 100.0),
            Vec2::new(200.0, -50.0),
            Vec2::new(380.0, 20.0),
            Vec2::new(420.0, 180.0),
            Vec2::new(600.0, 60.0),
        ];
        let oracle = [VehicleId(0), VehicleId(2), VehicleId(3), VehicleId(5)];
        let mut path = vec![VehicleId(0)];
        while *path.last().unwrap() != VehicleId(5) {
            let at = *path.last().unwrap();
            let nb = neighbors(&pos, at, 250.0).unwrap();
            path.push(greedy_next_hop(&pos, &nb, at, VehicleId(5)).unwrap());
        }
        assert_eq!(path, oracle);
    }

    #[test]
    fn head_router_goes_to_head_first() {
        use VehicleRole::*;
        let nodes = [
            node(0.0, 0.0, Ordinary, Some(0), Some(1)),
            node(-100.0, 0.0, Core, Some(0), Some(1)),
            node(200.0, 0.0, Ordinary, Some(0), Some(1)),
            node(800.0, 0.0, Ordinary, None, None),
        ];
        let nb = [VehicleId(1), VehicleId(2)];
        assert_eq!(head_next_hop(&nodes, &nb, VehicleId(0), VehicleId(3), true), Some(VehicleId(1)));
        assert_eq!(head_next_hop(&nodes, &nb, VehicleId(0), VehicleId(3), false), Some(VehicleId(2)));
    }

    proptest! {
        #[test]
        fn lossless_overlay_matches_reachability(
            xs in proptest::collection::vec((0.0..1000.0f64, 0.0..300.0f64, 0u8..4), 2..12),
        ) {
            // first vehicle of each 300 m strip is the core of that strip
            let mut nodes: Vec<NodeView> = Vec::new();
            let mut cores: Vec<(u32, usize)> = Vec::new();
            for (i, &(x, y, r)) in xs.iter().enumerate() {
                let strip = (x / 300.0) as u32;
                let core = cores.iter().find(|(s, _)| *s == strip).map(|c| c.1);
                let role = match (core, r) {
                    (None, _) => { cores.push((strip, i)); VehicleRole::Core }
                    (Some(_), 0) => VehicleRole::Unattached,
                    (Some(_), 1) => VehicleRole::Gateway,
                    _ => VehicleRole::Ordinary,
                };
                let core = if role == VehicleRole::Unattached { None } else { Some(core.unwrap_or(i) as u32) };
                nodes.push(node(x, y, role, role.is_attached().then_some(strip), core));
            }
            let model = lossless();
            let (s, d) = (VehicleId(0), VehicleId(xs.len() as u32 - 1));
            let found = overlay_path(&nodes, &model, s, d);
            let reach = overlay_hops(&nodes, model.comm_range, s, d);
            prop_assert_eq!(found.is_ok(), reach.is_some());
            if let (Ok(p), Some(h)) = (found, reach) {
                prop_assert_eq!(p.len() - 1, h);
            }
        }
    }
}
