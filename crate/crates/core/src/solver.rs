//! Globally optimal node-disjoint track extraction via successive shortest
//! paths on the tracking graph, plus an exhaustive oracle for verification.
//!
//! The tracking graph is a DAG, so the first shortest-path pass (which must
//! handle negative costs) runs label-correcting relaxation in topological
//! order. Later passes search the residual graph — no longer acyclic — with
//! a heap and potential-reduced nonnegative costs. Augmentation stops at the
//! first nonnegative shortest path: zero-cost paths are never added, so the
//! returned set is the canonical minimal optimum.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::TrackingGraph;
use crate::DetId;

/// A set of node-disjoint detection-id paths.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Vec<DetId>>,
}

impl PathSet {
    pub fn empty() -> Self {
        PathSet { paths: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    /// True when no det_id appears twice across the set.
    pub fn is_node_disjoint(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.paths
            .iter()
            .flatten()
            .all(|d| seen.insert(*d))
    }

    /// Set equality as sets of det-id sequences.
    pub fn same_paths(&self, other: &PathSet) -> bool {
        let a: std::collections::BTreeSet<_> = self.paths.iter().collect();
        let b: std::collections::BTreeSet<_> = other.paths.iter().collect();
        a == b
    }

    /// All consecutive det-id pairs across the set.
    pub fn link_pairs(&self) -> impl Iterator<Item = (DetId, DetId)> + '_ {
        self.paths
            .iter()
            .flat_map(|p| p.windows(2).map(|w| (w[0], w[1])))
    }
}

/// Solver result: the extracted paths with their costs.
#[derive(Clone, Debug)]
pub struct SolveOutput {
    pub path_set: PathSet,
    pub total_cost: f64,
    pub path_costs: Vec<f64>,
    /// True cost of each augmenting path, in augmentation order.
    pub augmenting_costs: Vec<f64>,
}

/// Cost of one path: entrance + exit plus its transition costs (twin edges
/// contribute zero). Errors if a consecutive pair is not a graph link.
pub fn path_cost(path: &[DetId], g: &TrackingGraph) -> Result<f64> {
    if path.is_empty() {
        return Err(CoreError::InvalidPath("empty path".into()));
    }
    let mut total = g.c_en + g.c_ex;
    for w in path.windows(2) {
        let a = g
            .node_index(w[0])
            .ok_or(CoreError::UnknownDetection(w[0]))?;
        let b = g
            .node_index(w[1])
            .ok_or(CoreError::UnknownDetection(w[1]))?;
        let link = g.link_id(a, b).ok_or_else(|| {
            CoreError::InvalidPath(format!("({}, {}) is not a link", w[0], w[1]))
        })?;
        total += g.costs[link as usize];
    }
    Ok(total)
}

/// Cost of a path set: the sum of member path costs.
pub fn path_set_cost(set: &PathSet, g: &TrackingGraph) -> Result<f64> {
    set.paths.iter().map(|p| path_cost(p, g)).sum()
}

// Internal flow network. Node numbering: 0 = source, 1 = terminal,
// 2+2k = in(k), 3+2k = out(k). Edges stored in xor-pairs (e ^ 1 = reverse).
struct FlowNet {
    heads: Vec<u32>,
    costs: Vec<f64>,
    caps: Vec<i8>,
    adj: Vec<Vec<u32>>,
}

impl FlowNet {
    fn new(n_nodes: usize) -> Self {
        FlowNet {
            heads: Vec::new(),
            costs: Vec::new(),
            caps: Vec::new(),
            adj: vec![Vec::new(); n_nodes],
        }
    }

    fn add_edge(&mut self, from: u32, to: u32, cost: f64) -> u32 {
        let id = self.heads.len() as u32;
        self.heads.push(to);
        self.costs.push(cost);
        self.caps.push(1);
        self.adj[from as usize].push(id);
        self.heads.push(from);
        self.costs.push(-cost);
        self.caps.push(0);
        self.adj[to as usize].push(id + 1);
        id
    }
}

const SOURCE: u32 = 0;
const TERMINAL: u32 = 1;

fn node_in(k: u32) -> u32 {
    2 + 2 * k
}

fn node_out(k: u32) -> u32 {
    3 + 2 * k
}

fn build_flow_net(g: &TrackingGraph) -> FlowNet {
    let n = g.detection_count() as u32;
    let mut net = FlowNet::new(2 * n as usize + 2);
    // Edge insertion order fixes the deterministic tie-breaking of the
    // searches below: entrance/twin/exit per detection, then transitions.
    for k in 0..n {
        net.add_edge(SOURCE, node_in(k), g.c_en);
        net.add_edge(node_in(k), node_out(k), 0.0);
        net.add_edge(node_out(k), TERMINAL, g.c_ex);
    }
    for (l, &(i, j)) in g.links.iter().enumerate() {
        net.add_edge(node_out(i), node_in(j), g.costs[l]);
    }
    net
}

/// Exact distances from the source over the original DAG (handles negative
/// costs). Nodes are already in topological order by construction.
fn dag_distances(net: &FlowNet, n_nodes: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; n_nodes];
    dist[SOURCE as usize] = 0.0;
    // Topological order: source, twin pairs in frame order, terminal last.
    let mut order: Vec<u32> = Vec::with_capacity(n_nodes);
    order.push(SOURCE);
    for k in 0..(n_nodes as u32 - 2) / 2 {
        order.push(node_in(k));
        order.push(node_out(k));
    }
    order.push(TERMINAL);
    for &u in &order {
        let du = dist[u as usize];
        if !du.is_finite() {
            continue;
        }
        for &e in &net.adj[u as usize] {
            if net.caps[e as usize] == 0 {
                continue;
            }
            let v = net.heads[e as usize] as usize;
            let nd = du + net.costs[e as usize];
            if nd < dist[v] {
                dist[v] = nd;
            }
        }
    }
    dist
}

#[derive(PartialEq)]
struct HeapItem(f64, u32);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Reverse ordering: BinaryHeap is a max-heap. Ties break on node id
        // for deterministic search frontiers.
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over the residual graph with potential-reduced costs.
/// Returns (distance, parent edge) per node.
fn residual_dijkstra(net: &FlowNet, pot: &[f64], n_nodes: usize) -> (Vec<f64>, Vec<Option<u32>>) {
    let mut dist = vec![f64::INFINITY; n_nodes];
    let mut parent = vec![None; n_nodes];
    let mut done = vec![false; n_nodes];
    let mut heap = std::collections::BinaryHeap::new();
    dist[SOURCE as usize] = 0.0;
    heap.push(HeapItem(0.0, SOURCE));
    while let Some(HeapItem(d, u)) = heap.pop() {
        if done[u as usize] {
            continue;
        }
        done[u as usize] = true;
        for &e in &net.adj[u as usize] {
            if net.caps[e as usize] == 0 {
                continue;
            }
            let v = net.heads[e as usize] as usize;
            if done[v] {
                continue;
            }
            let rc = net.costs[e as usize] + pot[u as usize] - pot[v];
            debug_assert!(rc > -1e-6, "reduced cost {rc} under potential invariant");
            let nd = d + rc.max(0.0);
            if nd < dist[v] {
                dist[v] = nd;
                parent[v] = Some(e);
                heap.push(HeapItem(nd, v as u32));
            }
        }
    }
    (dist, parent)
}

/// Extract the globally optimal set of node-disjoint tracks by successive
/// shortest paths. Augments while the cheapest source-terminal path has
/// strictly negative cost.
pub fn track_by_ssp(g: &TrackingGraph) -> Result<SolveOutput> {
    if let Some(i) = g.costs.iter().position(|c| !c.is_finite()) {
        return Err(CoreError::Numeric(format!(
            "non-finite transition cost at link {i}"
        )));
    }
    let n_dets = g.detection_count();
    if n_dets == 0 {
        return Ok(SolveOutput {
            path_set: PathSet::empty(),
            total_cost: 0.0,
            path_costs: Vec::new(),
            augmenting_costs: Vec::new(),
        });
    }
    let n_nodes = 2 * n_dets + 2;
    let mut net = build_flow_net(g);

    // First pass: exact DAG distances double as initial potentials.
    let first = dag_distances(&net, n_nodes);
    let mut pot = first.clone();
    // Terminal is reachable whenever a detection exists.
    debug_assert!(pot[TERMINAL as usize].is_finite());

    let mut augmenting_costs: Vec<f64> = Vec::new();
    // Reconstruct the first shortest path from the DAG distances by
    // rerunning the reduced-cost search (all reduced costs are now >= 0 and
    // the shortest path has reduced length 0).
    loop {
        let (dist, parent) = residual_dijkstra(&net, &pot, n_nodes);
        let dt = dist[TERMINAL as usize];
        if !dt.is_finite() {
            break;
        }
        let true_cost = dt + pot[TERMINAL as usize] - pot[SOURCE as usize];
        if true_cost >= 0.0 {
            break;
        }
        if let Some(&prev) = augmenting_costs.last() {
            debug_assert!(
                true_cost >= prev - 1e-9,
                "augmenting costs must be nondecreasing: {true_cost} after {prev}"
            );
        }
        augmenting_costs.push(true_cost);
        // Flip flow along the path.
        let mut v = TERMINAL;
        while v != SOURCE {
            let e = parent[v as usize].expect("path edge");
            net.caps[e as usize] -= 1;
            net.caps[(e ^ 1) as usize] += 1;
            v = net.heads[(e ^ 1) as usize];
        }
        // Potential update, capping at dist(t) keeps reduced costs valid for
        // nodes the search did not reach.
        for v in 0..n_nodes {
            pot[v] += dist[v].min(dt);
        }
    }

    // Decompose the flow into detection paths: follow saturated entrance
    // edges through twins and transitions.
    let mut paths: Vec<Vec<DetId>> = Vec::new();
    for &e in &net.adj[SOURCE as usize] {
        if net.caps[e as usize] != 0 {
            continue; // entrance edge unused
        }
        let mut path = Vec::new();
        let mut u = net.heads[e as usize]; // an in-node
        loop {
            let det = (u - 2) / 2;
            path.push(g.det_ids[det as usize]);
            let out = node_out(det);
            // Unique saturated forward edge out of the out-node.
            let next = net.adj[out as usize]
                .iter()
                .copied()
                .find(|&e2| e2 % 2 == 0 && net.caps[e2 as usize] == 0)
                .expect("flow conservation");
            let v = net.heads[next as usize];
            if v == TERMINAL {
                break;
            }
            u = v;
        }
        paths.push(path);
    }
    paths.sort_by_key(|p| p[0]);

    let path_set = PathSet { paths };
    debug_assert!(path_set.is_node_disjoint());
    let path_costs: Vec<f64> = path_set
        .paths
        .iter()
        .map(|p| path_cost(p, g))
        .collect::<Result<_>>()?;
    let total_cost: f64 = path_costs.iter().sum();
    // The two claims every solve must satisfy: each returned path has
    // nonpositive cost and so does the total.
    debug_assert!(
        path_costs.iter().all(|&c| c <= 1e-9),
        "positive-cost path in solver output"
    );
    debug_assert!(total_cost <= 1e-9, "positive total cost {total_cost}");
    Ok(SolveOutput {
        path_set,
        total_cost,
        path_costs,
        augmenting_costs,
    })
}

/// Exhaustively enumerate all node-disjoint path sets (including the empty
/// set) and return a minimum-cost one. Verification oracle; refuses more
/// than `max_detections` detections (bound <= 16 for the bitmask sweep).
pub fn brute_force_oracle(g: &TrackingGraph, max_detections: usize) -> Result<SolveOutput> {
    let n = g.detection_count();
    if n > max_detections || n > 16 {
        return Err(CoreError::TooLarge(format!(
            "{n} detections exceed oracle bound {}",
            max_detections.min(16)
        )));
    }
    // Enumerate all simple paths (frames increase along links, so plain DFS
    // terminates) with their node bitmasks and costs.
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (l, &(i, j)) in g.links.iter().enumerate() {
        adj[i as usize].push(((l as u32) << 8) | j);
    }
    let mut paths: Vec<(u16, f64, Vec<DetId>)> = Vec::new();
    let mut stack: Vec<(u32, u16, f64, Vec<DetId>)> = (0..n as u32)
        .map(|i| {
            (
                i,
                1u16 << i,
                g.c_en + g.c_ex,
                vec![g.det_ids[i as usize]],
            )
        })
        .collect();
    while let Some((u, mask, cost, ids)) = stack.pop() {
        paths.push((mask, cost, ids.clone()));
        for &enc in &adj[u as usize] {
            let (l, v) = ((enc >> 8) as usize, enc & 0xff);
            let mut ids2 = ids.clone();
            ids2.push(g.det_ids[v as usize]);
            stack.push((v, mask | (1 << v), cost + g.costs[l], ids2));
        }
    }
    // Only negative paths can lower the total; group them by lowest set bit.
    let mut by_low: Vec<Vec<usize>> = vec![Vec::new(); n.max(1)];
    for (idx, &(mask, cost, _)) in paths.iter().enumerate() {
        if cost < 0.0 {
            by_low[mask.trailing_zeros() as usize].push(idx);
        }
    }
    // dp[mask] = min cost of a disjoint path set drawn from detections in
    // `mask`; choice[mask] remembers the path taken (if any).
    let full = if n == 0 { 0 } else { (1u32 << n) - 1 };
    let mut dp = vec![0.0f64; (full + 1) as usize];
    let mut choice: Vec<Option<usize>> = vec![None; (full + 1) as usize];
    for mask in 1..=full {
        let low = mask.trailing_zeros() as usize;
        let without = mask & (mask - 1);
        let mut best = dp[without as usize];
        let mut best_choice = None;
        for &pidx in &by_low[low] {
            let (pmask, pcost, _) = &paths[pidx];
            if (*pmask as u32) & mask == *pmask as u32 {
                let c = pcost + dp[(mask ^ *pmask as u32) as usize];
                if c < best - 1e-15 {
                    best = c;
                    best_choice = Some(pidx);
                }
            }
        }
        dp[mask as usize] = best;
        choice[mask as usize] = best_choice;
    }
    // Reconstruct.
    let mut mask = full;
    let mut out_paths = Vec::new();
    while mask != 0 {
        match choice[mask as usize] {
            Some(pidx) => {
                let (pmask, _, ids) = &paths[pidx];
                out_paths.push(ids.clone());
                mask ^= *pmask as u32;
            }
            None => {
                mask &= mask - 1;
            }
        }
    }
    out_paths.sort_by_key(|p: &Vec<DetId>| p[0]);
    let path_set = PathSet { paths: out_paths };
    let path_costs: Vec<f64> = path_set
        .paths
        .iter()
        .map(|p| path_cost(p, g))
        .collect::<Result<_>>()?;
    Ok(SolveOutput {
        total_cost: if n == 0 { 0.0 } else { dp[full as usize] },
        path_costs,
        path_set,
        augmenting_costs: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_detection_graph, build_tracking_graph, transfer_costs, EdgeCosts};
    use crate::scenario::{Detection, DetectionSource};

    fn det(id: u32, frame: u32, x: f64, y: f64) -> Detection {
        Detection {
            det_id: DetId(id),
            frame,
            position: [x, y],
            reid: vec![0.0],
            source: DetectionSource::Clutter,
        }
    }

    fn costed_graph(dets: &[Detection], costs: &[(u32, u32, f64)]) -> TrackingGraph {
        let g = build_detection_graph(dets, 2, 1000.0).unwrap();
        let mut values = vec![0.0; g.links.len()];
        for &(a, b, c) in costs {
            let i = g.node_index(DetId(a)).unwrap();
            let j = g.node_index(DetId(b)).unwrap();
            let l = g.link_id(i, j).expect("link exists");
            values[l as usize] = c;
        }
        let trk = build_tracking_graph(&g, 1.0, 1.0).unwrap();
        transfer_costs(&EdgeCosts::new(&g, values), &trk).unwrap()
    }

    #[test]
    fn path_cost_arithmetic() {
        let dets = vec![det(0, 1, 0.0, 0.0), det(1, 2, 0.0, 0.0), det(2, 3, 0.0, 0.0)];
        let t = costed_graph(&dets, &[(0, 1, -3.0), (1, 2, -2.0)]);
        assert_eq!(path_cost(&[DetId(0)], &t).unwrap(), 2.0);
        assert_eq!(
            path_cost(&[DetId(0), DetId(1), DetId(2)], &t).unwrap(),
            -3.0
        );
        // Set cost is the sum of member path costs.
        let set = PathSet {
            paths: vec![vec![DetId(0), DetId(1), DetId(2)]],
        };
        assert_eq!(path_set_cost(&set, &t).unwrap(), -3.0);
    }

    #[test]
    fn invalid_link_is_an_error() {
        let dets = vec![det(0, 1, 0.0, 0.0), det(1, 2, 0.0, 0.0)];
        let t = costed_graph(&dets, &[]);
        assert!(path_cost(&[DetId(1), DetId(0)], &t).is_err());
    }

    #[test]
    fn nonnegative_costs_yield_empty_solution() {
        let dets = vec![det(0, 1, 0.0, 0.0), det(1, 2, 0.0, 0.0)];
        let t = costed_graph(&dets, &[(0, 1, 0.5)]);
        let out = track_by_ssp(&t).unwrap();
        assert!(out.path_set.is_empty());
        assert_eq!(out.total_cost, 0.0);
    }

    #[test]
    fn two_negative_chains_are_both_recovered() {
        // Two parallel tracks over 3 frames with strongly negative chain
        // costs and mildly negative cross links.
        let dets = vec![
            det(0, 1, 0.0, 0.0),
            det(1, 1, 0.0, 3.0),
            det(2, 2, 1.0, 0.0),
            det(3, 2, 1.0, 3.0),
            det(4, 3, 2.0, 0.0),
            det(5, 3, 2.0, 3.0),
        ];
        let t = costed_graph(
            &dets,
            &[
                (0, 2, -10.0),
                (2, 4, -10.0),
                (1, 3, -10.0),
                (3, 5, -10.0),
                (0, 3, -1.0),
                (1, 2, -1.0),
                (2, 5, -1.0),
                (3, 4, -1.0),
            ],
        );
        let out = track_by_ssp(&t).unwrap();
        assert_eq!(out.path_set.paths.len(), 2);
        assert_eq!(
            out.path_set.paths[0],
            vec![DetId(0), DetId(2), DetId(4)]
        );
        assert_eq!(
            out.path_set.paths[1],
            vec![DetId(1), DetId(3), DetId(5)]
        );
        assert!((out.total_cost - (-36.0)).abs() < 1e-12);
    }

    #[test]
    fn oracle_handles_empty_and_single_path() {
        let t = costed_graph(&[], &[]);
        let out = brute_force_oracle(&t, 14).unwrap();
        assert!(out.path_set.is_empty());
        assert_eq!(out.total_cost, 0.0);

        let dets = vec![det(0, 1, 0.0, 0.0), det(1, 2, 0.0, 0.0)];
        let t = costed_graph(&dets, &[(0, 1, -5.0)]);
        let out = brute_force_oracle(&t, 14).unwrap();
        assert_eq!(out.path_set.paths, vec![vec![DetId(0), DetId(1)]]);
        assert!((out.total_cost - (-3.0)).abs() < 1e-12);
    }

    #[test]
    fn oracle_refuses_oversized_instances() {
        let dets: Vec<Detection> = (0..15).map(|i| det(i, 1 + i, 0.0, 0.0)).collect();
        let t = costed_graph(&dets, &[]);
        assert!(brute_force_oracle(&t, 14).is_err());
    }

    #[test]
    fn solver_matches_oracle_on_random_instances() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..60 {
            let n_frames = rng.random_range(3..6u32);
            let per_frame = rng.random_range(1..4usize);
            let mut dets = Vec::new();
            let mut id = 0;
            for f in 1..=n_frames {
                for _ in 0..per_frame {
                    if dets.len() >= 12 {
                        break;
                    }
                    dets.push(det(id, f, rng.random_range(-1.0..1.0), 0.0));
                    id += 1;
                }
            }
            let g = build_detection_graph(&dets, 2, 1000.0).unwrap();
            let values: Vec<f64> = (0..g.links.len())
                .map(|_| rng.random_range(-2.0..2.0))
                .collect();
            let trk = build_tracking_graph(&g, 1.0, 1.0).unwrap();
            let costed = transfer_costs(&EdgeCosts::new(&g, values), &trk).unwrap();
            let ssp = track_by_ssp(&costed).unwrap();
            let oracle = brute_force_oracle(&costed, 12).unwrap();
            assert!(
                (ssp.total_cost - oracle.total_cost).abs() <= 1e-9,
                "trial {trial}: ssp {} vs oracle {}",
                ssp.total_cost,
                oracle.total_cost
            );
            assert!(ssp.path_set.is_node_disjoint());
        }
    }

    #[test]
    fn identical_inputs_give_identical_path_sets() {
        let dets = vec![
            det(0, 1, 0.0, 0.0),
            det(1, 2, 0.0, 0.0),
            det(2, 2, 1.0, 0.0),
            det(3, 3, 0.0, 0.0),
        ];
        let t = costed_graph(&dets, &[(0, 1, -4.0), (0, 2, -4.0), (1, 3, -4.0), (2, 3, -4.0)]);
        let a = track_by_ssp(&t).unwrap();
        let b = track_by_ssp(&t).unwrap();
        assert_eq!(a.path_set, b.path_set);
        assert_eq!(a.total_cost, b.total_cost);
    }
}
