//! Detection graph and twin-node tracking graph construction.
//!
//! The detection graph links gated, time-forward detection pairs within a
//! maximum frame gap Δ. Its companion tracking graph represents every
//! detection by an in/out twin-node pair joined by a zero-cost unit-capacity
//! edge, plus a source with entrance edges and a terminal with exit edges,
//! so tracks are source-to-terminal paths and node-disjointness is enforced
//! by the twin capacity.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use crate::error::{CoreError, Result};
use crate::scenario::Detection;
use crate::DetId;

/// One node of the detection graph: raw per-detection features only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetNode {
    pub det_id: DetId,
    pub frame: u32,
    pub position: [f64; 2],
    pub reid: Vec<f64>,
}

/// Graph over detections, with gated time-forward links.
#[derive(Clone, Debug)]
pub struct DetectionGraph {
    /// Nodes sorted by (frame, det_id).
    pub nodes: Vec<DetNode>,
    /// Links as node-index pairs (src, dst) with frame(src) < frame(dst),
    /// in deterministic (src, dst) order.
    pub links: Vec<(u32, u32)>,
    pub delta: u32,
    pub gate_speed: f64,
    id_to_idx: HashMap<DetId, u32>,
    link_index: HashMap<(u32, u32), u32>,
}

impl DetectionGraph {
    pub fn node_index(&self, det: DetId) -> Option<u32> {
        self.id_to_idx.get(&det).copied()
    }

    pub fn link_id(&self, src: u32, dst: u32) -> Option<u32> {
        self.link_index.get(&(src, dst)).copied()
    }

    /// Structural fingerprint of the link set (det-id pairs), used to catch
    /// cost/graph mismatches at transfer time.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.nodes.len().hash(&mut h);
        for &(i, j) in &self.links {
            self.nodes[i as usize].det_id.hash(&mut h);
            self.nodes[j as usize].det_id.hash(&mut h);
        }
        h.finish()
    }
}

/// Per-link scalar costs computed on a specific detection graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeCosts {
    /// One cost per link, aligned with `DetectionGraph::links`.
    pub values: Vec<f64>,
    /// Fingerprint of the graph the costs were computed on.
    pub graph_fingerprint: u64,
}

impl EdgeCosts {
    pub fn new(graph: &DetectionGraph, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), graph.links.len(), "one cost per link");
        EdgeCosts {
            values,
            graph_fingerprint: graph.fingerprint(),
        }
    }
}

/// Flow-style tracking graph with entrance/exit costs and per-link
/// transition costs (zero until transferred).
#[derive(Clone, Debug)]
pub struct TrackingGraph {
    pub det_ids: Vec<DetId>,
    pub frames: Vec<u32>,
    /// Transition edges, in bijection with the detection-graph links.
    pub links: Vec<(u32, u32)>,
    pub c_en: f64,
    pub c_ex: f64,
    /// Transition costs aligned with `links`.
    pub costs: Vec<f64>,
    pub graph_fingerprint: u64,
    id_to_idx: HashMap<DetId, u32>,
    link_index: HashMap<(u32, u32), u32>,
}

impl TrackingGraph {
    pub fn detection_count(&self) -> usize {
        self.det_ids.len()
    }

    /// 2 twin nodes per detection plus source and terminal.
    pub fn node_count(&self) -> usize {
        2 * self.det_ids.len() + 2
    }

    /// Twin + entrance + exit edges plus one transition edge per link.
    pub fn edge_count(&self) -> usize {
        3 * self.det_ids.len() + self.links.len()
    }

    pub fn node_index(&self, det: DetId) -> Option<u32> {
        self.id_to_idx.get(&det).copied()
    }

    pub fn link_id(&self, src: u32, dst: u32) -> Option<u32> {
        self.link_index.get(&(src, dst)).copied()
    }
}

/// Build the detection graph: a link (i, j) exists iff
/// frame(i) < frame(j) <= frame(i) + Δ and
/// ||pos(j) − pos(i)|| <= gate_speed · (frame(j) − frame(i)).
pub fn build_detection_graph(
    dets: &[Detection],
    delta: u32,
    gate_speed: f64,
) -> Result<DetectionGraph> {
    if delta < 1 {
        return Err(CoreError::InvalidConfig {
            field: "delta",
            message: "must be >= 1".into(),
        });
    }
    if !(gate_speed > 0.0) {
        return Err(CoreError::InvalidConfig {
            field: "gate_speed",
            message: "must be > 0".into(),
        });
    }
    let mut nodes: Vec<DetNode> = dets
        .iter()
        .map(|d| DetNode {
            det_id: d.det_id,
            frame: d.frame,
            position: d.position,
            reid: d.reid.clone(),
        })
        .collect();
    nodes.sort_by_key(|n| (n.frame, n.det_id));

    let mut id_to_idx = HashMap::with_capacity(nodes.len());
    for (i, n) in nodes.iter().enumerate() {
        if id_to_idx.insert(n.det_id, i as u32).is_some() {
            return Err(CoreError::InvalidPath(format!(
                "duplicate det_id {} in detection set",
                n.det_id
            )));
        }
    }

    // Frame -> contiguous node index range.
    let mut frame_ranges: HashMap<u32, (usize, usize)> = HashMap::new();
    let mut start = 0;
    for i in 1..=nodes.len() {
        if i == nodes.len() || nodes[i].frame != nodes[start].frame {
            frame_ranges.insert(nodes[start].frame, (start, i));
            start = i;
        }
    }

    let mut links = Vec::new();
    for i in 0..nodes.len() {
        let fi = nodes[i].frame;
        let pi = nodes[i].position;
        for gap in 1..=delta {
            let Some(&(lo, hi)) = frame_ranges.get(&(fi + gap)) else {
                continue;
            };
            let radius = gate_speed * gap as f64;
            for j in lo..hi {
                let pj = nodes[j].position;
                let d = ((pj[0] - pi[0]).powi(2) + (pj[1] - pi[1]).powi(2)).sqrt();
                if d <= radius {
                    links.push((i as u32, j as u32));
                }
            }
        }
    }
    links.sort_unstable();

    let link_index = links
        .iter()
        .enumerate()
        .map(|(k, &l)| (l, k as u32))
        .collect();

    Ok(DetectionGraph {
        nodes,
        links,
        delta,
        gate_speed,
        id_to_idx,
        link_index,
    })
}

/// Build the twin-node tracking graph for a detection graph.
pub fn build_tracking_graph(g: &DetectionGraph, c_en: f64, c_ex: f64) -> Result<TrackingGraph> {
    if !(c_en > 0.0) {
        return Err(CoreError::InvalidConfig {
            field: "c_en",
            message: "entrance cost must be > 0".into(),
        });
    }
    if !(c_ex > 0.0) {
        return Err(CoreError::InvalidConfig {
            field: "c_ex",
            message: "exit cost must be > 0".into(),
        });
    }
    let det_ids: Vec<DetId> = g.nodes.iter().map(|n| n.det_id).collect();
    let frames: Vec<u32> = g.nodes.iter().map(|n| n.frame).collect();
    let id_to_idx = det_ids
        .iter()
        .enumerate()
        .map(|(i, &d)| (d, i as u32))
        .collect();
    let link_index = g
        .links
        .iter()
        .enumerate()
        .map(|(k, &l)| (l, k as u32))
        .collect();
    Ok(TrackingGraph {
        det_ids,
        frames,
        links: g.links.clone(),
        c_en,
        c_ex,
        costs: vec![0.0; g.links.len()],
        graph_fingerprint: g.fingerprint(),
        id_to_idx,
        link_index,
    })
}

/// Copy learned edge costs onto the tracking graph's transition edges.
/// Twin, entrance, and exit costs are untouched.
pub fn transfer_costs(costs: &EdgeCosts, g_trk: &TrackingGraph) -> Result<TrackingGraph> {
    if costs.values.len() != g_trk.links.len()
        || costs.graph_fingerprint != g_trk.graph_fingerprint
    {
        return Err(CoreError::CostMismatch(format!(
            "{} costs for {} transition edges (fingerprints {:#x} vs {:#x})",
            costs.values.len(),
            g_trk.links.len(),
            costs.graph_fingerprint,
            g_trk.graph_fingerprint
        )));
    }
    if let Some(i) = costs.values.iter().position(|c| !c.is_finite()) {
        return Err(CoreError::Numeric(format!(
            "non-finite edge cost {} on link {i}",
            costs.values[i]
        )));
    }
    let mut out = g_trk.clone();
    out.costs = costs.values.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::DetectionSource;

    pub(crate) fn det(id: u32, frame: u32, x: f64, y: f64) -> Detection {
        Detection {
            det_id: DetId(id),
            frame,
            position: [x, y],
            reid: vec![0.0, 0.0],
            source: DetectionSource::Clutter,
        }
    }

    /// Two detections per frame over 3 frames, matching the worked
    /// two-track example topology with Δ = 2.
    fn six_detections() -> Vec<Detection> {
        vec![
            det(0, 1, 0.0, 0.0),
            det(1, 1, 0.0, 3.0),
            det(2, 2, 1.0, 0.0),
            det(3, 2, 1.0, 3.0),
            det(4, 3, 2.0, 0.0),
            det(5, 3, 2.0, 3.0),
        ]
    }

    #[test]
    fn gated_time_forward_links_only() {
        let g = build_detection_graph(&six_detections(), 2, 100.0).unwrap();
        // Permissive gate: all pairs across frame gaps 1 and 2.
        // (1,2): 2×2 = 4, (2,3): 4, (1,3): 4.
        assert_eq!(g.links.len(), 12);
        for &(i, j) in &g.links {
            let (fi, fj) = (g.nodes[i as usize].frame, g.nodes[j as usize].frame);
            assert!(fi < fj && fj <= fi + 2);
        }
    }

    #[test]
    fn frame_gap_beyond_delta_is_not_linked() {
        let dets = vec![det(0, 1, 0.0, 0.0), det(1, 3, 0.0, 0.0)];
        let g = build_detection_graph(&dets, 1, 100.0).unwrap();
        assert!(g.links.is_empty());
    }

    #[test]
    fn gate_violation_is_not_linked() {
        let dets = vec![det(0, 1, 0.0, 0.0), det(1, 2, 10.0, 0.0)];
        let g = build_detection_graph(&dets, 2, 3.0).unwrap();
        assert!(g.links.is_empty());
    }

    #[test]
    fn empty_detection_set_is_a_valid_empty_graph() {
        let g = build_detection_graph(&[], 2, 1.0).unwrap();
        assert!(g.nodes.is_empty() && g.links.is_empty());
        let t = build_tracking_graph(&g, 1.0, 1.0).unwrap();
        assert_eq!(t.node_count(), 2);
        assert_eq!(t.edge_count(), 0);
    }

    #[test]
    fn tracking_graph_counts_match_structure() {
        let g = build_detection_graph(&six_detections(), 2, 100.0).unwrap();
        let t = build_tracking_graph(&g, 1.0, 1.0).unwrap();
        assert_eq!(t.node_count(), 2 * 6 + 2);
        assert_eq!(t.edge_count(), 12 + 3 * 6);
        // Bijection with detection-graph links.
        assert_eq!(t.links, g.links);
    }

    #[test]
    fn single_detection_tracking_graph() {
        let g = build_detection_graph(&[det(0, 1, 0.0, 0.0)], 1, 1.0).unwrap();
        let t = build_tracking_graph(&g, 1.5, 2.5).unwrap();
        assert_eq!(t.node_count(), 4);
        assert_eq!(t.edge_count(), 3);
        // The unique path s -> in -> out -> t costs c_en + 0 + c_ex.
        let cost = crate::solver::path_cost(&[DetId(0)], &t).unwrap();
        assert_eq!(cost, 4.0);
    }

    #[test]
    fn transfer_rejects_mismatched_costs() {
        let g = build_detection_graph(&six_detections(), 2, 100.0).unwrap();
        let t = build_tracking_graph(&g, 1.0, 1.0).unwrap();
        let bad = EdgeCosts {
            values: vec![0.0; 3],
            graph_fingerprint: g.fingerprint(),
        };
        assert!(transfer_costs(&bad, &t).is_err());

        let other = build_detection_graph(&six_detections()[..4], 2, 100.0).unwrap();
        let foreign = EdgeCosts::new(&other, vec![0.0; other.links.len()]);
        assert!(transfer_costs(&foreign, &t).is_err());
    }

    #[test]
    fn transfer_sets_transition_costs_only() {
        let dets = vec![det(0, 1, 0.0, 0.0), det(1, 2, 1.0, 0.0)];
        let g = build_detection_graph(&dets, 1, 5.0).unwrap();
        let t = build_tracking_graph(&g, 1.0, 1.0).unwrap();
        let costs = EdgeCosts::new(&g, vec![-5.0]);
        let t2 = transfer_costs(&costs, &t).unwrap();
        assert_eq!(t2.costs, vec![-5.0]);
        assert_eq!(t2.c_en, 1.0);
        assert_eq!(t2.c_ex, 1.0);
        // Two-detection path: c_en + (−5) + c_ex = −3.
        let cost = crate::solver::path_cost(&[DetId(0), DetId(1)], &t2).unwrap();
        assert_eq!(cost, -3.0);
    }

    #[test]
    fn transferred_costs_round_trip_through_serialization() {
        let g = build_detection_graph(&six_detections(), 2, 100.0).unwrap();
        let t = build_tracking_graph(&g, 1.0, 1.0).unwrap();
        let values: Vec<f64> = (0..g.links.len()).map(|i| (i as f64) * 0.37 - 2.0).collect();
        let costs = EdgeCosts::new(&g, values);
        let json = serde_json::to_string(&costs).unwrap();
        let loaded: EdgeCosts = serde_json::from_str(&json).unwrap();
        let a = transfer_costs(&costs, &t).unwrap();
        let b = transfer_costs(&loaded, &t).unwrap();
        assert_eq!(a.costs, b.costs);
        for (x, y) in a.costs.iter().zip(&b.costs) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn all_zero_costs_make_every_path_cost_entrance_plus_exit() {
        let g = build_detection_graph(&six_detections(), 2, 100.0).unwrap();
        let t = build_tracking_graph(&g, 1.0, 1.0).unwrap();
        let costs = EdgeCosts::new(&g, vec![0.0; g.links.len()]);
        let t2 = transfer_costs(&costs, &t).unwrap();
        let c = crate::solver::path_cost(&[DetId(0), DetId(2), DetId(4)], &t2).unwrap();
        assert_eq!(c, 2.0);
    }

    #[test]
    fn topological_structure_is_frame_ordered() {
        let g = build_detection_graph(&six_detections(), 2, 100.0).unwrap();
        for w in g.nodes.windows(2) {
            assert!((w[0].frame, w[0].det_id) < (w[1].frame, w[1].det_id));
        }
        for &(i, j) in &g.links {
            assert!(i < j, "links must point forward in storage order");
        }
    }
}
