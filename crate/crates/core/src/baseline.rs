//! Edge-classification baseline tracker.
//!
//! The same message-passing network, with a logistic readout instead of raw
//! costs, trained by per-link binary cross-entropy against ground-truth link
//! labels. Inference keeps links with belief above 0.5, greedily resolves
//! in/out-degree conflicts in descending belief order, reads off the chains,
//! and prunes short tracks.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{CoreError, Result};
use crate::graph::DetectionGraph;
use crate::mpn::{FeatureNorm, MpnConfig, MpnModel, ReadoutMode};
use crate::neural::ParamStore;
use crate::solver::PathSet;
use crate::training::{EpochRecord, TrainGraph};
use crate::DetId;

/// Binary link labels: 1 iff the link joins consecutive detections of one
/// ground-truth path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeLabels {
    pub values: Vec<u8>,
}

/// Knobs of the baseline trainer and its extraction heuristic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeBeliefConfig {
    pub mpn: MpnConfig,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// Weight positive links by inverse class frequency (clutter-dominated
    /// graphs drown the positives otherwise). Switchable for ablation.
    #[serde(default = "default_true")]
    pub class_reweighting: bool,
    /// Stop when the mean weighted BCE drops below this value.
    #[serde(default = "default_bce_epsilon")]
    pub bce_epsilon: f64,
    /// Drop extracted paths shorter than this many detections.
    #[serde(default = "default_min_len")]
    pub min_path_len: usize,
    /// Scene-derived position preconditioning for the node encoder.
    #[serde(default)]
    pub norm: FeatureNorm,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    500
}

fn default_lr() -> f64 {
    0.001
}

fn default_true() -> bool {
    true
}

fn default_bce_epsilon() -> f64 {
    1e-3
}

fn default_min_len() -> usize {
    3
}

impl Default for EdgeBeliefConfig {
    fn default() -> Self {
        EdgeBeliefConfig {
            mpn: MpnConfig {
                readout: ReadoutMode::Belief,
                ..MpnConfig::default()
            },
            max_epochs: default_epochs(),
            learning_rate: default_lr(),
            class_reweighting: true,
            bce_epsilon: default_bce_epsilon(),
            min_path_len: default_min_len(),
            norm: FeatureNorm::default(),
            seed: 0,
        }
    }
}

/// Label every link of the graph against the ground-truth paths.
pub fn label_edges(g: &DetectionGraph, p_gt: &PathSet) -> EdgeLabels {
    let mut values = vec![0u8; g.links.len()];
    for (a, b) in p_gt.link_pairs() {
        if let (Some(i), Some(j)) = (g.node_index(a), g.node_index(b)) {
            if let Some(l) = g.link_id(i, j) {
                values[l as usize] = 1;
            }
        }
    }
    EdgeLabels { values }
}

const BELIEF_CLAMP: f64 = 1e-12;

/// Mean (optionally class-weighted) binary cross-entropy and its gradient
/// with respect to the beliefs.
fn bce_and_grad(beliefs: &[f64], labels: &[u8], reweight: bool) -> (f64, Vec<f64>) {
    let n = beliefs.len() as f64;
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_neg = n - n_pos;
    let (w_pos, w_neg) = if reweight && n_pos > 0.0 && n_neg > 0.0 {
        (n / (2.0 * n_pos), n / (2.0 * n_neg))
    } else {
        (1.0, 1.0)
    };
    let mut loss = 0.0;
    let mut grad = vec![0.0; beliefs.len()];
    for (k, (&b, &y)) in beliefs.iter().zip(labels).enumerate() {
        let bc = b.clamp(BELIEF_CLAMP, 1.0 - BELIEF_CLAMP);
        let w = if y == 1 { w_pos } else { w_neg };
        loss += if y == 1 { -w * bc.ln() } else { -w * (1.0 - bc).ln() };
        grad[k] = w * (bc - y as f64) / (bc * (1.0 - bc)) / n;
    }
    (loss / n, grad)
}

/// Train the belief network by mean BCE against the link labels, with the
/// same learning rate and epoch budget quoted when comparing against the
/// cost-based tracker.
pub fn train_edge_belief(
    graphs: &[TrainGraph],
    cfg: &EdgeBeliefConfig,
) -> Result<(ParamStore, MpnModel, Vec<EpochRecord>)> {
    if graphs.is_empty() {
        return Err(CoreError::InvalidConfig {
            field: "graphs",
            message: "training set must be nonempty".into(),
        });
    }
    let reid_dim = graphs[0]
        .graph
        .nodes
        .first()
        .map(|n| n.reid.len())
        .unwrap_or(0);
    let mut mpn_cfg = cfg.mpn;
    mpn_cfg.readout = ReadoutMode::Belief;
    let model = MpnModel::new(mpn_cfg, reid_dim).with_norm(cfg.norm);
    let mut store = model.init_params(cfg.seed);
    let labels: Vec<EdgeLabels> = graphs
        .iter()
        .map(|tg| label_edges(&tg.graph, &tg.gt))
        .collect();
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let mut rec = EpochRecord {
            stage: 1,
            epoch,
            graph_losses: Vec::with_capacity(graphs.len()),
            mean_total: 0.0,
        };
        for (gi, tg) in graphs.iter().enumerate() {
            if tg.graph.links.is_empty() {
                rec.graph_losses.push((0.0, 0.0, 0.0));
                continue;
            }
            let (beliefs, mut trace) = model.forward(&tg.graph, &store);
            let (loss, dbelief) =
                bce_and_grad(&beliefs.values, &labels[gi].values, cfg.class_reweighting);
            if !loss.is_finite() {
                return Err(CoreError::Numeric(format!(
                    "non-finite BCE on graph {gi}, epoch {epoch}"
                )));
            }
            let grad = model.backward(&mut trace, &store, &dbelief)?;
            store.adam_step(&grad, cfg.learning_rate)?;
            rec.graph_losses.push((loss, 0.0, loss));
        }
        rec.mean_total = rec.graph_losses.iter().map(|g| g.2).sum::<f64>()
            / rec.graph_losses.len().max(1) as f64;
        let mean = rec.mean_total;
        history.push(rec);
        if mean < cfg.bce_epsilon {
            break;
        }
    }
    Ok((store, model, history))
}

/// Extract node-disjoint tracks from thresholded beliefs: greedy acceptance
/// in descending belief, at most one incoming and one outgoing link per
/// detection, then drop paths shorter than `min_path_len` detections.
pub fn infer_edge_belief(
    g: &DetectionGraph,
    model: &MpnModel,
    store: &ParamStore,
    min_path_len: usize,
) -> PathSet {
    let (beliefs, _) = model.forward(g, store);
    extract_paths_from_beliefs(g, &beliefs.values, min_path_len)
}

/// Deterministic greedy chain extraction from per-link beliefs.
pub fn extract_paths_from_beliefs(
    g: &DetectionGraph,
    beliefs: &[f64],
    min_path_len: usize,
) -> PathSet {
    assert_eq!(beliefs.len(), g.links.len(), "one belief per link");
    let mut kept: Vec<usize> = (0..g.links.len())
        .filter(|&l| beliefs[l] > 0.5)
        .collect();
    // Descending belief; ties resolve on link index for determinism.
    kept.sort_by(|&a, &b| beliefs[b].total_cmp(&beliefs[a]).then(a.cmp(&b)));

    let n = g.nodes.len();
    let mut next: Vec<Option<u32>> = vec![None; n];
    let mut prev: Vec<Option<u32>> = vec![None; n];
    for &l in &kept {
        let (i, j) = g.links[l];
        if next[i as usize].is_none() && prev[j as usize].is_none() {
            next[i as usize] = Some(j);
            prev[j as usize] = Some(i);
        }
    }

    let mut paths = Vec::new();
    for start in 0..n {
        if prev[start].is_some() || next[start].is_none() {
            continue; // not a chain head
        }
        let mut chain = vec![g.nodes[start].det_id];
        let mut u = start;
        while let Some(v) = next[u] {
            chain.push(g.nodes[v as usize].det_id);
            u = v as usize;
        }
        if chain.len() >= min_path_len {
            paths.push(chain);
        }
    }
    paths.sort_by_key(|p| p[0]);
    PathSet { paths }
}

/// Per-link belief map keyed by det-id pair, for diagnostics.
pub fn belief_map(g: &DetectionGraph, beliefs: &[f64]) -> HashMap<(DetId, DetId), f64> {
    g.links
        .iter()
        .zip(beliefs)
        .map(|(&(i, j), &b)| {
            (
                (g.nodes[i as usize].det_id, g.nodes[j as usize].det_id),
                b,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_detection_graph;
    use crate::scenario::tests_support::toy_scenario;
    use crate::scenario::{Detection, DetectionSource};
    use crate::training::extract_gt_paths;

    fn det(id: u32, frame: u32, x: f64, y: f64) -> Detection {
        Detection {
            det_id: DetId(id),
            frame,
            position: [x, y],
            reid: vec![0.0, 0.0],
            source: DetectionSource::Clutter,
        }
    }

    fn chain_graph(n: u32) -> DetectionGraph {
        let dets: Vec<Detection> = (0..n).map(|i| det(i, i + 1, 0.1 * i as f64, 0.0)).collect();
        build_detection_graph(&dets, 1, 5.0).unwrap()
    }

    #[test]
    fn empty_gt_labels_all_zero() {
        let g = chain_graph(4);
        let labels = label_edges(&g, &PathSet::empty());
        assert!(labels.values.iter().all(|&v| v == 0));
    }

    #[test]
    fn single_path_labels_consecutive_links() {
        let g = chain_graph(5);
        let gt = PathSet {
            paths: vec![(0..5).map(DetId).collect()],
        };
        let labels = label_edges(&g, &gt);
        assert_eq!(labels.values.iter().filter(|&&v| v == 1).count(), 4);
    }

    #[test]
    fn crossing_gt_paths_share_no_positive_links() {
        let dets = vec![
            det(0, 1, 0.0, 0.0),
            det(1, 1, 0.0, 1.0),
            det(2, 2, 0.5, 0.5),
            det(3, 2, 0.5, 0.6),
            det(4, 3, 1.0, 0.0),
            det(5, 3, 1.0, 1.0),
        ];
        let g = build_detection_graph(&dets, 1, 5.0).unwrap();
        let gt = PathSet {
            paths: vec![
                vec![DetId(0), DetId(2), DetId(4)],
                vec![DetId(1), DetId(3), DetId(5)],
            ],
        };
        let labels = label_edges(&g, &gt);
        // 4 positive links total, each from exactly one path.
        assert_eq!(labels.values.iter().filter(|&&v| v == 1).count(), 4);
    }

    #[test]
    fn all_low_beliefs_give_empty_path_set() {
        let g = chain_graph(4);
        let beliefs = vec![0.2; g.links.len()];
        let out = extract_paths_from_beliefs(&g, &beliefs, 3);
        assert!(out.is_empty());
    }

    #[test]
    fn short_chains_are_pruned() {
        // Two confident links -> 3 detections passes the default threshold;
        // one confident link -> 2 detections is pruned.
        let g = chain_graph(3);
        let out = extract_paths_from_beliefs(&g, &vec![0.9; g.links.len()], 3);
        assert_eq!(out.paths.len(), 1);
        assert_eq!(out.paths[0].len(), 3);

        let g2 = chain_graph(2);
        let out2 = extract_paths_from_beliefs(&g2, &vec![0.9; g2.links.len()], 3);
        assert!(out2.is_empty());
    }

    #[test]
    fn conflicting_links_resolve_to_higher_belief() {
        // Two detections in frame 1 both want the single frame-2 detection.
        let dets = vec![det(0, 1, 0.0, 0.0), det(1, 1, 1.0, 0.0), det(2, 2, 0.5, 0.0)];
        let g = build_detection_graph(&dets, 1, 5.0).unwrap();
        let l01 = g
            .link_id(g.node_index(DetId(0)).unwrap(), g.node_index(DetId(2)).unwrap())
            .unwrap() as usize;
        let l12 = g
            .link_id(g.node_index(DetId(1)).unwrap(), g.node_index(DetId(2)).unwrap())
            .unwrap() as usize;
        let mut beliefs = vec![0.0; g.links.len()];
        beliefs[l01] = 0.7;
        beliefs[l12] = 0.9;
        let out = extract_paths_from_beliefs(&g, &beliefs, 2);
        assert_eq!(out.paths, vec![vec![DetId(1), DetId(2)]]);
        assert!(out.is_node_disjoint());
    }

    #[test]
    fn untrained_beliefs_stay_strictly_inside_unit_interval() {
        let scenario = toy_scenario(2, 6, 1.0, 1.0, 9);
        let g = build_detection_graph(&scenario.detections, 1, 5.0).unwrap();
        let model = MpnModel::new(
            MpnConfig {
                num_layers: 2,
                hidden_dim: 8,
                readout: ReadoutMode::Belief,
            },
            2,
        );
        let store = model.init_params(1);
        let (beliefs, _) = model.forward(&g, &store);
        assert!(beliefs.values.iter().all(|&b| b > 0.0 && b < 1.0));
    }

    #[test]
    fn separable_toy_problem_trains_to_correct_side() {
        // Two well-separated parallel tracks, no clutter: labels are
        // linearly separable in the raw features.
        let scenario = toy_scenario(2, 10, 1.0, 0.0, 5);
        let g = build_detection_graph(&scenario.detections, 1, 5.0).unwrap();
        let gt = extract_gt_paths(&scenario, &g);
        let labels = label_edges(&g, &gt);
        assert!(labels.values.iter().any(|&v| v == 1));
        let cfg = EdgeBeliefConfig {
            mpn: MpnConfig {
                num_layers: 2,
                hidden_dim: 16,
                readout: ReadoutMode::Belief,
            },
            max_epochs: 400,
            learning_rate: 0.005,
            bce_epsilon: 5e-3,
            seed: 2,
            ..EdgeBeliefConfig::default()
        };
        let (store, model, history) =
            train_edge_belief(&[TrainGraph { graph: g.clone(), gt }], &cfg).unwrap();
        assert!(history.last().unwrap().mean_total < 0.05, "BCE did not collapse");
        let (beliefs, _) = model.forward(&g, &store);
        for (l, &y) in labels.values.iter().enumerate() {
            if y == 1 {
                assert!(beliefs.values[l] > 0.5, "positive link {l} below 0.5");
            } else {
                assert!(beliefs.values[l] < 0.5, "negative link {l} above 0.5");
            }
        }
    }

    #[test]
    fn cost_and_belief_modes_share_the_network_body() {
        // With identical θ the belief readout is exactly the logistic of the
        // cost readout: the network body is one code path.
        let scenario = toy_scenario(2, 6, 1.0, 2.0, 13);
        let g = build_detection_graph(&scenario.detections, 1, 5.0).unwrap();
        let cost_model = MpnModel::new(
            MpnConfig {
                num_layers: 2,
                hidden_dim: 8,
                readout: ReadoutMode::Cost,
            },
            2,
        );
        let belief_model = MpnModel::new(
            MpnConfig {
                num_layers: 2,
                hidden_dim: 8,
                readout: ReadoutMode::Belief,
            },
            2,
        );
        let store = cost_model.init_params(21);
        let (costs, _) = cost_model.forward(&g, &store);
        let (beliefs, _) = belief_model.forward(&g, &store);
        for (c, b) in costs.values.iter().zip(&beliefs.values) {
            let sigma = 1.0 / (1.0 + (-c).exp());
            assert!((sigma - b).abs() < 1e-12);
        }
    }
}
