//! Desk-scale end-to-end check: driving the set loss below ε on a tiny
//! graph makes the solver reproduce the ground-truth paths exactly.

use flowtrack_core::graph::{build_detection_graph, build_tracking_graph, transfer_costs};
use flowtrack_core::mpn::{MpnConfig, ReadoutMode};
use flowtrack_core::scenario::{Detection, DetectionSource};
use flowtrack_core::solver::{track_by_ssp, PathSet};
use flowtrack_core::training::{train, TrainConfig, TrainGraph};
use flowtrack_core::DetId;

fn det(id: u32, frame: u32, x: f64, y: f64, reid: [f64; 2]) -> Detection {
    Detection {
        det_id: DetId(id),
        frame,
        position: [x, y],
        reid: reid.to_vec(),
        source: DetectionSource::Clutter,
    }
}

/// Six detections, three frames, two parallel tracks with distinct ReID.
fn six_detection_problem() -> (flowtrack_core::DetectionGraph, PathSet) {
    let dets = vec![
        det(0, 1, 0.0, 0.0, [1.0, 0.1]),
        det(1, 1, 0.0, 2.0, [-1.0, -0.1]),
        det(2, 2, 0.5, 0.1, [1.1, 0.0]),
        det(3, 2, 0.5, 2.1, [-0.9, 0.0]),
        det(4, 3, 1.0, 0.2, [0.9, 0.2]),
        det(5, 3, 1.0, 2.2, [-1.1, -0.2]),
    ];
    let g = build_detection_graph(&dets, 2, 100.0).unwrap();
    let gt = PathSet {
        paths: vec![
            vec![DetId(0), DetId(2), DetId(4)],
            vec![DetId(1), DetId(3), DetId(5)],
        ],
    };
    (g, gt)
}

#[test]
fn converged_training_recovers_ground_truth_exactly() {
    for seed in 0..2u64 {
        let (g, gt) = six_detection_problem();
        let cfg = TrainConfig {
            stage1_max_iters: 60,
            stage2_epsilon: 1e-3,
            stage2_max_epochs: 400,
            learning_rate: 0.005,
            num_negatives: 12,
            mpn: MpnConfig {
                num_layers: 2,
                hidden_dim: 16,
                readout: ReadoutMode::Cost,
            },
            seed,
            ..TrainConfig::default()
        };
        let out = train(
            &[TrainGraph {
                graph: g.clone(),
                gt: gt.clone(),
            }],
            &cfg,
        )
        .unwrap();
        assert!(out.converged, "seed {seed} never got below epsilon");

        let (costs, _) = out.model.forward(&g, &out.store);
        let trk = build_tracking_graph(&g, cfg.c_en, cfg.c_ex).unwrap();
        let costed = transfer_costs(&costs, &trk).unwrap();
        let solved = track_by_ssp(&costed).unwrap();
        assert!(
            solved.path_set.same_paths(&gt),
            "seed {seed}: got {:?}",
            solved.path_set.paths
        );
    }
}

#[test]
fn loss_history_reaches_epsilon_and_records_both_stages() {
    let (g, gt) = six_detection_problem();
    let cfg = TrainConfig {
        stage1_max_iters: 40,
        stage2_epsilon: 1e-3,
        stage2_max_epochs: 400,
        learning_rate: 0.005,
        num_negatives: 8,
        mpn: MpnConfig {
            num_layers: 2,
            hidden_dim: 16,
            readout: ReadoutMode::Cost,
        },
        seed: 5,
        ..TrainConfig::default()
    };
    let out = train(&[TrainGraph { graph: g, gt }], &cfg).unwrap();
    assert!(out.history.iter().any(|r| r.stage == 1));
    assert!(out.history.iter().any(|r| r.stage == 2));
    let last = out.history.last().unwrap();
    assert_eq!(last.stage, 2);
    assert!(last.mean_total < 1e-3);
}
