//! Full-chain gradient checks: d(loss)/dθ through the message-passing
//! network against central finite differences of the complete pipeline
//! (costs -> transfer -> solve -> set loss), re-solving at every probe.
//! The solved path set enters the loss as a constant, and away from cost
//! ties the finite differences of the re-solved loss converge to exactly
//! that gradient.
//!
//! The loss surface is piecewise smooth (rectifier units, hinge terms, and
//! solver argmin changes), so a single step size can straddle a kink. Each
//! component is therefore probed over a ladder of shrinking steps and
//! accepted when any scale matches; a wrong analytic gradient fails at
//! every scale.

use flowtrack_core::graph::{build_detection_graph, build_tracking_graph, transfer_costs};
use flowtrack_core::mpn::{MpnConfig, MpnModel, ReadoutMode};
use flowtrack_core::neural::ParamStore;
use flowtrack_core::scenario::{Detection, DetectionSource};
use flowtrack_core::solver::{track_by_ssp, PathSet};
use flowtrack_core::training::{set_loss, stage1_loss, NegativePath, PerturbMove};
use flowtrack_core::{DetId, DetectionGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(rng: &mut ChaCha8Rng, max_dets: usize) -> (DetectionGraph, PathSet) {
    // Two meandering tracks plus occasional clutter, small enough to solve
    // instantly.
    let n_frames = rng.random_range(3..=5u32);
    let mut dets = Vec::new();
    let mut id = 0u32;
    let mut gt = vec![Vec::new(), Vec::new()];
    for f in 1..=n_frames {
        for (t, track) in gt.iter_mut().enumerate() {
            if dets.len() >= max_dets {
                break;
            }
            let base = t as f64 * 2.0;
            dets.push(Detection {
                det_id: DetId(id),
                frame: f,
                position: [
                    f as f64 * 0.4 + rng.random_range(-0.1..0.1),
                    base + rng.random_range(-0.3..0.3),
                ],
                reid: vec![
                    t as f64 * 2.0 - 1.0 + rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                ],
                source: DetectionSource::Clutter,
            });
            track.push(DetId(id));
            id += 1;
        }
        if dets.len() < max_dets && rng.random_range(0..3u8) == 0 {
            dets.push(Detection {
                det_id: DetId(id),
                frame: f,
                position: [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)],
                reid: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                source: DetectionSource::Clutter,
            });
            id += 1;
        }
    }
    let g = build_detection_graph(&dets, 2, 1000.0).unwrap();
    (g, PathSet { paths: gt })
}

/// Five-point central difference of `f` in coordinate `i`, matched against
/// `analytic` over a ladder of step sizes. Returns the best relative error.
fn fd_ladder(
    f: &mut dyn FnMut(&ParamStore) -> f64,
    store: &ParamStore,
    i: usize,
    analytic: f64,
) -> f64 {
    let x = store.theta()[i];
    let mut best = f64::INFINITY;
    for &h in &[1e-3, 3e-4, 1e-4, 1e-5, 1e-6] {
        let mut vals = [0.0; 4];
        for (k, off) in [-2.0 * h, -h, h, 2.0 * h].iter().enumerate() {
            let mut s = store.clone();
            s.theta_mut()[i] = x + off;
            vals[k] = f(&s);
        }
        let fd = (vals[0] - 8.0 * vals[1] + 8.0 * vals[2] - vals[3]) / (12.0 * h);
        let denom = analytic.abs().max(fd.abs());
        let rel = if denom > 1e-8 {
            (analytic - fd).abs() / denom
        } else {
            0.0
        };
        best = best.min(rel);
        if best <= 1e-4 {
            break;
        }
    }
    best
}

#[test]
fn full_chain_gradient_matches_finite_differences_on_20_graphs() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(90_210);
    let model = MpnModel::new(
        MpnConfig {
            num_layers: 2,
            hidden_dim: 16,
            readout: ReadoutMode::Cost,
        },
        2,
    );
    let mut graphs_with_signal = 0;
    for trial in 0..20 {
        let (g, gt) = random_graph(&mut rng, 10);
        let store = model.init_params(1000 + trial);
        let (costs, mut trace) = model.forward(&g, &store);
        let trk = build_tracking_graph(&g, 1.0, 1.0).unwrap();
        let costed = transfer_costs(&costs, &trk).unwrap();
        let solved = track_by_ssp(&costed).unwrap();
        let report = set_loss(&gt, &solved.path_set, &costed).unwrap();
        let grad = model.backward(&mut trace, &store, &report.dcost).unwrap();
        if report.total > 0.0 {
            graphs_with_signal += 1;
        }

        let mut loss_at = |s: &ParamStore| {
            let (costs, _) = model.forward(&g, s);
            let costed = transfer_costs(&costs, &trk).unwrap();
            let solved = track_by_ssp(&costed).unwrap();
            set_loss(&gt, &solved.path_set, &costed).unwrap().total
        };
        // Probe all components the criterion constrains plus a stride of
        // the rest (exact zeros under inactive rectifier paths).
        let probes: Vec<usize> = (0..store.len())
            .filter(|&i| grad[i].abs() > 1e-8 || i % 5 == 0)
            .collect();
        for &i in &probes {
            let rel = fd_ladder(&mut loss_at, &store, i, grad[i]);
            assert!(
                rel <= 1e-4,
                "trial {trial} param {i}: analytic {} (rel {rel})",
                grad[i]
            );
        }
    }
    assert!(graphs_with_signal >= 10, "too many zero-loss draws");
    assert!(
        start.elapsed().as_secs() < 120,
        "gradient sweep exceeded two minutes"
    );
}

#[test]
fn stage1_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = MpnModel::new(
        MpnConfig {
            num_layers: 2,
            hidden_dim: 16,
            readout: ReadoutMode::Cost,
        },
        2,
    );
    let (g, gt) = random_graph(&mut rng, 6);
    // Truncations of the ground-truth paths are always valid negatives.
    let negatives: Vec<NegativePath> = gt
        .paths
        .iter()
        .filter(|p| p.len() >= 2)
        .map(|p| NegativePath {
            det_ids: p[1..].to_vec(),
            move_kind: PerturbMove::Truncate,
        })
        .collect();
    assert!(!negatives.is_empty());
    let store = model.init_params(77);
    let (costs, mut trace) = model.forward(&g, &store);
    let trk = build_tracking_graph(&g, 1.0, 1.0).unwrap();
    let costed = transfer_costs(&costs, &trk).unwrap();
    let report = stage1_loss(&gt, &negatives, &costed, 1.0).unwrap();
    let grad = model.backward(&mut trace, &store, &report.dcost).unwrap();

    let mut loss_at = |s: &ParamStore| {
        let (costs, _) = model.forward(&g, s);
        let costed = transfer_costs(&costs, &trk).unwrap();
        stage1_loss(&gt, &negatives, &costed, 1.0).unwrap().total
    };
    for i in (0..store.len()).step_by(3) {
        let rel = fd_ladder(&mut loss_at, &store, i, grad[i]);
        assert!(rel <= 1e-4, "param {i}: analytic {} (rel {rel})", grad[i]);
    }
}
