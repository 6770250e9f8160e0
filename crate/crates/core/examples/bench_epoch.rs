use flowtrack_core::graph::{build_detection_graph, build_tracking_graph, transfer_costs};
use flowtrack_core::metrics::mota;
use flowtrack_core::mpn::{FeatureNorm, MpnConfig, ReadoutMode};
use flowtrack_core::scenario::*;
use flowtrack_core::solver::track_by_ssp;
use flowtrack_core::training::{extract_gt_paths, train, TrainConfig, TrainGraph};
use std::time::Instant;

fn scenario_cfg(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        num_frames: 100,
        frame_dt: 1.0,
        scene_bounds: SceneBounds { min: [0.0, 0.0], max: [60.0, 60.0] },
        num_targets: 3,
        motion_model: MotionModel::OrnsteinUhlenbeck { reversion_rate: 0.1, diffusion: 0.01 },
        lifespan: LifespanPolicy::Random { birth_frac: 0.4, death_frac: 0.4, min_frames: 10 },
        init_speed: 0.8,
        detect_prob: 1.0,
        meas_sigma: 0.2,
        fa_rate: 20.0,
        reid: ReidConfig { dim: 2, strength_kl_nats: 3.125, feature_sigma: 1.0, noisy_extra_dims: 0 },
        seed,
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let k: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let gate: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let mut graphs = Vec::new();
    let mut scenarios = Vec::new();
    for i in 0..k {
        let cfg = scenario_cfg(seed * 100 + i as u64);
        let s = Scenario::generate(&cfg).unwrap();
        let g = build_detection_graph(&s.detections, 1, gate).unwrap();
        let gt = extract_gt_paths(&s, &g);
        graphs.push(TrainGraph { graph: g, gt });
        scenarios.push(s);
    }
    println!("k={k} gate={gate} links: {:?}", graphs.iter().map(|g| g.graph.links.len()).collect::<Vec<_>>());

    let cfg = TrainConfig {
        stage1_max_iters: 100,
        stage2_max_epochs: 150,
        stage2_epsilon: 1e-3,
        learning_rate: 0.001,
        num_negatives: 48, margin: 2.0,
        mpn: MpnConfig { num_layers: 4, hidden_dim: 64, readout: ReadoutMode::Cost },
        norm: FeatureNorm::for_scene([0.0, 0.0], [60.0, 60.0]),
        seed,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let out = train(&graphs, &cfg).unwrap();
    let s2: Vec<f64> = out.history.iter().filter(|r| r.stage == 2).map(|r| r.mean_total).collect();
    println!("stage2 epochs {} last {:.6} converged {} in {:?}", s2.len(), s2.last().unwrap(), out.converged, t0.elapsed());

    let eval = |s: &Scenario| -> f64 {
        let g = build_detection_graph(&s.detections, 1, gate).unwrap();
        let (costs, _) = out.model.forward(&g, &out.store);
        let trk = build_tracking_graph(&g, cfg.c_en, cfg.c_ex).unwrap();
        let costed = transfer_costs(&costs, &trk).unwrap();
        let solved = track_by_ssp(&costed).unwrap();
        mota(&solved.path_set, s).unwrap().mota
    };
    let train_motas: Vec<f64> = scenarios.iter().map(|s| eval(s)).collect();
    println!("train MOTA {:?}", train_motas.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>());
    for t in 0..3 {
        let tc = scenario_cfg(seed * 100 + 7000 + t);
        let ts = Scenario::generate(&tc).unwrap();
        println!("test{t} MOTA {:.4}", eval(&ts));
    }
}
