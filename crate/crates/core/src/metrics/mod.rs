//! Evaluation of predicted track sets against ground truth.
//!
//! MOTA uses id-based matching (the generator knows which detections are
//! clutter), so no spatial matching step is involved: false positives are
//! predicted clutter detections, false negatives are uncovered target
//! detections, and identity switches count covering-path changes along each
//! target. GOSPA and SIAP compare per-frame track positions (linearly
//! interpolated where a track skips frames) against true target positions.

pub mod assignment;

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{CoreError, Result};
use crate::scenario::{DetectionSource, Scenario};
use crate::solver::PathSet;
use crate::{DetId, TargetId};

pub use assignment::hungarian;

/// CLEAR-MOT style report with rates normalized by ground-truth detections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotReport {
    pub mota: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub ids_rate: f64,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub id_switches: usize,
    pub gt_detections: usize,
}

/// GOSPA components (α = 2), raw p-powered sums over frames plus the
/// per-frame distance summed over frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GospaReport {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_: f64,
    pub cutoff: f64,
    pub order: f64,
}

/// SIAP summary measures, frame-averaged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiapReport {
    pub completeness: f64,
    pub ambiguity: f64,
    pub spuriousness: f64,
    pub pos_error: f64,
    /// Set when no predicted tracks existed (spuriousness reported as 0).
    pub no_tracks: bool,
    /// Set when no associations existed (ambiguity and positional error are
    /// reported as 0).
    pub no_associations: bool,
}

/// ID-matched CLEAR-MOT evaluation.
pub fn mota(pred: &PathSet, scenario: &Scenario) -> Result<MotReport> {
    let det_index = scenario.detection_index();
    // det_id -> covering path.
    let mut covering: HashMap<DetId, usize> = HashMap::new();
    let mut false_positives = 0usize;
    for (pidx, path) in pred.paths.iter().enumerate() {
        for &d in path {
            let Some(&di) = det_index.get(&d) else {
                return Err(CoreError::UnknownDetection(d));
            };
            covering.insert(d, pidx);
            if matches!(scenario.detections[di].source, DetectionSource::Clutter) {
                false_positives += 1;
            }
        }
    }

    // Per-target detections in frame order.
    let mut per_target: HashMap<TargetId, Vec<DetId>> = HashMap::new();
    let mut gt_detections = 0usize;
    for d in &scenario.detections {
        if let DetectionSource::Target { target_id } = d.source {
            per_target.entry(target_id).or_default().push(d.det_id);
            gt_detections += 1;
        }
    }

    let mut false_negatives = 0usize;
    let mut id_switches = 0usize;
    for (_, dets) in per_target.iter() {
        let mut last_path: Option<usize> = None;
        for d in dets {
            match covering.get(d) {
                None => false_negatives += 1,
                Some(&p) => {
                    if let Some(lp) = last_path {
                        if lp != p {
                            id_switches += 1;
                        }
                    }
                    last_path = Some(p);
                }
            }
        }
    }

    if gt_detections == 0 {
        return Err(CoreError::Numeric(
            "MOTA undefined without ground-truth detections".into(),
        ));
    }
    let n = gt_detections as f64;
    let fp_rate = false_positives as f64 / n;
    let fn_rate = false_negatives as f64 / n;
    let ids_rate = id_switches as f64 / n;
    Ok(MotReport {
        mota: 1.0 - (fp_rate + fn_rate + ids_rate),
        fp_rate,
        fn_rate,
        ids_rate,
        false_positives,
        false_negatives,
        id_switches,
        gt_detections,
    })
}

/// Per-frame positions of predicted tracks: detection positions at covered
/// frames, linear interpolation across skipped interior frames.
pub fn track_positions_by_frame(
    pred: &PathSet,
    scenario: &Scenario,
) -> Result<HashMap<u32, Vec<(usize, [f64; 2])>>> {
    let det_index = scenario.detection_index();
    let mut by_frame: HashMap<u32, Vec<(usize, [f64; 2])>> = HashMap::new();
    for (pidx, path) in pred.paths.iter().enumerate() {
        let mut pts: Vec<(u32, [f64; 2])> = Vec::with_capacity(path.len());
        for &d in path {
            let Some(&di) = det_index.get(&d) else {
                return Err(CoreError::UnknownDetection(d));
            };
            let det = &scenario.detections[di];
            pts.push((det.frame, det.position));
        }
        for w in pts.windows(2) {
            let (f0, p0) = w[0];
            let (f1, p1) = w[1];
            by_frame.entry(f0).or_default().push((pidx, p0));
            for f in f0 + 1..f1 {
                let a = (f - f0) as f64 / (f1 - f0) as f64;
                by_frame.entry(f).or_default().push((
                    pidx,
                    [p0[0] + a * (p1[0] - p0[0]), p0[1] + a * (p1[1] - p0[1])],
                ));
            }
        }
        if let Some(&(f, p)) = pts.last() {
            by_frame.entry(f).or_default().push((pidx, p));
        }
    }
    Ok(by_frame)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// One frame of GOSPA (α = 2): returns the raw p-powered localization,
/// missed, and false components.
pub fn gospa_frame(gt: &[[f64; 2]], pred: &[[f64; 2]], c: f64, p: f64) -> (f64, f64, f64) {
    let half_cp = 0.5 * c.powf(p);
    if gt.is_empty() || pred.is_empty() {
        return (
            0.0,
            half_cp * gt.len() as f64,
            half_cp * pred.len() as f64,
        );
    }
    // Hungarian over the capped distance matrix, rows = smaller side.
    let (rows, cols, transposed) = if gt.len() <= pred.len() {
        (gt.len(), pred.len(), false)
    } else {
        (pred.len(), gt.len(), true)
    };
    let mut cost = vec![0.0; rows * cols];
    for r in 0..rows {
        for cc in 0..cols {
            let (g, e) = if transposed {
                (gt[cc], pred[r])
            } else {
                (gt[r], pred[cc])
            };
            cost[r * cols + cc] = dist(g, e).min(c).powf(p);
        }
    }
    let (assigned, _) = hungarian(&cost, rows, cols);
    let mut localization = 0.0;
    let mut matched = 0usize;
    for (r, &cc) in assigned.iter().enumerate() {
        let (g, e) = if transposed {
            (gt[cc], pred[r])
        } else {
            (gt[r], pred[cc])
        };
        let d = dist(g, e);
        // Pairs at or beyond the cutoff count as a miss plus a false track.
        if d < c {
            localization += d.powf(p);
            matched += 1;
        }
    }
    let missed = half_cp * (gt.len() - matched) as f64;
    let false_ = half_cp * (pred.len() - matched) as f64;
    (localization, missed, false_)
}

/// GOSPA with decomposition, summed over frames.
pub fn gospa(pred: &PathSet, scenario: &Scenario, c: f64, p: f64) -> Result<GospaReport> {
    assert!(c > 0.0, "gospa cutoff must be > 0");
    assert!(p >= 1.0, "gospa order must be >= 1");
    let by_frame = track_positions_by_frame(pred, scenario)?;
    let mut total = 0.0;
    let mut localization = 0.0;
    let mut missed = 0.0;
    let mut false_ = 0.0;
    for frame in 1..=scenario.config.num_frames {
        let gt: Vec<[f64; 2]> = scenario
            .ground_truth
            .tracks
            .iter()
            .filter_map(|t| t.state_at(frame).map(|s| s.position))
            .collect();
        let binding = Vec::new();
        let pred_pts: Vec<[f64; 2]> = by_frame
            .get(&frame)
            .unwrap_or(&binding)
            .iter()
            .map(|&(_, p)| p)
            .collect();
        let (loc, miss, fal) = gospa_frame(&gt, &pred_pts, c, p);
        localization += loc;
        missed += miss;
        false_ += fal;
        total += (loc + miss + fal).powf(1.0 / p);
    }
    Ok(GospaReport {
        total,
        localization,
        missed,
        false_,
        cutoff: c,
        order: p,
    })
}

/// SIAP completeness, ambiguity, spuriousness, and positional error.
///
/// Associations are all (track, truth) pairs within `assoc_radius` per
/// frame.
pub fn siap(pred: &PathSet, scenario: &Scenario, assoc_radius: f64) -> Result<SiapReport> {
    assert!(assoc_radius > 0.0, "association radius must be > 0");
    let by_frame = track_positions_by_frame(pred, scenario)?;
    let (mut n_gt, mut n_gt_assoc, mut n_assoc, mut n_tracks, mut n_spurious) =
        (0usize, 0usize, 0usize, 0usize, 0usize);
    let mut err_sum = 0.0;
    for frame in 1..=scenario.config.num_frames {
        let gt: Vec<[f64; 2]> = scenario
            .ground_truth
            .tracks
            .iter()
            .filter_map(|t| t.state_at(frame).map(|s| s.position))
            .collect();
        let binding = Vec::new();
        let tracks = by_frame.get(&frame).unwrap_or(&binding);
        n_gt += gt.len();
        n_tracks += tracks.len();
        let mut track_hit = vec![false; tracks.len()];
        for g in &gt {
            let mut any = false;
            for (ti, &(_, tp)) in tracks.iter().enumerate() {
                let d = dist(*g, tp);
                if d <= assoc_radius {
                    any = true;
                    track_hit[ti] = true;
                    n_assoc += 1;
                    err_sum += d;
                }
            }
            if any {
                n_gt_assoc += 1;
            }
        }
        n_spurious += track_hit.iter().filter(|&&h| !h).count();
    }
    let completeness = if n_gt > 0 {
        n_gt_assoc as f64 / n_gt as f64
    } else {
        0.0
    };
    let no_associations = n_assoc == 0;
    let ambiguity = if n_gt_assoc > 0 {
        n_assoc as f64 / n_gt_assoc as f64
    } else {
        0.0
    };
    let no_tracks = n_tracks == 0;
    let spuriousness = if n_tracks > 0 {
        n_spurious as f64 / n_tracks as f64
    } else {
        0.0
    };
    let pos_error = if n_assoc > 0 {
        err_sum / n_assoc as f64
    } else {
        0.0
    };
    Ok(SiapReport {
        completeness,
        ambiguity,
        spuriousness,
        pos_error,
        no_tracks,
        no_associations,
    })
}
