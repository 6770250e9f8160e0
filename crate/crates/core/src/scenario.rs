//! Deterministic generation of synthetic multi-target scenarios.
//!
//! A scenario is ground-truth trajectories plus the detection set (true
//! detections, clutter, ReID vectors) for one temporal window. Everything is
//! a pure function of (config, seed): the same pair reproduces the scenario
//! byte for byte after serialization.
//!
//! ReID features come from one isotropic Gaussian component per target plus
//! a shared background component for clutter. Foreground/background overlap
//! is controlled through the closed-form KL divergence between isotropic
//! Gaussians, KL = ||Δμ||² / (2σ²), so the named strength categories are
//! realized exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::{DetId, TargetId};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

/// Axis-aligned 2D scene box, length units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl SceneBounds {
    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }
}

/// Target dynamics over discrete frames; state is (position, velocity).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MotionModel {
    /// White-noise-acceleration model with power spectral density `process_noise_psd`.
    ConstantVelocity { process_noise_psd: f64 },
    /// Velocity mean-reverts to zero at `reversion_rate` (1/frame) with
    /// diffusion PSD `diffusion`.
    OrnsteinUhlenbeck { reversion_rate: f64, diffusion: f64 },
}

/// Per-target birth/death frame sampling rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LifespanPolicy {
    /// Every target is alive for the whole window.
    FullWindow,
    /// Birth uniform in the first `birth_frac` of frames, death uniform in
    /// the last `death_frac`, lifespan at least `min_frames` (clamped to the
    /// window length).
    Random {
        birth_frac: f64,
        death_frac: f64,
        min_frames: u32,
    },
}

impl Default for LifespanPolicy {
    fn default() -> Self {
        LifespanPolicy::Random {
            birth_frac: 0.4,
            death_frac: 0.4,
            min_frames: 10,
        }
    }
}

/// ReID feature generation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReidConfig {
    /// Informative feature dimensions.
    #[serde(default = "default_reid_dim")]
    pub dim: usize,
    /// Foreground/background KL divergence in nats. Categories: very weak
    /// 0.02, weak 0.5, moderate 3.125, strong 12.5.
    pub strength_kl_nats: f64,
    /// Per-dimension standard deviation of both components.
    #[serde(default = "default_feature_sigma")]
    pub feature_sigma: f64,
    /// Appended pure-noise dimensions (i.i.d. standard normal on every
    /// detection, target or clutter).
    #[serde(default)]
    pub noisy_extra_dims: usize,
}

fn default_reid_dim() -> usize {
    2
}

fn default_feature_sigma() -> f64 {
    1.0
}

impl ReidConfig {
    /// Total ReID vector length carried by each detection.
    pub fn total_dim(&self) -> usize {
        self.dim + self.noisy_extra_dims
    }
}

/// Named ReID strength categories and their KL divergences in nats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReidStrength {
    VeryWeak,
    Weak,
    Moderate,
    Strong,
}

impl ReidStrength {
    pub fn kl_nats(self) -> f64 {
        match self {
            ReidStrength::VeryWeak => 0.02,
            ReidStrength::Weak => 0.5,
            ReidStrength::Moderate => 3.125,
            ReidStrength::Strong => 12.5,
        }
    }
}

/// Full configuration of one synthetic scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub num_frames: u32,
    #[serde(default = "default_frame_dt")]
    pub frame_dt: f64,
    pub scene_bounds: SceneBounds,
    pub num_targets: usize,
    pub motion_model: MotionModel,
    #[serde(default)]
    pub lifespan: LifespanPolicy,
    /// Initial speed scale: speeds are sampled uniform in [0.5, 1]·init_speed.
    #[serde(default = "default_init_speed")]
    pub init_speed: f64,
    #[serde(default = "default_detect_prob")]
    pub detect_prob: f64,
    #[serde(default = "default_meas_sigma")]
    pub meas_sigma: f64,
    /// Expected false alarms per frame (Poisson).
    pub fa_rate: f64,
    pub reid: ReidConfig,
    pub seed: u64,
}

fn default_frame_dt() -> f64 {
    1.0
}

fn default_init_speed() -> f64 {
    1.0
}

fn default_detect_prob() -> f64 {
    1.0
}

fn default_meas_sigma() -> f64 {
    0.2
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 1 {
            return Err(invalid("num_frames", "must be >= 1"));
        }
        if !(self.frame_dt > 0.0) {
            return Err(invalid("frame_dt", "must be > 0"));
        }
        if self.scene_bounds.width() <= 0.0 || self.scene_bounds.height() <= 0.0 {
            return Err(invalid("scene_bounds", "must have positive area"));
        }
        if !(0.0..=1.0).contains(&self.detect_prob) {
            return Err(invalid("detect_prob", "must lie in [0, 1]"));
        }
        if !(self.meas_sigma >= 0.0) {
            return Err(invalid("meas_sigma", "must be >= 0"));
        }
        if !(self.fa_rate >= 0.0) {
            return Err(invalid("fa_rate", "must be >= 0"));
        }
        if !(self.init_speed >= 0.0) {
            return Err(invalid("init_speed", "must be >= 0"));
        }
        if self.reid.dim < 1 {
            return Err(invalid("reid.dim", "must be >= 1"));
        }
        if !(self.reid.strength_kl_nats >= 0.0) {
            return Err(invalid("reid.strength_kl_nats", "must be >= 0"));
        }
        if !(self.reid.feature_sigma > 0.0) {
            return Err(invalid("reid.feature_sigma", "must be > 0"));
        }
        match self.motion_model {
            MotionModel::ConstantVelocity { process_noise_psd } => {
                if !(process_noise_psd >= 0.0) {
                    return Err(invalid("motion_model.process_noise_psd", "must be >= 0"));
                }
            }
            MotionModel::OrnsteinUhlenbeck {
                reversion_rate,
                diffusion,
            } => {
                if !(reversion_rate >= 0.0) {
                    return Err(invalid("motion_model.reversion_rate", "must be >= 0"));
                }
                if !(diffusion >= 0.0) {
                    return Err(invalid("motion_model.diffusion", "must be >= 0"));
                }
            }
        }
        if let LifespanPolicy::Random {
            birth_frac,
            death_frac,
            ..
        } = self.lifespan
        {
            if !(0.0..=1.0).contains(&birth_frac) || !(0.0..=1.0).contains(&death_frac) {
                return Err(invalid("lifespan", "fractions must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

fn invalid(field: &'static str, message: &str) -> CoreError {
    CoreError::InvalidConfig {
        field,
        message: message.to_string(),
    }
}

/// Where a detection came from. Ground-truth metadata only: graph
/// construction, the cost network, and the solver never read it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DetectionSource {
    Target { target_id: TargetId },
    Clutter,
}

/// One point detection with kinematic and ReID components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub det_id: DetId,
    /// Time index in [1, num_frames].
    pub frame: u32,
    pub position: [f64; 2],
    pub reid: Vec<f64>,
    pub source: DetectionSource,
}

/// True state of one target at one frame, with the detection it produced
/// (present iff the detection-probability draw succeeded).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthState {
    pub frame: u32,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub det_id: Option<DetId>,
}

/// Ground-truth trajectory of one target over its lifespan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetTrack {
    pub target_id: TargetId,
    /// Mean of this target's ReID component (informative dims only).
    pub reid_mean: Vec<f64>,
    pub states: Vec<TruthState>,
}

impl TargetTrack {
    pub fn birth_frame(&self) -> u32 {
        self.states.first().map_or(0, |s| s.frame)
    }

    pub fn death_frame(&self) -> u32 {
        self.states.last().map_or(0, |s| s.frame)
    }

    pub fn state_at(&self, frame: u32) -> Option<&TruthState> {
        if frame < self.birth_frame() || frame > self.death_frame() {
            return None;
        }
        self.states.get((frame - self.birth_frame()) as usize)
    }
}

/// All target trajectories of one scenario.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub tracks: Vec<TargetTrack>,
}

impl GroundTruth {
    pub fn count_at_frame(&self, frame: u32) -> usize {
        self.tracks
            .iter()
            .filter(|t| t.state_at(frame).is_some())
            .count()
    }
}

/// A complete generated scenario: config, truth, and detections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub format_version: u32,
    pub config: ScenarioConfig,
    pub ground_truth: GroundTruth,
    pub detections: Vec<Detection>,
}

/// Foreground/background mean separation realizing `kl_nats` of divergence
/// between isotropic Gaussians with per-dimension deviation `feature_sigma`:
/// ||Δμ|| = σ · sqrt(2 · KL).
pub fn reid_separation(kl_nats: f64, feature_sigma: f64) -> f64 {
    assert!(kl_nats >= 0.0 && feature_sigma > 0.0);
    feature_sigma * (2.0 * kl_nats).sqrt()
}

fn sample_unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn sample_lifespan(policy: LifespanPolicy, num_frames: u32, rng: &mut ChaCha8Rng) -> (u32, u32) {
    match policy {
        LifespanPolicy::FullWindow => (1, num_frames),
        LifespanPolicy::Random {
            birth_frac,
            death_frac,
            min_frames,
        } => {
            let min_len = min_frames.clamp(1, num_frames);
            let birth_hi = ((num_frames as f64 * birth_frac).ceil() as u32).clamp(1, num_frames);
            let death_lo = (num_frames + 1)
                .saturating_sub(((num_frames as f64 * death_frac).ceil() as u32).max(1))
                .clamp(1, num_frames);
            let mut birth = rng.random_range(1..=birth_hi);
            let mut death = rng.random_range(death_lo..=num_frames);
            if death < birth {
                std::mem::swap(&mut birth, &mut death);
            }
            if death - birth + 1 < min_len {
                death = (birth + min_len - 1).min(num_frames);
                if death - birth + 1 < min_len {
                    birth = (death + 1).saturating_sub(min_len).max(1);
                }
            }
            (birth, death)
        }
    }
}

/// Simulate one trajectory per target under the configured dynamics from a
/// uniform-in-bounds initial position. Deterministic given the config seed.
pub fn simulate_targets(config: &ScenarioConfig) -> Result<GroundTruth> {
    config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    // Independent per-target streams so per-target draws stay stable.
    let sub_seeds: Vec<u64> = (0..config.num_targets).map(|_| master.random()).collect();
    let sep = reid_separation(config.reid.strength_kl_nats, config.reid.feature_sigma);
    let dt = config.frame_dt;

    let mut tracks = Vec::with_capacity(config.num_targets);
    for (k, &sub_seed) in sub_seeds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed);
        let (birth, death) = sample_lifespan(config.lifespan, config.num_frames, &mut rng);
        let b = &config.scene_bounds;
        let mut pos = [
            rng.random_range(b.min[0]..b.max[0]),
            rng.random_range(b.min[1]..b.max[1]),
        ];
        let speed = if config.init_speed > 0.0 {
            rng.random_range(0.5 * config.init_speed..config.init_speed)
        } else {
            0.0
        };
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let mut vel = [speed * angle.cos(), speed * angle.sin()];
        let reid_dir = sample_unit_vector(config.reid.dim, &mut rng);
        let reid_mean: Vec<f64> = reid_dir.iter().map(|d| d * sep).collect();

        let mut states = Vec::with_capacity((death - birth + 1) as usize);
        for frame in birth..=death {
            if frame > birth {
                step_state(&mut pos, &mut vel, config.motion_model, dt, &mut rng);
            }
            states.push(TruthState {
                frame,
                position: pos,
                velocity: vel,
                det_id: None,
            });
        }
        tracks.push(TargetTrack {
            target_id: TargetId(k as u32),
            reid_mean,
            states,
        });
    }
    Ok(GroundTruth { tracks })
}

fn step_state(
    pos: &mut [f64; 2],
    vel: &mut [f64; 2],
    model: MotionModel,
    dt: f64,
    rng: &mut ChaCha8Rng,
) {
    match model {
        MotionModel::ConstantVelocity { process_noise_psd } => {
            // Discretized white-noise acceleration: position picks up the
            // half-step velocity noise term, velocity a random walk.
            let q = process_noise_psd;
            let sv = (q * dt).sqrt();
            let sp = (q * dt.powi(3) / 3.0).sqrt();
            for a in 0..2 {
                let nv: f64 = rng.sample(StandardNormal);
                let np: f64 = rng.sample(StandardNormal);
                pos[a] += vel[a] * dt + sp * np;
                vel[a] += sv * nv;
            }
        }
        MotionModel::OrnsteinUhlenbeck {
            reversion_rate,
            diffusion,
        } => {
            let lambda = reversion_rate;
            let decay = (-lambda * dt).exp();
            // Exact transition variance of the OU velocity; λ→0 limit is q·dt.
            let var = if lambda > 1e-12 {
                diffusion / (2.0 * lambda) * (1.0 - (-2.0 * lambda * dt).exp())
            } else {
                diffusion * dt
            };
            let sv = var.sqrt();
            for a in 0..2 {
                let n: f64 = rng.sample(StandardNormal);
                pos[a] += vel[a] * dt;
                vel[a] = vel[a] * decay + sv * n;
            }
        }
    }
}

/// Default OU diffusion so the RMS positional excursion over the window is
/// roughly `excursion_frac` of the scene width.
pub fn default_ou_diffusion(
    scene_width: f64,
    num_frames: u32,
    frame_dt: f64,
    reversion_rate: f64,
    excursion_frac: f64,
) -> f64 {
    // Integrated-OU displacement variance ≈ (2 σ_v² / λ) · T for T ≫ 1/λ,
    // with σ_v² = q / (2λ): solve for q.
    let total_t = num_frames as f64 * frame_dt;
    let target = (excursion_frac * scene_width).powi(2);
    reversion_rate.max(1e-6).powi(2) * target / total_t.max(1.0)
}

/// Emit detections for the simulated ground truth, recording each target
/// detection's id back into the truth states. Within a frame, target
/// detections come first (in target order), then clutter.
pub fn generate_detections(gt: &mut GroundTruth, config: &ScenarioConfig) -> Vec<Detection> {
    // Detection draws use a stream independent of the trajectory streams.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);

    let sigma_f = config.reid.feature_sigma;
    let n_noise = config.reid.noisy_extra_dims;
    let mut detections = Vec::new();
    let mut next_id = 0u32;

    for frame in 1..=config.num_frames {
        for track in gt.tracks.iter_mut() {
            let birth = track.birth_frame();
            if track.states.is_empty() || frame < birth || frame > track.death_frame() {
                continue;
            }
            let idx = (frame - birth) as usize;
            let detected =
                config.detect_prob >= 1.0 || rng.random_range(0.0..1.0) < config.detect_prob;
            if !detected {
                continue;
            }
            let state = &mut track.states[idx];
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            let position = [
                state.position[0] + config.meas_sigma * nx,
                state.position[1] + config.meas_sigma * ny,
            ];
            let mut reid: Vec<f64> = track
                .reid_mean
                .iter()
                .map(|m| m + sigma_f * rng.sample::<f64, _>(StandardNormal))
                .collect();
            for _ in 0..n_noise {
                reid.push(rng.sample(StandardNormal));
            }
            let det_id = DetId(next_id);
            next_id += 1;
            state.det_id = Some(det_id);
            detections.push(Detection {
                det_id,
                frame,
                position,
                reid,
                source: DetectionSource::Target {
                    target_id: track.target_id,
                },
            });
        }

        let n_clutter = if config.fa_rate > 0.0 {
            Poisson::new(config.fa_rate).unwrap().sample(&mut rng) as u64
        } else {
            0
        };
        let b = &config.scene_bounds;
        for _ in 0..n_clutter {
            let position = [
                rng.random_range(b.min[0]..b.max[0]),
                rng.random_range(b.min[1]..b.max[1]),
            ];
            let mut reid: Vec<f64> = (0..config.reid.dim)
                .map(|_| sigma_f * rng.sample::<f64, _>(StandardNormal))
                .collect();
            for _ in 0..n_noise {
                reid.push(rng.sample(StandardNormal));
            }
            let det_id = DetId(next_id);
            next_id += 1;
            detections.push(Detection {
                det_id,
                frame,
                position,
                reid,
                source: DetectionSource::Clutter,
            });
        }
    }
    detections
}

impl Scenario {
    /// Generate a full scenario from a validated config.
    pub fn generate(config: &ScenarioConfig) -> Result<Scenario> {
        let mut gt = simulate_targets(config)?;
        let detections = generate_detections(&mut gt, config);
        Ok(Scenario {
            format_version: SCENARIO_FORMAT_VERSION,
            config: config.clone(),
            ground_truth: gt,
            detections,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Scenario> {
        let s: Scenario = serde_json::from_str(json)?;
        if s.format_version != SCENARIO_FORMAT_VERSION {
            return Err(CoreError::Incompatible(format!(
                "scenario format_version {} (expected {})",
                s.format_version, SCENARIO_FORMAT_VERSION
            )));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }

    /// Lookup table det_id -> detection index.
    pub fn detection_index(&self) -> HashMap<DetId, usize> {
        self.detections
            .iter()
            .enumerate()
            .map(|(i, d)| (d.det_id, i))
            .collect()
    }

    pub fn target_detection_count(&self) -> usize {
        self.detections
            .iter()
            .filter(|d| matches!(d.source, DetectionSource::Target { .. }))
            .count()
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// Small deterministic scenario for unit tests: full-window targets on
    /// gentle constant-velocity motion with moderate ReID features.
    pub(crate) fn toy_scenario(
        num_targets: usize,
        num_frames: u32,
        init_speed: f64,
        fa_rate: f64,
        seed: u64,
    ) -> Scenario {
        let config = ScenarioConfig {
            num_frames,
            frame_dt: 1.0,
            scene_bounds: SceneBounds {
                min: [0.0, 0.0],
                max: [30.0, 30.0],
            },
            num_targets,
            motion_model: MotionModel::ConstantVelocity {
                process_noise_psd: 0.001,
            },
            lifespan: LifespanPolicy::FullWindow,
            init_speed,
            detect_prob: 1.0,
            meas_sigma: 0.1,
            fa_rate,
            reid: ReidConfig {
                dim: 2,
                strength_kl_nats: ReidStrength::Moderate.kl_nats(),
                feature_sigma: 1.0,
                noisy_extra_dims: 0,
            },
            seed,
        };
        Scenario::generate(&config).unwrap()
    }
}
