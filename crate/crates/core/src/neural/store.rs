//! Flat parameter vector with named segments and Adam optimizer state.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

use super::mlp::MlpSpec;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// One named slice of θ holding the parameters of a single MLP.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamSegment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub spec: MlpSpec,
}

/// The flat learnable parameter vector θ plus Adam moments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamStore {
    theta: Vec<f64>,
    segments: Vec<ParamSegment>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step: u64,
}

/// He-style uniform fan-in initialization for one MLP's segment:
/// weights uniform in ±sqrt(6/fan_in), biases zero.
pub fn he_uniform_init(spec: &MlpSpec, segment: &mut [f64], rng: &mut ChaCha8Rng) {
    let mut at = 0;
    for l in 0..spec.layer_count() {
        let (in_w, out_w) = (spec.widths[l], spec.widths[l + 1]);
        let limit = (6.0 / in_w as f64).sqrt();
        for w in &mut segment[at..at + out_w * in_w] {
            *w = rng.random_range(-limit..limit);
        }
        at += out_w * in_w;
        for b in &mut segment[at..at + out_w] {
            *b = 0.0;
        }
        at += out_w;
    }
}

impl ParamStore {
    /// Allocate and seed-deterministically initialize parameters for the
    /// given named component functions, in order.
    pub fn init(components: &[(&str, MlpSpec)], seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: usize = components.iter().map(|(_, s)| s.param_count()).sum();
        let mut theta = vec![0.0; total];
        let mut segments = Vec::with_capacity(components.len());
        let mut at = 0;
        for (name, spec) in components {
            let len = spec.param_count();
            he_uniform_init(spec, &mut theta[at..at + len], &mut rng);
            segments.push(ParamSegment {
                name: name.to_string(),
                offset: at,
                len,
                spec: spec.clone(),
            });
            at += len;
        }
        ParamStore {
            theta,
            segments,
            adam_m: vec![0.0; total],
            adam_v: vec![0.0; total],
            step: 0,
        }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn segments(&self) -> &[ParamSegment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> &ParamSegment {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("no parameter segment named `{name}`"))
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn adam_step(&mut self, grad: &[f64], lr: f64) -> Result<()> {
        if grad.len() != self.theta.len() {
            return Err(CoreError::Numeric(format!(
                "gradient length {} does not match |θ| = {}",
                grad.len(),
                self.theta.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(CoreError::Numeric(format!(
                "non-finite gradient entry {} at index {i} (step {})",
                grad[i], self.step
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..self.theta.len() {
            let g = grad[i];
            self.adam_m[i] = ADAM_BETA1 * self.adam_m[i] + (1.0 - ADAM_BETA1) * g;
            self.adam_v[i] = ADAM_BETA2 * self.adam_v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.adam_m[i] / bc1;
            let v_hat = self.adam_v[i] / bc2;
            self.theta[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        Ok(())
    }
}
