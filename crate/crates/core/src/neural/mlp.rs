//! Multilayer perceptrons with exact reverse-mode gradients.
//!
//! Forward passes append their intermediates to a [`Tape`]; the backward
//! pass replays one recorded call, accumulating parameter gradients into a
//! flat θ-shaped buffer and returning the gradient with respect to the call
//! input so composite models can chain gradients between calls. Backward
//! must see the same θ the forward pass used; training loops update θ only
//! after the backward pass, which keeps that contract trivially true.

use serde::{Deserialize, Serialize};

use super::mat::{affine_backward, affine_forward, Mat};

/// Output nonlinearity of an MLP; hidden layers are always rectified linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Raw affine output (edge costs, logits).
    Identity,
    /// Logistic sigmoid output in (0, 1) (edge beliefs).
    Logistic,
}

/// Shape of one MLP: layer widths input -> hidden... -> output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, output_activation: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        assert!(widths.iter().all(|&w| w >= 1), "layer widths must be >= 1");
        MlpSpec {
            widths,
            output_activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    /// Total number of parameters (weights + biases over all layers).
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

/// Index of one recorded forward call in a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CallId(pub(crate) usize);

struct CallRecord {
    spec: MlpSpec,
    /// Offset of this MLP's parameter segment within θ.
    offset: usize,
    input: Mat,
    /// Post-activation output of every layer, in order.
    acts: Vec<Mat>,
    used: bool,
}

/// Recorded intermediates of forward passes, consumed once by backward.
#[derive(Default)]
pub struct Tape {
    calls: Vec<CallRecord>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn output(&self, id: CallId) -> &Mat {
        self.calls[id.0].acts.last().unwrap()
    }

    pub fn call_count(&self) -> usize {
        self.calls.len()
    }
}

/// Batched forward pass: `input` is `batch x in_width`, one row per sample.
pub fn mlp_forward_batch(
    tape: &mut Tape,
    spec: &MlpSpec,
    theta: &[f64],
    offset: usize,
    input: Mat,
) -> CallId {
    assert_eq!(
        input.cols(),
        spec.input_width(),
        "mlp input width mismatch: got {}, spec wants {}",
        input.cols(),
        spec.input_width()
    );
    let mut acts = Vec::with_capacity(spec.layer_count());
    let mut x = &input;
    let mut at = offset;
    for l in 0..spec.layer_count() {
        let (in_w, out_w) = (spec.widths[l], spec.widths[l + 1]);
        let w = &theta[at..at + out_w * in_w];
        let b = &theta[at + out_w * in_w..at + out_w * in_w + out_w];
        at += out_w * in_w + out_w;
        let mut y = affine_forward(x, w, b, out_w);
        let last = l == spec.layer_count() - 1;
        if !last {
            for v in y.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        } else if spec.output_activation == Activation::Logistic {
            for v in y.data_mut() {
                *v = 1.0 / (1.0 + (-*v).exp());
            }
        }
        acts.push(y);
        x = acts.last().unwrap();
    }
    tape.calls.push(CallRecord {
        spec: spec.clone(),
        offset,
        input,
        acts,
        used: false,
    });
    CallId(tape.calls.len() - 1)
}

/// Batched backward pass for one recorded call.
///
/// Accumulates parameter gradients into the θ-shaped `grad` buffer and
/// returns d(upstream · output)/d(input). Panics on tape reuse or if the
/// upstream shape does not match the recorded output.
pub fn mlp_backward_batch(
    tape: &mut Tape,
    id: CallId,
    theta: &[f64],
    upstream: &Mat,
    grad: &mut [f64],
) -> Mat {
    let rec = &mut tape.calls[id.0];
    assert!(!rec.used, "tape call consumed twice");
    rec.used = true;
    let spec = rec.spec.clone();
    assert_eq!(upstream.rows(), rec.input.rows(), "upstream batch mismatch");
    assert_eq!(
        upstream.cols(),
        spec.output_width(),
        "upstream width mismatch"
    );

    let mut offsets = Vec::with_capacity(spec.layer_count());
    let mut at = rec.offset;
    for l in 0..spec.layer_count() {
        offsets.push(at);
        at += spec.widths[l + 1] * spec.widths[l] + spec.widths[l + 1];
    }

    let mut dy = upstream.clone();
    for l in (0..spec.layer_count()).rev() {
        let (in_w, out_w) = (spec.widths[l], spec.widths[l + 1]);
        let act = &rec.acts[l];
        let last = l == spec.layer_count() - 1;
        if !last {
            // ReLU': pass gradient only where the unit was active.
            for r in 0..dy.rows() {
                let a = act.row(r);
                let d = dy.row_mut(r);
                for (dv, av) in d.iter_mut().zip(a) {
                    if *av <= 0.0 {
                        *dv = 0.0;
                    }
                }
            }
        } else if spec.output_activation == Activation::Logistic {
            for r in 0..dy.rows() {
                let a = act.row(r);
                let d = dy.row_mut(r);
                for (dv, av) in d.iter_mut().zip(a) {
                    *dv *= av * (1.0 - av);
                }
            }
        }
        let x = if l == 0 { &rec.input } else { &rec.acts[l - 1] };
        let w_at = offsets[l];
        let w = &theta[w_at..w_at + out_w * in_w];
        let (dw, db) = grad[w_at..w_at + out_w * in_w + out_w].split_at_mut(out_w * in_w);
        dy = affine_backward(x, w, &dy, dw, db);
    }
    dy
}

/// Single-sample forward; convenience wrapper over the batched path.
pub fn mlp_forward(
    tape: &mut Tape,
    spec: &MlpSpec,
    theta: &[f64],
    offset: usize,
    x: &[f64],
) -> (CallId, Vec<f64>) {
    let input = Mat::from_vec(1, x.len(), x.to_vec());
    let id = mlp_forward_batch(tape, spec, theta, offset, input);
    (id, tape.output(id).row(0).to_vec())
}

/// Single-sample backward; returns the input gradient.
pub fn mlp_backward(
    tape: &mut Tape,
    id: CallId,
    theta: &[f64],
    upstream: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let up = Mat::from_vec(1, upstream.len(), upstream.to_vec());
    mlp_backward_batch(tape, id, theta, &up, grad).row(0).to_vec()
}
