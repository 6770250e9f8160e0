//! Differentiable building blocks: MLPs with reverse-mode gradients, a flat
//! parameter store, and an Adam optimizer. No external learning framework;
//! everything runs in double precision.

pub mod mat;
pub mod mlp;
pub mod store;

pub use mat::Mat;
pub use mlp::{
    mlp_backward, mlp_backward_batch, mlp_forward, mlp_forward_batch, Activation, CallId, MlpSpec,
    Tape,
};
pub use store::{ParamSegment, ParamStore};
