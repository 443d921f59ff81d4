//! Dense 64-bit numeric substrate.
//!
//! The model is a short fixed pipeline, so each primitive carries its own
//! reverse-mode rule instead of going through a general tape. Kernels work on
//! row-major slices; the [`Tensor`] wrappers add shape checks.

mod adam;
mod checkpoint;
mod gradcheck;
pub mod ops;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, ParamEntry, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use ops::{affine, affine_backward, row_softmax, row_softmax_backward, Activation, AffineGrads};
pub use params::{glorot_bound, Grads, ParamId, ParameterSet};
pub use tensor::Tensor;
