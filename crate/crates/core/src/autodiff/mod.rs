//! Differentiable computation substrate.

pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, DType, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_sampled, relative_error, GradCheck, GRAD_FLOOR};
pub use nn::{
    cosine, gaussian_kl, gru_cell, gru_decode_step, gru_encode, gru_scan, reparameterize, reparameterize_with, GruVars,
    ProjectionVars, NORM_EPS,
};
pub use rng::{Rng, RngState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
