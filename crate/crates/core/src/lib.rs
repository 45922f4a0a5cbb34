//! SegCVAE: a conditional VAE whose latent variable is conditioned on
//! prominent semantics segmented from the context, with tooling for
//! one-to-many / many-to-one dialogue corpora and an evaluation suite.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod model;
pub mod synth;
pub mod training;

pub use autodiff::{Checkpoint, Rng, Tape, Tensor, Var};
pub use corpus::{CdmMode, CdmReport, DialoguePair, EncodedPair, Vocabulary};
pub use error::{Error, Result};
pub use eval::{GenerationRecord, MetricReport};
pub use model::{Ablation, ModelConfig, SegCvae};
pub use training::{Trainer, TrainingConfig};
