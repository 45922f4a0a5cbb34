//! SegCVAE: prominent-semantics segmentation, latent heads and objective.

mod config;
mod norms;
mod params;
mod segcvae;

pub use config::{Ablation, ModelConfig};
pub use norms::{san, scn, sdn, select_positive, total_loss, NormTerms};
pub use params::{uniform, xavier, Bound, ParamId, ParamStore};
pub use segcvae::{
    BatchObjective, ContextEncoding, ElboTerms, ExampleForward, Frozen, GruIds, SegCvae, TriggerMode, TriggerNetwork,
    LOGVAR_LIMIT,
};
