//! Optimization loop, schedules and resumable training state.

mod adam;
mod schedule;
mod trainer;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use schedule::{kl_anneal, lambda_schedule, LambdaSchedule, TrainingConfig};
pub use trainer::{
    fit, load_model, perplexity, score_response, BestTracker, FitReport, TrainStats, Trainer, BEST_CHECKPOINT,
    LAST_CHECKPOINT, TRAIN_LOG, VALID_LOG,
};
