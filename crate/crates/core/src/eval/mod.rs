//! Greedy generation and the automatic metric suite.

mod decode;
mod metrics;

pub use decode::{generate_n, greedy_decode, GenerationRecord};
pub use metrics::{bleu_n, coherence, distinct_n, embedding_average, evaluate, length_avg, EvalItem, MetricReport};
