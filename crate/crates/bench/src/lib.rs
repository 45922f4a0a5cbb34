//! Shared fixtures for the benchmarks.

use segcvae::autodiff::Rng;
use segcvae::corpus::{build_vocab, encode_pair, EncodedPair, Vocabulary};
use segcvae::model::{ModelConfig, SegCvae};
use segcvae::synth::one_to_many;

/// A freshly initialized model over a synthetic one-to-many corpus.
pub struct Fixture {
    pub vocab: Vocabulary,
    pub model: SegCvae,
    pub data: Vec<EncodedPair>,
}

/// `contexts` synthetic contexts, each with 2 to 4 responses, under `cfg`
/// with the vocabulary size filled in.
pub fn fixture(contexts: usize, mut cfg: ModelConfig, seed: u64) -> Fixture {
    let mut rng = Rng::new(seed);
    let pairs = one_to_many(contexts, &mut rng);
    let vocab = build_vocab(&pairs, 1000, cfg.emb_dim, None, &mut rng).expect("vocab");
    cfg.vocab_size = vocab.size();
    let model = SegCvae::for_vocab(cfg.clone(), &vocab, &mut rng).expect("model");
    let data = pairs
        .iter()
        .map(|p| encode_pair(p, &vocab, cfg.max_clen).expect("encode"))
        .collect();
    Fixture { vocab, model, data }
}

pub fn desk(contexts: usize, seed: u64) -> Fixture {
    fixture(contexts, ModelConfig::desk(0), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_is_consistent() {
        let f = desk(8, 1);
        assert_eq!(f.model.config().vocab_size, f.vocab.size());
        assert!(f.data.len() >= 16);
        assert!(f.data.iter().all(|p| p.context.len() == f.model.config().max_clen));
    }
}
