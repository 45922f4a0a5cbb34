//! Dialogue corpus ingestion, vocabularies, and complex-mapping mining.

mod cdm;
mod pairs;
mod tokenize;
mod vocab;

pub use cdm::{
    assign_split, build_cdm_dataset, build_cdm_dataset_with, mine_cdm, split_bucket, split_general, CdmDataset,
    CdmGroup, CdmMode, CdmReport, DatasetStats, Split, SplitManifest,
};
pub use pairs::{
    extract_single_turn_pairs, pairs_from_corpus, read_dialogues, read_pairs_tsv, write_pairs_tsv, DialoguePair,
    PairSource, Utterance,
};
pub use tokenize::tokenize;
pub use vocab::{
    build_vocab, encode_pair, filter_by_tokens, filter_by_vocab, EmbeddingTable, EncodedPair, Vocabulary, BOS, EOS, INIT_RANGE, PAD,
    SPECIAL_TOKENS, UNK,
};
