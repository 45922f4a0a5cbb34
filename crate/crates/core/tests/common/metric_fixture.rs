//! Ten candidate/reference pairs with a 3-d embedding table, and metric
//! values computed for them by `fixtures/metrics_oracle.py`.

use segcvae::autodiff::Tensor;
use segcvae::corpus::{EmbeddingTable, Vocabulary, SPECIAL_TOKENS};
use segcvae::eval::{bleu_n, coherence, distinct_n, embedding_average, length_avg};

const PAIRS: &str = include_str!("../fixtures/metrics20.tsv");
const EMBEDDINGS: &str = include_str!("../fixtures/embeddings3.txt");

pub const DISTINCT: [f64; 2] = [0.8536585365853658, 0.967741935483871];
pub const BLEU: [[f64; 10]; 3] = [
    [
        0.75,
        0.6666666666666666,
        0.6,
        0.36787944117144233,
        1.0,
        0.5841005873035536,
        0.49123845184678916,
        0.7788007830714049,
        0.3333333333333333,
        0.5841005873035536,
    ],
    [
        0.6123724356957946,
        0.5773502691896257,
        0.48989794855663565,
        0.36787944117144233,
        0.8944271909999159,
        0.4769161324512283,
        0.40109451635313276,
        0.6744612626270504,
        0.3333333333333333,
        0.4769161324512283,
    ],
    [
        0.49999999999999994,
        0.5108729549290354,
        0.3914867641168864,
        0.36787944117144233,
        0.8434326653017492,
        0.3894003915357024,
        0.32052225320548067,
        0.6181345911606028,
        0.38157141418444396,
        0.3894003915357024,
    ],
];
pub const EMB_AVERAGE: [f64; 10] = [
    0.9280894761265512,
    0.998280066459177,
    0.7512806285114737,
    0.6054078843263984,
    1.0,
    0.9812142904215732,
    0.9163077676942224,
    0.47740263838063507,
    0.5767817311204742,
    0.8730749300666404,
];
pub const COHERENCE: [f64; 10] = [
    0.9689949348298851,
    0.8617838857993971,
    0.47269011874744077,
    -0.033284828301228205,
    0.5060248459170649,
    0.8795779038849018,
    0.8270773268484064,
    0.3312945782245398,
    0.36316039858432564,
    0.9246526519398425,
];
pub const LENGTH: [f64; 2] = [4.1, 4.3];
/// BLEU-2 of candidate 6 against references 1 and 6 together.
pub const BLEU2_MULTI: f64 = 0.40109451635313276;

pub type Sentence = Vec<String>;

pub fn sentences() -> (Vec<Sentence>, Vec<Sentence>) {
    let split = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    PAIRS
        .lines()
        .map(|l| {
            let (c, r) = l.split_once('\t').expect("tab");
            (split(c), split(r))
        })
        .unzip()
}

pub fn vocab() -> Vocabulary {
    let table = EmbeddingTable::parse(EMBEDDINGS).expect("embeddings");
    let words: Vec<String> = EMBEDDINGS
        .lines()
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect();
    let mut data = vec![0.0; SPECIAL_TOKENS.len() * 3];
    for w in &words {
        data.extend_from_slice(table.get(w).unwrap());
    }
    Vocabulary::from_parts(&words, Tensor::new(&[words.len() + SPECIAL_TOKENS.len(), 3], data).unwrap()).unwrap()
}

/// Largest absolute deviation from the oracle table across every metric.
pub fn max_deviation() -> f64 {
    let (cands, refs) = sentences();
    let v = vocab();
    let mut worst: f64 = 0.0;
    let mut see = |got: f64, want: f64| worst = worst.max((got - want).abs());
    for n in 1..=2 {
        see(distinct_n(&cands, n).unwrap(), DISTINCT[n - 1]);
    }
    for i in 0..10 {
        for n in 1..=3 {
            see(bleu_n(&cands[i], &[refs[i].clone()], n).unwrap(), BLEU[n - 1][i]);
        }
        see(embedding_average(&cands[i], &refs[i], &v).unwrap(), EMB_AVERAGE[i]);
        see(coherence(&refs[(i + 1) % 10], &cands[i], &v).unwrap(), COHERENCE[i]);
    }
    see(length_avg(&cands).unwrap(), LENGTH[0]);
    see(length_avg(&refs).unwrap(), LENGTH[1]);
    see(bleu_n(&cands[6], &[refs[1].clone(), refs[6].clone()], 2).unwrap(), BLEU2_MULTI);
    worst
}
