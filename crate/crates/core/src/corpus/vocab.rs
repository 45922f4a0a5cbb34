use std::collections::{HashMap, HashSet};

use super::pairs::DialoguePair;
use crate::autodiff::{Rng, Tensor};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Half-width of the uniform range used for rows with no pre-trained vector.
pub const INIT_RANGE: f64 = 0.1;

/// Pre-trained word vectors, one `token v1 v2 ...` per line.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = EmbeddingTable::default();
        for (no, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let v = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("embedding line {}: {e}", no + 1)))?;
            if table.vectors.is_empty() {
                table.dim = v.len();
            } else if v.len() != table.dim {
                return Err(Error::Format(format!(
                    "embedding line {}: {} values, expected {}",
                    no + 1,
                    v.len(),
                    table.dim
                )));
            }
            table.vectors.insert(token.to_string(), v);
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Token/id bijection with the word-embedding matrix `[size, dim]`.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    embedding: Tensor,
}

impl Vocabulary {
    /// Builds from ordinary (non-special) tokens; specials are prepended.
    pub fn from_parts(words: &[String], embedding: Tensor) -> Result<Self> {
        let tokens: Vec<String> = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(words.iter().cloned())
            .collect();
        if embedding.shape().len() != 2 || embedding.rows() != tokens.len() {
            return Err(Error::Shape(format!(
                "embedding {:?} for {} tokens",
                embedding.shape(),
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            index,
            embedding,
        })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn embedding(&self) -> &Tensor {
        &self.embedding
    }

    pub fn with_embedding(&self, embedding: Tensor) -> Result<Self> {
        let words: Vec<String> = self.tokens[SPECIAL_TOKENS.len()..].to_vec();
        Self::from_parts(&words, embedding)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIAL_TOKENS.len()
    }

    /// Ordinary tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[SPECIAL_TOKENS.len()..]
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| !Self::is_special(i))
            .map(|&i| self.tokens[i].clone())
            .collect()
    }

    /// One token per line, specials included.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    /// Parses [`Vocabulary::to_text`] output and attaches `embedding`.
    pub fn from_text(text: &str, embedding: Tensor) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..4].iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b) {
            return Err(Error::Format("vocabulary must start with the special tokens".into()));
        }
        Self::from_parts(&tokens[SPECIAL_TOKENS.len()..], embedding)
    }
}

/// Keeps the `max_size - 4` most frequent tokens (ties broken
/// lexicographically) behind the four specials. Rows come from
/// `source` when present there, otherwise uniform in `[-0.1, 0.1]`;
/// the PAD row is zero.
pub fn build_vocab(
    pairs: &[DialoguePair],
    max_size: usize,
    dim: usize,
    source: Option<&EmbeddingTable>,
    rng: &mut Rng,
) -> Result<Vocabulary> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus("no pairs to build a vocabulary from".into()));
    }
    if max_size < SPECIAL_TOKENS.len() {
        return Err(Error::Domain(format!("max_size {max_size} leaves no room for special tokens")));
    }
    if let Some(src) = source {
        if !src.is_empty() && src.dim() != dim {
            return Err(Error::Shape(format!("embedding source has dim {}, wanted {dim}", src.dim())));
        }
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for p in pairs {
        for t in p.context.iter().chain(&p.response) {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - SPECIAL_TOKENS.len());
    let words: Vec<String> = ranked.iter().map(|(t, _)| t.to_string()).collect();

    let size = words.len() + SPECIAL_TOKENS.len();
    let mut data = Vec::with_capacity(size * dim);
    for i in 0..size {
        if i == PAD {
            data.extend(std::iter::repeat_n(0.0, dim));
            continue;
        }
        let pretrained = (i >= SPECIAL_TOKENS.len())
            .then(|| source.and_then(|s| s.get(&words[i - SPECIAL_TOKENS.len()])))
            .flatten();
        match pretrained {
            Some(v) => data.extend_from_slice(v),
            None => data.extend((0..dim).map(|_| rng.uniform_in(-INIT_RANGE, INIT_RANGE))),
        }
    }
    Vocabulary::from_parts(&words, Tensor::new(&[size, dim], data)?)
}

/// Drops every pair whose context or response is an utterance containing a
/// token outside `vocab`. Idempotent.
pub fn filter_by_vocab(pairs: &[DialoguePair], vocab: &Vocabulary) -> Vec<DialoguePair> {
    filter_by_tokens(pairs, |t| vocab.contains(t))
}

/// [`filter_by_vocab`] against an arbitrary token list, such as the words
/// of a pre-trained embedding file.
pub fn filter_by_tokens(pairs: &[DialoguePair], known: impl Fn(&str) -> bool) -> Vec<DialoguePair> {
    let covered = |u: &[String]| u.iter().all(|t| known(t));
    let bad: HashSet<&[String]> = pairs
        .iter()
        .flat_map(|p| [p.context.as_slice(), p.response.as_slice()])
        .filter(|u| !covered(u))
        .collect();
    pairs
        .iter()
        .filter(|p| !bad.contains(p.context.as_slice()) && !bad.contains(p.response.as_slice()))
        .cloned()
        .collect()
}

/// Fixed-length id sequences for one pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    /// Context ids, PAD-filled to `max_clen`.
    pub context: Vec<usize>,
    /// `BOS w.. EOS` then PAD, `max_clen` long.
    pub response: Vec<usize>,
}

impl EncodedPair {
    /// Non-PAD context positions.
    pub fn context_mask(&self) -> Vec<bool> {
        self.context.iter().map(|&i| i != PAD).collect()
    }

    /// Response word ids with the framing removed.
    pub fn response_words(&self) -> &[usize] {
        let end = self.response.iter().position(|&i| i == EOS).unwrap_or(self.response.len());
        &self.response[1.min(end)..end]
    }
}

/// Truncates and PAD-fills both sides to `max_clen`; unknown tokens map to UNK.
/// The response keeps at most `max_clen - 2` words so the BOS/EOS frame fits.
pub fn encode_pair(pair: &DialoguePair, vocab: &Vocabulary, max_clen: usize) -> Result<EncodedPair> {
    if max_clen < 3 {
        return Err(Error::Domain(format!("max_clen {max_clen} cannot hold a framed response")));
    }
    let mut context: Vec<usize> = pair.context.iter().take(max_clen).map(|t| vocab.id(t)).collect();
    context.resize(max_clen, PAD);
    let mut response = Vec::with_capacity(max_clen);
    response.push(BOS);
    response.extend(pair.response.iter().take(max_clen - 2).map(|t| vocab.id(t)));
    response.push(EOS);
    response.resize(max_clen, PAD);
    Ok(EncodedPair { context, response })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(c: &str, r: &str) -> DialoguePair {
        DialoguePair::from_text(c, r)
    }

    #[test]
    fn vocab_counts_and_caps() {
        let pairs = vec![pair("a b c", "d e"), pair("a", "b")];
        let mut rng = Rng::new(1);
        let v = build_vocab(&pairs, 9, 4, None, &mut rng).unwrap();
        assert_eq!(v.size(), 9);
        assert_eq!(v.embedding().shape(), &[9, 4]);
        assert_eq!(v.get("<pad>"), Some(PAD));
        assert!(v.embedding().row_slice(PAD).iter().all(|&x| x == 0.0));

        let only = build_vocab(&pairs, 4, 4, None, &mut rng).unwrap();
        assert_eq!(only.size(), 4);
        assert!(only.words().is_empty());
    }

    #[test]
    fn ties_break_lexicographically() {
        let pairs = vec![pair("b a", "b a")];
        let v = build_vocab(&pairs, 5, 2, None, &mut Rng::new(0)).unwrap();
        assert_eq!(v.words(), ["a"]);
    }

    #[test]
    fn vocab_errors() {
        assert!(matches!(build_vocab(&[], 10, 2, None, &mut Rng::new(0)), Err(Error::EmptyCorpus(_))));
        assert!(build_vocab(&[pair("a", "b")], 3, 2, None, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn pretrained_rows_are_used() {
        let table = EmbeddingTable::parse("a 1 2\nzz 5 5\n").unwrap();
        let v = build_vocab(&[pair("a", "b")], 10, 2, Some(&table), &mut Rng::new(0)).unwrap();
        assert_eq!(v.embedding().row_slice(v.id("a")), &[1.0, 2.0]);
        let b = v.embedding().row_slice(v.id("b"));
        assert!(b.iter().all(|x| x.abs() <= INIT_RANGE));
        assert!(EmbeddingTable::parse("a 1 2\nb 3\n").is_err());
    }

    #[test]
    fn vocab_text_round_trip() {
        let v = build_vocab(&[pair("x y", "z")], 10, 3, None, &mut Rng::new(2)).unwrap();
        let back = Vocabulary::from_text(&v.to_text(), v.embedding().clone()).unwrap();
        assert_eq!(back.words(), v.words());
    }

    #[test]
    fn filter_drops_pairs_touching_oov_utterances() {
        // B = "b zz" carries the OOV token "zz"
        let pairs = vec![pair("a", "b zz"), pair("a", "c"), pair("b zz", "c")];
        let vocab = build_vocab(&[pair("a", "b c")], 10, 2, None, &mut Rng::new(0)).unwrap();
        let kept = filter_by_vocab(&pairs, &vocab);
        assert_eq!(kept, vec![pair("a", "c")]);
        assert_eq!(filter_by_vocab(&kept, &vocab), kept);

        let all_in = vec![pair("a", "b"), pair("c", "a")];
        assert_eq!(filter_by_vocab(&all_in, &vocab), all_in);
        let all_out = vec![pair("zz", "a"), pair("b", "zz")];
        assert!(filter_by_vocab(&all_out, &vocab).is_empty());
    }

    #[test]
    fn encoding_pads_truncates_and_frames() {
        let vocab = build_vocab(&[pair("a b c", "d")], 20, 2, None, &mut Rng::new(0)).unwrap();
        let e = encode_pair(&pair("a b c", "d qq"), &vocab, 25).unwrap();
        assert_eq!(e.context.len(), 25);
        assert!(e.context[3..].iter().all(|&i| i == PAD));
        assert_eq!(&e.response[..4], &[BOS, vocab.id("d"), UNK, EOS]);
        assert_eq!(e.response.len(), 25);
        assert_eq!(e.response_words(), &[vocab.id("d"), UNK]);

        let long: Vec<String> = (0..30).map(|i| if i % 2 == 0 { "a" } else { "b" }.to_string()).collect();
        let e = encode_pair(&DialoguePair::new(long.clone(), long), &vocab, 25).unwrap();
        assert_eq!(e.context.len(), 25);
        assert!(e.context.iter().all(|&i| i != PAD));
        assert_eq!(e.response[24], EOS);
    }
}
