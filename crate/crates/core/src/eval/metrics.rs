use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::corpus::{Vocabulary, SPECIAL_TOKENS};
use crate::error::{Error, Result};

fn words<S: AsRef<str>>(sentence: &[S]) -> Vec<&str> {
    sentence
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !SPECIAL_TOKENS.contains(t))
        .collect()
}

/// Unique n-grams over all n-grams, pooled across `responses`.
pub fn distinct_n<S: AsRef<str>>(responses: &[Vec<S>], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    let sentences: Vec<Vec<&str>> = responses.iter().map(|r| words(r)).collect();
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for s in &sentences {
        for g in s.windows(n) {
            total += 1;
            seen.insert(g);
        }
    }
    if total == 0 {
        return Err(Error::Domain(format!("no {n}-grams to count")));
    }
    Ok(seen.len() as f64 / total as f64)
}

fn counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut m = HashMap::new();
    for g in tokens.windows(n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Sentence BLEU up to order `n` with uniform weights. Candidate k-gram
/// counts are clipped by their maximum count in any one reference; orders
/// k >= 2 use add-one smoothing. The brevity penalty uses the reference
/// length closest to the candidate (shorter on ties).
pub fn bleu_n<S: AsRef<str>, R: AsRef<str>>(candidate: &[S], references: &[Vec<R>], n: usize) -> Result<f64> {
    let cand = words(candidate);
    if cand.is_empty() {
        return Err(Error::Domain("empty candidate".into()));
    }
    if n == 0 || references.is_empty() {
        return Err(Error::Domain("bleu needs n >= 1 and at least one reference".into()));
    }
    let refs: Vec<Vec<&str>> = references.iter().map(|r| words(r)).collect();
    let mut log_sum = 0.0;
    for k in 1..=n {
        let mut max_ref: HashMap<&[&str], usize> = HashMap::new();
        for r in &refs {
            for (g, c) in counts(r, k) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let cand_counts = counts(&cand, k);
        let total: usize = cand_counts.values().sum();
        let clipped: usize = cand_counts
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let p = if k == 1 {
            clipped as f64 / total as f64
        } else {
            (clipped + 1) as f64 / (total + 1) as f64
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    let c = cand.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(c), l))
        .expect("nonempty references");
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * (log_sum / n as f64).exp())
}

fn mean_embedding<S: AsRef<str>>(sentence: &[S], vocab: &Vocabulary) -> Result<Vec<f64>> {
    let dim = vocab.dim();
    let mut sum = vec![0.0; dim];
    let mut n = 0usize;
    for t in sentence {
        let Some(id) = vocab.get(t.as_ref()) else { continue };
        if Vocabulary::is_special(id) {
            continue;
        }
        for (s, v) in sum.iter_mut().zip(vocab.embedding().row_slice(id)) {
            *s += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::DegenerateVector(0.0));
    }
    Ok(sum.into_iter().map(|s| s / n as f64).collect())
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n = na.min(nb);
    if n <= crate::autodiff::NORM_EPS {
        return Err(Error::DegenerateVector(n));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Cosine between mean word embeddings; specials and unknown words ignored.
pub fn embedding_average<S: AsRef<str>, R: AsRef<str>>(candidate: &[S], reference: &[R], vocab: &Vocabulary) -> Result<f64> {
    cosine(&mean_embedding(candidate, vocab)?, &mean_embedding(reference, vocab)?)
}

/// Embedding-mean cosine between a context and a response.
pub fn coherence<S: AsRef<str>, R: AsRef<str>>(context: &[S], candidate: &[R], vocab: &Vocabulary) -> Result<f64> {
    embedding_average(context, candidate, vocab)
}

/// Mean number of non-special tokens per response.
pub fn length_avg<S: AsRef<str>>(responses: &[Vec<S>]) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::Domain("no responses".into()));
    }
    let total: usize = responses.iter().map(|r| words(r).len()).sum();
    Ok(total as f64 / responses.len() as f64)
}

/// Corpus-level metric summary.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub contexts: usize,
    pub responses: usize,
    pub bleu: [f64; 3],
    pub distinct: [f64; 2],
    pub embedding_average: f64,
    pub coherence: f64,
    pub length: f64,
    /// Sentence pairs skipped by the embedding metrics for lack of usable words.
    pub skipped: usize,
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "contexts: {}", self.contexts);
        let _ = writeln!(s, "responses: {}", self.responses);
        for (k, v) in self.bleu.iter().enumerate() {
            let _ = writeln!(s, "bleu-{}: {v:.6}", k + 1);
        }
        for (k, v) in self.distinct.iter().enumerate() {
            let _ = writeln!(s, "distinct-{}: {v:.6}", k + 1);
        }
        let _ = writeln!(s, "emb-average: {:.6}", self.embedding_average);
        let _ = writeln!(s, "coherence: {:.6}", self.coherence);
        let _ = writeln!(s, "length: {:.6}", self.length);
        let _ = writeln!(s, "skipped: {}", self.skipped);
        s
    }
}

/// One evaluated context: its words, generated responses and references.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem {
    pub context: Vec<String>,
    pub generated: Vec<Vec<String>>,
    pub references: Vec<Vec<String>>,
}

/// BLEU and Emb.Aver. average every generated response against the
/// references of its context (BLEU jointly, Emb.Aver. per reference);
/// Coherence averages response against context; Distinct and Length pool
/// all generated responses. Empty generations count toward Length but are
/// excluded from BLEU.
pub fn evaluate(items: &[EvalItem], vocab: &Vocabulary) -> Result<MetricReport> {
    if items.is_empty() {
        return Err(Error::EmptyCorpus("nothing to evaluate".into()));
    }
    let all: Vec<Vec<String>> = items.iter().flat_map(|i| i.generated.iter().cloned()).collect();
    let mut bleu = [0.0; 3];
    let mut bleu_count = 0usize;
    let (mut emb, mut emb_n, mut coh, mut coh_n, mut skipped) = (0.0, 0usize, 0.0, 0usize, 0usize);
    for item in items {
        for g in &item.generated {
            if !words(g).is_empty() && !item.references.is_empty() {
                for (k, b) in bleu.iter_mut().enumerate() {
                    *b += bleu_n(g, &item.references, k + 1)?;
                }
                bleu_count += 1;
            }
            for r in &item.references {
                match embedding_average(g, r, vocab) {
                    Ok(v) => {
                        emb += v;
                        emb_n += 1;
                    }
                    Err(Error::DegenerateVector(_)) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            match coherence(&item.context, g, vocab) {
                Ok(v) => {
                    coh += v;
                    coh_n += 1;
                }
                Err(Error::DegenerateVector(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    let avg = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let distinct = |n| match distinct_n(&all, n) {
        Ok(v) => Ok(v),
        Err(Error::Domain(_)) => Ok(0.0),
        Err(e) => Err(e),
    };
    Ok(MetricReport {
        contexts: items.len(),
        responses: all.len(),
        bleu: bleu.map(|b| avg(b, bleu_count)),
        distinct: [distinct(1)?, distinct(2)?],
        embedding_average: avg(emb, emb_n),
        coherence: avg(coh, coh_n),
        length: if all.is_empty() { 0.0 } else { length_avg(&all)? },
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use proptest::prelude::*;

    fn s(text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }

    fn ab_vocab() -> Vocabulary {
        let mut data = vec![0.0; 4 * 2];
        data.extend([1.0, 0.0, 0.0, 1.0]);
        Vocabulary::from_parts(&s("a b"), Tensor::new(&[6, 2], data).unwrap()).unwrap()
    }

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_n(&[s("a b"), s("a b")], 1).unwrap(), 0.5);
        assert_eq!(distinct_n(&[s("x y z")], 1).unwrap(), 1.0);
        assert_eq!(distinct_n(&[s("a a a")], 2).unwrap(), 0.5);
        assert!(distinct_n(&[s("a")], 2).is_err());
    }

    #[test]
    fn bleu_examples() {
        let x = s("the cat sat");
        assert_eq!(bleu_n(&x, std::slice::from_ref(&x), 3).unwrap(), 1.0);
        assert_eq!(bleu_n(&s("a b"), &[s("c d")], 1).unwrap(), 0.0);
        assert_eq!(bleu_n(&s("a b c d"), &[s("a b c e")], 1).unwrap(), 0.75);
        assert!(bleu_n(&Vec::<String>::new(), &[s("a")], 1).is_err());
    }

    #[test]
    fn embedding_examples() {
        let v = ab_vocab();
        assert!((embedding_average(&s("a b"), &s("a b"), &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(embedding_average(&s("a"), &s("b"), &v).unwrap(), 0.0);
        let half = std::f64::consts::FRAC_1_SQRT_2;
        assert!((embedding_average(&s("a"), &s("a b"), &v).unwrap() - half).abs() < 1e-12);
        assert!((coherence(&s("b"), &s("a b"), &v).unwrap() - half).abs() < 1e-12);
        assert!((coherence(&s("a b"), &s("a b"), &v).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            embedding_average(&s("zzz <unk>"), &s("a"), &v),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn length_examples() {
        assert_eq!(length_avg(&[s("a b"), s("a b c d")]).unwrap(), 3.0);
        assert_eq!(length_avg(&[Vec::<String>::new(), Vec::new()]).unwrap(), 0.0);
        let long: Vec<String> = (0..25).map(|i| format!("w{i}")).collect();
        assert_eq!(length_avg(&[long]).unwrap(), 25.0);
        assert!(length_avg::<String>(&[]).is_err());
        assert_eq!(length_avg(&[s("<bos> a <eos>")]).unwrap(), 1.0);
    }

    fn sentence() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..8)
            .prop_map(|v| v.into_iter().map(str::to_string).collect())
    }

    proptest! {
        #[test]
        fn bleu_self_is_one(x in sentence(), n in 1usize..4) {
            prop_assert!((bleu_n(&x, std::slice::from_ref(&x), n).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn bleu_ignores_reference_order(x in sentence(), refs in prop::collection::vec(sentence(), 1..4)) {
            let mut rev = refs.clone();
            rev.reverse();
            prop_assert_eq!(bleu_n(&x, &refs, 3).unwrap(), bleu_n(&x, &rev, 3).unwrap());
        }

        #[test]
        fn distinct_never_grows_on_repeats(rs in prop::collection::vec(sentence(), 1..5), pick in 0usize..5, n in 1usize..3) {
            let Ok(before) = distinct_n(&rs, n) else { return Ok(()) };
            let mut more = rs.clone();
            more.push(rs[pick % rs.len()].clone());
            prop_assert!(distinct_n(&more, n).unwrap() <= before + 1e-15);
        }

        #[test]
        fn embedding_metrics_ignore_order(x in sentence(), y in sentence()) {
            let v = ab_vocab();
            let mut xr = x.clone();
            xr.reverse();
            match (embedding_average(&x, &y, &v), embedding_average(&xr, &y, &v)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
