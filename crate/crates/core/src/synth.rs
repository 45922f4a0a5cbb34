//! Synthetic corpora with known structure for tests, benches and demos.

use crate::autodiff::Rng;
use crate::corpus::DialoguePair;

/// Sixteen short single-turn pairs over a few dozen words.
pub fn toy_pairs() -> Vec<DialoguePair> {
    [
        ("hi there", "hello friend"),
        ("how are you", "i am fine thanks"),
        ("what is your name", "my name is bob"),
        ("where do you live", "i live in town"),
        ("do you like tea", "yes i love tea"),
        ("is it raining", "no it is sunny"),
        ("what time is it", "it is noon"),
        ("are you hungry", "yes very hungry"),
        ("see you later", "goodbye for now"),
        ("thank you", "you are welcome"),
        ("can you help me", "sure what do you need"),
        ("where is the cat", "the cat is outside"),
        ("do you have a dog", "no i have a cat"),
        ("what do you eat", "i eat bread"),
        ("is the door open", "the door is shut"),
        ("good morning", "morning to you too"),
    ]
    .iter()
    .map(|(c, r)| DialoguePair::from_text(c, r))
    .collect()
}

/// Ground truth of a [`planted_cdm`] corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedCdm {
    pub pairs: Vec<DialoguePair>,
    pub o2m_groups: usize,
    pub m2o_groups: usize,
    pub o2m_pairs: usize,
    pub m2o_pairs: usize,
}

impl PlantedCdm {
    pub fn o2m_fraction(&self) -> f64 {
        self.o2m_pairs as f64 / self.pairs.len() as f64
    }

    pub fn m2o_fraction(&self) -> f64 {
        self.m2o_pairs as f64 / self.pairs.len() as f64
    }
}

fn words(prefix: &str, ids: &[usize]) -> Vec<String> {
    std::iter::once(prefix.to_string())
        .chain(ids.iter().map(|i| format!("w{i}")))
        .collect()
}

/// `total` pairs (at least 64) holding `groups` one-to-many groups and
/// `groups` many-to-one groups of 2 to 4 members each; every other pair is
/// a singleton. All utterances outside a planted group are unique, so the
/// planted groups are exactly the mappings present. Pair order is shuffled.
pub fn planted_cdm(total: usize, groups: usize, rng: &mut Rng) -> PlantedCdm {
    let mut pairs = Vec::with_capacity(total);
    let mut serial = 0usize;
    let mut fresh = |kind: &str| {
        serial += 1;
        words(kind, &[serial, serial * 7 + 3])
    };
    let (mut o2m_pairs, mut m2o_pairs) = (0, 0);
    for _ in 0..groups {
        let ctx = fresh("ask");
        let k = 2 + rng.below(3);
        for _ in 0..k {
            pairs.push(DialoguePair::new(ctx.clone(), fresh("reply")));
        }
        o2m_pairs += k;
    }
    for _ in 0..groups {
        let resp = fresh("answer");
        let k = 2 + rng.below(3);
        for _ in 0..k {
            pairs.push(DialoguePair::new(fresh("query"), resp.clone()));
        }
        m2o_pairs += k;
    }
    assert!(pairs.len() <= total, "too many planted pairs for {total}");
    while pairs.len() < total {
        let c = fresh("say");
        let r = fresh("hear");
        pairs.push(DialoguePair::new(c, r));
    }
    rng.shuffle(&mut pairs);
    PlantedCdm {
        pairs,
        o2m_groups: groups,
        m2o_groups: groups,
        o2m_pairs,
        m2o_pairs,
    }
}

const SUBJECTS: [&str; 8] = ["cats", "dogs", "birds", "trains", "books", "songs", "games", "shoes"];
const OPENERS: [&str; 6] = ["do you like", "what about", "tell me about", "have you seen", "any news on", "thoughts on"];
const TEMPLATES: [&str; 8] = [
    "i love {}",
    "{} are boring",
    "never seen {}",
    "my friend has {}",
    "{} make me happy",
    "no idea",
    "ask someone else",
    "maybe later",
];

/// One-to-many corpus: `contexts` distinct questions, each answered by 2 to
/// 4 different template responses.
pub fn one_to_many(contexts: usize, rng: &mut Rng) -> Vec<DialoguePair> {
    let mut pairs = Vec::new();
    for i in 0..contexts {
        let subject = SUBJECTS[i % SUBJECTS.len()];
        let opener = OPENERS[(i / SUBJECTS.len()) % OPENERS.len()];
        let ctx = format!("{opener} {subject}");
        let mut templates: Vec<usize> = (0..TEMPLATES.len()).collect();
        rng.shuffle(&mut templates);
        let k = 2 + rng.below(3);
        for &t in &templates[..k] {
            pairs.push(DialoguePair::from_text(&ctx, &TEMPLATES[t].replace("{}", subject)));
        }
    }
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::mine_cdm;

    #[test]
    fn toy_corpus_is_one_to_one() {
        let pairs = toy_pairs();
        assert_eq!(pairs.len(), 16);
        let r = mine_cdm(&pairs).unwrap();
        assert_eq!(r.cdm_fraction, 0.0);
    }

    #[test]
    fn planted_truth_is_recovered() {
        let p = planted_cdm(200, 12, &mut Rng::new(3));
        assert_eq!(p.pairs.len(), 200);
        let r = mine_cdm(&p.pairs).unwrap();
        assert_eq!(r.o2m_groups.len(), p.o2m_groups);
        assert_eq!(r.m2o_pairs(), p.m2o_pairs);
    }

    #[test]
    fn one_to_many_fans_out() {
        let pairs = one_to_many(10, &mut Rng::new(1));
        let r = mine_cdm(&pairs).unwrap();
        assert_eq!(r.o2m_groups.len(), 10);
        assert!(r.o2m_groups.iter().all(|g| (2..=4).contains(&g.counterparts.len())));
    }
}
