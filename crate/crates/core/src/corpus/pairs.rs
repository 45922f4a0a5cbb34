use std::fmt::Write as _;

use super::tokenize::tokenize;
use crate::error::{Error, Result};

/// One tokenized line of a dialogue.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub tokens: Vec<String>,
    pub dialogue_id: String,
    pub turn_index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PairSource {
    pub dialogue_id: String,
    pub turn_index: usize,
}

/// A single-turn (context, response) pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DialoguePair {
    pub context: Vec<String>,
    pub response: Vec<String>,
    pub source: Option<PairSource>,
}

impl DialoguePair {
    pub fn new(context: Vec<String>, response: Vec<String>) -> Self {
        Self {
            context,
            response,
            source: None,
        }
    }

    /// Tokenizes both sides.
    pub fn from_text(context: &str, response: &str) -> Self {
        Self::new(tokenize(context), tokenize(response))
    }
}

/// Parses a corpus of dialogues: one utterance per line, dialogues separated
/// by blank lines. Dialogue ids are the block ordinal.
pub fn read_dialogues(text: &str) -> Vec<Vec<Utterance>> {
    let mut dialogues = Vec::new();
    let mut current: Vec<Utterance> = Vec::new();
    for line in text.lines() {
        let tokens = tokenize(line);
        if tokens.is_empty() {
            if !current.is_empty() {
                dialogues.push(std::mem::take(&mut current));
            }
            continue;
        }
        current.push(Utterance {
            tokens,
            dialogue_id: dialogues.len().to_string(),
            turn_index: current.len(),
        });
    }
    if !current.is_empty() {
        dialogues.push(current);
    }
    dialogues
}

/// The `T - 1` adjacent pairs of a `T`-turn dialogue; empty when `T < 2`.
pub fn extract_single_turn_pairs(dialogue: &[Utterance]) -> Vec<DialoguePair> {
    dialogue
        .windows(2)
        .map(|w| DialoguePair {
            context: w[0].tokens.clone(),
            response: w[1].tokens.clone(),
            source: Some(PairSource {
                dialogue_id: w[0].dialogue_id.clone(),
                turn_index: w[0].turn_index,
            }),
        })
        .collect()
}

/// Reads a corpus and flattens every dialogue into single-turn pairs.
pub fn pairs_from_corpus(text: &str) -> Vec<DialoguePair> {
    read_dialogues(text)
        .iter()
        .flat_map(|d| extract_single_turn_pairs(d))
        .collect()
}

/// One pair per line: context tokens, TAB, response tokens.
pub fn write_pairs_tsv(pairs: &[DialoguePair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let _ = writeln!(out, "{}\t{}", p.context.join(" "), p.response.join(" "));
    }
    out
}

pub fn read_pairs_tsv(text: &str) -> Result<Vec<DialoguePair>> {
    let mut pairs = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (c, r) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("line {}: missing TAB", no + 1)))?;
        let split = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        let (c, r) = (split(c), split(r));
        if c.is_empty() || r.is_empty() {
            return Err(Error::Format(format!("line {}: empty side", no + 1)));
        }
        pairs.push(DialoguePair::new(c, r));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(s: &str, turn: usize) -> Utterance {
        Utterance {
            tokens: tokenize(s),
            dialogue_id: "d".into(),
            turn_index: turn,
        }
    }

    #[test]
    fn adjacent_pairs() {
        let d = vec![utt("u1", 0), utt("u2", 1), utt("u3", 2)];
        let p = extract_single_turn_pairs(&d);
        assert_eq!(p.len(), 2);
        assert_eq!((p[0].context[0].as_str(), p[0].response[0].as_str()), ("u1", "u2"));
        assert_eq!((p[1].context[0].as_str(), p[1].response[0].as_str()), ("u2", "u3"));
        assert_eq!(extract_single_turn_pairs(&d[..2]).len(), 1);
        assert!(extract_single_turn_pairs(&d[..1]).is_empty());
        assert!(extract_single_turn_pairs(&[]).is_empty());
    }

    #[test]
    fn corpus_blocks() {
        let text = "Hi there!\nHello.\nHow are you?\n\n\nOne line only\n\nA\nB\n";
        let d = read_dialogues(text);
        assert_eq!(d.len(), 3);
        assert_eq!(d[0].len(), 3);
        assert_eq!(d[0][2].turn_index, 2);
        assert_eq!(d[2][1].dialogue_id, "2");
        let pairs = pairs_from_corpus(text);
        assert_eq!(pairs.len(), 2 + 1);
    }

    #[test]
    fn tsv_round_trip() {
        let pairs = vec![DialoguePair::from_text("I'm here.", "good !"), DialoguePair::from_text("a", "b c")];
        let text = write_pairs_tsv(&pairs);
        assert_eq!(text, "i 'm here .\tgood !\na\tb c\n");
        assert_eq!(read_pairs_tsv(&text).unwrap(), pairs);
        assert!(read_pairs_tsv("no tab here").is_err());
    }
}
