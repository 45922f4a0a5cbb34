//! Mining of one-to-many / many-to-one mappings and O2M / M2O dataset builds.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::pairs::DialoguePair;
use crate::error::{Error, Result};

/// Utterances matching on exact token sequence share one group.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdmGroup {
    pub key: Vec<String>,
    /// Distinct counterparts in order of first appearance (at least two).
    pub counterparts: Vec<Vec<String>>,
    /// Indices of every input pair whose key side equals `key`.
    pub pair_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CdmReport {
    pub total_pairs: usize,
    pub o2m_groups: Vec<CdmGroup>,
    pub m2o_groups: Vec<CdmGroup>,
    pub o2m_pair_fraction: f64,
    pub m2o_pair_fraction: f64,
    /// Fraction of pairs in an o2m group, an m2o group, or both.
    pub cdm_fraction: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CdmMode {
    O2M,
    M2O,
}

fn group_by(pairs: &[DialoguePair], key: impl Fn(&DialoguePair) -> &Vec<String>, other: impl Fn(&DialoguePair) -> &Vec<String>) -> Vec<CdmGroup> {
    let mut order: Vec<&Vec<String>> = Vec::new();
    let mut members: HashMap<&Vec<String>, Vec<usize>> = HashMap::new();
    for (i, p) in pairs.iter().enumerate() {
        let k = key(p);
        members
            .entry(k)
            .or_insert_with(|| {
                order.push(k);
                Vec::new()
            })
            .push(i);
    }
    order
        .into_iter()
        .filter_map(|k| {
            let idx = &members[k];
            let mut seen = HashSet::new();
            let counterparts: Vec<Vec<String>> = idx
                .iter()
                .map(|&i| other(&pairs[i]))
                .filter(|o| seen.insert(*o))
                .cloned()
                .collect();
            (counterparts.len() >= 2).then(|| CdmGroup {
                key: k.clone(),
                counterparts,
                pair_indices: idx.clone(),
            })
        })
        .collect()
}

pub fn mine_cdm(pairs: &[DialoguePair]) -> Result<CdmReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus("no pairs to mine".into()));
    }
    let o2m = group_by(pairs, |p| &p.context, |p| &p.response);
    let m2o = group_by(pairs, |p| &p.response, |p| &p.context);
    let members = |groups: &[CdmGroup]| -> HashSet<usize> {
        groups.iter().flat_map(|g| g.pair_indices.iter().copied()).collect()
    };
    let (o, m) = (members(&o2m), members(&m2o));
    let n = pairs.len() as f64;
    Ok(CdmReport {
        total_pairs: pairs.len(),
        o2m_pair_fraction: o.len() as f64 / n,
        m2o_pair_fraction: m.len() as f64 / n,
        cdm_fraction: o.union(&m).count() as f64 / n,
        o2m_groups: o2m,
        m2o_groups: m2o,
    })
}

impl CdmReport {
    pub fn o2m_pairs(&self) -> usize {
        self.o2m_groups.iter().map(|g| g.pair_indices.len()).sum()
    }

    pub fn m2o_pairs(&self) -> usize {
        self.m2o_groups.iter().map(|g| g.pair_indices.len()).sum()
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "total_pairs: {}", self.total_pairs);
        let _ = writeln!(s, "o2m_groups: {}", self.o2m_groups.len());
        let _ = writeln!(s, "o2m_pairs: {}", self.o2m_pairs());
        let _ = writeln!(s, "m2o_groups: {}", self.m2o_groups.len());
        let _ = writeln!(s, "m2o_pairs: {}", self.m2o_pairs());
        let _ = writeln!(s, "o2m_pair_fraction: {:.6}", self.o2m_pair_fraction);
        let _ = writeln!(s, "m2o_pair_fraction: {:.6}", self.m2o_pair_fraction);
        let _ = writeln!(s, "cdm_fraction: {:.6}", self.cdm_fraction);
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Which output pairs land in which split, assigned per group key.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitManifest {
    /// Percent of the hash space for train and valid; test gets the rest.
    pub train_percent: u64,
    pub valid_percent: u64,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitManifest {
    pub fn select(&self, pairs: &[DialoguePair], split: Split) -> Vec<DialoguePair> {
        let idx = match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        };
        idx.iter().map(|&i| pairs[i].clone()).collect()
    }

    pub fn to_text(&self) -> String {
        format!(
            "ratio: {}/{}/{}\ntrain: {}\nvalid: {}\ntest: {}\n",
            self.train_percent,
            self.valid_percent,
            100 - self.train_percent - self.valid_percent,
            self.train.len(),
            self.valid.len(),
            self.test.len()
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub pairs: usize,
    pub contexts: usize,
    pub responses: usize,
    pub avg_responses_per_context: f64,
    pub avg_contexts_per_response: f64,
}

impl DatasetStats {
    pub fn of(pairs: &[DialoguePair]) -> Self {
        let mut by_ctx: HashMap<&Vec<String>, HashSet<&Vec<String>>> = HashMap::new();
        let mut by_resp: HashMap<&Vec<String>, HashSet<&Vec<String>>> = HashMap::new();
        for p in pairs {
            by_ctx.entry(&p.context).or_default().insert(&p.response);
            by_resp.entry(&p.response).or_default().insert(&p.context);
        }
        let avg = |m: &HashMap<&Vec<String>, HashSet<&Vec<String>>>| {
            if m.is_empty() {
                0.0
            } else {
                m.values().map(HashSet::len).sum::<usize>() as f64 / m.len() as f64
            }
        };
        Self {
            pairs: pairs.len(),
            contexts: by_ctx.len(),
            responses: by_resp.len(),
            avg_responses_per_context: avg(&by_ctx),
            avg_contexts_per_response: avg(&by_resp),
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "pairs: {}\ncontexts: {}\nresponses: {}\navg_responses_per_context: {:.4}\navg_contexts_per_response: {:.4}\n",
            self.pairs, self.contexts, self.responses, self.avg_responses_per_context, self.avg_contexts_per_response
        )
    }
}

#[derive(Clone, Debug)]
pub struct CdmDataset {
    pub mode: CdmMode,
    pub pairs: Vec<DialoguePair>,
    pub split: SplitManifest,
    pub stats: DatasetStats,
}

/// Stable bucket in `[0, 100)` for a group key.
pub fn split_bucket(key: &[String]) -> u64 {
    let digest = Sha256::digest(key.join(" ").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) % 100
}

pub fn assign_split(key: &[String], train_percent: u64, valid_percent: u64) -> Split {
    match split_bucket(key) {
        b if b < train_percent => Split::Train,
        b if b < train_percent + valid_percent => Split::Valid,
        _ => Split::Test,
    }
}

/// Keeps the pairs of every group of `mode`, in input order, and splits them
/// 90/5/5 by group key.
pub fn build_cdm_dataset(pairs: &[DialoguePair], mode: CdmMode) -> Result<CdmDataset> {
    build_cdm_dataset_with(pairs, mode, 90, 5)
}

pub fn build_cdm_dataset_with(
    pairs: &[DialoguePair],
    mode: CdmMode,
    train_percent: u64,
    valid_percent: u64,
) -> Result<CdmDataset> {
    if train_percent + valid_percent > 100 {
        return Err(Error::Domain("split percentages exceed 100".into()));
    }
    let report = mine_cdm(pairs)?;
    let groups = match mode {
        CdmMode::O2M => &report.o2m_groups,
        CdmMode::M2O => &report.m2o_groups,
    };
    if groups.is_empty() {
        return Err(Error::EmptyCorpus(format!("no {mode:?} groups in corpus")));
    }
    let mut keep: Vec<usize> = groups.iter().flat_map(|g| g.pair_indices.iter().copied()).collect();
    keep.sort_unstable();
    let out: Vec<DialoguePair> = keep.iter().map(|&i| pairs[i].clone()).collect();
    let mut split = SplitManifest {
        train_percent,
        valid_percent,
        ..Default::default()
    };
    for (i, p) in out.iter().enumerate() {
        let key = match mode {
            CdmMode::O2M => &p.context,
            CdmMode::M2O => &p.response,
        };
        match assign_split(key, train_percent, valid_percent) {
            Split::Train => split.train.push(i),
            Split::Valid => split.valid.push(i),
            Split::Test => split.test.push(i),
        }
    }
    let stats = DatasetStats::of(&out);
    Ok(CdmDataset {
        mode,
        pairs: out,
        split,
        stats,
    })
}

/// Splits an arbitrary pair list by context key, for the general task.
pub fn split_general(pairs: &[DialoguePair], train_percent: u64, valid_percent: u64) -> SplitManifest {
    let mut split = SplitManifest {
        train_percent,
        valid_percent,
        ..Default::default()
    };
    for (i, p) in pairs.iter().enumerate() {
        match assign_split(&p.context, train_percent, valid_percent) {
            Split::Train => split.train.push(i),
            Split::Valid => split.valid.push(i),
            Split::Test => split.test.push(i),
        }
    }
    split
}
