//! Labeled-bracket scoring and phrase nearest-neighbor search.
//!
//! Scoring follows the usual Evalb conventions with three fixed choices:
//! preterminals are not brackets, the root bracket counts, and punctuation
//! is scored like any other token.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::composer::PhraseRecord;
use crate::error::{Error, Result};
use crate::tree::ParseTree;
use crate::treebank::expand_merged_labels;

pub use crate::greedy_parser::vote_parse;

/// Multiset of `(label, start, end)` over internal nodes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BracketSet {
    counts: BTreeMap<(String, usize, usize), usize>,
}

impl BracketSet {
    pub fn from_tree(tree: &ParseTree) -> Self {
        let mut counts = BTreeMap::new();
        for n in expand_merged_labels(tree).internal_nodes() {
            *counts
                .entry((n.label.clone(), n.span.start, n.span.end))
                .or_insert(0) += 1;
        }
        BracketSet { counts }
    }

    pub fn len(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn matched(&self, other: &BracketSet) -> usize {
        self.counts
            .iter()
            .map(|(k, &c)| c.min(other.counts.get(k).copied().unwrap_or(0)))
            .sum()
    }
}

/// Bracket totals over some set of sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub sentences: usize,
    pub matched: usize,
    pub gold: usize,
    pub pred: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.matched, self.pred)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.matched, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(&mut self, other: &Counts) {
        self.sentences += other.sentences;
        self.matched += other.matched;
        self.gold += other.gold;
        self.pred += other.pred;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub total: Counts,
    /// Sentence length to bracket totals.
    pub by_length: BTreeMap<usize, Counts>,
}

impl EvalReport {
    /// Totals over sentences of at most `max_len` tokens.
    pub fn up_to(&self, max_len: usize) -> Counts {
        let mut c = Counts::default();
        for (_, v) in self.by_length.range(..=max_len) {
            c.add(v);
        }
        c
    }

    /// Two-line summary for the ≤40-token subset and the full set.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (name, c) in [("len<=40", self.up_to(40)), ("all", self.total)] {
            writeln!(
                s,
                "{name:<8} sentences {:>6}  P {:6.2}  R {:6.2}  F1 {:6.2}",
                c.sentences,
                100.0 * c.precision(),
                100.0 * c.recall(),
                100.0 * c.f1()
            )
            .unwrap();
        }
        s
    }

    /// CSV `length,count,f1` with F1 in percent.
    pub fn length_csv(&self) -> String {
        let mut s = String::from("length,count,f1\n");
        for (len, c) in &self.by_length {
            writeln!(s, "{len},{},{:.4}", c.sentences, 100.0 * c.f1()).unwrap();
        }
        s
    }
}

/// Scores aligned `pred` trees against `gold` (fractions, not percent).
pub fn evalb_f1(gold: &[ParseTree], pred: &[ParseTree]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch(gold.len().min(pred.len())));
    }
    let mut total = Counts::default();
    let mut by_length: BTreeMap<usize, Counts> = BTreeMap::new();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.words() != p.words() {
            return Err(Error::LengthMismatch(i));
        }
        let gb = BracketSet::from_tree(g);
        let pb = BracketSet::from_tree(p);
        let c = Counts {
            sentences: 1,
            matched: gb.matched(&pb),
            gold: gb.len(),
            pred: pb.len(),
        };
        total.add(&c);
        by_length.entry(g.num_tokens()).or_default().add(&c);
    }
    Ok(EvalReport {
        precision: total.precision(),
        recall: total.recall(),
        f1: total.f1(),
        total,
        by_length,
    })
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The `k` phrases of `corpus` closest to `query`, ascending by distance.
/// Records whose text equals `query_text` or sitting at distance zero are
/// skipped, and each phrase text is reported once (at its best distance).
pub fn nearest_phrases(
    query_text: &str,
    query: &[f64],
    corpus: &[PhraseRecord],
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpusDump);
    }
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for r in corpus {
        if r.vec.len() != query.len() {
            return Err(Error::DimensionMismatch {
                expected: query.len(),
                found: r.vec.len(),
            });
        }
        if r.phrase == query_text {
            continue;
        }
        let d = euclidean(query, &r.vec);
        if d == 0.0 {
            continue;
        }
        best.entry(&r.phrase)
            .and_modify(|e| *e = e.min(d))
            .or_insert(d);
    }
    let mut out: Vec<(String, f64)> = best.into_iter().map(|(p, d)| (p.to_string(), d)).collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    out.truncate(k);
    Ok(out)
}
