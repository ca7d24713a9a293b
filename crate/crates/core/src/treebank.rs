//! Treebank normalization and gold sequence extraction.
//!
//! Normalization strips functional suffixes and traces, renames `PRT` to
//! `ADVP`, and collapses unary chains of internal nodes into one node whose
//! label joins the chain with `|`. Extraction replays the bottom-up greedy
//! procedure on a gold tree and records, for every iteration, the input
//! constituents and the BIOES tags that build the next level of nodes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::decoder::{constrain_path_validity, Bioes, BioesTag, Prefix};
use crate::error::{Error, Result};
use crate::tree::ParseTree;

pub const MERGE_SEPARATOR: char = '|';
pub const DEFAULT_MERGE_THRESHOLD: usize = 30;
const TRACE_POS: &str = "-NONE-";

/// Counts of concatenated unary-chain labels, gathered on the training split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelStats {
    pub chains: BTreeMap<String, usize>,
}

impl LabelStats {
    pub fn count(&self, label: &str) -> usize {
        self.chains.get(label).copied().unwrap_or(0)
    }

    /// Chain labels that survive `threshold`, with their counts.
    pub fn kept(&self, threshold: usize) -> Vec<(&str, usize)> {
        self.chains
            .iter()
            .filter(|(_, &c)| c >= threshold)
            .map(|(l, &c)| (l.as_str(), c))
            .collect()
    }

    /// Sidecar listing: one `label<TAB>count` line per kept merged label.
    pub fn write_sidecar(&self, path: impl AsRef<Path>, threshold: usize) -> Result<()> {
        let mut out = String::new();
        for (label, count) in self.kept(threshold) {
            out.push_str(&format!("{label}\t{count}\n"));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

fn strip_function_tags(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label.find(['-', '=']) {
        Some(0) | None => label,
        Some(i) => &label[..i],
    }
}

/// Removes functional suffixes and trace subtrees and renames `PRT` to
/// `ADVP`. Returns `None` when nothing but traces remains.
pub fn strip(tree: &ParseTree) -> Option<ParseTree> {
    let mut out = strip_rec(tree)?;
    out.reindex(0);
    Some(out)
}

fn strip_rec(tree: &ParseTree) -> Option<ParseTree> {
    if tree.is_leaf() {
        if tree.label == TRACE_POS {
            return None;
        }
        return Some(tree.clone());
    }
    let children: Vec<ParseTree> = tree.children.iter().filter_map(strip_rec).collect();
    if children.is_empty() {
        return None;
    }
    let mut label = strip_function_tags(&tree.label).to_string();
    if label == "PRT" {
        label = "ADVP".to_string();
    }
    Some(ParseTree::node(label, children))
}

/// Follows a unary chain of internal nodes from `tree` and returns its labels
/// (outermost first) together with the bottom node of the chain.
fn unary_chain(tree: &ParseTree) -> (Vec<&str>, &ParseTree) {
    let mut labels = vec![tree.label.as_str()];
    let mut cur = tree;
    while cur.children.len() == 1 && !cur.children[0].is_leaf() {
        cur = &cur.children[0];
        labels.push(cur.label.as_str());
    }
    (labels, cur)
}

fn count_chains(tree: &ParseTree, stats: &mut LabelStats) {
    if tree.is_leaf() {
        return;
    }
    let (labels, bottom) = unary_chain(tree);
    if labels.len() > 1 {
        let joined = labels.join(&MERGE_SEPARATOR.to_string());
        *stats.chains.entry(joined).or_insert(0) += 1;
    }
    for c in &bottom.children {
        count_chains(c, stats);
    }
}

/// Gathers unary-chain label counts over (raw) training trees.
pub fn label_stats(trees: &[ParseTree]) -> LabelStats {
    let mut stats = LabelStats::default();
    for t in trees {
        if let Some(s) = strip(t) {
            count_chains(&s, &mut stats);
        }
    }
    stats
}

fn merge_rec(tree: &ParseTree, stats: &LabelStats, threshold: usize) -> ParseTree {
    if tree.is_leaf() {
        return tree.clone();
    }
    let (labels, bottom) = unary_chain(tree);
    let label = if labels.len() > 1 {
        let joined = labels.join(&MERGE_SEPARATOR.to_string());
        if stats.count(&joined) >= threshold {
            joined
        } else {
            labels[0].to_string()
        }
    } else {
        tree.label.clone()
    };
    let children = bottom
        .children
        .iter()
        .map(|c| merge_rec(c, stats, threshold))
        .collect();
    ParseTree::node(label, children)
}

/// Full normalization of one tree with training-split statistics.
pub fn preprocess(tree: &ParseTree, stats: &LabelStats, merge_threshold: usize) -> Option<ParseTree> {
    let stripped = strip(tree)?;
    let mut out = merge_rec(&stripped, stats, merge_threshold);
    out.reindex(0);
    Some(out)
}

/// Normalizes a training split and the held-out splits with the training
/// statistics. Trees reduced to nothing are dropped.
pub fn preprocess_splits(
    train: &[ParseTree],
    others: &[&[ParseTree]],
    merge_threshold: usize,
) -> (Vec<ParseTree>, Vec<Vec<ParseTree>>, LabelStats) {
    let stats = label_stats(train);
    let run = |trees: &[ParseTree]| -> Vec<ParseTree> {
        trees
            .iter()
            .filter_map(|t| preprocess(t, &stats, merge_threshold))
            .collect()
    };
    let train_out = run(train);
    let others_out = others.iter().map(|s| run(s)).collect();
    (train_out, others_out, stats)
}

/// Replaces every `|`-joined label by the unary chain it stands for.
pub fn expand_merged_labels(tree: &ParseTree) -> ParseTree {
    if tree.is_leaf() {
        return tree.clone();
    }
    let children: Vec<ParseTree> = tree.children.iter().map(expand_merged_labels).collect();
    let parts: Vec<&str> = tree.label.split(MERGE_SEPARATOR).collect();
    let mut node = ParseTree::node(parts[parts.len() - 1], children);
    for label in parts[..parts.len() - 1].iter().rev() {
        node = ParseTree::node(*label, vec![node]);
    }
    node
}

/// One iteration of the greedy procedure replayed on a gold tree.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldSequence {
    /// Live constituents: leaves or already-built subtrees.
    pub inputs: Vec<ParseTree>,
    pub targets: Vec<BioesTag>,
    pub iteration: usize,
}

fn chunk_tags(label: &str, width: usize) -> Vec<BioesTag> {
    if width == 1 {
        return vec![Bioes::Chunk(Prefix::S, label.to_string())];
    }
    let mut out = Vec::with_capacity(width);
    out.push(Bioes::Chunk(Prefix::B, label.to_string()));
    for _ in 1..width - 1 {
        out.push(Bioes::Chunk(Prefix::I, label.to_string()));
    }
    out.push(Bioes::Chunk(Prefix::E, label.to_string()));
    out
}

/// Replays the bottom-up procedure on `tree`: at each iteration every node
/// whose children are all live is emitted as a BIOES chunk and replaces its
/// children in the live sequence. A bare leaf yields no sequences.
pub fn extract_gold_sequences(tree: &ParseTree) -> Result<Vec<GoldSequence>> {
    tree.check_spans()?;
    if tree.is_leaf() {
        return Ok(Vec::new());
    }
    let mut live: Vec<&ParseTree> = tree.leaves();
    let mut out = Vec::new();
    let mut iteration = 0;
    loop {
        if live.len() == 1 && std::ptr::eq(live[0], tree) {
            break;
        }
        let mut targets: Vec<BioesTag> = vec![Bioes::Outside; live.len()];
        let mut next: Vec<&ParseTree> = Vec::with_capacity(live.len());
        let mut built = 0;
        let mut i = 0;
        while i < live.len() {
            match ready_parent(tree, &live, i)? {
                Some(parent) => {
                    let width = parent.children.len();
                    for (j, t) in chunk_tags(&parent.label, width).into_iter().enumerate() {
                        targets[i + j] = t;
                    }
                    next.push(parent);
                    built += 1;
                    i += width;
                }
                None => {
                    next.push(live[i]);
                    i += 1;
                }
            }
        }
        if built == 0 {
            return Err(Error::ReplayStalled(tree.to_string()));
        }
        debug_assert!(constrain_path_validity(&targets));
        out.push(GoldSequence {
            inputs: live.iter().map(|t| (*t).clone()).collect(),
            targets,
            iteration,
        });
        live = next;
        iteration += 1;
    }
    Ok(out)
}

fn find_parent<'a>(root: &'a ParseTree, child: &ParseTree) -> Option<&'a ParseTree> {
    if root.is_leaf() {
        return None;
    }
    for c in &root.children {
        if std::ptr::eq(c, child) {
            return Some(root);
        }
        if c.span.start <= child.span.start && child.span.end <= c.span.end {
            if let Some(p) = find_parent(c, child) {
                return Some(p);
            }
        }
    }
    None
}

/// If `live[i]` is the first child of a node whose children are all live and
/// consecutive from `i`, returns that node.
fn ready_parent<'a>(
    root: &'a ParseTree,
    live: &[&'a ParseTree],
    i: usize,
) -> Result<Option<&'a ParseTree>> {
    let Some(parent) = find_parent(root, live[i]) else {
        return Ok(None);
    };
    if !std::ptr::eq(&parent.children[0], live[i]) {
        return Ok(None);
    }
    let all_live = parent
        .children
        .iter()
        .enumerate()
        .all(|(j, c)| live.get(i + j).is_some_and(|l| std::ptr::eq(*l, c)));
    Ok(all_live.then_some(parent))
}

/// Applies one level of BIOES chunks to a live sequence, building a new node
/// for each chunk.
pub fn apply_chunks(live: Vec<ParseTree>, targets: &[BioesTag]) -> Result<Vec<ParseTree>> {
    if live.len() != targets.len() || !constrain_path_validity(targets) {
        return Err(Error::InvalidGoldPath);
    }
    let mut out = Vec::new();
    let mut pending: Vec<ParseTree> = Vec::new();
    for (item, tag) in live.into_iter().zip(targets) {
        match tag {
            Bioes::Outside => out.push(item),
            Bioes::Chunk(Prefix::S, l) => out.push(ParseTree::node(l.clone(), vec![item])),
            Bioes::Chunk(Prefix::B, _) | Bioes::Chunk(Prefix::I, _) => pending.push(item),
            Bioes::Chunk(Prefix::E, l) => {
                pending.push(item);
                out.push(ParseTree::node(l.clone(), std::mem::take(&mut pending)));
            }
        }
    }
    Ok(out)
}

/// Rebuilds a tree from its replayed sequences.
pub fn reassemble(sequences: &[GoldSequence]) -> Result<ParseTree> {
    let first = sequences.first().ok_or(Error::EmptyCorpus)?;
    let mut live = first.inputs.clone();
    for seq in sequences {
        if seq.inputs != live {
            return Err(Error::ReplayStalled(format!(
                "iteration {} inputs differ from the previous level",
                seq.iteration
            )));
        }
        live = apply_chunks(live, &seq.targets)?;
    }
    if live.len() != 1 {
        return Err(Error::IncompleteCoverage);
    }
    Ok(live.pop().unwrap())
}
