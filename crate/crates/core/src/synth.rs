//! Seeded toy grammar for end-to-end tests and demos.
//!
//! Eight phrase labels (S, NP, VP, PP, ADJP, ADVP, SBAR, PRT) over a
//! 30-word vocabulary. Imperatives give an S→VP unary chain. Whether a
//! "with" phrase attaches to the verb or to the object noun phrase is a
//! fixed arbitrary function of three head words, so it can only be learned
//! by memorizing the triples seen in training.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tree::ParseTree;

const DT: &[&str] = &["the", "a"];
const NN: &[&str] = &["dog", "cat", "man", "park", "telescope", "ball"];
const NNS: &[&str] = &["dogs", "cats"];
const PRP: &[&str] = &["she", "he"];
const JJ: &[&str] = &["big", "old", "red"];
const RB_MOD: &[&str] = &["very"];
const RB_ADV: &[&str] = &["quickly", "often"];
const VBZ_TRANS: &[&str] = &["sees", "likes"];
const VBZ_INTRANS: &[&str] = &["walks"];
const VBD_TRANS: &[&str] = &["saw", "picked"];
const VBD_SAY: &[&str] = &["said"];
const VB: &[&str] = &["see", "pick"];
const RP: &[&str] = &["up"];
const IN_LOC: &[&str] = &["in"];
const COMP: &[&str] = &["that"];

/// Share of (verb, object head, "with" object head) triples whose "with"
/// phrase attaches inside the object noun phrase.
pub const NOUN_ATTACHMENT_RATE: f64 = 0.3;

fn last_word(t: &ParseTree) -> &str {
    match t.children.last() {
        Some(c) => last_word(c),
        None => t.word.as_deref().unwrap_or_default(),
    }
}

/// Fixed pseudo-random attachment table keyed by the lexical triple.
fn noun_attachment(verb: &ParseTree, obj: &ParseTree, pp: &ParseTree) -> bool {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for w in [last_word(verb), last_word(obj), last_word(pp)] {
        for b in w.bytes().chain(std::iter::once(b' ')) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    unit < NOUN_ATTACHMENT_RATE
}

const MAX_DEPTH: usize = 3;

struct Gen {
    rng: ChaCha8Rng,
    next: usize,
}

impl Gen {
    fn leaf(&mut self, pos: &str, words: &[&str]) -> ParseTree {
        let w = words[self.rng.gen_range(0..words.len())];
        let t = ParseTree::leaf(pos, w, self.next);
        self.next += 1;
        t
    }

    fn word(&mut self, pos: &str, w: &str) -> ParseTree {
        let t = ParseTree::leaf(pos, w, self.next);
        self.next += 1;
        t
    }

    fn pick(&mut self, weights: &[f64]) -> usize {
        WeightedIndex::new(weights).unwrap().sample(&mut self.rng)
    }

    fn sentence(&mut self, depth: usize) -> ParseTree {
        match self.pick(&[0.7, 0.15, 0.15]) {
            0 => {
                let np = self.np(depth + 1);
                let vp = self.vp(depth + 1);
                ParseTree::node("S", vec![np, vp])
            }
            1 => {
                let vp = self.imperative();
                ParseTree::node("S", vec![vp])
            }
            _ => {
                let adv = self.advp();
                let np = self.np(depth + 1);
                let vp = self.vp(depth + 1);
                ParseTree::node("S", vec![adv, np, vp])
            }
        }
    }

    fn imperative(&mut self) -> ParseTree {
        let v = self.leaf("VB", VB);
        let obj = self.np(MAX_DEPTH);
        ParseTree::node("VP", vec![v, obj])
    }

    fn np(&mut self, depth: usize) -> ParseTree {
        let recursive = if depth < MAX_DEPTH { 0.12 } else { 0.0 };
        match self.pick(&[0.45, 0.15, 0.13, 0.15, recursive]) {
            0 => {
                let d = self.leaf("DT", DT);
                let n = self.leaf("NN", NN);
                ParseTree::node("NP", vec![d, n])
            }
            1 => {
                let d = self.leaf("DT", DT);
                let a = self.adjp();
                let n = self.leaf("NN", NN);
                ParseTree::node("NP", vec![d, a, n])
            }
            2 => {
                let p = self.leaf("PRP", PRP);
                ParseTree::node("NP", vec![p])
            }
            3 => {
                let n = self.leaf("NNS", NNS);
                ParseTree::node("NP", vec![n])
            }
            _ => {
                let inner = self.np(depth + 1);
                let pp = self.pp("in", depth + 1);
                ParseTree::node("NP", vec![inner, pp])
            }
        }
    }

    fn adjp(&mut self) -> ParseTree {
        if self.rng.gen_bool(0.3) {
            let r = self.leaf("RB", RB_MOD);
            let a = self.leaf("JJ", JJ);
            ParseTree::node("ADJP", vec![r, a])
        } else {
            let a = self.leaf("JJ", JJ);
            ParseTree::node("ADJP", vec![a])
        }
    }

    fn advp(&mut self) -> ParseTree {
        let r = self.leaf("RB", RB_ADV);
        ParseTree::node("ADVP", vec![r])
    }

    fn pp(&mut self, prep: &str, depth: usize) -> ParseTree {
        let p = if prep == "in" {
            self.leaf("IN", IN_LOC)
        } else {
            self.word("IN", prep)
        };
        let np = self.np(depth.max(MAX_DEPTH));
        ParseTree::node("PP", vec![p, np])
    }

    fn vp(&mut self, depth: usize) -> ParseTree {
        let sbar = if depth < MAX_DEPTH { 0.1 } else { 0.0 };
        match self.pick(&[0.3, 0.3, 0.1, 0.1, 0.1, sbar]) {
            0 => {
                let v = self.leaf("VBZ", VBZ_TRANS);
                let obj = self.np(depth + 1);
                ParseTree::node("VP", vec![v, obj])
            }
            1 => {
                let v = self.leaf("VBD", VBD_TRANS);
                let obj = self.np(MAX_DEPTH);
                let pp = self.pp("with", depth + 1);
                if noun_attachment(&v, &obj, &pp) {
                    let obj = ParseTree::node("NP", vec![obj, pp]);
                    ParseTree::node("VP", vec![v, obj])
                } else {
                    ParseTree::node("VP", vec![v, obj, pp])
                }
            }
            2 => {
                let v = self.word("VBD", "picked");
                let prt = self.leaf("RP", RP);
                let prt = ParseTree::node("PRT", vec![prt]);
                let obj = self.np(depth + 1);
                ParseTree::node("VP", vec![v, prt, obj])
            }
            3 => {
                let v = self.leaf("VBZ", VBZ_INTRANS);
                let adv = self.advp();
                ParseTree::node("VP", vec![v, adv])
            }
            4 => {
                let v = self.leaf("VBZ", VBZ_INTRANS);
                ParseTree::node("VP", vec![v])
            }
            _ => {
                let v = self.leaf("VBD", VBD_SAY);
                let c = self.leaf("IN", COMP);
                let s = self.sentence(depth + 1);
                let sbar = ParseTree::node("SBAR", vec![c, s]);
                ParseTree::node("VP", vec![v, sbar])
            }
        }
    }
}

/// `n` raw trees drawn from the toy grammar (PRT not yet renamed).
pub fn generate_treebank(n: usize, seed: u64) -> Vec<ParseTree> {
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        next: 0,
    };
    (0..n)
        .map(|_| {
            g.next = 0;
            g.sentence(0)
        })
        .collect()
}

/// Every word the grammar can emit.
pub fn vocabulary() -> Vec<&'static str> {
    let mut v: Vec<&str> = [
        DT, NN, NNS, PRP, JJ, RB_MOD, RB_ADV, VBZ_TRANS, VBZ_INTRANS, VBD_TRANS, VBD_SAY, VB, RP,
        IN_LOC, COMP, &["with"],
    ]
    .concat();
    v.sort_unstable();
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn vocabulary_has_thirty_words() {
        assert_eq!(vocabulary().len(), 30);
    }

    #[test]
    fn deterministic_and_well_formed() {
        let a = generate_treebank(300, 9);
        assert_eq!(a, generate_treebank(300, 9));
        assert_ne!(a, generate_treebank(300, 10));
        let vocab: BTreeSet<&str> = vocabulary().into_iter().collect();
        let mut labels = BTreeSet::new();
        for t in &a {
            t.check_spans().unwrap();
            assert!(t.words().iter().all(|w| vocab.contains(w.as_str())));
            labels.extend(t.internal_nodes().into_iter().map(|n| n.label.clone()));
        }
        let expected: BTreeSet<String> = ["ADJP", "ADVP", "NP", "PP", "PRT", "S", "SBAR", "VP"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(labels, expected);
    }

    #[test]
    fn sentences_stay_short() {
        let trees = generate_treebank(1000, 1);
        let mean = trees.iter().map(|t| t.num_tokens()).sum::<usize>() as f64 / 1000.0;
        assert!((4.0..12.0).contains(&mean), "{mean}");
        assert!(trees.iter().all(|t| t.num_tokens() <= 40));
    }
}
