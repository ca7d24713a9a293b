//! Greedy bottom-up inference.
//!
//! Each iteration scores the live constituents, decodes one coherent BIOES
//! path, builds a node for every chunk, and feeds the new nodes back in.
//! Scoring goes through the [`Scorer`] trait so the same loop serves a single
//! model, a voting ensemble, or a gold oracle.

use crate::composer::{Arena, NodeId};
use crate::decoder::{chunks, Bioes, Prefix, TagLattice};
use crate::error::{Error, Result};
use crate::nncore::{ModelParams, Tensor};
use crate::tagger::score_sequence;
use crate::tree::{ParseTree, Span};
use crate::treebank::expand_merged_labels;
use crate::vocab::TagSet;

/// Source of BIOES scores for the greedy loop. Node ids are handed out in
/// creation order, starting at 0 with the leaves.
pub trait Scorer {
    fn add_leaf(&mut self, word: &str, pos: usize) -> Result<NodeId>;
    fn add_node(&mut self, children: &[NodeId], label: usize) -> Result<NodeId>;
    /// `live.len() × |bioes|` scores.
    fn scores(&mut self, live: &[NodeId]) -> Result<Tensor>;
}

/// One model with its own representation arena.
pub struct ModelScorer<'a> {
    params: &'a ModelParams,
    tagset: &'a TagSet,
    arena: Arena,
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a ModelParams, tagset: &'a TagSet) -> Result<Self> {
        if params.num_bioes() != tagset.num_bioes()
            || params.tags.cols() != tagset.num_tag_entries()
            || params.words.cols() != tagset.num_words()
        {
            return Err(Error::ShapeMismatch(
                "model tables do not match the tagset".into(),
            ));
        }
        Ok(ModelScorer {
            params,
            tagset,
            arena: Arena::eval(params.p_drop),
        })
    }

    pub fn arena(&self) -> &Arena {
        &self.arena
    }
}

impl Scorer for ModelScorer<'_> {
    fn add_leaf(&mut self, word: &str, pos: usize) -> Result<NodeId> {
        let w = self.tagset.word_index(word);
        self.arena.leaf(self.params, w, self.tagset.pos_entry(pos))
    }

    fn add_node(&mut self, children: &[NodeId], label: usize) -> Result<NodeId> {
        self.arena
            .internal(self.params, children, self.tagset.label_entry(label))
    }

    fn scores(&mut self, live: &[NodeId]) -> Result<Tensor> {
        let slots: Vec<Vec<f64>> = live.iter().map(|&id| self.arena.slot(id)).collect();
        Ok(score_sequence(&slots, self.params)?.scores)
    }
}

/// Several models composing over their own arenas; scores are averaged
/// elementwise before the shared decode.
pub struct VoteScorer<'a> {
    members: Vec<ModelScorer<'a>>,
}

impl<'a> VoteScorer<'a> {
    pub fn new(models: &[&'a ModelParams], tagsets: &[&'a TagSet]) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::NoModels);
        }
        if models.len() != tagsets.len() || tagsets.iter().any(|t| *t != tagsets[0]) {
            return Err(Error::TagsetMismatch);
        }
        let members = models
            .iter()
            .zip(tagsets)
            .map(|(m, t)| ModelScorer::new(m, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(VoteScorer { members })
    }
}

/// Mean of the member tables. Each entry's values are sorted before summing
/// so the result does not depend on member order.
pub fn average_tables(tables: &[Tensor]) -> Tensor {
    let mut out = tables[0].clone();
    if tables.len() == 1 {
        return out;
    }
    let count = tables.len() as f64;
    let mut buf = Vec::with_capacity(tables.len());
    for (i, slot) in out.data_mut().iter_mut().enumerate() {
        buf.clear();
        buf.extend(tables.iter().map(|t| t.data()[i]));
        buf.sort_by(f64::total_cmp);
        *slot = buf.iter().sum::<f64>() / count;
    }
    out
}

impl Scorer for VoteScorer<'_> {
    fn add_leaf(&mut self, word: &str, pos: usize) -> Result<NodeId> {
        let mut id = 0;
        for m in &mut self.members {
            id = m.add_leaf(word, pos)?;
        }
        Ok(id)
    }

    fn add_node(&mut self, children: &[NodeId], label: usize) -> Result<NodeId> {
        let mut id = 0;
        for m in &mut self.members {
            id = m.add_node(children, label)?;
        }
        Ok(id)
    }

    fn scores(&mut self, live: &[NodeId]) -> Result<Tensor> {
        let tables = self
            .members
            .iter_mut()
            .map(|m| m.scores(live))
            .collect::<Result<Vec<_>>>()?;
        Ok(average_tables(&tables))
    }
}

#[derive(Debug, Clone)]
struct GoldNode {
    label: Option<usize>,
    children: Vec<usize>,
    parent: Option<usize>,
}

/// Scores +1 on the tag a gold tree prescribes for each live constituent
/// and 0 elsewhere. Constituents that stray from the gold tree get +1 on O.
pub struct OracleScorer {
    nodes: Vec<GoldNode>,
    leaves: Vec<usize>,
    mapping: Vec<Option<usize>>,
    num_bioes: usize,
}

impl OracleScorer {
    pub fn new(gold: &ParseTree, tagset: &TagSet) -> Result<Self> {
        let mut s = OracleScorer {
            nodes: Vec::new(),
            leaves: Vec::new(),
            mapping: Vec::new(),
            num_bioes: tagset.num_bioes(),
        };
        s.flatten(gold, None, tagset)?;
        Ok(s)
    }

    fn flatten(&mut self, t: &ParseTree, parent: Option<usize>, tagset: &TagSet) -> Result<usize> {
        let id = self.nodes.len();
        let label = if t.is_leaf() {
            self.leaves.push(id);
            None
        } else {
            Some(tagset.label_index(&t.label)?)
        };
        self.nodes.push(GoldNode {
            label,
            children: Vec::new(),
            parent,
        });
        for c in &t.children {
            let cid = self.flatten(c, Some(id), tagset)?;
            self.nodes[id].children.push(cid);
        }
        Ok(id)
    }
}

impl Scorer for OracleScorer {
    fn add_leaf(&mut self, _word: &str, _pos: usize) -> Result<NodeId> {
        let n = self.mapping.len();
        self.mapping.push(self.leaves.get(n).copied());
        Ok(n)
    }

    fn add_node(&mut self, children: &[NodeId], label: usize) -> Result<NodeId> {
        let gold: Option<Vec<usize>> = children.iter().map(|&c| self.mapping[c]).collect();
        let matched = gold.and_then(|g| {
            let p = self.nodes[g[0]].parent?;
            (self.nodes[p].children == g && self.nodes[p].label == Some(label)).then_some(p)
        });
        self.mapping.push(matched);
        Ok(self.mapping.len() - 1)
    }

    fn scores(&mut self, live: &[NodeId]) -> Result<Tensor> {
        let mut out = Tensor::zeros(live.len(), self.num_bioes);
        let gold: Vec<Option<usize>> = live.iter().map(|&id| self.mapping[id]).collect();
        let mut tags = vec![0usize; live.len()];
        let mut i = 0;
        while i < live.len() {
            let parent = gold[i].and_then(|g| self.nodes[g].parent);
            if let Some(p) = parent {
                let kids = &self.nodes[p].children;
                let fits = kids[0] == gold[i].unwrap()
                    && kids
                        .iter()
                        .enumerate()
                        .all(|(j, &k)| gold.get(i + j).copied().flatten() == Some(k));
                if fits {
                    let label = self.nodes[p].label.unwrap();
                    let w = kids.len();
                    for j in 0..w {
                        let prefix = if w == 1 {
                            Prefix::S
                        } else if j == 0 {
                            Prefix::B
                        } else if j == w - 1 {
                            Prefix::E
                        } else {
                            Prefix::I
                        };
                        tags[i + j] = Bioes::Chunk(prefix, label).index();
                    }
                    i += w;
                    continue;
                }
            }
            i += 1;
        }
        for (n, &t) in tags.iter().enumerate() {
            out.set(n, t, 1.0);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Leaf(usize),
    Node {
        label: usize,
        children: Vec<Constituent>,
    },
}

/// A live item of the greedy loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Constituent {
    pub span: Span,
    pub node: NodeId,
    pub source: Source,
}

impl Constituent {
    pub fn label(&self) -> Option<usize> {
        match &self.source {
            Source::Leaf(_) => None,
            Source::Node { label, .. } => Some(*label),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.source, Source::Leaf(_))
    }
}

/// Converts constituent ancestry into a tree (labels as predicted, i.e.
/// possibly merged).
pub fn assemble_tree(root: &Constituent, words: &[String], pos: &[String], tagset: &TagSet) -> Result<ParseTree> {
    if root.span.start != 0 || root.span.end + 1 != words.len() {
        return Err(Error::IncompleteCoverage);
    }
    assemble_rec(root, words, pos, tagset)
}

fn assemble_rec(c: &Constituent, words: &[String], pos: &[String], tagset: &TagSet) -> Result<ParseTree> {
    match &c.source {
        Source::Leaf(i) => Ok(ParseTree::leaf(pos[*i].clone(), words[*i].clone(), *i)),
        Source::Node { label, children } => {
            let kids = children
                .iter()
                .map(|k| assemble_rec(k, words, pos, tagset))
                .collect::<Result<Vec<_>>>()?;
            for w in kids.windows(2) {
                if w[0].span.end + 1 != w[1].span.start {
                    return Err(Error::IncompleteCoverage);
                }
            }
            let name = tagset
                .parse_labels
                .token(*label)
                .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
            Ok(ParseTree::node(name, kids))
        }
    }
}

/// Result of one greedy parse.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    /// Tree with merged labels expanded into unary chains.
    pub tree: ParseTree,
    /// Tree as built, with `|`-joined labels intact.
    pub merged: ParseTree,
    pub iterations: usize,
    /// True when the loop ended without a spanning node.
    pub stagnated: bool,
}

/// Runs the greedy loop with any scorer.
pub fn parse_with<S: Scorer>(
    words: &[String],
    pos: &[String],
    tagset: &TagSet,
    scorer: &mut S,
) -> Result<ParseOutcome> {
    if words.len() != pos.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} words with {} POS tags",
            words.len(),
            pos.len()
        )));
    }
    if words.is_empty() {
        return Err(Error::ShapeMismatch("empty sentence".into()));
    }
    let n = words.len();
    let mut live = Vec::with_capacity(n);
    for (i, (w, p)) in words.iter().zip(pos).enumerate() {
        let pos_idx = tagset.pos_index(p)?;
        let node = scorer.add_leaf(w, pos_idx)?;
        live.push(Constituent {
            span: Span::new(i, i),
            node,
            source: Source::Leaf(i),
        });
    }
    let num_labels = tagset.num_labels();
    let mut iterations = 0;
    let mut stagnated = false;
    loop {
        if live.len() == 1 && !live[0].is_leaf() {
            break;
        }
        if iterations >= 2 * n {
            stagnated = true;
            break;
        }
        let ids: Vec<NodeId> = live.iter().map(|c| c.node).collect();
        let lattice = TagLattice::new(scorer.scores(&ids)?, num_labels)?;
        let (path, _) = lattice.viterbi();
        iterations += 1;
        // A constituent may not be wrapped in a node carrying its own label.
        let found: Vec<(usize, usize, usize)> = chunks(&path)
            .into_iter()
            .filter(|&(s, e, l)| !(s == e && live[s].label() == Some(l)))
            .collect();
        if found.is_empty() {
            stagnated = true;
            break;
        }
        let mut next = Vec::with_capacity(live.len());
        let mut items = live.into_iter().enumerate().peekable();
        let mut pending = found.into_iter().peekable();
        while let Some((i, c)) = items.next() {
            match pending.peek() {
                Some(&(s, e, label)) if s == i => {
                    pending.next();
                    let mut children = vec![c];
                    for _ in s..e {
                        children.push(items.next().expect("chunk inside sequence").1);
                    }
                    let ids: Vec<NodeId> = children.iter().map(|c| c.node).collect();
                    let node = scorer.add_node(&ids, label)?;
                    next.push(Constituent {
                        span: Span::new(children[0].span.start, children[children.len() - 1].span.end),
                        node,
                        source: Source::Node { label, children },
                    });
                }
                _ => next.push(c),
            }
        }
        live = next;
    }
    let root = if live.len() == 1 {
        live.pop().unwrap()
    } else {
        let label = tagset.label_index(&tagset.root_label)?;
        Constituent {
            span: Span::new(live[0].span.start, live[live.len() - 1].span.end),
            // Never scored or composed.
            node: usize::MAX,
            source: Source::Node {
                label,
                children: live,
            },
        }
    };
    let merged = assemble_tree(&root, words, pos, tagset)?;
    Ok(ParseOutcome {
        tree: expand_merged_labels(&merged),
        merged,
        iterations,
        stagnated,
    })
}

/// Parses one POS-tagged sentence with a single model.
pub fn parse(words: &[String], pos: &[String], params: &ModelParams, tagset: &TagSet) -> Result<ParseTree> {
    let mut scorer = ModelScorer::new(params, tagset)?;
    Ok(parse_with(words, pos, tagset, &mut scorer)?.tree)
}

/// Parses with score averaging over several models sharing one tagset.
pub fn vote_parse(
    words: &[String],
    pos: &[String],
    models: &[&ModelParams],
    tagsets: &[&TagSet],
) -> Result<ParseTree> {
    let mut scorer = VoteScorer::new(models, tagsets)?;
    Ok(parse_with(words, pos, tagsets[0], &mut scorer)?.tree)
}

/// Splits `word/POS` tokens on the last slash.
pub fn parse_tagged_line(line: &str) -> Result<(Vec<String>, Vec<String>)> {
    let mut words = Vec::new();
    let mut pos = Vec::new();
    for (i, tok) in line.split_whitespace().enumerate() {
        let (w, p) = tok.rsplit_once('/').ok_or(Error::MalformedLine(i + 1))?;
        if w.is_empty() || p.is_empty() {
            return Err(Error::MalformedLine(i + 1));
        }
        words.push(w.to_string());
        pos.push(p.to_string());
    }
    Ok((words, pos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::ModelDims;
    use crate::tree::{parse_tree, parse_trees};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const FIGURE: &str = "(S (VP (VP (VB Look) (PRT (RP around))) (CC and) (VP (VB choose) (NP (PRP$ your) (JJ own) (NN ground)))) (. .))";

    fn oracle_parse(gold: &ParseTree, tagset: &TagSet) -> ParseOutcome {
        let mut oracle = OracleScorer::new(gold, tagset).unwrap();
        parse_with(&gold.words(), &gold.pos_tags(), tagset, &mut oracle).unwrap()
    }

    #[test]
    fn oracle_reproduces_figure_tree() {
        let gold = parse_tree(FIGURE).unwrap();
        let ts = TagSet::build(std::slice::from_ref(&gold), 1).unwrap();
        let out = oracle_parse(&gold, &ts);
        assert_eq!(out.tree.to_string(), FIGURE);
        assert_eq!(out.iterations, 4);
        assert!(!out.stagnated);
    }

    #[test]
    fn oracle_with_merged_labels_expands() {
        let gold = parse_tree("(S|VP (VB go) (ADVP (RB now)))").unwrap();
        let ts = TagSet::build(std::slice::from_ref(&gold), 1).unwrap();
        let out = oracle_parse(&gold, &ts);
        assert_eq!(out.merged, gold);
        assert_eq!(out.tree.to_string(), "(S (VP (VB go) (ADVP (RB now))))");
    }

    fn tiny_model(ts: &TagSet, seed: u64) -> ModelParams {
        let dims = ModelDims {
            word_dim: 4,
            tag_dim: 3,
            hidden: 6,
            window: 3,
            kmax: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(dims, ts.num_words(), ts.num_tag_entries(), ts.num_bioes(), &mut rng).unwrap()
    }

    #[test]
    fn single_word_gives_one_node_tree() {
        let ts = TagSet::build(&parse_trees("(NP (NN dog))").unwrap(), 1).unwrap();
        let params = tiny_model(&ts, 1);
        let t = parse(&["dog".into()], &["NN".into()], &params, &ts).unwrap();
        assert_eq!(t.words(), vec!["dog"]);
        assert!(t.is_leaf() || (t.label == "NP" && t.children.len() == 1));
    }

    #[test]
    fn random_model_output_is_well_formed() {
        let corpus = parse_trees(&format!("{FIGURE}\n(S (NP (DT a) (NN dog)) (VP (VBZ barks)))")).unwrap();
        let ts = TagSet::build(&corpus, 1).unwrap();
        for seed in 0..20 {
            let params = tiny_model(&ts, seed);
            let gold = &corpus[0];
            let t = parse(&gold.words(), &gold.pos_tags(), &params, &ts).unwrap();
            assert_eq!(t.words(), gold.words());
            assert_eq!(t.pos_tags(), gold.pos_tags());
            t.check_spans().unwrap();
            let again = parse(&gold.words(), &gold.pos_tags(), &params, &ts).unwrap();
            assert_eq!(t, again);
        }
    }

    #[test]
    fn stagnation_attaches_under_root_label() {
        let corpus = parse_trees("(S (NP (DT a) (NN dog)) (VP (VBZ barks)))").unwrap();
        let ts = TagSet::build(&corpus, 1).unwrap();
        let mut params = tiny_model(&ts, 3);
        // Only O ever scores.
        params.m2.fill(0.0);
        let words: Vec<String> = corpus[0].words();
        let mut scorer = ModelScorer::new(&params, &ts).unwrap();
        let out = parse_with(&words, &corpus[0].pos_tags(), &ts, &mut scorer).unwrap();
        assert!(out.stagnated);
        assert_eq!(out.tree.to_string(), "(S (DT a) (NN dog) (VBZ barks))");
    }

    #[test]
    fn unknown_pos_rejected() {
        let ts = TagSet::build(&parse_trees("(NP (NN dog))").unwrap(), 1).unwrap();
        let params = tiny_model(&ts, 1);
        let err = parse(&["dog".into()], &["VB".into()], &params, &ts).unwrap_err();
        assert!(matches!(err, Error::UnknownPosTag(p) if p == "VB"));
    }

    #[test]
    fn vote_of_copies_equals_single() {
        let corpus = parse_trees(&format!("{FIGURE}\n(S (NP (DT a) (NN dog)) (VP (VBZ barks)))")).unwrap();
        let ts = TagSet::build(&corpus, 1).unwrap();
        let a = tiny_model(&ts, 7);
        let words = corpus[0].words();
        let pos = corpus[0].pos_tags();
        let single = parse(&words, &pos, &a, &ts).unwrap();
        assert_eq!(vote_parse(&words, &pos, &[&a], &[&ts]).unwrap(), single);
        assert_eq!(vote_parse(&words, &pos, &[&a, &a, &a], &[&ts, &ts, &ts]).unwrap(), single);
    }

    #[test]
    fn vote_order_invariant() {
        let corpus = parse_trees(FIGURE).unwrap();
        let ts = TagSet::build(&corpus, 1).unwrap();
        let models: Vec<ModelParams> = (0..3).map(|s| tiny_model(&ts, 20 + s)).collect();
        let words = corpus[0].words();
        let pos = corpus[0].pos_tags();
        let fwd = vote_parse(&words, &pos, &[&models[0], &models[1], &models[2]], &[&ts, &ts, &ts]).unwrap();
        let rev = vote_parse(&words, &pos, &[&models[2], &models[0], &models[1]], &[&ts, &ts, &ts]).unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn vote_rejects_mismatched_tagsets() {
        let ts1 = TagSet::build(&parse_trees("(NP (NN dog))").unwrap(), 1).unwrap();
        let ts2 = TagSet::build(&parse_trees("(VP (VB go))").unwrap(), 1).unwrap();
        let a = tiny_model(&ts1, 1);
        let b = tiny_model(&ts2, 1);
        let err = vote_parse(&["dog".into()], &["NN".into()], &[&a, &b], &[&ts1, &ts2]).unwrap_err();
        assert!(matches!(err, Error::TagsetMismatch));
    }

    #[test]
    fn average_is_order_invariant_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tabs: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(3, 5, 2.0, &mut rng)).collect();
        let a = average_tables(&tabs);
        let b = average_tables(&[tabs[3].clone(), tabs[1].clone(), tabs[0].clone(), tabs[2].clone()]);
        assert_eq!(a, b);
    }

    #[test]
    fn tagged_line_parsing() {
        let (w, p) = parse_tagged_line("Look/VB around/RP 1/2/CD ./.").unwrap();
        assert_eq!(w, ["Look", "around", "1/2", "."]);
        assert_eq!(p, ["VB", "RP", "CD", "."]);
        assert!(parse_tagged_line("Look").is_err());
        assert_eq!(parse_tagged_line("   ").unwrap().0.len(), 0);
    }

    #[test]
    fn assemble_rejects_partial_root() {
        let ts = TagSet::build(&parse_trees("(NP (NN dog) (NN cat))").unwrap(), 1).unwrap();
        let c = Constituent {
            span: Span::new(0, 0),
            node: 0,
            source: Source::Leaf(0),
        };
        let words = vec!["dog".to_string(), "cat".to_string()];
        let pos = vec!["NN".to_string(), "NN".to_string()];
        assert!(matches!(assemble_tree(&c, &words, &pos, &ts), Err(Error::IncompleteCoverage)));
        let single = assemble_tree(&c, &words[..1], &pos[..1], &ts).unwrap();
        assert_eq!(single.to_string(), "(NN dog)");
    }
}
