//! Recursive word-tag composition.
//!
//! Every constituent of a sentence lives in a per-sentence [`Arena`]: leaves
//! hold their word embedding, internal nodes the output of the arity-`k`
//! composition network `tanh(M^k z)` where `z` concatenates each child's
//! `(representation ‖ tag embedding)`. Each node also carries the embedding
//! of its own tag (POS for leaves, parse label otherwise), which is what its
//! parent and the tagger see next to the representation.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nncore::{
    add_into, affine_backward, affine_tanh, dropout_backward, dropout_mask, dropout_rescale_eval,
    lookup, tanh_backward, ModelParams, ParamGrads,
};
use crate::tree::ParseTree;
use crate::vocab::TagSet;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Lookup outputs are masked with fresh dropout masks.
    Train,
    /// Lookup outputs are scaled by `1 - p_drop`.
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepInput {
    Node(NodeId),
    /// Output of an earlier step of the same node, paired with the node's
    /// own tag embedding.
    Partial(usize),
}

#[derive(Debug, Clone)]
struct ComposeStep {
    inputs: Vec<StepInput>,
    z: Vec<f64>,
    out: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum NodeKind {
    Leaf {
        word: usize,
        mask: Option<Vec<bool>>,
    },
    Internal {
        children: Vec<NodeId>,
        steps: Vec<ComposeStepRef>,
    },
}

/// Opaque cached composition step.
#[derive(Debug, Clone)]
pub struct ComposeStepRef(ComposeStep);

#[derive(Debug, Clone)]
pub struct NodeRepr {
    /// D-dimensional representation.
    pub vec: Vec<f64>,
    /// T-dimensional embedding of `tag` after dropout or rescaling.
    pub tag_emb: Vec<f64>,
    /// Column of the tag lookup table.
    pub tag: usize,
    pub kind: NodeKind,
    tag_mask: Option<Vec<bool>>,
}

impl NodeRepr {
    pub fn children(&self) -> &[NodeId] {
        match &self.kind {
            NodeKind::Leaf { .. } => &[],
            NodeKind::Internal { children, .. } => children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    /// Arity of the composition that produced this node (0 for leaves).
    pub fn arity_used(&self) -> usize {
        self.children().len()
    }
}

/// Splits an arity-`k` composition into steps of at most `kmax` inputs: the
/// leftmost `kmax` inputs are composed first, the result is prepended to the
/// remaining inputs, and so on.
fn plan_steps(children: &[NodeId], kmax: usize) -> Result<Vec<Vec<StepInput>>> {
    if children.is_empty() {
        return Err(Error::EmptyChildList);
    }
    if kmax < 2 && children.len() > 1 {
        return Err(Error::InvalidConfig(format!(
            "arity {} needs Kmax >= 2",
            children.len()
        )));
    }
    let mut pending: Vec<StepInput> = children.iter().map(|&c| StepInput::Node(c)).collect();
    let mut steps = Vec::new();
    while pending.len() > kmax {
        let rest = pending.split_off(kmax);
        steps.push(pending);
        pending = Vec::with_capacity(rest.len() + 1);
        pending.push(StepInput::Partial(steps.len() - 1));
        pending.extend(rest);
    }
    steps.push(pending);
    Ok(steps)
}

/// Per-sentence store of node representations.
#[derive(Debug, Clone)]
pub struct Arena {
    mode: Mode,
    p_drop: f64,
    rng: ChaCha8Rng,
    nodes: Vec<NodeRepr>,
}

impl Arena {
    pub fn new(mode: Mode, p_drop: f64, seed: u64) -> Self {
        Arena {
            mode,
            p_drop,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
        }
    }

    pub fn eval(p_drop: f64) -> Self {
        Self::new(Mode::Eval, p_drop, 0)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &NodeRepr {
        &self.nodes[id]
    }

    /// `(repr ‖ tag embedding)` as read by a parent or by the tagger.
    pub fn slot(&self, id: NodeId) -> Vec<f64> {
        let n = &self.nodes[id];
        let mut out = Vec::with_capacity(n.vec.len() + n.tag_emb.len());
        out.extend_from_slice(&n.vec);
        out.extend_from_slice(&n.tag_emb);
        out
    }

    fn lookup_output(&mut self, v: Vec<f64>) -> (Vec<f64>, Option<Vec<bool>>) {
        match self.mode {
            Mode::Train => {
                let (out, mask) = dropout_mask(&v, self.p_drop, &mut self.rng);
                (out, Some(mask))
            }
            Mode::Eval => (dropout_rescale_eval(&v, self.p_drop), None),
        }
    }

    fn lookup_backward(&self, g: &[f64], mask: &Option<Vec<bool>>) -> Vec<f64> {
        match mask {
            Some(m) => dropout_backward(g, m),
            None => g.iter().map(|x| x * (1.0 - self.p_drop)).collect(),
        }
    }

    fn tag_embedding(&mut self, params: &ModelParams, tag: usize) -> Result<(Vec<f64>, Option<Vec<bool>>)> {
        let raw = lookup(&params.tags, tag)?;
        Ok(self.lookup_output(raw))
    }

    /// Adds a leaf for word column `word` with tag column `tag`.
    pub fn leaf(&mut self, params: &ModelParams, word: usize, tag: usize) -> Result<NodeId> {
        let raw = lookup(&params.words, word)?;
        let (vec, mask) = self.lookup_output(raw);
        let (tag_emb, tag_mask) = self.tag_embedding(params, tag)?;
        self.nodes.push(NodeRepr {
            vec,
            tag_emb,
            tag,
            kind: NodeKind::Leaf { word, mask },
            tag_mask,
        });
        Ok(self.nodes.len() - 1)
    }

    /// Composes `children` (left to right) into a new node tagged `tag`.
    pub fn internal(&mut self, params: &ModelParams, children: &[NodeId], tag: usize) -> Result<NodeId> {
        if let Some(&bad) = children.iter().find(|&&c| c >= self.nodes.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.nodes.len(),
            });
        }
        let plan = plan_steps(children, params.dims.kmax)?;
        let (tag_emb, tag_mask) = self.tag_embedding(params, tag)?;
        let mut steps: Vec<ComposeStep> = Vec::with_capacity(plan.len());
        for inputs in plan {
            let mut z = Vec::with_capacity(inputs.len() * params.dims.slot());
            for input in &inputs {
                match *input {
                    StepInput::Node(c) => {
                        z.extend_from_slice(&self.nodes[c].vec);
                        z.extend_from_slice(&self.nodes[c].tag_emb);
                    }
                    StepInput::Partial(s) => {
                        z.extend_from_slice(&steps[s].out);
                        z.extend_from_slice(&tag_emb);
                    }
                }
            }
            let out = affine_tanh(&params.compose[inputs.len() - 1], &z)?;
            steps.push(ComposeStep { inputs, z, out });
        }
        let vec = steps.last().unwrap().out.clone();
        self.nodes.push(NodeRepr {
            vec,
            tag_emb,
            tag,
            kind: NodeKind::Internal {
                children: children.to_vec(),
                steps: steps.into_iter().map(ComposeStepRef).collect(),
            },
            tag_mask,
        });
        Ok(self.nodes.len() - 1)
    }

    /// Adds every node of `tree` bottom-up and returns the root.
    pub fn compose_tree(&mut self, tree: &ParseTree, params: &ModelParams, tagset: &TagSet) -> Result<NodeId> {
        if tree.is_leaf() {
            let word = tagset.word_index(tree.word.as_deref().unwrap_or_default());
            let pos = tagset.pos_index(&tree.label)?;
            return self.leaf(params, word, tagset.pos_entry(pos));
        }
        let label = tagset.label_index(&tree.label)?;
        let children = tree
            .children
            .iter()
            .map(|c| self.compose_tree(c, params, tagset))
            .collect::<Result<Vec<_>>>()?;
        self.internal(params, &children, tagset.label_entry(label))
    }

    /// Back-propagates per-node gradients (on each node's representation and
    /// tag embedding) through every composition, down to the lookup tables.
    pub fn backward(&self, params: &ModelParams, grads: &mut NodeGrads, out: &mut ParamGrads) -> Result<()> {
        if grads.vec.len() > self.nodes.len() {
            return Err(Error::MissingForwardCache);
        }
        grads.resize(self.nodes.len(), params);
        let d = params.dims.word_dim;
        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            let g_vec = std::mem::take(&mut grads.vec[id]);
            match &node.kind {
                NodeKind::Leaf { word, mask } => {
                    if g_vec.iter().any(|&x| x != 0.0) {
                        let g = match mask {
                            Some(m) => dropout_backward(&g_vec, m),
                            None => self.lookup_backward(&g_vec, mask),
                        };
                        out.add_word(*word, &g);
                    }
                }
                NodeKind::Internal { steps, .. } => {
                    let mut step_grads: Vec<Vec<f64>> = vec![vec![0.0; d]; steps.len()];
                    if let Some(last) = step_grads.last_mut() {
                        *last = g_vec;
                    }
                    for s in (0..steps.len()).rev() {
                        let step = &steps[s].0;
                        let g_out = std::mem::take(&mut step_grads[s]);
                        if g_out.iter().all(|&x| x == 0.0) {
                            continue;
                        }
                        let k = step.inputs.len();
                        let g_pre = tanh_backward(&step.out, &g_out);
                        let g_z = affine_backward(&params.compose[k - 1], &step.z, &g_pre, out.compose_mut(k));
                        let slot = params.dims.slot();
                        for (j, input) in step.inputs.iter().enumerate() {
                            let gs = &g_z[j * slot..(j + 1) * slot];
                            match *input {
                                StepInput::Node(c) => {
                                    add_into(&mut grads.vec[c], &gs[..d]);
                                    add_into(&mut grads.tag[c], &gs[d..]);
                                }
                                StepInput::Partial(p) => {
                                    add_into(&mut step_grads[p], &gs[..d]);
                                    add_into(&mut grads.tag[id], &gs[d..]);
                                }
                            }
                        }
                    }
                }
            }
            let g_tag = std::mem::take(&mut grads.tag[id]);
            if g_tag.iter().any(|&x| x != 0.0) {
                let g = self.lookup_backward(&g_tag, &node.tag_mask);
                out.add_tag(node.tag, &g);
            }
        }
        Ok(())
    }

    /// Gradient of the loss w.r.t. every parameter given only a gradient on
    /// the representation of `root`.
    pub fn compose_backward(&self, root: NodeId, grad_root: &[f64], params: &ModelParams, out: &mut ParamGrads) -> Result<()> {
        if root >= self.nodes.len() {
            return Err(Error::MissingForwardCache);
        }
        let mut grads = NodeGrads::new(self.nodes.len(), params);
        grads.vec[root].copy_from_slice(grad_root);
        self.backward(params, &mut grads, out)
    }

    /// Pre-order list of internal node ids under `root`.
    pub fn internal_nodes(&self, root: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id];
            if !n.is_leaf() {
                out.push(id);
                stack.extend(n.children().iter().rev());
            }
        }
        out
    }
}

/// Gradients flowing into each node's representation and tag embedding.
#[derive(Debug, Clone)]
pub struct NodeGrads {
    pub vec: Vec<Vec<f64>>,
    pub tag: Vec<Vec<f64>>,
}

impl NodeGrads {
    pub fn new(len: usize, params: &ModelParams) -> Self {
        NodeGrads {
            vec: vec![vec![0.0; params.dims.word_dim]; len],
            tag: vec![vec![0.0; params.dims.tag_dim]; len],
        }
    }

    fn resize(&mut self, len: usize, params: &ModelParams) {
        self.vec.resize(len, vec![0.0; params.dims.word_dim]);
        self.tag.resize(len, vec![0.0; params.dims.tag_dim]);
    }

    /// Adds a gradient on a full `(repr ‖ tag)` slot.
    pub fn add_slot(&mut self, id: NodeId, g: &[f64]) {
        let d = self.vec[id].len();
        add_into(&mut self.vec[id], &g[..d]);
        add_into(&mut self.tag[id], &g[d..]);
    }
}

/// Stateless composition of `children` slots (`repr ‖ tag embedding`, each
/// of length D+T) into a D-vector, applying the overflow rule for arities
/// above Kmax with `parent_tag` as the tag of intermediate results.
pub fn compose(children: &[Vec<f64>], parent_tag: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let ids: Vec<NodeId> = (0..children.len()).collect();
    let plan = plan_steps(&ids, params.dims.kmax)?;
    let slot = params.dims.slot();
    if let Some(c) = children.iter().find(|c| c.len() != slot) {
        return Err(Error::ShapeMismatch(format!(
            "child slot of length {}, expected {slot}",
            c.len()
        )));
    }
    let mut outs: Vec<Vec<f64>> = Vec::with_capacity(plan.len());
    for inputs in plan {
        let mut z = Vec::with_capacity(inputs.len() * slot);
        for input in &inputs {
            match *input {
                StepInput::Node(c) => z.extend_from_slice(&children[c]),
                StepInput::Partial(s) => {
                    z.extend_from_slice(&outs[s]);
                    z.extend_from_slice(parent_tag);
                }
            }
        }
        outs.push(affine_tanh(&params.compose[inputs.len() - 1], &z)?);
    }
    Ok(outs.pop().unwrap())
}

/// One internal node of a corpus, as stored in a phrase dump.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseRecord {
    pub phrase: String,
    pub vec: Vec<f64>,
}

/// Every internal node of `tree` with its bracketed text and eval-mode vector.
pub fn phrase_vectors(
    tree: &ParseTree,
    params: &ModelParams,
    tagset: &TagSet,
    p_drop: f64,
) -> Result<Vec<PhraseRecord>> {
    let mut arena = Arena::eval(p_drop);
    let root = arena.compose_tree(tree, params, tagset)?;
    let ids = arena.internal_nodes(root);
    let nodes = tree.internal_nodes();
    debug_assert_eq!(ids.len(), nodes.len());
    Ok(ids
        .into_iter()
        .zip(nodes)
        .map(|(id, node)| PhraseRecord {
            phrase: node.to_string(),
            vec: arena.node(id).vec.clone(),
        })
        .collect())
}

/// Binary stream: for each record a little-endian u32 byte length, the UTF-8
/// phrase, then D little-endian f64 values.
pub fn write_phrase_dump<W: Write>(mut w: W, records: &[PhraseRecord]) -> Result<()> {
    for r in records {
        w.write_u32::<LittleEndian>(r.phrase.len() as u32)?;
        w.write_all(r.phrase.as_bytes())?;
        for &v in &r.vec {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_phrase_dump<R: Read>(mut r: R, dim: usize) -> Result<Vec<PhraseRecord>> {
    let mut out = Vec::new();
    loop {
        let len = match r.read_u32::<LittleEndian>() {
            Ok(n) => n as usize,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        let phrase = String::from_utf8(bytes).map_err(|_| Error::MalformedLine(out.len() + 1))?;
        let mut vec = Vec::with_capacity(dim);
        for _ in 0..dim {
            vec.push(r.read_f64::<LittleEndian>()?);
        }
        out.push(PhraseRecord { phrase, vec });
    }
    Ok(out)
}
