//! BIOES tags and the constrained tag lattice.
//!
//! Tag indices over `L` labels are laid out as `O = 0` followed by
//! `B, I, E, S` for each label: label `l` with prefix `p` sits at
//! `1 + 4l + p`. Transitions carry no score; they only restrict which paths
//! are valid.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nncore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prefix {
    B,
    I,
    E,
    S,
}

impl Prefix {
    const ALL: [Prefix; 4] = [Prefix::B, Prefix::I, Prefix::E, Prefix::S];

    fn offset(self) -> usize {
        match self {
            Prefix::B => 0,
            Prefix::I => 1,
            Prefix::E => 2,
            Prefix::S => 3,
        }
    }

    fn letter(self) -> char {
        match self {
            Prefix::B => 'B',
            Prefix::I => 'I',
            Prefix::E => 'E',
            Prefix::S => 'S',
        }
    }
}

/// A BIOES tag whose label is either a string or a dense label index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bioes<L> {
    Outside,
    Chunk(Prefix, L),
}

pub type BioesTag = Bioes<String>;

impl<L> Bioes<L> {
    pub fn label(&self) -> Option<&L> {
        match self {
            Bioes::Outside => None,
            Bioes::Chunk(_, l) => Some(l),
        }
    }

    pub fn prefix(&self) -> Option<Prefix> {
        match self {
            Bioes::Outside => None,
            Bioes::Chunk(p, _) => Some(*p),
        }
    }
}

impl Bioes<usize> {
    pub fn index(&self) -> usize {
        match self {
            Bioes::Outside => 0,
            Bioes::Chunk(p, l) => 1 + 4 * l + p.offset(),
        }
    }

    pub fn from_index(index: usize) -> Self {
        if index == 0 {
            Bioes::Outside
        } else {
            let i = index - 1;
            Bioes::Chunk(Prefix::ALL[i % 4], i / 4)
        }
    }
}

impl fmt::Display for Bioes<String> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bioes::Outside => write!(f, "O"),
            Bioes::Chunk(p, l) => write!(f, "{}-{}", p.letter(), l),
        }
    }
}

impl FromStr for Bioes<String> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Bioes::Outside);
        }
        let (prefix, label) = s
            .split_once('-')
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))?;
        let prefix = match prefix {
            "B" => Prefix::B,
            "I" => Prefix::I,
            "E" => Prefix::E,
            "S" => Prefix::S,
            _ => return Err(Error::UnknownLabel(s.to_string())),
        };
        if label.is_empty() {
            return Err(Error::UnknownLabel(s.to_string()));
        }
        Ok(Bioes::Chunk(prefix, label.to_string()))
    }
}

pub fn num_tags(num_labels: usize) -> usize {
    4 * num_labels + 1
}

fn can_start<L>(t: &Bioes<L>) -> bool {
    !matches!(t.prefix(), Some(Prefix::I) | Some(Prefix::E))
}

fn can_end<L>(t: &Bioes<L>) -> bool {
    !matches!(t.prefix(), Some(Prefix::B) | Some(Prefix::I))
}

fn can_follow<L: PartialEq>(prev: &Bioes<L>, next: &Bioes<L>) -> bool {
    match prev {
        Bioes::Chunk(Prefix::B, a) | Bioes::Chunk(Prefix::I, a) => match next {
            Bioes::Chunk(Prefix::I, b) | Bioes::Chunk(Prefix::E, b) => a == b,
            _ => false,
        },
        _ => can_start(next),
    }
}

/// True iff `tags` obeys the BIOES start, transition, and end constraints.
/// The empty sequence is valid.
pub fn constrain_path_validity<L: PartialEq>(tags: &[Bioes<L>]) -> bool {
    let Some(first) = tags.first() else {
        return true;
    };
    if !can_start(first) || !can_end(&tags[tags.len() - 1]) {
        return false;
    }
    tags.windows(2).all(|w| can_follow(&w[0], &w[1]))
}

/// Index-level validity check.
pub fn is_valid_index_path(path: &[usize]) -> bool {
    let tags: Vec<Bioes<usize>> = path.iter().map(|&i| Bioes::from_index(i)).collect();
    constrain_path_validity(&tags)
}

/// Per-position tag scores over the constrained BIOES graph.
#[derive(Debug, Clone, PartialEq)]
pub struct TagLattice {
    num_labels: usize,
    scores: Tensor,
}

const NEG_INF: f64 = f64::NEG_INFINITY;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(NEG_INF, f64::max);
    if max == NEG_INF {
        return NEG_INF;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl TagLattice {
    /// `scores` is `N × (4·num_labels + 1)` with `N ≥ 1`.
    pub fn new(scores: Tensor, num_labels: usize) -> Result<Self> {
        if scores.cols() != num_tags(num_labels) {
            return Err(Error::ShapeMismatch(format!(
                "{} score columns for {} labels",
                scores.cols(),
                num_labels
            )));
        }
        if scores.rows() == 0 {
            return Err(Error::ShapeMismatch("empty lattice".into()));
        }
        Ok(TagLattice { num_labels, scores })
    }

    pub fn from_rows(rows: &[Vec<f64>], num_labels: usize) -> Result<Self> {
        let cols = num_tags(num_labels);
        let data = rows.iter().flatten().copied().collect();
        Self::new(Tensor::from_vec(rows.len(), cols, data)?, num_labels)
    }

    pub fn len(&self) -> usize {
        self.scores.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.rows() == 0
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_tags(&self) -> usize {
        self.scores.cols()
    }

    pub fn scores(&self) -> &Tensor {
        &self.scores
    }

    pub fn allowed_start(&self, t: usize) -> bool {
        can_start(&Bioes::from_index(t))
    }

    pub fn allowed_end(&self, t: usize) -> bool {
        can_end(&Bioes::from_index(t))
    }

    pub fn allowed_next(&self, prev: usize, next: usize) -> bool {
        can_follow(&Bioes::from_index(prev), &Bioes::from_index(next))
    }

    /// Sum of node scores along `path`.
    pub fn path_score(&self, path: &[usize]) -> f64 {
        path.iter()
            .enumerate()
            .map(|(n, &t)| self.scores.get(n, t))
            .sum()
    }

    /// Tags that may precede `t`: `{B-A, I-A}` for `I-A`/`E-A`, else every
    /// tag that closes a chunk.
    fn predecessors(&self, t: usize) -> Vec<usize> {
        match Bioes::from_index(t) {
            Bioes::Chunk(Prefix::I, l) | Bioes::Chunk(Prefix::E, l) => vec![
                Bioes::Chunk(Prefix::B, l).index(),
                Bioes::Chunk(Prefix::I, l).index(),
            ],
            _ => (0..self.num_tags()).filter(|&p| self.allowed_end(p)).collect(),
        }
    }

    /// Highest-scoring valid path. Ties go to the lowest tag index, both at
    /// each backpointer and at the final position.
    pub fn viterbi(&self) -> (Vec<usize>, f64) {
        let n = self.len();
        let p = self.num_tags();
        let preds: Vec<Vec<usize>> = (0..p).map(|t| self.predecessors(t)).collect();
        let mut delta = vec![NEG_INF; p];
        for (t, d) in delta.iter_mut().enumerate() {
            if self.allowed_start(t) {
                *d = self.scores.get(0, t);
            }
        }
        let mut back = vec![vec![0usize; p]; n];
        for pos in 1..n {
            let mut next = vec![NEG_INF; p];
            for t in 0..p {
                let mut best = NEG_INF;
                let mut arg = usize::MAX;
                for &q in &preds[t] {
                    if delta[q] > best {
                        best = delta[q];
                        arg = q;
                    }
                }
                if arg != usize::MAX {
                    next[t] = best + self.scores.get(pos, t);
                    back[pos][t] = arg;
                }
            }
            delta = next;
        }
        let mut best = NEG_INF;
        let mut last = 0;
        for (t, &d) in delta.iter().enumerate() {
            if self.allowed_end(t) && d > best {
                best = d;
                last = t;
            }
        }
        let mut path = vec![0usize; n];
        path[n - 1] = last;
        for pos in (1..n).rev() {
            path[pos - 1] = back[pos][path[pos]];
        }
        // Recompute left to right so the score equals `path_score` exactly.
        let score = self.path_score(&path);
        (path, score)
    }

    fn forward(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let p = self.num_tags();
        let preds: Vec<Vec<usize>> = (0..p).map(|t| self.predecessors(t)).collect();
        let mut alpha = vec![vec![NEG_INF; p]; n];
        for t in 0..p {
            if self.allowed_start(t) {
                alpha[0][t] = self.scores.get(0, t);
            }
        }
        for pos in 1..n {
            for t in 0..p {
                let prev = &alpha[pos - 1];
                let lse = log_sum_exp(preds[t].iter().map(|&q| prev[q]));
                alpha[pos][t] = lse + self.scores.get(pos, t);
            }
        }
        alpha
    }

    fn backward(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let p = self.num_tags();
        let mut beta = vec![vec![NEG_INF; p]; n];
        for t in 0..p {
            if self.allowed_end(t) {
                beta[n - 1][t] = 0.0;
            }
        }
        for pos in (0..n - 1).rev() {
            for t in 0..p {
                let next = &beta[pos + 1];
                beta[pos][t] = log_sum_exp(
                    (0..p)
                        .filter(|&u| self.allowed_next(t, u))
                        .map(|u| self.scores.get(pos + 1, u) + next[u]),
                );
            }
        }
        beta
    }

    /// `log Σ exp(path score)` over every valid path.
    pub fn log_partition(&self) -> f64 {
        let alpha = self.forward();
        let last = &alpha[self.len() - 1];
        log_sum_exp((0..self.num_tags()).filter(|&t| self.allowed_end(t)).map(|t| last[t]))
    }

    /// Posterior probability of each tag at each position. Tags excluded by
    /// the constraints at a position get exactly zero.
    pub fn marginals(&self) -> Tensor {
        let alpha = self.forward();
        let beta = self.backward();
        let log_z = log_sum_exp(
            (0..self.num_tags())
                .filter(|&t| self.allowed_end(t))
                .map(|t| alpha[self.len() - 1][t]),
        );
        let mut out = Tensor::zeros(self.len(), self.num_tags());
        for pos in 0..self.len() {
            for t in 0..self.num_tags() {
                let lp = alpha[pos][t] + beta[pos][t];
                if lp > NEG_INF {
                    out.set(pos, t, (lp - log_z).exp());
                }
            }
        }
        out
    }

    /// Negative log-likelihood of `gold` and its gradient with respect to
    /// every lattice score: `marginal − one_hot(gold)`.
    pub fn sequence_nll_grad(&self, gold: &[usize]) -> Result<(f64, Tensor)> {
        if gold.len() != self.len()
            || gold.iter().any(|&t| t >= self.num_tags())
            || !is_valid_index_path(gold)
        {
            return Err(Error::InvalidGoldPath);
        }
        let log_z = self.log_partition();
        let nll = log_z - self.path_score(gold);
        let mut grad = self.marginals();
        for (pos, &t) in gold.iter().enumerate() {
            let v = grad.get(pos, t);
            grad.set(pos, t, v - 1.0);
        }
        Ok((nll.max(0.0), grad))
    }
}

/// Groups a decoded path into chunks `(start, end, label)` with inclusive ends.
/// `O` positions are skipped. The path must be valid.
pub fn chunks(path: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut open: Option<(usize, usize)> = None;
    for (pos, &t) in path.iter().enumerate() {
        match Bioes::from_index(t) {
            Bioes::Outside => {}
            Bioes::Chunk(Prefix::S, l) => out.push((pos, pos, l)),
            Bioes::Chunk(Prefix::B, l) => open = Some((pos, l)),
            Bioes::Chunk(Prefix::I, _) => {}
            Bioes::Chunk(Prefix::E, l) => {
                let (start, _) = open.take().unwrap_or((pos, l));
                out.push((start, pos, l));
            }
        }
    }
    out
}
