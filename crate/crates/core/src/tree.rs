//! Labeled constituency trees and the bracketed treebank format.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Inclusive token span `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    /// Number of tokens covered.
    pub fn width(&self) -> usize {
        self.end + 1 - self.start
    }
}

/// A node of a constituency tree.
///
/// Leaves are preterminals: `label` holds the POS tag and `word` the token.
/// Internal nodes have no word and at least one child.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    pub label: String,
    pub word: Option<String>,
    pub children: Vec<ParseTree>,
    pub span: Span,
}

impl ParseTree {
    pub fn leaf(pos: impl Into<String>, word: impl Into<String>, index: usize) -> Self {
        ParseTree {
            label: pos.into(),
            word: Some(word.into()),
            children: Vec::new(),
            span: Span::new(index, index),
        }
    }

    /// Builds an internal node. The span is taken from the first and last child.
    pub fn node(label: impl Into<String>, children: Vec<ParseTree>) -> Self {
        assert!(!children.is_empty(), "internal node without children");
        let span = Span::new(children[0].span.start, children[children.len() - 1].span.end);
        ParseTree {
            label: label.into(),
            word: None,
            children,
            span,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.word.is_some()
    }

    /// POS tag of a leaf.
    pub fn pos(&self) -> Option<&str> {
        self.word.as_ref().map(|_| self.label.as_str())
    }

    pub fn leaves(&self) -> Vec<&ParseTree> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a ParseTree>) {
        if self.is_leaf() {
            out.push(self);
        } else {
            for c in &self.children {
                c.collect_leaves(out);
            }
        }
    }

    pub fn words(&self) -> Vec<String> {
        self.leaves()
            .into_iter()
            .map(|l| l.word.clone().unwrap_or_default())
            .collect()
    }

    pub fn pos_tags(&self) -> Vec<String> {
        self.leaves().into_iter().map(|l| l.label.clone()).collect()
    }

    pub fn num_tokens(&self) -> usize {
        self.leaves().len()
    }

    /// Visits every internal node in pre-order.
    pub fn internal_nodes(&self) -> Vec<&ParseTree> {
        let mut out = Vec::new();
        self.collect_internal(&mut out);
        out
    }

    fn collect_internal<'a>(&'a self, out: &mut Vec<&'a ParseTree>) {
        if !self.is_leaf() {
            out.push(self);
            for c in &self.children {
                c.collect_internal(out);
            }
        }
    }

    /// Recomputes spans left to right starting at `start`. Returns the next free index.
    pub fn reindex(&mut self, start: usize) -> usize {
        if self.is_leaf() {
            self.span = Span::new(start, start);
            return start + 1;
        }
        let mut next = start;
        for c in &mut self.children {
            next = c.reindex(next);
        }
        self.span = Span::new(start, next.saturating_sub(1).max(start));
        next
    }

    /// Checks the structural invariants: leaves carry words, internal nodes
    /// carry children, and child spans are contiguous and cover the parent.
    pub fn check_spans(&self) -> Result<()> {
        if self.is_leaf() {
            if !self.children.is_empty() || self.span.start != self.span.end {
                return Err(Error::NonContiguousChildren(self.to_string()));
            }
            return Ok(());
        }
        if self.children.is_empty() {
            return Err(Error::NonContiguousChildren(self.to_string()));
        }
        let mut expected = self.span.start;
        for c in &self.children {
            if c.span.start != expected {
                return Err(Error::NonContiguousChildren(self.to_string()));
            }
            c.check_spans()?;
            expected = c.span.end + 1;
        }
        if expected != self.span.end + 1 {
            return Err(Error::NonContiguousChildren(self.to_string()));
        }
        Ok(())
    }
}

impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.word {
            Some(w) => write!(f, "({} {})", self.label, w),
            None => {
                write!(f, "({}", self.label)?;
                for c in &self.children {
                    write!(f, " {}", c)?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(text: &str) -> Vec<(Token<'_>, usize)> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let mut atom_start: Option<usize> = None;
        for (i, ch) in line.char_indices() {
            let is_delim = ch == '(' || ch == ')' || ch.is_whitespace();
            if is_delim {
                if let Some(s) = atom_start.take() {
                    out.push((Token::Atom(&line[s..i]), line_no));
                }
                match ch {
                    '(' => out.push((Token::Open, line_no)),
                    ')' => out.push((Token::Close, line_no)),
                    _ => {}
                }
            } else if atom_start.is_none() {
                atom_start = Some(i);
            }
        }
        if let Some(s) = atom_start {
            out.push((Token::Atom(&line[s..]), line_no));
        }
    }
    out
}

struct Reader<'a> {
    tokens: Vec<(Token<'a>, usize)>,
    pos: usize,
    record_line: usize,
}

impl<'a> Reader<'a> {
    fn peek(&self) -> Option<&Token<'a>> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn next(&mut self) -> Option<Token<'a>> {
        let t = self.tokens.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    // Called after the opening bracket has been consumed.
    fn expr(&mut self, next_index: &mut usize) -> Result<Option<ParseTree>> {
        let line = self.record_line;
        let label = match self.peek() {
            Some(Token::Atom(a)) => {
                let a = a.to_string();
                self.pos += 1;
                a
            }
            Some(_) => String::new(),
            None => return Err(Error::UnbalancedBrackets(line)),
        };
        match self.next() {
            None => Err(Error::UnbalancedBrackets(line)),
            Some(Token::Close) => {
                if label.is_empty() {
                    Err(Error::EmptyLabel(line))
                } else {
                    Err(Error::MalformedLine(line))
                }
            }
            Some(Token::Atom(word)) => {
                if label.is_empty() {
                    return Err(Error::EmptyLabel(line));
                }
                match self.next() {
                    Some(Token::Close) => {
                        let leaf = ParseTree::leaf(label, word, *next_index);
                        *next_index += 1;
                        Ok(Some(leaf))
                    }
                    None => Err(Error::UnbalancedBrackets(line)),
                    Some(_) => Err(Error::MalformedLine(line)),
                }
            }
            Some(Token::Open) => {
                let mut children = Vec::new();
                let mut tok = Some(Token::Open);
                loop {
                    match tok {
                        Some(Token::Open) => {
                            if let Some(child) = self.expr(next_index)? {
                                children.push(child);
                            }
                        }
                        Some(Token::Close) => break,
                        Some(Token::Atom(_)) => return Err(Error::MalformedLine(line)),
                        None => return Err(Error::UnbalancedBrackets(line)),
                    }
                    tok = self.next();
                }
                if label.is_empty() {
                    // PTB-style outer wrapper "( (S ...) )".
                    if children.len() == 1 {
                        return Ok(children.pop());
                    }
                    return Err(Error::EmptyLabel(line));
                }
                Ok(Some(ParseTree::node(label, children)))
            }
        }
    }
}

/// Parses every balanced bracketed expression in `text` as one tree.
pub fn parse_trees(text: &str) -> Result<Vec<ParseTree>> {
    let mut reader = Reader {
        tokens: tokenize(text),
        pos: 0,
        record_line: 0,
    };
    let mut trees = Vec::new();
    while reader.pos < reader.tokens.len() {
        let (tok, line) = reader.tokens[reader.pos].clone();
        reader.record_line = line;
        reader.pos += 1;
        match tok {
            Token::Open => {
                let mut next_index = 0;
                if let Some(t) = reader.expr(&mut next_index)? {
                    trees.push(t);
                }
            }
            Token::Close => return Err(Error::UnbalancedBrackets(line)),
            Token::Atom(_) => return Err(Error::MalformedLine(line)),
        }
    }
    Ok(trees)
}

pub fn parse_tree(text: &str) -> Result<ParseTree> {
    let mut trees = parse_trees(text)?;
    match trees.len() {
        1 => Ok(trees.pop().unwrap()),
        0 => Err(Error::EmptyCorpus),
        _ => Err(Error::MalformedLine(1)),
    }
}

pub fn read_trees(path: impl AsRef<Path>) -> Result<Vec<ParseTree>> {
    let text = fs::read_to_string(path)?;
    parse_trees(&text)
}

/// Writes one tree per line.
pub fn write_trees(path: impl AsRef<Path>, trees: &[ParseTree]) -> Result<()> {
    let mut out = String::new();
    for t in trees {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_figure_sentence() {
        let t = parse_tree("(S (VP (VB Look) (PRT (RP around))) (. .))").unwrap();
        assert_eq!(t.label, "S");
        assert_eq!(t.span, Span::new(0, 2));
        assert_eq!(t.words(), vec!["Look", "around", "."]);
        t.check_spans().unwrap();
    }

    #[test]
    fn reads_single_preterminal() {
        let t = parse_tree("(NN dog)").unwrap();
        assert!(t.is_leaf());
        assert_eq!(t.pos(), Some("NN"));
        assert_eq!(t.span, Span::new(0, 0));
    }

    #[test]
    fn spans_by_arithmetic() {
        let t = parse_tree("(S (NP (DT a) (NN dog)) (VP (VBZ barks)))").unwrap();
        assert_eq!(t.span, Span::new(0, 2));
        assert_eq!(t.children[0].span, Span::new(0, 1));
        assert_eq!(t.children[1].span, Span::new(2, 2));
    }

    #[test]
    fn whitespace_insensitive_and_multiline() {
        let text = "(S\n  (NP (DT a)\n      (NN dog))\n  (VP (VBZ barks)))\n\n( (NN cat) )\n";
        let trees = parse_trees(text).unwrap();
        assert_eq!(trees.len(), 2);
        assert_eq!(trees[0].to_string(), "(S (NP (DT a) (NN dog)) (VP (VBZ barks)))");
        assert_eq!(trees[1].to_string(), "(NN cat)");
    }

    #[test]
    fn unbalanced_reports_record_line() {
        let text = "(NN dog)\n(S (NP (DT a) (NN dog))\n";
        match parse_trees(text) {
            Err(Error::UnbalancedBrackets(line)) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_trees("(NN dog))"),
            Err(Error::UnbalancedBrackets(1))
        ));
    }

    #[test]
    fn empty_label_is_an_error() {
        assert!(matches!(parse_trees("\n(() )"), Err(Error::EmptyLabel(2))));
        assert!(matches!(
            parse_trees("( (NN a) (NN b) )"),
            Err(Error::EmptyLabel(1))
        ));
    }

    #[test]
    fn display_round_trips() {
        let s = "(S (NP (PRP$ your) (JJ own) (NN ground)) (. .))";
        assert_eq!(parse_tree(s).unwrap().to_string(), s);
    }
}
