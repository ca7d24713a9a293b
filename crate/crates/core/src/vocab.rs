//! Word, POS, and parse-label dictionaries plus the derived BIOES alphabet.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::decoder::{num_tags, Bioes, BioesTag};
use crate::error::{Error, Result};
use crate::nncore::Tensor;
use crate::tree::ParseTree;

pub const PADDING: &str = "<PADDING>";
pub const UNK: &str = "<UNK>";
pub const PADDING_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// Dense string ↔ index map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Dictionary {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Dictionary { tokens, index }
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// All dictionaries of a trained model.
///
/// The tag lookup table is shared by POS tags and parse labels: POS tag `i`
/// uses column `i`, parse label `l` uses column `|pos| + l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    pub words: Dictionary,
    pub pos_tags: Dictionary,
    pub parse_labels: Dictionary,
    /// Most frequent root label in training; used for the synthetic root.
    pub root_label: String,
}

impl TagSet {
    /// Builds dictionaries from normalized training trees. Words are
    /// lowercased; words seen fewer than `min_word_count` times map to UNK.
    pub fn build(trees: &[ParseTree], min_word_count: usize) -> Result<Self> {
        let mut word_counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut pos = BTreeSet::new();
        let mut labels = BTreeSet::new();
        let mut roots: BTreeMap<&str, usize> = BTreeMap::new();
        for t in trees {
            for leaf in t.leaves() {
                let w = leaf.word.as_deref().unwrap_or_default().to_lowercase();
                *word_counts.entry(w).or_insert(0) += 1;
                pos.insert(leaf.label.clone());
            }
            for node in t.internal_nodes() {
                labels.insert(node.label.clone());
            }
            if !t.is_leaf() {
                *roots.entry(t.label.as_str()).or_insert(0) += 1;
            }
        }
        if word_counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut words = vec![PADDING.to_string(), UNK.to_string()];
        words.extend(
            word_counts
                .into_iter()
                .filter(|(_, c)| *c >= min_word_count)
                .map(|(w, _)| w),
        );
        // Highest count, then lexicographically smallest.
        let root_label = roots
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(l, _)| l.to_string())
            .or_else(|| labels.iter().next().cloned())
            .unwrap_or_else(|| "S".to_string());
        labels.insert(root_label.clone());
        Ok(TagSet {
            words: Dictionary::from_tokens(words),
            pos_tags: Dictionary::from_tokens(pos.into_iter().collect()),
            parse_labels: Dictionary::from_tokens(labels.into_iter().collect()),
            root_label,
        })
    }

    pub fn word_index(&self, word: &str) -> usize {
        self.words.get(&word.to_lowercase()).unwrap_or(UNK_INDEX)
    }

    pub fn pos_index(&self, pos: &str) -> Result<usize> {
        self.pos_tags
            .get(pos)
            .ok_or_else(|| Error::UnknownPosTag(pos.to_string()))
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.parse_labels
            .get(label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_labels(&self) -> usize {
        self.parse_labels.len()
    }

    /// Columns of the shared tag lookup table.
    pub fn num_tag_entries(&self) -> usize {
        self.pos_tags.len() + self.parse_labels.len()
    }

    pub fn pos_entry(&self, pos: usize) -> usize {
        pos
    }

    pub fn label_entry(&self, label: usize) -> usize {
        self.pos_tags.len() + label
    }

    /// Label index of a tag-table entry, if the entry is a parse label.
    pub fn entry_label(&self, entry: usize) -> Option<usize> {
        entry.checked_sub(self.pos_tags.len())
    }

    pub fn num_bioes(&self) -> usize {
        num_tags(self.num_labels())
    }

    pub fn bioes_tags(&self) -> Vec<BioesTag> {
        (0..self.num_bioes()).map(|i| self.bioes_tag(i)).collect()
    }

    pub fn bioes_tag(&self, index: usize) -> BioesTag {
        match Bioes::from_index(index) {
            Bioes::Outside => Bioes::Outside,
            Bioes::Chunk(p, l) => Bioes::Chunk(p, self.parse_labels.tokens()[l].clone()),
        }
    }

    pub fn bioes_index(&self, tag: &BioesTag) -> Result<usize> {
        match tag {
            Bioes::Outside => Ok(0),
            Bioes::Chunk(p, l) => Ok(Bioes::Chunk(*p, self.label_index(l)?).index()),
        }
    }

    /// Text form: `[WORDS]`, `[POS]`, `[LABELS]` sections of
    /// `token<TAB>index` lines, then `[ROOT]` with the synthetic root label.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, dict) in [
            ("WORDS", &self.words),
            ("POS", &self.pos_tags),
            ("LABELS", &self.parse_labels),
        ] {
            out.push_str(&format!("[{name}]\n"));
            for (i, t) in dict.tokens().iter().enumerate() {
                out.push_str(&format!("{t}\t{i}\n"));
            }
        }
        out.push_str(&format!("[ROOT]\n{}\n", self.root_label));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, Vec<&str>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = Some(name.to_string());
                sections.entry(name.to_string()).or_default();
                continue;
            }
            let name = current
                .as_ref()
                .ok_or_else(|| Error::MalformedTagset("entry before first section".into()))?;
            sections.get_mut(name).unwrap().push(line);
        }
        let dict = |name: &str| -> Result<Dictionary> {
            let lines = sections
                .get(name)
                .ok_or_else(|| Error::MalformedTagset(format!("missing [{name}] section")))?;
            let mut tokens = Vec::with_capacity(lines.len());
            for (expected, line) in lines.iter().enumerate() {
                let (tok, idx) = line
                    .rsplit_once('\t')
                    .ok_or_else(|| Error::MalformedTagset(format!("bad line {line:?}")))?;
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::MalformedTagset(format!("bad index in {line:?}")))?;
                if idx != expected {
                    return Err(Error::MalformedTagset(format!(
                        "[{name}] indices must be dense and ordered"
                    )));
                }
                tokens.push(tok.to_string());
            }
            Ok(Dictionary::from_tokens(tokens))
        };
        let words = dict("WORDS")?;
        if words.token(PADDING_INDEX) != Some(PADDING) || words.token(UNK_INDEX) != Some(UNK) {
            return Err(Error::MalformedTagset("reserved word entries missing".into()));
        }
        let root_label = sections
            .get("ROOT")
            .and_then(|l| l.first())
            .map(|s| s.to_string())
            .ok_or_else(|| Error::MalformedTagset("missing [ROOT] section".into()))?;
        Ok(TagSet {
            words,
            pos_tags: dict("POS")?,
            parse_labels: dict("LABELS")?,
            root_label,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Outcome of reading a pretrained embedding file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EmbeddingReport {
    /// Dictionary words whose column came from the file.
    pub matched: usize,
    /// Dictionary entries left with the default initializer.
    pub defaulted: usize,
    /// File words absent from the dictionary.
    pub skipped: Vec<String>,
}

/// Builds a `dim × |words|` table from a `word v1 … vD` text file. Entries
/// not present in the file (including PADDING and UNK) keep uniform values
/// in `[-0.1, 0.1]`.
pub fn load_pretrained_embeddings<R: Rng>(
    path: impl AsRef<Path>,
    tagset: &TagSet,
    dim: usize,
    rng: &mut R,
) -> Result<(Tensor, EmbeddingReport)> {
    let text = fs::read_to_string(path)?;
    parse_embeddings(&text, tagset, dim, rng)
}

pub fn parse_embeddings<R: Rng>(
    text: &str,
    tagset: &TagSet,
    dim: usize,
    rng: &mut R,
) -> Result<(Tensor, EmbeddingReport)> {
    let mut table = Tensor::uniform(dim, tagset.num_words(), 0.1, rng);
    let mut filled = vec![false; tagset.num_words()];
    let mut report = EmbeddingReport::default();
    for (n, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else {
            continue;
        };
        let values: Vec<f64> = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::MalformedLine(n + 1))?;
        if values.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::MalformedLine(n + 1));
        }
        let word = word.to_lowercase();
        match tagset.words.get(&word) {
            Some(i) if i != PADDING_INDEX && i != UNK_INDEX => {
                if !filled[i] {
                    table.set_col(i, &values);
                    filled[i] = true;
                    report.matched += 1;
                }
            }
            _ => report.skipped.push(word),
        }
    }
    report.defaulted = tagset.num_words() - report.matched;
    Ok((table, report))
}
