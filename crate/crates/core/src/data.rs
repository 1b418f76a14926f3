//! Corpus records, vocabulary, and WordPiece/word alignment.
//!
//! A corpus file is UTF-8, one JSON object per line:
//!
//! ```text
//! {"id":"a","tokens":["I","goes"],"sentence_label":1,"token_labels":[0,1]}
//! ```
//!
//! `id`, `token_labels` and `wordpiece_counts` are optional. Tokens arrive
//! pre-split; subword splitting is only visible through `wordpiece_counts`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Default maximum WordPiece count for sentence corpora.
pub const DEFAULT_MAX_LEN_SENTENCE: usize = 50;
/// Default maximum WordPiece count for document corpora.
pub const DEFAULT_MAX_LEN_DOCUMENT: usize = 350;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub sentence_label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_labels: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wordpiece_counts: Option<Vec<u32>>,
}

impl LabeledInstance {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, sentence_label: u8) -> Self {
        Self {
            id: id.into(),
            tokens,
            sentence_label,
            token_labels: None,
            wordpiece_counts: None,
        }
    }

    pub fn with_token_labels(mut self, labels: Vec<u8>) -> Self {
        self.token_labels = Some(labels);
        self
    }

    pub fn num_words(&self) -> usize {
        self.tokens.len()
    }

    /// Fragment count per word; all ones when no subword tokenizer was used.
    pub fn fragment_counts(&self) -> Vec<u32> {
        match &self.wordpiece_counts {
            Some(counts) => counts.clone(),
            None => vec![1; self.tokens.len()],
        }
    }

    pub fn num_wordpieces(&self) -> usize {
        self.fragment_counts().iter().map(|&c| c as usize).sum()
    }

    /// Checks the structural invariants; returns a human-readable reason on failure.
    pub fn validate(&self, schema: &CorpusSchema) -> std::result::Result<(), String> {
        if self.sentence_label > 1 {
            return Err(format!("sentence_label {} outside {{0,1}}", self.sentence_label));
        }
        if let Some(labels) = &self.token_labels {
            if labels.len() != self.tokens.len() {
                return Err(format!(
                    "token_labels has length {} but there are {} tokens",
                    labels.len(),
                    self.tokens.len()
                ));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 1) {
                return Err(format!("token label {bad} outside {{0,1}}"));
            }
            if schema.sentence_label_is_any_token {
                let any = labels.iter().any(|&l| l == 1) as u8;
                if any != self.sentence_label {
                    return Err(format!(
                        "sentence_label {} disagrees with token labels (any positive = {any})",
                        self.sentence_label
                    ));
                }
            }
        } else if schema.require_token_labels {
            return Err("token_labels required by schema".into());
        }
        if let Some(counts) = &self.wordpiece_counts {
            if counts.len() != self.tokens.len() {
                return Err(format!(
                    "wordpiece_counts has length {} but there are {} tokens",
                    counts.len(),
                    self.tokens.len()
                ));
            }
            if counts.iter().any(|&c| c == 0) {
                return Err("wordpiece_counts must be positive".into());
            }
        }
        Ok(())
    }
}

/// What a corpus file promises about its records.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusSchema {
    pub require_token_labels: bool,
    /// Grammar-style corpora: a sentence is positive iff some token is positive.
    pub sentence_label_is_any_token: bool,
}

impl CorpusSchema {
    pub fn token_labeled() -> Self {
        Self {
            require_token_labels: true,
            sentence_label_is_any_token: false,
        }
    }
}

/// Wire representation; labels are read as wide integers so that range
/// errors get a precise message instead of a generic parse failure.
#[derive(Deserialize)]
struct RawInstance {
    #[serde(default)]
    id: Option<String>,
    tokens: Vec<String>,
    sentence_label: i64,
    #[serde(default)]
    token_labels: Option<Vec<i64>>,
    #[serde(default)]
    wordpiece_counts: Option<Vec<i64>>,
}

fn narrow_label(v: i64, what: &str) -> std::result::Result<u8, String> {
    match v {
        0 | 1 => Ok(v as u8),
        _ => Err(format!("{what} {v} outside {{0,1}}")),
    }
}

/// Parses one corpus line. `line_no` is 1-based and used for the default id.
pub fn parse_instance(
    text: &str,
    line_no: usize,
    schema: &CorpusSchema,
) -> std::result::Result<LabeledInstance, String> {
    let raw: RawInstance = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let token_labels = raw
        .token_labels
        .map(|ls| {
            ls.into_iter()
                .map(|l| narrow_label(l, "token label"))
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .transpose()?;
    let wordpiece_counts = raw
        .wordpiece_counts
        .map(|cs| {
            cs.into_iter()
                .map(|c| {
                    if c >= 1 && c <= u32::MAX as i64 {
                        Ok(c as u32)
                    } else {
                        Err(format!("wordpiece count {c} must be a positive integer"))
                    }
                })
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .transpose()?;
    let inst = LabeledInstance {
        id: raw.id.unwrap_or_else(|| line_no.to_string()),
        tokens: raw.tokens,
        sentence_label: narrow_label(raw.sentence_label, "sentence_label")?,
        token_labels,
        wordpiece_counts,
    };
    inst.validate(schema)?;
    Ok(inst)
}

/// Reads a line-delimited corpus. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>, schema: &CorpusSchema) -> Result<Vec<LabeledInstance>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst = parse_instance(&line, i + 1, schema).map_err(|message| Error::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(mut w: W, corpus: &[LabeledInstance]) -> std::io::Result<()> {
    for inst in corpus {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(path: impl AsRef<Path>, corpus: &[LabeledInstance]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_corpus(&mut buf, corpus).map_err(|e| Error::io(path, e))?;
    crate::io::write_atomic(path, &buf)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD_INDEX] != PAD_TOKEN || tokens[UNK_INDEX] != UNK_TOKEN {
            return Err(Error::Data(format!(
                "vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, in index order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::new();
        for t in &self.tokens {
            text.push_str(t);
            text.push('\n');
        }
        crate::io::write_atomic(path.as_ref(), text.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }
}

/// Frequency-ranked vocabulary of `size` entries: padding, unknown, then the
/// `size - 2` most frequent tokens, ties broken lexicographically.
pub fn build_vocab(corpus: &[LabeledInstance], size: usize) -> Result<Vocabulary> {
    if size < 2 {
        return Err(Error::Config(format!("vocabulary size must be at least 2, got {size}")));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for inst in corpus {
        for t in &inst.tokens {
            if t != PAD_TOKEN && t != UNK_TOKEN {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
    tokens.extend(ranked.into_iter().take(size - 2).map(|(t, _)| t.to_owned()));
    Vocabulary::from_tokens(tokens)
}

/// Half-open WordPiece range of every word, tiling `[0, pieces)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordAlignment {
    ranges: Vec<Range<usize>>,
}

impl WordAlignment {
    pub fn from_counts(counts: &[u32]) -> Self {
        let mut start = 0;
        let ranges = counts
            .iter()
            .map(|&c| {
                let r = start..start + c as usize;
                start = r.end;
                r
            })
            .collect();
        Self { ranges }
    }

    pub fn identity(words: usize) -> Self {
        Self {
            ranges: (0..words).map(|i| i..i + 1).collect(),
        }
    }

    pub fn num_words(&self) -> usize {
        self.ranges.len()
    }

    pub fn num_pieces(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn word(&self, w: usize) -> Range<usize> {
        self.ranges[w].clone()
    }

    /// Expands per-word values to per-WordPiece values (each piece inherits its word's value).
    pub fn expand<T: Copy>(&self, per_word: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_pieces());
        for (r, &v) in self.ranges.iter().zip(per_word) {
            out.extend(std::iter::repeat(v).take(r.len()));
        }
        out
    }
}

/// Mean of `scores` over each word's fragment range.
pub fn average_over_fragments(scores: &[f64], alignment: &WordAlignment) -> Result<Vec<f64>> {
    if scores.len() != alignment.num_pieces() {
        return Err(Error::Dimension(format!(
            "{} scores for {} word pieces",
            scores.len(),
            alignment.num_pieces()
        )));
    }
    Ok(alignment
        .ranges
        .iter()
        .map(|r| scores[r.clone()].iter().sum::<f64>() / r.len() as f64)
        .collect())
}

/// A tokenized instance ready for the network: WordPiece-level vocabulary
/// indices with trailing padding up to the minimum window-valid length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexedInstance {
    pub indices: Vec<usize>,
    /// `true` for real WordPieces, `false` for padding.
    pub mask: Vec<bool>,
    pub alignment: WordAlignment,
}

impl IndexedInstance {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of non-padding positions.
    pub fn real_len(&self) -> usize {
        self.alignment.num_pieces()
    }

    pub fn num_words(&self) -> usize {
        self.alignment.num_words()
    }
}

/// Number of words of `inst` that fit within `max_len` WordPieces.
pub fn truncated_word_count(inst: &LabeledInstance, max_len: usize) -> usize {
    let mut used = 0usize;
    let mut kept = 0usize;
    for c in inst.fragment_counts() {
        if used + c as usize > max_len {
            break;
        }
        used += c as usize;
        kept += 1;
    }
    kept
}

/// Maps words to vocabulary indices (each WordPiece carries its word's
/// index), truncates to whole words within `max_len` pieces, then pads with
/// index 0 to at least `min_len` positions.
pub fn index_instance(
    inst: &LabeledInstance,
    vocab: &Vocabulary,
    max_len: usize,
    min_len: usize,
) -> IndexedInstance {
    let counts = inst.fragment_counts();
    let kept = truncated_word_count(inst, max_len);
    let alignment = WordAlignment::from_counts(&counts[..kept]);
    let real = alignment.num_pieces();
    let n = real.max(min_len);
    let mut indices = Vec::with_capacity(n);
    for (tok, &c) in inst.tokens.iter().zip(&counts).take(kept) {
        let idx = vocab.index_of(tok);
        indices.extend(std::iter::repeat(idx).take(c as usize));
    }
    indices.resize(n, PAD_INDEX);
    let mut mask = vec![true; real];
    mask.resize(n, false);
    IndexedInstance {
        indices,
        mask,
        alignment,
    }
}
