//! Exemplar database: word-level fingerprint vectors of a corpus under one
//! checkpoint, exact Euclidean nearest-neighbour lookup, and the conjunctive
//! decision rules that admit a positive token only when its nearest exemplar
//! agrees.
//!
//! Binary layout (`BLEX`, little-endian):
//!
//! ```text
//! "BLEX" | version u32 | M u32 | checkpoint fingerprint [u8; 32] | record count u64
//! record: id hash u64 | word index u32 | token_pred i8 | sent_pred i8
//!         | gold_sentence i8 | gold_token i8 | tag u16 | M x f32
//! ```
//!
//! Gold fields use -1 for unknown. A JSON-lines sidecar (`<path>.sidecar`)
//! holds tag names and the instance texts keyed by id hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledInstance;
use crate::error::{Error, Result};
use crate::io::{id_hash, to_u32, write_atomic, PutLe, Reader};
use crate::model::{label_tokens, predict_sentence, BladeModel};
use crate::training::TrainExample;

pub const MAGIC: &[u8; 4] = b"BLEX";
pub const VERSION: u32 = 1;
pub const TRAIN_TAG: &str = "train";

const RECORD_FIXED_BYTES: usize = 8 + 4 + 4 + 2;

#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarRecord {
    pub vector: Vec<f32>,
    pub id_hash: u64,
    pub word_index: u32,
    pub token_pred: u8,
    pub sentence_pred: u8,
    pub gold_sentence: Option<u8>,
    pub gold_token: Option<u8>,
    pub tag: u16,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceText {
    pub id: String,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarDatabase {
    pub dim: usize,
    pub fingerprint: [u8; 32],
    pub records: Vec<ExemplarRecord>,
    /// Tag names indexed by tag id; entry 0 is `train`.
    pub tags: Vec<String>,
    pub texts: BTreeMap<u64, InstanceText>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    /// Exemplar's own token prediction must be positive.
    Exa,
    /// ... and the exemplar's sentence has a positive gold label.
    Exag,
    /// ... and the exemplar token has a positive gold label.
    Exat,
}

impl std::str::FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exa" => Ok(RuleKind::Exa),
            "exag" => Ok(RuleKind::Exag),
            "exat" => Ok(RuleKind::Exat),
            other => Err(Error::Config(format!("unknown decision rule {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionRule {
    pub kind: RuleKind,
    pub distance_cap: Option<f64>,
}

impl DecisionRule {
    pub fn new(kind: RuleKind) -> Self {
        Self {
            kind,
            distance_cap: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelField {
    GoldSentence,
    GoldToken,
}

impl std::str::FromStr for LabelField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gold_sentence" => Ok(LabelField::GoldSentence),
            "gold_token" => Ok(LabelField::GoldToken),
            other => Err(Error::Config(format!("unknown label field {other:?}"))),
        }
    }
}

/// Admits a positive test-token prediction only when its matched exemplar
/// satisfies the rule; negative predictions stay negative.
pub fn apply_rule(test_pred: u8, record: &ExemplarRecord, distance: f64, rule: &DecisionRule) -> u8 {
    if test_pred == 0 {
        return 0;
    }
    if let Some(cap) = rule.distance_cap {
        if distance > cap {
            return 0;
        }
    }
    let ok = record.token_pred == 1
        && match rule.kind {
            RuleKind::Exa => true,
            RuleKind::Exag => record.gold_sentence == Some(1),
            RuleKind::Exat => record.gold_token == Some(1),
        };
    ok as u8
}

fn encode_gold(v: Option<u8>) -> u8 {
    match v {
        Some(l) => l,
        None => -1i8 as u8,
    }
}

fn decode_gold(v: i8) -> Result<Option<u8>> {
    match v {
        -1 => Ok(None),
        0 | 1 => Ok(Some(v as u8)),
        other => Err(Error::Format(format!("gold label byte {other} outside {{-1,0,1}}"))),
    }
}

fn squared_distance(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y;
            d * d
        })
        .sum()
}

/// Rounds a query to the storage precision so that a vector taken from the
/// database matches itself at distance zero.
pub fn quantize(query: &[f64]) -> Vec<f64> {
    query.iter().map(|&v| v as f32 as f64).collect()
}

/// Records and derived data for one instance, in word order.
struct InstanceRecords {
    records: Vec<ExemplarRecord>,
    text: InstanceText,
}

fn records_for(
    model: &BladeModel,
    ex: &TrainExample,
    inst: &LabeledInstance,
    tag: u16,
    sentence_known: bool,
    offset: f64,
) -> Result<InstanceRecords> {
    let trace = model.forward_with_mask(&ex.input, None)?;
    let decomp = model.decompose(&trace, &ex.input.indexed)?;
    let preds = label_tokens(&decomp, offset);
    let sentence_pred = predict_sentence(&trace);
    let vectors = model.exemplar_vectors(&trace, &ex.input.indexed)?;
    let hash = id_hash(&inst.id);
    let records = vectors
        .into_iter()
        .map(|v| ExemplarRecord {
            vector: v.values.iter().map(|&x| x as f32).collect(),
            id_hash: hash,
            word_index: v.word_index as u32,
            token_pred: preds[v.word_index],
            sentence_pred,
            gold_sentence: sentence_known.then_some(inst.sentence_label),
            gold_token: ex.word_labels.as_ref().map(|l| l[v.word_index]),
            tag,
        })
        .collect();
    Ok(InstanceRecords {
        records,
        text: InstanceText {
            id: inst.id.clone(),
            tokens: inst.tokens.clone(),
        },
    })
}

impl ExemplarDatabase {
    pub fn empty(dim: usize, fingerprint: [u8; 32]) -> Self {
        Self {
            dim,
            fingerprint,
            records: Vec::new(),
            tags: vec![TRAIN_TAG.to_owned()],
            texts: BTreeMap::new(),
        }
    }

    /// One record per kept word of every instance, tagged `train`. Token
    /// predictions are stored at decision-boundary `offset`.
    pub fn build(model: &BladeModel, corpus: &[LabeledInstance], examples: &[TrainExample], offset: f64) -> Result<Self> {
        if !model.arch.all_width_one() {
            return Err(Error::Unsupported(
                "exemplar databases require a model whose filters all have width 1".into(),
            ));
        }
        let mut db = Self::empty(model.arch.num_filters(), model.fingerprint()?);
        db.append(model, corpus, examples, 0, true, offset)?;
        Ok(db)
    }

    fn append(
        &mut self,
        model: &BladeModel,
        corpus: &[LabeledInstance],
        examples: &[TrainExample],
        tag: u16,
        sentence_known: bool,
        offset: f64,
    ) -> Result<()> {
        if corpus.len() != examples.len() {
            return Err(Error::Data("corpus and prepared examples differ in length".into()));
        }
        let parts: Vec<InstanceRecords> = corpus
            .par_iter()
            .zip(examples.par_iter())
            .map(|(inst, ex)| records_for(model, ex, inst, tag, sentence_known, offset))
            .collect::<Result<_>>()?;
        for part in parts {
            let hash = part.records.first().map(|r| r.id_hash).unwrap_or_else(|| id_hash(&part.text.id));
            self.records.extend(part.records);
            self.texts.insert(hash, part.text);
        }
        Ok(())
    }

    /// Adds exemplars for data never used in training, tagged
    /// `augmented:<name>`. Existing records are untouched. When
    /// `sentence_labels_known` is false the new records carry an unknown gold
    /// sentence label (and so never satisfy ExAG).
    pub fn augment(
        &mut self,
        model: &BladeModel,
        corpus: &[LabeledInstance],
        examples: &[TrainExample],
        name: &str,
        sentence_labels_known: bool,
        offset: f64,
    ) -> Result<()> {
        if model.fingerprint()? != self.fingerprint {
            return Err(Error::FingerprintMismatch);
        }
        if corpus.is_empty() {
            return Ok(());
        }
        let tag_name = format!("augmented:{name}");
        let tag = match self.tags.iter().position(|t| *t == tag_name) {
            Some(i) => i,
            None => {
                self.tags.push(tag_name);
                self.tags.len() - 1
            }
        };
        let tag = u16::try_from(tag).map_err(|_| Error::Data("too many augmentation tags".into()))?;
        self.append(model, corpus, examples, tag, sentence_labels_known, offset)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Data("nearest-neighbour query on an empty database".into()));
        }
        if query.len() != self.dim {
            return Err(Error::Dimension(format!(
                "query has {} components, database vectors have {}",
                query.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Exact nearest record by Euclidean distance; ties go to the lowest
    /// record index. Returns `(index, distance)`.
    pub fn nearest(&self, query: &[f64]) -> Result<(usize, f64)> {
        self.check_query(query)?;
        let q = quantize(query);
        let (idx, d2) = self
            .records
            .par_iter()
            .enumerate()
            .map(|(i, r)| (i, squared_distance(&r.vector, &q)))
            .reduce_with(|a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a })
            .expect("non-empty database");
        Ok((idx, d2.sqrt()))
    }

    /// Norm-sorted index for faster repeated queries with identical answers.
    pub fn norm_index(&self) -> NormIndex<'_> {
        NormIndex::new(self)
    }

    pub fn record_text(&self, index: usize) -> Option<&InstanceText> {
        self.records.get(index).and_then(|r| self.texts.get(&r.id_hash))
    }

    pub fn tag_name(&self, tag: u16) -> &str {
        self.tags.get(tag as usize).map_or("?", String::as_str)
    }

    pub fn edit_label(&mut self, index: usize, field: LabelField, value: Option<u8>) -> Result<()> {
        if matches!(value, Some(v) if v > 1) {
            return Err(Error::Data("label must be 0, 1 or unknown".into()));
        }
        let len = self.records.len();
        let r = self
            .records
            .get_mut(index)
            .ok_or_else(|| Error::Data(format!("record {index} out of range ({len} records)")))?;
        match field {
            LabelField::GoldSentence => r.gold_sentence = value,
            LabelField::GoldToken => r.gold_token = value,
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(52 + self.records.len() * (RECORD_FIXED_BYTES + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.put_u32(VERSION);
        out.put_u32(to_u32(self.dim, "vector dim")?);
        out.extend_from_slice(&self.fingerprint);
        out.put_u64(self.records.len() as u64);
        for r in &self.records {
            if r.vector.len() != self.dim {
                return Err(Error::Dimension("record vector length differs from header".into()));
            }
            out.put_u64(r.id_hash);
            out.put_u32(r.word_index);
            out.push(r.token_pred);
            out.push(r.sentence_pred);
            out.push(encode_gold(r.gold_sentence));
            out.push(encode_gold(r.gold_token));
            out.put_u16(r.tag);
            out.put_f32s(&r.vector);
        }
        Ok(out)
    }

    /// Parses the binary part; tags and texts come from the sidecar.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "exemplar database");
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported exemplar database version {version}")));
        }
        let dim = r.u32()? as usize;
        let fingerprint: [u8; 32] = r.take(32)?.try_into().unwrap();
        let count = r.u64()?;
        let per = RECORD_FIXED_BYTES + 4 * dim;
        if (r.remaining() as u64) != count.saturating_mul(per as u64) {
            return Err(Error::Format(format!(
                "{count} records of {per} bytes do not match {} payload bytes",
                r.remaining()
            )));
        }
        let mut records = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let id_hash = r.u64()?;
            let word_index = r.u32()?;
            let token_pred = r.u8()?;
            let sentence_pred = r.u8()?;
            let gold_sentence = decode_gold(r.i8()?)?;
            let gold_token = decode_gold(r.i8()?)?;
            let tag = r.u16()?;
            let vector = r.f32s(dim)?;
            if token_pred > 1 || sentence_pred > 1 {
                return Err(Error::Format("prediction byte outside {0,1}".into()));
            }
            records.push(ExemplarRecord {
                vector,
                id_hash,
                word_index,
                token_pred,
                sentence_pred,
                gold_sentence,
                gold_token,
                tag,
            });
        }
        r.finish()?;
        Ok(Self {
            dim,
            fingerprint,
            records,
            tags: vec![TRAIN_TAG.to_owned()],
            texts: BTreeMap::new(),
        })
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".sidecar");
        PathBuf::from(s)
    }

    fn sidecar_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for (i, name) in self.tags.iter().enumerate() {
            serde_json::to_writer(&mut out, &SidecarLine::Tag { tag: i as u16, name: name.clone() })
                .map_err(|e| Error::Format(e.to_string()))?;
            out.push(b'\n');
        }
        for (hash, text) in &self.texts {
            serde_json::to_writer(
                &mut out,
                &SidecarLine::Text {
                    id_hash: *hash,
                    id: text.id.clone(),
                    tokens: text.tokens.clone(),
                },
            )
            .map_err(|e| Error::Format(e.to_string()))?;
            out.push(b'\n');
        }
        Ok(out)
    }

    /// Writes the database and its sidecar, each via temp file and rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_atomic(&Self::sidecar_path(path), &self.sidecar_bytes()?)?;
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut db = Self::from_bytes(&bytes)?;
        let side = Self::sidecar_path(path);
        if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let mut tags = BTreeMap::new();
            for (i, line) in text.lines().enumerate() {
                let parsed: SidecarLine = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
                    path: side.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                match parsed {
                    SidecarLine::Tag { tag, name } => {
                        tags.insert(tag, name);
                    }
                    SidecarLine::Text { id_hash, id, tokens } => {
                        db.texts.insert(id_hash, InstanceText { id, tokens });
                    }
                }
            }
            if !tags.is_empty() {
                db.tags = tags.into_values().collect();
            }
        }
        Ok(db)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SidecarLine {
    Tag { tag: u16, name: String },
    Text { id_hash: u64, id: String, tokens: Vec<String> },
}

/// Records sorted by vector norm. A query only scans records whose norm is
/// close enough to its own for `|‖q‖ - ‖v‖|` not to exceed the best distance
/// found so far; the survivors are compared with the same arithmetic and
/// tie rule as [`ExemplarDatabase::nearest`], so answers are identical.
pub struct NormIndex<'a> {
    db: &'a ExemplarDatabase,
    /// `(norm, record index)` ascending.
    by_norm: Vec<(f64, usize)>,
}

impl<'a> NormIndex<'a> {
    fn new(db: &'a ExemplarDatabase) -> Self {
        let mut by_norm: Vec<(f64, usize)> = db
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let n2: f64 = r.vector.iter().map(|&x| (x as f64) * (x as f64)).sum();
                (n2.sqrt(), i)
            })
            .collect();
        by_norm.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self { db, by_norm }
    }

    pub fn nearest(&self, query: &[f64]) -> Result<(usize, f64)> {
        self.db.check_query(query)?;
        let q = quantize(query);
        let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let start = self.by_norm.partition_point(|&(n, _)| n < qn);
        let mut best = (usize::MAX, f64::INFINITY);
        let consider = |i: usize, best: &mut (usize, f64)| {
            let d2 = squared_distance(&self.db.records[i].vector, &q);
            if d2 < best.1 || (d2 == best.1 && i < best.0) {
                *best = (i, d2);
            }
        };
        // Lower bound (‖q‖ - ‖v‖)² is compared with a relative safety margin
        // so that rounding in the norms can never prune the true answer.
        let pruned = |n: f64, best: f64| {
            let gap = (qn - n).abs();
            gap * gap > best * (1.0 + 1e-9) + 1e-12
        };
        let (mut lo, mut hi) = (start, start);
        loop {
            let lo_ok = lo > 0 && !pruned(self.by_norm[lo - 1].0, best.1);
            let hi_ok = hi < self.by_norm.len() && !pruned(self.by_norm[hi].0, best.1);
            if !lo_ok && !hi_ok {
                break;
            }
            if hi_ok {
                consider(self.by_norm[hi].1, &mut best);
                hi += 1;
            }
            if lo_ok {
                lo -= 1;
                consider(self.by_norm[lo].1, &mut best);
            }
        }
        Ok((best.0, best.1.sqrt()))
    }
}

/// Decision for one test word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditedToken {
    pub word_index: usize,
    pub raw_pred: u8,
    pub admitted: u8,
    /// Nearest exemplar and its distance, only looked up for positive raw predictions.
    pub matched: Option<(usize, f64)>,
}

/// Applies `rule` to every word of one test instance.
pub fn audit_instance(
    model: &BladeModel,
    db: &ExemplarDatabase,
    index: Option<&NormIndex<'_>>,
    ex: &TrainExample,
    rule: &DecisionRule,
    offset: f64,
) -> Result<Vec<AuditedToken>> {
    let trace = model.forward_with_mask(&ex.input, None)?;
    let decomp = model.decompose(&trace, &ex.input.indexed)?;
    let preds = label_tokens(&decomp, offset);
    let vectors = model.exemplar_vectors(&trace, &ex.input.indexed)?;
    vectors
        .iter()
        .map(|v| {
            let raw = preds[v.word_index];
            if raw == 0 {
                return Ok(AuditedToken {
                    word_index: v.word_index,
                    raw_pred: 0,
                    admitted: 0,
                    matched: None,
                });
            }
            let (i, d) = match index {
                Some(ix) => ix.nearest(&v.values)?,
                None => db.nearest(&v.values)?,
            };
            Ok(AuditedToken {
                word_index: v.word_index,
                raw_pred: raw,
                admitted: apply_rule(raw, &db.records[i], d, rule),
                matched: Some((i, d)),
            })
        })
        .collect()
}
