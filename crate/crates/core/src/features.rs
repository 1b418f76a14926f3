//! Class-conditional ngram and sentence scores for comparative, extractive
//! summaries.
//!
//! An ngram's score for class `c` is the sum over its words of the
//! bias-corrected contribution `s^c_w - b_c`; a sentence's score is the same
//! sum over all of its words. Windows never cross instance boundaries.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TokenDecomposition, NEGATIVE, POSITIVE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Negative,
    Positive,
}

impl Class {
    pub fn index(self) -> usize {
        match self {
            Class::Negative => NEGATIVE,
            Class::Positive => POSITIVE,
        }
    }

    pub fn label(self) -> u8 {
        self.index() as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Negative => "negative",
            Class::Positive => "positive",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Total,
    Mean,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "total" => Ok(ScoreMode::Total),
            "mean" => Ok(ScoreMode::Mean),
            other => Err(Error::Config(format!("unknown score mode {other:?}"))),
        }
    }
}

/// Word-level contributions of one instance together with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub word_negative: Vec<f64>,
    pub word_positive: Vec<f64>,
    pub bias: [f64; 2],
    pub gold: u8,
    pub predicted: u8,
}

impl ScoredInstance {
    /// `tokens` may be longer than the decomposition (truncated instances);
    /// only the scored prefix is kept.
    pub fn new(id: &str, tokens: &[String], decomp: &TokenDecomposition, gold: u8, predicted: u8) -> Self {
        let n = decomp.num_words();
        Self {
            id: id.to_owned(),
            tokens: tokens[..n.min(tokens.len())].to_vec(),
            word_negative: decomp.word_negative.clone(),
            word_positive: decomp.word_positive.clone(),
            bias: decomp.bias,
            gold,
            predicted,
        }
    }

    /// `s^c_w - b_c` for every word.
    pub fn corrected(&self, class: Class) -> Vec<f64> {
        let (scores, b) = match class {
            Class::Negative => (&self.word_negative, self.bias[0]),
            Class::Positive => (&self.word_positive, self.bias[1]),
        };
        scores.iter().map(|s| s - b).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgramScore {
    pub ngram: String,
    pub class: Class,
    pub z: usize,
    pub total: f64,
    pub count: usize,
    pub mean: f64,
}

impl NgramScore {
    pub fn score(&self, mode: ScoreMode) -> f64 {
        match mode {
            ScoreMode::Total => self.total,
            ScoreMode::Mean => self.mean,
        }
    }
}

/// Scores of every `z`-word window of each instance, keyed by surface form.
/// With `restrict`, only instances predicted as `class` contribute.
pub fn ngram_scores(
    items: &[ScoredInstance],
    class: Class,
    z: usize,
    mode: ScoreMode,
    restrict: bool,
) -> Result<Vec<NgramScore>> {
    if z < 1 {
        return Err(Error::Config("ngram size must be at least 1".into()));
    }
    let windows: Vec<Vec<(String, f64)>> = items
        .par_iter()
        .map(|it| {
            if restrict && it.predicted != class.label() {
                return Vec::new();
            }
            let s = it.corrected(class);
            let n = s.len().min(it.tokens.len());
            if n < z {
                return Vec::new();
            }
            (0..=n - z)
                .map(|i| (it.tokens[i..i + z].join(" "), s[i..i + z].iter().sum()))
                .collect()
        })
        .collect();
    // sequential merge in instance order keeps float sums reproducible
    let mut acc: HashMap<String, (f64, usize)> = HashMap::new();
    for per_instance in windows {
        for (key, score) in per_instance {
            let e = acc.entry(key).or_insert((0.0, 0));
            e.0 += score;
            e.1 += 1;
        }
    }
    let mut out: Vec<NgramScore> = acc
        .into_iter()
        .map(|(ngram, (total, count))| NgramScore {
            ngram,
            class,
            z,
            total,
            count,
            mean: total / count as f64,
        })
        .collect();
    out.sort_by(|a, b| b.score(mode).total_cmp(&a.score(mode)).then_with(|| a.ngram.cmp(&b.ngram)));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub id: String,
    pub class: Class,
    pub score: f64,
    pub normalized: f64,
    pub gold: u8,
    pub predicted: u8,
}

impl SentenceScore {
    pub fn ranked_value(&self, normalize: bool) -> f64 {
        if normalize {
            self.normalized
        } else {
            self.score
        }
    }
}

/// Bias-corrected sum over each instance's words; ranked descending by the
/// raw or length-normalized score, ties by id.
pub fn sentence_scores(items: &[ScoredInstance], class: Class, normalize: bool) -> Result<Vec<SentenceScore>> {
    let mut out = items
        .iter()
        .map(|it| {
            let s = it.corrected(class);
            if s.is_empty() {
                return Err(Error::Data(format!("instance {} has no scored words", it.id)));
            }
            let score: f64 = s.iter().sum();
            Ok(SentenceScore {
                id: it.id.clone(),
                class,
                score,
                normalized: score / s.len() as f64,
                gold: it.gold,
                predicted: it.predicted,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| {
        b.ranked_value(normalize)
            .total_cmp(&a.ranked_value(normalize))
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOptions {
    pub top_k: usize,
    pub mode: ScoreMode,
    pub normalize: bool,
    /// Hide an ngram whose (unrounded) score equals the one listed just before it.
    pub drop_equal_scores: bool,
}

/// Scores for one class, as fed to [`report`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ClassScores {
    pub ngrams: Vec<NgramScore>,
    pub sentences: Vec<SentenceScore>,
}

fn dedup_equal(items: &[NgramScore], mode: ScoreMode) -> Vec<&NgramScore> {
    let mut out: Vec<&NgramScore> = Vec::new();
    for it in items {
        if out.last().map_or(true, |prev| prev.score(mode) != it.score(mode)) {
            out.push(it);
        }
    }
    out
}

fn ngram_rows(out: &mut String, rows: &[&NgramScore], mode: ScoreMode) {
    for (i, n) in rows.iter().enumerate() {
        let _ = writeln!(out, "{:>4}  {:>12.4}  {:>6}  {}", i + 1, n.score(mode), n.count, n.ngram);
    }
}

fn sentence_rows(out: &mut String, rows: &[&SentenceScore], normalize: bool, texts: &HashMap<&str, String>) {
    for (i, s) in rows.iter().enumerate() {
        let text = texts.get(s.id.as_str()).map_or("", String::as_str);
        let _ = writeln!(
            out,
            "{:>4}  {:>12.4}  gold={} pred={}  [{}] {}",
            i + 1,
            s.ranked_value(normalize),
            s.gold,
            s.predicted,
            s.id,
            text
        );
    }
}

/// Plain-text listing: per class, top-k and bottom-k ngrams and sentences,
/// then the sentences split by gold label x predicted label.
pub fn report(
    scores: &[(Class, ClassScores)],
    items: &[ScoredInstance],
    opts: &ReportOptions,
) -> Result<String> {
    if opts.top_k < 1 {
        return Err(Error::Config("top-k must be at least 1".into()));
    }
    let texts: HashMap<&str, String> = items.iter().map(|it| (it.id.as_str(), it.tokens.join(" "))).collect();
    let k = opts.top_k;
    let mode_name = match opts.mode {
        ScoreMode::Total => "total",
        ScoreMode::Mean => "mean",
    };
    let mut out = String::new();
    for (class, cs) in scores {
        let mut by_z: Vec<usize> = cs.ngrams.iter().map(|n| n.z).collect();
        by_z.sort_unstable();
        by_z.dedup();
        for z in by_z {
            let ranked: Vec<NgramScore> = cs.ngrams.iter().filter(|n| n.z == z).cloned().collect();
            let rows: Vec<&NgramScore> = if opts.drop_equal_scores {
                dedup_equal(&ranked, opts.mode)
            } else {
                ranked.iter().collect()
            };
            let _ = writeln!(out, "== {} {z}-grams ({mode_name}), top {k} ==", class.name());
            ngram_rows(&mut out, &rows[..k.min(rows.len())], opts.mode);
            let _ = writeln!(out, "== {} {z}-grams ({mode_name}), bottom {k} ==", class.name());
            let bottom: Vec<&NgramScore> = rows.iter().rev().take(k).copied().collect();
            ngram_rows(&mut out, &bottom, opts.mode);
            out.push('\n');
        }
        let norm = if opts.normalize { "normalized" } else { "unnormalized" };
        let all: Vec<&SentenceScore> = cs.sentences.iter().collect();
        let _ = writeln!(out, "== {} sentences ({norm}), top {k} ==", class.name());
        sentence_rows(&mut out, &all[..k.min(all.len())], opts.normalize, &texts);
        let _ = writeln!(out, "== {} sentences ({norm}), bottom {k} ==", class.name());
        let bottom: Vec<&SentenceScore> = all.iter().rev().take(k).copied().collect();
        sentence_rows(&mut out, &bottom, opts.normalize, &texts);
        for gold in [0u8, 1] {
            for pred in [0u8, 1] {
                let split: Vec<&SentenceScore> = cs
                    .sentences
                    .iter()
                    .filter(|s| s.gold == gold && s.predicted == pred)
                    .take(k)
                    .collect();
                let tag = if gold == pred { "" } else { " (misclassified)" };
                let _ = writeln!(
                    out,
                    "== {} sentences, gold={gold} pred={pred}{tag}, top {k} ==",
                    class.name()
                );
                sentence_rows(&mut out, &split, opts.normalize, &texts);
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Machine-readable variant: one JSON object per ngram
/// (`ngram, class, z, total, count, mean`).
pub fn ngram_jsonl(scores: &[NgramScore]) -> String {
    let mut out = String::new();
    for s in scores {
        out.push_str(&serde_json::to_string(s).expect("ngram score serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, words: &str, neg: Vec<f64>, bias: [f64; 2], gold: u8, pred: u8) -> ScoredInstance {
        let tokens: Vec<String> = words.split_whitespace().map(str::to_owned).collect();
        let n = tokens.len();
        ScoredInstance {
            id: id.into(),
            tokens,
            word_positive: vec![bias[1]; n],
            word_negative: neg,
            bias,
            gold,
            predicted: pred,
        }
    }

    #[test]
    fn windows_sum_bias_corrected_scores() {
        let b1 = 0.75;
        let it = item("a", "x y w", vec![b1 + 2.0, b1, b1 + 1.0], [b1, 0.0], 0, 0);
        let two = ngram_scores(std::slice::from_ref(&it), Class::Negative, 2, ScoreMode::Total, false).unwrap();
        let get = |k: &str| two.iter().find(|n| n.ngram == k).unwrap().total;
        assert_eq!(get("x y"), 2.0);
        assert_eq!(get("y w"), 1.0);
        let three = ngram_scores(std::slice::from_ref(&it), Class::Negative, 3, ScoreMode::Total, false).unwrap();
        assert_eq!(three.len(), 1);
        assert_eq!(three[0].total, 3.0);
        let s = sentence_scores(&[it], Class::Negative, false).unwrap();
        assert_eq!(s[0].score, 3.0);
        assert!(ngram_scores(&[], Class::Negative, 0, ScoreMode::Total, false).is_err());
    }

    #[test]
    fn repeated_ngram_accumulates() {
        let a = item("a", "not good", vec![1.0, 1.0], [0.0, 0.0], 0, 0);
        let b = item("b", "not good", vec![3.0, 1.0], [0.0, 0.0], 0, 0);
        let r = ngram_scores(&[a, b], Class::Negative, 2, ScoreMode::Mean, false).unwrap();
        assert_eq!((r[0].total, r[0].count, r[0].mean), (6.0, 2, 3.0));
    }

    #[test]
    fn restriction_skips_other_predicted_class() {
        let a = item("a", "p q", vec![1.0, 1.0], [0.0, 0.0], 0, 1);
        assert!(ngram_scores(std::slice::from_ref(&a), Class::Negative, 1, ScoreMode::Total, true)
            .unwrap()
            .is_empty());
        assert_eq!(
            ngram_scores(&[a], Class::Negative, 1, ScoreMode::Total, false).unwrap().len(),
            2
        );
    }

    #[test]
    fn sentence_score_normalization() {
        let one = item("s", "w", vec![0.5 + 5.0], [0.5, 0.0], 0, 0);
        let s = sentence_scores(&[one], Class::Negative, true).unwrap();
        assert_eq!((s[0].score, s[0].normalized), (5.0, 5.0));
        let flat = item("f", "a b", vec![0.25, 0.25], [0.25, 0.0], 0, 0);
        assert_eq!(sentence_scores(&[flat], Class::Negative, false).unwrap()[0].score, 0.0);
        let four = item("g", "a b c d", vec![1.0, 2.0, 3.0, 4.0], [0.0, 0.0], 1, 0);
        let s = sentence_scores(&[four], Class::Negative, true).unwrap();
        assert_eq!((s[0].score, s[0].normalized), (10.0, 2.5));
        let empty = item("e", "", vec![], [0.0, 0.0], 0, 0);
        assert!(sentence_scores(&[empty], Class::Negative, false).is_err());
    }

    #[test]
    fn ranking_ties_are_lexicographic() {
        let a = item("a", "b a c", vec![1.0, 1.0, 2.0], [0.0, 0.0], 0, 0);
        let r = ngram_scores(&[a], Class::Negative, 1, ScoreMode::Total, false).unwrap();
        let order: Vec<&str> = r.iter().map(|n| n.ngram.as_str()).collect();
        assert_eq!(order, vec!["c", "a", "b"]);
    }

    #[test]
    fn report_is_deterministic_and_handles_small_inputs() {
        let a = item("a", "x y", vec![1.0, 2.0], [0.0, 0.0], 0, 1);
        let items = vec![a];
        let ng = ngram_scores(&items, Class::Negative, 1, ScoreMode::Total, false).unwrap();
        let ss = sentence_scores(&items, Class::Negative, true).unwrap();
        let scores = vec![(Class::Negative, ClassScores { ngrams: ng, sentences: ss })];
        let opts = ReportOptions {
            top_k: 10,
            mode: ScoreMode::Total,
            normalize: true,
            drop_equal_scores: false,
        };
        let r1 = report(&scores, &items, &opts).unwrap();
        assert_eq!(r1, report(&scores, &items, &opts).unwrap());
        // two ngrams available, no padding rows
        let top = r1.split("bottom").next().unwrap();
        assert_eq!(top.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).count(), 2);
        assert!(r1.contains("gold=0 pred=1 (misclassified)"));
        let empty = report(&[(Class::Positive, ClassScores::default())], &[], &opts).unwrap();
        assert!(empty.contains("positive sentences"));
        assert!(report(&scores, &items, &ReportOptions { top_k: 0, ..opts }).is_err());
    }

    #[test]
    fn drop_equal_scores_only_affects_display() {
        let a = item("a", "p q r", vec![1.0, 1.0, 2.0], [0.0, 0.0], 0, 0);
        let ng = ngram_scores(&[a.clone()], Class::Negative, 1, ScoreMode::Total, false).unwrap();
        assert_eq!(ng.len(), 3);
        let opts = ReportOptions {
            top_k: 5,
            mode: ScoreMode::Total,
            normalize: false,
            drop_equal_scores: true,
        };
        let r = report(
            &[(Class::Negative, ClassScores { ngrams: ng, sentences: vec![] })],
            &[a],
            &opts,
        )
        .unwrap();
        assert!(r.contains(" r\n") && r.contains(" p\n") && !r.contains(" q\n"));
    }

    #[test]
    fn jsonl_fields() {
        let a = item("a", "x", vec![1.0], [0.0, 0.0], 0, 0);
        let ng = ngram_scores(&[a], Class::Negative, 1, ScoreMode::Total, false).unwrap();
        let line = ngram_jsonl(&ng);
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        for k in ["ngram", "class", "z", "total", "count", "mean"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
    }
}
