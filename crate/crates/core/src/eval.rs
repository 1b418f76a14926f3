//! Precision, recall and F-beta over the positive class, reported in percent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn add(&mut self, pred: u8, gold: u8) {
        match (pred == 1, gold == 1) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn from_labels(pred: &[u8], gold: &[u8]) -> Result<Self> {
        let mut c = Self::default();
        c.extend(pred, gold)?;
        Ok(c)
    }

    pub fn extend(&mut self, pred: &[u8], gold: &[u8]) -> Result<()> {
        if pred.len() != gold.len() {
            return Err(Error::Dimension(format!(
                "{} predictions for {} gold labels",
                pred.len(),
                gold.len()
            )));
        }
        for (&p, &g) in pred.iter().zip(gold) {
            self.add(p, g);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn predicted_positive(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn gold_positive(&self) -> u64 {
        self.tp + self.fn_
    }

    /// Percent; 0 when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.predicted_positive())
    }

    /// Percent; 0 when there are no gold positives.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.gold_positive())
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Weighted harmonic mean of precision and recall (both in percent); 0 when
/// both are 0.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    pub beta: f64,
    pub counts: Confusion,
}

impl Prf {
    pub fn from_confusion(counts: Confusion, beta: f64) -> Self {
        let (p, r) = (counts.precision(), counts.recall());
        Self {
            precision: p,
            recall: r,
            f_beta: f_beta(p, r, beta),
            beta,
            counts,
        }
    }

    pub fn f1(&self) -> f64 {
        f_beta(self.precision, self.recall, 1.0)
    }

    pub fn f05(&self) -> f64 {
        f_beta(self.precision, self.recall, 0.5)
    }
}

/// Counts over the positive class across aligned label sequences.
pub fn prf(pred: &[Vec<u8>], gold: &[Vec<u8>], beta: f64) -> Result<Prf> {
    if pred.len() != gold.len() {
        return Err(Error::Dimension(format!(
            "{} predicted sequences for {} gold sequences",
            pred.len(),
            gold.len()
        )));
    }
    let mut c = Confusion::default();
    for (p, g) in pred.iter().zip(gold) {
        c.extend(p, g)?;
    }
    Ok(Prf::from_confusion(c, beta))
}

/// One line of the machine-readable metric output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub split: String,
    pub level: String,
    #[serde(rename = "P")]
    pub precision: f64,
    #[serde(rename = "R")]
    pub recall: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "F0.5")]
    pub f05: f64,
    pub counts: Confusion,
}

impl MetricRecord {
    pub fn new(split: &str, level: &str, prf: &Prf) -> Self {
        Self {
            split: split.to_owned(),
            level: level.to_owned(),
            precision: round2(prf.precision),
            recall: round2(prf.recall),
            f1: round2(prf.f1()),
            f05: round2(prf.f05()),
            counts: prf.counts,
        }
    }
}

/// Two-decimal rounding used for reporting.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Fair-coin predictions shaped like `gold`.
pub fn random_predictions(gold: &[Vec<u8>], seed: u64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gold.iter()
        .map(|g| g.iter().map(|_| rng.gen_bool(0.5) as u8).collect())
        .collect()
}

/// Majority label of `reference`, positive on ties.
pub fn majority_class(reference: &[u8]) -> Result<u8> {
    if reference.is_empty() {
        return Err(Error::Data("majority class of an empty label set".into()));
    }
    let pos = reference.iter().filter(|&&l| l == 1).count();
    Ok((2 * pos >= reference.len()) as u8)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baselines {
    pub random: Prf,
    pub majority: Prf,
    pub majority_label: u8,
}

/// Random (fair coin) and MajorityClass scores on `gold`. The majority label
/// is taken from `majority_reference` (for token-level evaluation this is
/// usually the sentence labels of the same set); pass `None` to use `gold`
/// itself.
pub fn baselines(
    gold: &[Vec<u8>],
    majority_reference: Option<&[u8]>,
    seed: u64,
    beta: f64,
) -> Result<Baselines> {
    let flat: Vec<u8> = gold.iter().flatten().copied().collect();
    if flat.is_empty() {
        return Err(Error::Data("baselines need at least one gold label".into()));
    }
    let majority_label = majority_class(majority_reference.unwrap_or(&flat))?;
    let majority_pred: Vec<Vec<u8>> = gold.iter().map(|g| vec![majority_label; g.len()]).collect();
    Ok(Baselines {
        random: prf(&random_predictions(gold, seed), gold, beta)?,
        majority: prf(&majority_pred, gold, beta)?,
        majority_label,
    })
}

/// Word-level combined scores paired with gold token labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTokens {
    pub scores: Vec<f64>,
    pub gold: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OffsetGrid {
    /// Empirical quantiles `i / (points - 1)` of the pooled scores, plus 0.
    Quantiles(usize),
    Explicit(Vec<f64>),
}

impl Default for OffsetGrid {
    fn default() -> Self {
        OffsetGrid::Quantiles(1001)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OffsetChoice {
    pub offset: f64,
    pub f05: f64,
}

/// Lower empirical quantiles of `sorted` at `points` evenly spaced levels.
pub fn quantile_grid(sorted: &[f64], points: usize) -> Vec<f64> {
    if sorted.is_empty() || points == 0 {
        return Vec::new();
    }
    if points == 1 {
        return vec![sorted[0]];
    }
    let last = sorted.len() - 1;
    (0..points)
        .map(|i| sorted[(i * last) / (points - 1)])
        .collect()
}

pub fn token_prf_at(items: &[ScoredTokens], offset: f64, beta: f64) -> Result<Prf> {
    let mut c = Confusion::default();
    for it in items {
        if it.scores.len() != it.gold.len() {
            return Err(Error::Dimension("scores and gold labels differ in length".into()));
        }
        for (&s, &g) in it.scores.iter().zip(&it.gold) {
            c.add((s > offset) as u8, g);
        }
    }
    Ok(Prf::from_confusion(c, beta))
}

/// Picks the decision-boundary offset maximizing token F0.5; ties go to the
/// offset closest to 0, then to the smaller offset.
pub fn tune_offset(items: &[ScoredTokens], grid: &OffsetGrid) -> Result<OffsetChoice> {
    if items.iter().all(|it| it.gold.is_empty()) {
        return Err(Error::Data("offset tuning needs at least one labeled token".into()));
    }
    let mut candidates = match grid {
        OffsetGrid::Explicit(v) => v.clone(),
        OffsetGrid::Quantiles(points) => {
            let mut all: Vec<f64> = items.iter().flat_map(|it| it.scores.iter().copied()).collect();
            all.sort_by(f64::total_cmp);
            let mut g = quantile_grid(&all, *points);
            g.push(0.0);
            g
        }
    };
    if candidates.is_empty() {
        return Err(Error::Config("empty offset grid".into()));
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    // Sort by the tie-break order so the first strict maximum wins.
    candidates.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    let mut best: Option<OffsetChoice> = None;
    for &offset in &candidates {
        let f = token_prf_at(items, offset, 0.5)?.f_beta;
        if best.map_or(true, |b| f > b.f05) {
            best = Some(OffsetChoice { offset, f05: f });
        }
    }
    Ok(best.expect("non-empty grid"))
}
