//! Losses at sentence and token granularity, their exact gradients, Adadelta,
//! and the epoch loop with dev-set model selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Confusion, Prf};
use crate::model::{label_tokens, predict_sentence, BladeModel, ForwardTrace, ModelInput, Parameters, TokenDecomposition};

/// Gradients share the parameter layout; frozen tensors hold zeros.
pub type GradientSet = Parameters;

const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SentenceCe,
    TokenBce,
    Minmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DevMetric {
    SentenceF1,
    Accuracy,
    TokenF05,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trainable {
    Full,
    /// Only convolution filters (weights and biases) are updated.
    CnnOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        Self {
            rho: 0.95,
            eps: 1e-6,
            lr: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout: f64,
    pub dev_metric: DevMetric,
    pub adadelta: AdadeltaConfig,
    pub seed: u64,
    pub trainable: Trainable,
    /// Decision-boundary offset used when the dev metric is token-level.
    pub offset: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::SentenceCe,
            batch_size: 50,
            max_epochs: 20,
            dropout: 0.5,
            dev_metric: DevMetric::SentenceF1,
            adadelta: AdadeltaConfig::default(),
            seed: 1,
            trainable: Trainable::Full,
            offset: 0.0,
        }
    }
}

impl TrainConfig {
    /// Defaults for min-max fine-tuning: filters only, token-level selection.
    pub fn minmax() -> Self {
        Self {
            loss: LossKind::Minmax,
            trainable: Trainable::CnnOnly,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let a = &self.adadelta;
        if !(0.0..1.0).contains(&a.rho) || a.eps <= 0.0 || !a.lr.is_finite() {
            return Err(Error::Config("invalid Adadelta hyperparameters".into()));
        }
        Ok(())
    }
}

/// A prepared instance with its supervision.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub id: String,
    pub input: ModelInput,
    pub sentence_label: u8,
    /// Word labels for the kept (untruncated) words.
    pub word_labels: Option<Vec<u8>>,
}

impl TrainExample {
    /// Each WordPiece inherits its word's label.
    pub fn piece_labels(&self) -> Option<Vec<u8>> {
        self.word_labels
            .as_ref()
            .map(|w| self.input.indexed.alignment.expand(w))
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of a logit `x` against label `y`.
fn bce_logit(x: f64, y: u8) -> f64 {
    if y == 1 {
        softplus(-x)
    } else {
        softplus(x)
    }
}

/// `-log o_Y`, with `o_Y` floored at 1e-12; the flag reports the clamp.
pub fn sentence_loss(trace: &ForwardTrace, label: u8) -> (f64, bool) {
    let p = trace.probs[label as usize];
    if p < PROB_FLOOR {
        (-PROB_FLOOR.ln(), true)
    } else {
        (-p.ln(), false)
    }
}

/// Sum and count of the per-piece BCE terms of one instance.
fn token_loss_terms(decomp: &TokenDecomposition, labels: &[u8]) -> Result<(f64, usize)> {
    let real = decomp.mask.iter().filter(|&&m| m).count();
    if labels.len() != real {
        return Err(Error::Dimension(format!(
            "{} token labels for {real} non-padding pieces",
            labels.len()
        )));
    }
    let mut sum = 0.0;
    for (p, &y) in labels.iter().enumerate() {
        sum += bce_logit(decomp.combined[p], y);
    }
    Ok((sum, real))
}

/// Mean BCE of `sigmoid(s+- )` over every non-padding WordPiece of the batch
/// (one pooled mean, not a mean of per-instance means).
pub fn token_loss(batch: &[(&TokenDecomposition, &[u8])]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0;
    for (d, labels) in batch {
        let (s, c) = token_loss_terms(d, labels)?;
        sum += s;
        count += c;
    }
    if count == 0 {
        return Err(Error::Data("token loss over a batch with no non-padding positions".into()));
    }
    Ok(sum / count as f64)
}

/// Non-padding positions of the first minimum and first maximum of `s+-`.
fn min_max_positions(decomp: &TokenDecomposition) -> Option<(usize, usize)> {
    let mut it = decomp
        .combined
        .iter()
        .zip(&decomp.mask)
        .enumerate()
        .filter(|(_, (_, &m))| m)
        .map(|(i, (&v, _))| (i, v));
    let (first, v0) = it.next()?;
    let (mut lo, mut hi) = ((first, v0), (first, v0));
    for (i, v) in it {
        if v < lo.1 {
            lo = (i, v);
        }
        if v > hi.1 {
            hi = (i, v);
        }
    }
    Some((lo.0, hi.0))
}

/// `(L_min + L_max) / 2` for one instance: the smallest combined score is
/// pushed negative, the largest is tied to the sentence label.
pub fn minmax_loss(decomp: &TokenDecomposition, label: u8) -> Result<f64> {
    let (lo, hi) = min_max_positions(decomp)
        .ok_or_else(|| Error::Data("min-max loss on an instance with no tokens".into()))?;
    let l_min = softplus(decomp.combined[lo]);
    let l_max = bce_logit(decomp.combined[hi], label);
    Ok(0.5 * (l_min + l_max))
}

/// Batch loss and gradient. `masks[i]` is the dropout mask replayed for
/// example `i` (`None` means no dropout).
pub struct BatchGradient {
    pub loss: f64,
    pub grads: GradientSet,
    /// Instances whose target probability hit the 1e-12 floor.
    pub clamped: usize,
}

/// Per-instance pieces of the backward pass that are cheap to keep and merge.
struct InstanceBackward {
    trace: ForwardTrace,
    loss: f64,
    clamped: bool,
    d_logits: Vec<f64>,
    /// Gradient w.r.t. the surviving pre-ReLU value `h_m[n_m]`.
    d_h: Vec<f64>,
    /// Gradient w.r.t. `W_{c,m}` from the token-score path, `[c][m]` flat.
    d_w_token: Vec<f64>,
    d_b_token: [f64; 2],
}

fn instance_backward(
    model: &BladeModel,
    ex: &TrainExample,
    mask: Option<Vec<f64>>,
    kind: LossKind,
    scale: f64,
) -> Result<InstanceBackward> {
    let arch = &model.arch;
    let mf = arch.num_filters();
    let c = arch.num_classes;
    let trace = model.forward_with_mask(&ex.input, mask)?;
    let mut d_logits = vec![0.0; c];
    let mut d_g_eff = vec![0.0; mf];
    let mut d_w_token = vec![0.0; c * mf];
    let mut d_b_token = [0.0; 2];
    let loss;
    let mut clamped = false;

    match kind {
        LossKind::SentenceCe => {
            let y = ex.sentence_label as usize;
            let (l, cl) = sentence_loss(&trace, ex.sentence_label);
            loss = l * scale;
            clamped = cl;
            for (ci, d) in d_logits.iter_mut().enumerate() {
                *d = (trace.probs[ci] - if ci == y { 1.0 } else { 0.0 }) * scale;
            }
            for (m, dg) in d_g_eff.iter_mut().enumerate() {
                *dg = (0..c).map(|ci| model.output_weight(ci, m) * d_logits[ci]).sum();
            }
        }
        LossKind::TokenBce | LossKind::Minmax => {
            if c != 2 {
                return Err(Error::Unsupported("token losses need exactly two classes".into()));
            }
            let decomp = model.decompose(&trace, &ex.input.indexed)?;
            // d loss / d s+-_p for every position p
            let mut d_comb = vec![0.0; trace.len];
            if kind == LossKind::TokenBce {
                let labels = ex
                    .piece_labels()
                    .ok_or_else(|| Error::Data(format!("instance {} has no token labels", ex.id)))?;
                let (sum, _) = token_loss_terms(&decomp, &labels)?;
                loss = sum * scale;
                for (p, &y) in labels.iter().enumerate() {
                    d_comb[p] = (sigmoid(decomp.combined[p]) - y as f64) * scale;
                }
            } else {
                let (lo, hi) = min_max_positions(&decomp)
                    .ok_or_else(|| Error::Data(format!("instance {} has no tokens", ex.id)))?;
                loss = minmax_loss(&decomp, ex.sentence_label)? * scale;
                d_comb[lo] += 0.5 * sigmoid(decomp.combined[lo]) * scale;
                d_comb[hi] += 0.5 * (sigmoid(decomp.combined[hi]) - ex.sentence_label as f64) * scale;
            }
            let total: f64 = d_comb.iter().sum();
            d_b_token = [-total, total];
            for m in 0..mf {
                let start = trace.argmax[m];
                let covered: f64 = d_comb[start..start + arch.widths[m]].iter().sum();
                let g = trace.effective_pooled(m);
                d_w_token[mf + m] = g * covered;
                d_w_token[m] = -g * covered;
                d_g_eff[m] = (model.output_weight(1, m) - model.output_weight(0, m)) * covered;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss on instance {}", ex.id)));
    }
    let d_h = (0..mf)
        .map(|m| {
            let keep = trace.dropout_mask.as_ref().map_or(1.0, |k| k[m]);
            let survived = trace.feature_maps[m][trace.argmax[m]] > 0.0;
            if survived {
                d_g_eff[m] * keep
            } else {
                0.0
            }
        })
        .collect();
    Ok(InstanceBackward {
        trace,
        loss,
        clamped,
        d_logits,
        d_h,
        d_w_token,
        d_b_token,
    })
}

fn loss_scale(examples: &[TrainExample], kind: LossKind) -> Result<f64> {
    match kind {
        LossKind::SentenceCe | LossKind::Minmax => Ok(1.0 / examples.len() as f64),
        LossKind::TokenBce => {
            let pieces: usize = examples.iter().map(|e| e.input.indexed.real_len()).sum();
            if pieces == 0 {
                return Err(Error::Data("token loss over a batch with no non-padding positions".into()));
            }
            Ok(1.0 / pieces as f64)
        }
    }
}

/// Exact gradient of the configured batch loss. Per-instance work runs in
/// parallel; accumulation follows instance order, so results do not depend
/// on the thread count.
pub fn gradients(
    model: &BladeModel,
    examples: &[TrainExample],
    masks: &[Option<Vec<f64>>],
    kind: LossKind,
    trainable: Trainable,
) -> Result<BatchGradient> {
    if examples.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if masks.len() != examples.len() {
        return Err(Error::Dimension("one dropout mask slot per example required".into()));
    }
    let scale = loss_scale(examples, kind)?;
    let parts: Vec<InstanceBackward> = examples
        .par_iter()
        .zip(masks.par_iter())
        .map(|(ex, mask)| instance_backward(model, ex, mask.clone(), kind, scale))
        .collect::<Result<_>>()?;

    let arch = &model.arch;
    let mf = arch.num_filters();
    let d = arch.input_dim();
    let dw = arch.word_dim;
    let mut g = Parameters::zeros(arch);
    let mut loss = 0.0;
    let mut clamped = 0;
    for (ex, part) in examples.iter().zip(&parts) {
        loss += part.loss;
        clamped += part.clamped as usize;
        let t = &part.trace;
        for ci in 0..arch.num_classes {
            g.output_bias[ci] += part.d_logits[ci];
            for m in 0..mf {
                g.output_weights[ci * mf + m] += part.d_logits[ci] * t.effective_pooled(m);
            }
        }
        if kind != LossKind::SentenceCe {
            g.output_bias[0] += part.d_b_token[0];
            g.output_bias[1] += part.d_b_token[1];
            for (acc, v) in g.output_weights.iter_mut().zip(&part.d_w_token) {
                *acc += v;
            }
        }
        for m in 0..mf {
            let dh = part.d_h[m];
            if dh == 0.0 {
                continue;
            }
            if arch.filter_bias {
                g.filter_bias[m] += dh;
            }
            let k = arch.widths[m];
            let start = t.argmax[m];
            let range = arch.filter_range(m);
            let window = &t.input[start * d..(start + k) * d];
            for (acc, x) in g.filter_weights[range.clone()].iter_mut().zip(window) {
                *acc += dh * x;
            }
            if dw > 0 {
                let w = &model.params.filter_weights[range];
                for j in 0..k {
                    let row = ex.input.indexed.indices[start + j];
                    let emb = &mut g.embeddings[row * dw..(row + 1) * dw];
                    for (acc, wv) in emb.iter_mut().zip(&w[j * d..j * d + dw]) {
                        *acc += dh * wv;
                    }
                }
            }
        }
    }
    if trainable == Trainable::CnnOnly {
        g.embeddings.iter_mut().for_each(|v| *v = 0.0);
        g.output_weights.iter_mut().for_each(|v| *v = 0.0);
        g.output_bias.iter_mut().for_each(|v| *v = 0.0);
    }
    if !loss.is_finite() || !g.all_finite() {
        return Err(Error::Numeric("non-finite loss or gradient".into()));
    }
    Ok(BatchGradient { loss, grads: g, clamped })
}

/// Batch loss only, for finite-difference checks and reporting.
pub fn batch_loss(
    model: &BladeModel,
    examples: &[TrainExample],
    masks: &[Option<Vec<f64>>],
    kind: LossKind,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let scale = loss_scale(examples, kind)?;
    let mut total = 0.0;
    for (ex, mask) in examples.iter().zip(masks) {
        let trace = model.forward_with_mask(&ex.input, mask.clone())?;
        total += match kind {
            LossKind::SentenceCe => sentence_loss(&trace, ex.sentence_label).0,
            LossKind::TokenBce => {
                let decomp = model.decompose(&trace, &ex.input.indexed)?;
                let labels = ex
                    .piece_labels()
                    .ok_or_else(|| Error::Data(format!("instance {} has no token labels", ex.id)))?;
                token_loss_terms(&decomp, &labels)?.0
            }
            LossKind::Minmax => {
                let decomp = model.decompose(&trace, &ex.input.indexed)?;
                minmax_loss(&decomp, ex.sentence_label)?
            }
        } * scale;
    }
    Ok(total)
}

/// Running averages of squared gradients and squared updates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdadeltaState {
    pub sq_grad: Parameters,
    pub sq_update: Parameters,
}

impl AdadeltaState {
    pub fn new(model: &BladeModel) -> Self {
        Self {
            sq_grad: Parameters::zeros(&model.arch),
            sq_update: Parameters::zeros(&model.arch),
        }
    }
}

/// One Adadelta update in place:
/// `E[g²] ← ρE[g²] + (1-ρ)g²`, `Δ = -√(E[Δ²]+ε)/√(E[g²]+ε)·g`,
/// `E[Δ²] ← ρE[Δ²] + (1-ρ)Δ²`, `θ ← θ + lr·Δ`.
pub fn adadelta_step(
    params: &mut Parameters,
    grads: &GradientSet,
    state: &mut AdadeltaState,
    hyper: &AdadeltaConfig,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.sq_grad) || !params.same_shape(&state.sq_update) {
        return Err(Error::Dimension("optimizer state shape differs from parameters".into()));
    }
    let AdadeltaConfig { rho, eps, lr } = *hyper;
    let mut next = params.clone();
    let mut next_state = state.clone();
    for (((theta, g), eg), eu) in next
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(next_state.sq_grad.tensors_mut())
        .zip(next_state.sq_update.tensors_mut())
    {
        for i in 0..theta.len() {
            let gi = g[i];
            eg[i] = rho * eg[i] + (1.0 - rho) * gi * gi;
            let delta = -((eu[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * gi;
            eu[i] = rho * eu[i] + (1.0 - rho) * delta * delta;
            theta[i] += lr * delta;
        }
    }
    if !next.all_finite() {
        return Err(Error::Numeric("non-finite parameter after Adadelta step".into()));
    }
    *params = next;
    *state = next_state;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_metric: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: BladeModel,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub log: Vec<EpochLog>,
    pub warnings: Vec<String>,
}

/// Inference-mode predictions over prepared examples.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub sentence: u8,
    pub probs: Vec<f64>,
    pub decomposition: TokenDecomposition,
    pub word_labels: Vec<u8>,
}

pub fn predict_all(model: &BladeModel, examples: &[TrainExample], offset: f64) -> Result<Vec<Prediction>> {
    examples
        .par_iter()
        .map(|ex| {
            let trace = model.forward_with_mask(&ex.input, None)?;
            let decomposition = model.decompose(&trace, &ex.input.indexed)?;
            Ok(Prediction {
                sentence: predict_sentence(&trace),
                probs: trace.probs.clone(),
                word_labels: label_tokens(&decomposition, offset),
                decomposition,
            })
        })
        .collect()
}

/// Value of the dev metric (percent), plus a warning when it is undefined.
pub fn dev_score(
    model: &BladeModel,
    dev: &[TrainExample],
    metric: DevMetric,
    offset: f64,
) -> Result<(f64, Option<String>)> {
    let preds = predict_all(model, dev, offset)?;
    let mut sent = Confusion::default();
    let mut tok = Confusion::default();
    for (ex, p) in dev.iter().zip(&preds) {
        sent.add(p.sentence, ex.sentence_label);
        if metric == DevMetric::TokenF05 {
            let gold = ex
                .word_labels
                .as_ref()
                .ok_or_else(|| Error::Data(format!("dev instance {} lacks token labels", ex.id)))?;
            tok.extend(&p.word_labels, gold)?;
        }
    }
    Ok(match metric {
        DevMetric::Accuracy => (sent.accuracy(), None),
        DevMetric::SentenceF1 => {
            let warn = (sent.gold_positive() == 0).then(|| "dev set has no positive sentences; F1 reported as 0".to_owned());
            (Prf::from_confusion(sent, 1.0).f_beta, warn)
        }
        DevMetric::TokenF05 => {
            let warn = (tok.gold_positive() == 0).then(|| "dev set has no positive tokens; F0.5 reported as 0".to_owned());
            (Prf::from_confusion(tok, 0.5).f_beta, warn)
        }
    })
}

/// Runs up to `max_epochs` epochs of shuffled mini-batch Adadelta and
/// returns the parameters of the epoch with the best dev metric (earliest on
/// ties). `timing` controls whether wall-clock times are recorded in the log.
pub fn train(
    initial: BladeModel,
    train_set: &[TrainExample],
    dev: &[TrainExample],
    config: &TrainConfig,
    timing: bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dev.is_empty() {
        return Err(Error::Data("dev set is empty".into()));
    }
    let mut outcome = TrainOutcome {
        best: initial.clone(),
        best_epoch: 0,
        best_metric: None,
        log: Vec::new(),
        warnings: Vec::new(),
    };
    if config.max_epochs == 0 {
        return Ok(outcome);
    }
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let mut model = initial;
    let mut state = AdadeltaState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mf = model.arch.num_filters();
    let keep = 1.0 - config.dropout;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainExample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let masks: Vec<Option<Vec<f64>>> = batch
                .iter()
                .map(|_| {
                    (config.dropout > 0.0).then(|| {
                        (0..mf)
                            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect()
                    })
                })
                .collect();
            let bg = gradients(&model, &batch, &masks, config.loss, config.trainable)?;
            if bg.clamped > 0 {
                outcome
                    .warnings
                    .push(format!("epoch {epoch}: {} target probabilities clamped at 1e-12", bg.clamped));
            }
            adadelta_step(&mut model.params, &bg.grads, &mut state, &config.adadelta)?;
            loss_sum += bg.loss;
            batches += 1;
        }
        let (metric, warn) = dev_score(&model, dev, config.dev_metric, config.offset)?;
        if let Some(w) = warn {
            outcome.warnings.push(format!("epoch {epoch}: {w}"));
        }
        outcome.log.push(EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            dev_metric: metric,
            wall_ms: if timing { started.elapsed().as_millis() as u64 } else { 0 },
        });
        if outcome.best_metric.map_or(true, |b| metric > b) {
            outcome.best_metric = Some(metric);
            outcome.best_epoch = epoch;
            outcome.best = model.clone();
        }
    }
    Ok(outcome)
}
