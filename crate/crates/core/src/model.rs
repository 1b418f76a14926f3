//! The one-layer CNN classifier and its per-token decomposition.
//!
//! Each filter `m` of width `K_m` slides over the `N x D` input matrix and
//! produces a feature map `h_m` of length `N - K_m + 1`. The pooled feature
//! `g_m = max ReLU(h_m)` survives at index `n_m` (first maximum), and a linear
//! layer `W g + b` feeds a softmax. Because every term `W_{c,m} g_m` can be
//! traced back to the window `[n_m, n_m + K_m)`, crediting it to each covered
//! position gives per-token class contribution scores.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{IndexedInstance, LabeledInstance, Vocabulary};
use crate::embeddings::EmbeddedSentence;
use crate::error::{Error, Result};
use crate::io::{sha256, to_u32, write_atomic, PutLe, Reader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BLMD";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const NEGATIVE: usize = 0;
pub const POSITIVE: usize = 1;

const FLAG_FILTER_BIAS: u32 = 1;

/// Shapes and switches of a model; everything except the parameter values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub vocab_size: usize,
    pub word_dim: usize,
    /// Width of the frozen per-WordPiece rows supplied with each instance.
    pub external_dim: usize,
    pub widths: Vec<usize>,
    pub num_classes: usize,
    pub filter_bias: bool,
    offsets: Vec<usize>,
}

impl Architecture {
    pub fn new(
        vocab_size: usize,
        word_dim: usize,
        external_dim: usize,
        widths: Vec<usize>,
        filter_bias: bool,
    ) -> Result<Self> {
        Self::with_classes(vocab_size, word_dim, external_dim, widths, 2, filter_bias)
    }

    pub fn with_classes(
        vocab_size: usize,
        word_dim: usize,
        external_dim: usize,
        widths: Vec<usize>,
        num_classes: usize,
        filter_bias: bool,
    ) -> Result<Self> {
        if word_dim + external_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if widths.is_empty() || widths.iter().any(|&k| k == 0) {
            return Err(Error::Config("need at least one filter and every width >= 1".into()));
        }
        if num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if word_dim > 0 && vocab_size < 2 {
            return Err(Error::Config("vocabulary must hold padding and unknown".into()));
        }
        let d = word_dim + external_dim;
        let mut offsets = Vec::with_capacity(widths.len() + 1);
        let mut acc = 0;
        for &k in &widths {
            offsets.push(acc);
            acc += k * d;
        }
        offsets.push(acc);
        Ok(Self {
            vocab_size,
            word_dim,
            external_dim,
            widths,
            num_classes,
            filter_bias,
            offsets,
        })
    }

    /// Widths given as `(width, count)` groups, e.g. `[(3,100),(4,100),(5,100)]`.
    pub fn expand_widths(groups: &[(usize, usize)]) -> Vec<usize> {
        groups
            .iter()
            .flat_map(|&(k, n)| std::iter::repeat(k).take(n))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + self.external_dim
    }

    pub fn num_filters(&self) -> usize {
        self.widths.len()
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }

    /// Exemplar fingerprints are only defined when every filter has width one.
    pub fn all_width_one(&self) -> bool {
        self.widths.iter().all(|&k| k == 1)
    }

    pub fn filter_range(&self, m: usize) -> std::ops::Range<usize> {
        self.offsets[m]..self.offsets[m + 1]
    }

    fn filter_weight_len(&self) -> usize {
        self.offsets[self.widths.len()]
    }
}

/// All trainable tensors, flat and row-major. Also used for gradients and
/// optimizer accumulators, which share the same shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    /// `vocab_size x word_dim`.
    pub embeddings: Vec<f64>,
    /// Filter `m` occupies `Architecture::filter_range(m)`, laid out `[k][d]`.
    pub filter_weights: Vec<f64>,
    pub filter_bias: Vec<f64>,
    /// `num_classes x num_filters`.
    pub output_weights: Vec<f64>,
    pub output_bias: Vec<f64>,
}

impl Parameters {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            embeddings: vec![0.0; arch.vocab_size * arch.word_dim],
            filter_weights: vec![0.0; arch.filter_weight_len()],
            filter_bias: vec![0.0; arch.num_filters()],
            output_weights: vec![0.0; arch.num_classes * arch.num_filters()],
            output_bias: vec![0.0; arch.num_classes],
        }
    }

    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            &self.embeddings,
            &self.filter_weights,
            &self.filter_bias,
            &self.output_weights,
            &self.output_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.embeddings,
            &mut self.filter_weights,
            &mut self.filter_bias,
            &mut self.output_weights,
            &mut self.output_bias,
        ]
    }

    pub fn same_shape(&self, other: &Parameters) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .all(|(a, b)| a.len() == b.len())
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// Value at a flat index across all tensors, in declaration order.
    pub fn get_flat(&self, mut i: usize) -> f64 {
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn set_flat(&mut self, mut i: usize, v: f64) {
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("flat parameter index out of range");
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BladeModel {
    pub arch: Architecture,
    pub params: Parameters,
}

/// Network input for one instance: indices plus the frozen rows (`N x external_dim`,
/// zero rows at padding positions).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub indexed: IndexedInstance,
    pub external: Option<Vec<f32>>,
}

impl ModelInput {
    /// Indexes `inst` for `arch`, truncating at `max_len` WordPieces and
    /// attaching the matching frozen rows when the model expects them.
    pub fn prepare(
        inst: &LabeledInstance,
        vocab: &Vocabulary,
        arch: &Architecture,
        max_len: usize,
        embedded: Option<&EmbeddedSentence>,
    ) -> Result<Self> {
        let indexed = crate::data::index_instance(inst, vocab, max_len, arch.max_width());
        let external = match (arch.external_dim, embedded) {
            (0, _) => None,
            (_, None) => {
                return Err(Error::Dimension(format!(
                    "model expects {}-dim external rows for instance {}",
                    arch.external_dim, inst.id
                )))
            }
            (de, Some(e)) => {
                if e.fragment_counts != inst.fragment_counts() {
                    return Err(Error::Data(format!(
                        "instance {}: embedding alignment differs from corpus",
                        inst.id
                    )));
                }
                if e.rows.len() != e.num_pieces() * de {
                    return Err(Error::Dimension(format!(
                        "instance {}: embedding rows have dim {}, model expects {de}",
                        inst.id,
                        e.rows.len().checked_div(e.num_pieces()).unwrap_or(0)
                    )));
                }
                let mut rows = e.rows[..indexed.real_len() * de].to_vec();
                rows.resize(indexed.len() * de, 0.0);
                Some(rows)
            }
        };
        Ok(Self { indexed, external })
    }

    pub fn len(&self) -> usize {
        self.indexed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indexed.is_empty()
    }
}

/// Everything computed by one forward pass, kept for decomposition,
/// exemplar extraction and backpropagation.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub len: usize,
    pub input_dim: usize,
    /// Row-major `len x input_dim` input matrix.
    pub input: Vec<f64>,
    /// Pre-ReLU maps, `h_m` has `len - K_m + 1` entries.
    pub feature_maps: Vec<Vec<f64>>,
    /// `g_m = max ReLU(h_m)`, before dropout.
    pub pooled: Vec<f64>,
    /// First index attaining `g_m`.
    pub argmax: Vec<usize>,
    /// Inverted-dropout multipliers (0 or `1/(1-p)`), training only.
    pub dropout_mask: Option<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    /// Pooled feature as seen by the linear layer (after dropout, if any).
    pub fn effective_pooled(&self, m: usize) -> f64 {
        match &self.dropout_mask {
            Some(mask) => self.pooled[m] * mask[m],
            None => self.pooled[m],
        }
    }
}

/// Inference or training; training draws a dropout mask from `rng`.
pub enum Mode<'a> {
    Infer,
    Train { dropout: f64, rng: &'a mut ChaCha8Rng },
}

/// Per-token contribution scores for the two classes.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDecomposition {
    /// `s-_n` for every position, padding included.
    pub negative: Vec<f64>,
    /// `s+_n` for every position, padding included.
    pub positive: Vec<f64>,
    /// `s+_n - s-_n`.
    pub combined: Vec<f64>,
    pub mask: Vec<bool>,
    pub word_negative: Vec<f64>,
    pub word_positive: Vec<f64>,
    pub word_combined: Vec<f64>,
    /// `(b_1, b_2)` of the linear layer, for bias-corrected sums.
    pub bias: [f64; 2],
}

impl TokenDecomposition {
    pub fn num_words(&self) -> usize {
        self.word_combined.len()
    }

    /// Word-level score for class `c` (0 negative, 1 positive).
    pub fn word_scores(&self, class: usize) -> &[f64] {
        if class == NEGATIVE {
            &self.word_negative
        } else {
            &self.word_positive
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExemplarVector {
    pub word_index: usize,
    pub values: Vec<f64>,
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the first maximum of `ReLU(h)`; all-nonpositive maps give `(0, 0.0)`.
pub fn relu_max(h: &[f64]) -> (usize, f64) {
    let mut best = (0usize, 0.0f64);
    for (i, &v) in h.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

impl BladeModel {
    pub fn zeros(arch: Architecture) -> Self {
        let params = Parameters::zeros(&arch);
        Self { arch, params }
    }

    /// Uniform initialization: embeddings in ±0.25, filters and the linear
    /// layer in ±1/sqrt(fan_in), biases zero.
    pub fn init_random(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(arch);
        let arch = &model.arch;
        let p = &mut model.params;
        for v in &mut p.embeddings {
            *v = rng.gen_range(-0.25..0.25);
        }
        let d = arch.input_dim();
        for m in 0..arch.num_filters() {
            let bound = 1.0 / ((arch.widths[m] * d) as f64).sqrt();
            for v in &mut p.filter_weights[arch.filter_range(m)] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        let bound = 1.0 / (arch.num_filters() as f64).sqrt();
        for v in &mut p.output_weights {
            *v = rng.gen_range(-bound..bound);
        }
        model
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn output_weight(&self, c: usize, m: usize) -> f64 {
        self.params.output_weights[c * self.arch.num_filters() + m]
    }

    fn build_input(&self, input: &ModelInput) -> Result<Vec<f64>> {
        let arch = &self.arch;
        let n = input.len();
        let (dw, de) = (arch.word_dim, arch.external_dim);
        let d = dw + de;
        if input.indexed.mask.len() != n {
            return Err(Error::Dimension("mask length differs from index length".into()));
        }
        match (&input.external, de) {
            (None, 0) => {}
            (Some(rows), de) if de > 0 && rows.len() == n * de => {}
            (Some(rows), _) => {
                return Err(Error::Dimension(format!(
                    "external rows hold {} values, expected {} x {de}",
                    rows.len(),
                    n
                )))
            }
            (None, _) => return Err(Error::Dimension("missing external rows".into())),
        }
        let mut x = vec![0.0; n * d];
        for (p, &idx) in input.indexed.indices.iter().enumerate() {
            let row = &mut x[p * d..(p + 1) * d];
            if dw > 0 {
                if idx >= arch.vocab_size {
                    return Err(Error::Dimension(format!(
                        "token index {idx} outside vocabulary of {}",
                        arch.vocab_size
                    )));
                }
                row[..dw].copy_from_slice(&self.params.embeddings[idx * dw..(idx + 1) * dw]);
            }
            if let Some(ext) = &input.external {
                for (dst, &src) in row[dw..].iter_mut().zip(&ext[p * de..(p + 1) * de]) {
                    *dst = src as f64;
                }
            }
        }
        Ok(x)
    }

    pub fn forward(&self, input: &ModelInput, mode: Mode<'_>) -> Result<ForwardTrace> {
        match mode {
            Mode::Infer => self.forward_with_mask(input, None),
            Mode::Train { dropout, rng } => {
                if !(0.0..1.0).contains(&dropout) {
                    return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
                }
                let keep = 1.0 - dropout;
                let mask = (0..self.arch.num_filters())
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                self.forward_with_mask(input, Some(mask))
            }
        }
    }

    /// Forward pass with an explicit dropout mask (`None` for inference).
    pub fn forward_with_mask(
        &self,
        input: &ModelInput,
        dropout_mask: Option<Vec<f64>>,
    ) -> Result<ForwardTrace> {
        let arch = &self.arch;
        let n = input.len();
        if n < arch.max_width() {
            return Err(Error::Dimension(format!(
                "sequence length {n} shorter than widest filter {}",
                arch.max_width()
            )));
        }
        if let Some(mask) = &dropout_mask {
            if mask.len() != arch.num_filters() {
                return Err(Error::Dimension("dropout mask length differs from filter count".into()));
            }
        }
        let d = arch.input_dim();
        let x = self.build_input(input)?;
        let mf = arch.num_filters();
        let mut feature_maps = Vec::with_capacity(mf);
        let mut pooled = Vec::with_capacity(mf);
        let mut argmax = Vec::with_capacity(mf);
        for m in 0..mf {
            let k = arch.widths[m];
            let w = &self.params.filter_weights[arch.filter_range(m)];
            let bias = if arch.filter_bias { self.params.filter_bias[m] } else { 0.0 };
            let h: Vec<f64> = (0..=n - k)
                .map(|start| {
                    let window = &x[start * d..(start + k) * d];
                    bias + window.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let (idx, g) = relu_max(&h);
            feature_maps.push(h);
            pooled.push(g);
            argmax.push(idx);
        }
        let c = arch.num_classes;
        let logits: Vec<f64> = (0..c)
            .map(|ci| {
                let row = &self.params.output_weights[ci * mf..(ci + 1) * mf];
                let dot: f64 = match &dropout_mask {
                    Some(mask) => row.iter().zip(&pooled).zip(mask).map(|((w, g), k)| w * g * k).sum(),
                    None => row.iter().zip(&pooled).map(|(w, g)| w * g).sum(),
                };
                dot + self.params.output_bias[ci]
            })
            .collect();
        let probs = softmax(&logits);
        Ok(ForwardTrace {
            len: n,
            input_dim: d,
            input: x,
            feature_maps,
            pooled,
            argmax,
            dropout_mask,
            logits,
            probs,
        })
    }

    /// Credits each surviving term `W_{c,m} g_m` to every position its window
    /// covers, then adds the class bias to every position.
    pub fn decompose(&self, trace: &ForwardTrace, indexed: &IndexedInstance) -> Result<TokenDecomposition> {
        if self.arch.num_classes != 2 {
            return Err(Error::Unsupported(format!(
                "decomposition needs exactly two classes, model has {}",
                self.arch.num_classes
            )));
        }
        if indexed.len() != trace.len {
            return Err(Error::Dimension("trace and instance lengths differ".into()));
        }
        let b = [self.params.output_bias[0], self.params.output_bias[1]];
        let mut negative = vec![b[0]; trace.len];
        let mut positive = vec![b[1]; trace.len];
        for m in 0..self.arch.num_filters() {
            let g = trace.effective_pooled(m);
            let (t_neg, t_pos) = (self.output_weight(0, m) * g, self.output_weight(1, m) * g);
            let start = trace.argmax[m];
            for p in start..start + self.arch.widths[m] {
                negative[p] += t_neg;
                positive[p] += t_pos;
            }
        }
        let combined: Vec<f64> = positive.iter().zip(&negative).map(|(p, n)| p - n).collect();
        let real = indexed.real_len();
        let avg = |v: &[f64]| crate::data::average_over_fragments(&v[..real], &indexed.alignment);
        Ok(TokenDecomposition {
            word_negative: avg(&negative)?,
            word_positive: avg(&positive)?,
            word_combined: avg(&combined)?,
            negative,
            positive,
            combined,
            mask: indexed.mask.clone(),
            bias: b,
        })
    }

    /// Per-WordPiece fingerprints `v_n = (h_{1,n}, ..., h_{M,n})` for the real positions.
    pub fn piece_vectors(&self, trace: &ForwardTrace, indexed: &IndexedInstance) -> Result<Vec<Vec<f64>>> {
        if !self.arch.all_width_one() {
            return Err(Error::Unsupported(
                "exemplar vectors require every filter to have width 1".into(),
            ));
        }
        Ok((0..indexed.real_len())
            .map(|p| trace.feature_maps.iter().map(|h| h[p]).collect())
            .collect())
    }

    /// Word-level fingerprints: fragment-wise mean of the piece vectors.
    pub fn exemplar_vectors(
        &self,
        trace: &ForwardTrace,
        indexed: &IndexedInstance,
    ) -> Result<Vec<ExemplarVector>> {
        let pieces = self.piece_vectors(trace, indexed)?;
        let mf = self.arch.num_filters();
        Ok(indexed
            .alignment
            .ranges()
            .iter()
            .enumerate()
            .map(|(w, r)| {
                let mut values = vec![0.0; mf];
                for v in &pieces[r.clone()] {
                    for (acc, x) in values.iter_mut().zip(v) {
                        *acc += x;
                    }
                }
                let len = r.len() as f64;
                values.iter_mut().for_each(|x| *x /= len);
                ExemplarVector { word_index: w, values }
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let a = &self.arch;
        let mut out = Vec::with_capacity(64 + self.params.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.put_u32(CHECKPOINT_VERSION);
        out.put_u32(to_u32(a.vocab_size, "vocab size")?);
        out.put_u32(to_u32(a.word_dim, "word dim")?);
        out.put_u32(to_u32(a.external_dim, "external dim")?);
        out.put_u32(to_u32(a.num_filters(), "filter count")?);
        out.put_u32(to_u32(a.num_classes, "class count")?);
        for &k in &a.widths {
            out.put_u32(to_u32(k, "filter width")?);
        }
        out.put_u32(if a.filter_bias { FLAG_FILTER_BIAS } else { 0 });
        for t in self.params.tensors() {
            out.put_f64s(t);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let vocab = r.u32()? as usize;
        let dw = r.u32()? as usize;
        let de = r.u32()? as usize;
        let mf = r.u32()? as usize;
        let c = r.u32()? as usize;
        if mf > r.remaining() / 4 {
            return Err(Error::Format("filter count exceeds file size".into()));
        }
        let widths = (0..mf).map(|_| r.u32().map(|k| k as usize)).collect::<Result<Vec<_>>>()?;
        let flags = r.u32()?;
        let arch = Architecture::with_classes(vocab, dw, de, widths, c, flags & FLAG_FILTER_BIAS != 0)
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut params = Parameters::zeros(&arch);
        for t in params.tensors_mut() {
            let n = t.len();
            *t = r.f64s(n)?;
        }
        r.finish()?;
        Ok(Self { arch, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn fingerprint(&self) -> Result<[u8; 32]> {
        Ok(sha256(&self.to_bytes()?))
    }
}

/// Positive label for every word whose combined score exceeds `offset` (strictly).
pub fn label_tokens(decomp: &TokenDecomposition, offset: f64) -> Vec<u8> {
    decomp
        .word_combined
        .iter()
        .map(|&s| (s > offset) as u8)
        .collect()
}

/// Argmax over the output distribution, lowest class on ties.
pub fn predict_sentence(trace: &ForwardTrace) -> u8 {
    let mut best = 0;
    for (c, &p) in trace.probs.iter().enumerate() {
        if p > trace.probs[best] {
            best = c;
        }
    }
    best as u8
}
