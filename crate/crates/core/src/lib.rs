//! Binary token labeling from a convolutional decomposition.
//!
//! A single-layer CNN with a linear head is trained for document (or
//! sentence) classification. Every maxpool-surviving filter/ngram interaction
//! is credited back to the tokens it covered, which yields per-token class
//! contribution scores: token labels without token supervision, token-level
//! and min-max losses when such supervision exists, per-token fingerprint
//! vectors for nearest-neighbour exemplar auditing, and class-conditional
//! ngram and sentence scores.

pub mod data;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod exemplar;
pub mod features;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod rerank;
pub mod synthetic;
pub mod training;

pub use data::{
    average_over_fragments, build_vocab, load_corpus, CorpusSchema, IndexedInstance, LabeledInstance,
    Vocabulary, WordAlignment,
};
pub use error::{Error, Result};
pub use eval::{prf, Confusion, Prf};
pub use exemplar::{DecisionRule, ExemplarDatabase, ExemplarRecord, RuleKind};
pub use model::{
    label_tokens, predict_sentence, Architecture, BladeModel, ExemplarVector, ForwardTrace, ModelInput, Mode,
    Parameters, TokenDecomposition,
};
pub use training::{GradientSet, LossKind, TrainConfig, TrainExample};
