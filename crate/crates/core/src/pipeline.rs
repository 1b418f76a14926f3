//! Glue from corpus records to network inputs.

use crate::data::{truncated_word_count, LabeledInstance, Vocabulary};
use crate::embeddings::EmbeddingFile;
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelInput};
use crate::training::TrainExample;

/// Indexes every instance (and attaches its frozen rows when the model uses
/// them). Token labels are truncated together with the words.
pub fn prepare_examples(
    corpus: &[LabeledInstance],
    vocab: &Vocabulary,
    arch: &Architecture,
    max_len: usize,
    embeddings: Option<&EmbeddingFile>,
) -> Result<Vec<TrainExample>> {
    if arch.word_dim > 0 && vocab.len() != arch.vocab_size {
        return Err(Error::Data(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            arch.vocab_size
        )));
    }
    if let Some(e) = embeddings {
        if e.dim != arch.external_dim {
            return Err(Error::Dimension(format!(
                "embedding file dim {} but model expects {}",
                e.dim, arch.external_dim
            )));
        }
        if e.sentences.len() != corpus.len() {
            return Err(Error::Data(format!(
                "embedding file has {} sentences, corpus has {}",
                e.sentences.len(),
                corpus.len()
            )));
        }
    }
    corpus
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let emb = embeddings.map(|e| &e.sentences[i]);
            let input = ModelInput::prepare(inst, vocab, arch, max_len, emb)?;
            let kept = truncated_word_count(inst, max_len);
            Ok(TrainExample {
                id: inst.id.clone(),
                input,
                sentence_label: inst.sentence_label,
                word_labels: inst.token_labels.as_ref().map(|l| l[..kept].to_vec()),
            })
        })
        .collect()
}
