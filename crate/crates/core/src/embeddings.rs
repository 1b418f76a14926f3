//! Frozen per-WordPiece input embeddings (the `BLEM` file).
//!
//! Layout, little-endian:
//!
//! ```text
//! "BLEM" | version u32 | dim u32 | sentence count u64
//! per sentence: index u64 | pieces u32 | words u32 | words x u32 fragment counts | pieces x dim f32
//! ```
//!
//! A sidecar text file (`<path>.ids`) maps each sentence index to its
//! instance id, one `index<TAB>id` pair per line.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledInstance;
use crate::error::{Error, Result};
use crate::io::{sha256, to_u32, write_atomic, PutLe, Reader};

pub const MAGIC: &[u8; 4] = b"BLEM";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSentence {
    pub index: u64,
    pub fragment_counts: Vec<u32>,
    /// Row-major `pieces x dim`.
    pub rows: Vec<f32>,
}

impl EmbeddedSentence {
    pub fn num_pieces(&self) -> usize {
        self.fragment_counts.iter().map(|&c| c as usize).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub sentences: Vec<EmbeddedSentence>,
    /// Instance id per sentence, parallel to `sentences`.
    pub ids: Vec<String>,
}

impl EmbeddingFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.put_u32(VERSION);
        out.put_u32(to_u32(self.dim, "embedding dim")?);
        out.put_u64(self.sentences.len() as u64);
        for s in &self.sentences {
            let pieces = s.num_pieces();
            if s.rows.len() != pieces * self.dim {
                return Err(Error::Dimension(format!(
                    "sentence {}: {} floats for {pieces} pieces of dim {}",
                    s.index,
                    s.rows.len(),
                    self.dim
                )));
            }
            out.put_u64(s.index);
            out.put_u32(to_u32(pieces, "piece count")?);
            out.put_u32(to_u32(s.fragment_counts.len(), "word count")?);
            for &c in &s.fragment_counts {
                out.put_u32(c);
            }
            out.put_f32s(&s.rows);
        }
        Ok(out)
    }

    /// Parses the binary payload; ids default to the sentence index.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "embedding file");
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported embedding file version {version}")));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut sentences = Vec::new();
        for _ in 0..count {
            let index = r.u64()?;
            let pieces = r.u32()? as usize;
            let words = r.u32()? as usize;
            let mut fragment_counts = Vec::with_capacity(words.min(r.remaining() / 4));
            for _ in 0..words {
                fragment_counts.push(r.u32()?);
            }
            let total: usize = fragment_counts.iter().map(|&c| c as usize).sum();
            if total != pieces {
                return Err(Error::Format(format!(
                    "sentence {index}: fragment counts sum to {total}, header says {pieces}"
                )));
            }
            let rows = r.f32s(pieces * dim)?;
            sentences.push(EmbeddedSentence {
                index,
                fragment_counts,
                rows,
            });
        }
        r.finish()?;
        let ids = sentences.iter().map(|s| s.index.to_string()).collect();
        Ok(Self { dim, sentences, ids })
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".ids");
        PathBuf::from(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_atomic(path, &self.to_bytes()?)?;
        let mut side = String::new();
        for (s, id) in self.sentences.iter().zip(&self.ids) {
            side.push_str(&format!("{}\t{}\n", s.index, id));
        }
        write_atomic(&Self::sidecar_path(path), side.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut file = Self::from_bytes(&bytes)?;
        let side = Self::sidecar_path(path);
        if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let ids: Vec<String> = text
                .lines()
                .map(|l| l.split_once('\t').map_or(l, |(_, id)| id).to_owned())
                .collect();
            if ids.len() != file.sentences.len() {
                return Err(Error::Format(format!(
                    "{}: {} ids for {} sentences",
                    side.display(),
                    ids.len(),
                    file.sentences.len()
                )));
            }
            file.ids = ids;
        }
        Ok(file)
    }

    /// Checks the file against a corpus (same order, same fragmentation) and
    /// writes the file's fragment counts into instances that lack them.
    pub fn align_corpus(&self, corpus: &mut [LabeledInstance]) -> Result<()> {
        if corpus.len() != self.sentences.len() {
            return Err(Error::Data(format!(
                "embedding file has {} sentences, corpus has {}",
                self.sentences.len(),
                corpus.len()
            )));
        }
        for (inst, s) in corpus.iter_mut().zip(&self.sentences) {
            if s.fragment_counts.len() != inst.num_words() {
                return Err(Error::Data(format!(
                    "instance {}: {} words, embedding entry has {}",
                    inst.id,
                    inst.num_words(),
                    s.fragment_counts.len()
                )));
            }
            match &inst.wordpiece_counts {
                Some(c) if *c != s.fragment_counts => {
                    return Err(Error::Data(format!(
                        "instance {}: wordpiece_counts disagree with embedding file",
                        inst.id
                    )))
                }
                Some(_) => {}
                None => inst.wordpiece_counts = Some(s.fragment_counts.clone()),
            }
        }
        Ok(())
    }
}

/// Deterministic stand-in for a contextual encoder: each WordPiece row is
/// derived from a hash of (token, fragment position, left neighbour), so the
/// file is reproducible and mildly context dependent.
pub fn stub_export(corpus: &[LabeledInstance], dim: usize) -> EmbeddingFile {
    let sentences = corpus
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let counts = inst.fragment_counts();
            let mut rows = Vec::with_capacity(inst.num_wordpieces() * dim);
            for (w, (tok, &c)) in inst.tokens.iter().zip(&counts).enumerate() {
                let left = if w == 0 { "" } else { inst.tokens[w - 1].as_str() };
                for piece in 0..c {
                    let key = format!("{tok}\u{1f}{piece}");
                    let ctx = format!("{left}\u{1f}{tok}");
                    let mut own = ChaCha8Rng::from_seed(sha256(key.as_bytes()));
                    let mut side = ChaCha8Rng::from_seed(sha256(ctx.as_bytes()));
                    for _ in 0..dim {
                        let a: f32 = own.gen_range(-1.0..1.0);
                        let b: f32 = side.gen_range(-1.0..1.0);
                        rows.push(0.8 * a + 0.2 * b);
                    }
                }
            }
            EmbeddedSentence {
                index: i as u64,
                fragment_counts: counts,
                rows,
            }
        })
        .collect();
    EmbeddingFile {
        dim,
        sentences,
        ids: corpus.iter().map(|c| c.id.clone()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<LabeledInstance> {
        let mut a = LabeledInstance::new("a", vec!["x".into(), "yy".into()], 0);
        a.wordpiece_counts = Some(vec![1, 2]);
        let b = LabeledInstance::new("b", vec!["z".into()], 1);
        vec![a, b]
    }

    #[test]
    fn header_and_payload_sizes_agree() {
        let f = stub_export(&corpus(), 8);
        let bytes = f.to_bytes().unwrap();
        // header + per-sentence (8+4+4 + 4*words + 4*pieces*dim)
        let expected = 4 + 4 + 4 + 8 + (16 + 4 * 2 + 4 * 3 * 8) + (16 + 4 + 4 * 8);
        assert_eq!(bytes.len(), expected);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let f = stub_export(&corpus(), 5);
        let back = EmbeddingFile::from_bytes(&f.to_bytes().unwrap()).unwrap();
        assert_eq!(back.sentences, f.sentences);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.blem");
        f.save(&p).unwrap();
        assert_eq!(EmbeddingFile::load(&p).unwrap(), f);
    }

    #[test]
    fn stub_is_deterministic() {
        assert_eq!(
            stub_export(&corpus(), 4).to_bytes().unwrap(),
            stub_export(&corpus(), 4).to_bytes().unwrap()
        );
    }

    #[test]
    fn rejects_inconsistent_counts_and_truncation() {
        let f = stub_export(&corpus(), 2);
        let mut bytes = f.to_bytes().unwrap();
        assert!(EmbeddingFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        // first sentence's piece count lives at offset 20 + 8
        bytes[28] = 9;
        assert!(EmbeddingFile::from_bytes(&bytes).is_err());
    }

    #[test]
    fn align_fills_and_checks_fragment_counts() {
        let f = stub_export(&corpus(), 2);
        let mut plain: Vec<_> = corpus()
            .into_iter()
            .map(|mut c| {
                c.wordpiece_counts = None;
                c
            })
            .collect();
        f.align_corpus(&mut plain).unwrap();
        assert_eq!(plain[0].wordpiece_counts, Some(vec![1, 2]));

        plain[0].wordpiece_counts = Some(vec![2, 1]);
        assert!(f.align_corpus(&mut plain).is_err());
        assert!(f.align_corpus(&mut plain[..1]).is_err());
    }
}
