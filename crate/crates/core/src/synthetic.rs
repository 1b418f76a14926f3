//! Generated corpora with known token labels: a trigger-word task, an unseen
//! negative-only domain, and candidate groups for re-ranking.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledInstance;
use crate::error::{Error, Result};
use crate::rerank::CandidateGroup;

#[derive(Clone, Debug, PartialEq)]
pub struct TriggerTaskConfig {
    /// Total vocabulary, triggers included.
    pub vocab_size: usize,
    pub num_triggers: usize,
    pub num_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub positive_fraction: f64,
    pub max_triggers_per_sentence: usize,
    /// Fractions of sentences assigned to dev and test; the rest is train.
    pub dev_fraction: f64,
    pub test_fraction: f64,
}

impl Default for TriggerTaskConfig {
    fn default() -> Self {
        Self {
            vocab_size: 200,
            num_triggers: 10,
            num_sentences: 2000,
            min_len: 6,
            max_len: 20,
            positive_fraction: 0.5,
            max_triggers_per_sentence: 3,
            dev_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

impl TriggerTaskConfig {
    fn validate(&self) -> Result<()> {
        if self.num_triggers == 0 || self.num_triggers >= self.vocab_size {
            return Err(Error::Config("need at least one trigger and one filler word".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("sentence length range is empty".into()));
        }
        if self.max_triggers_per_sentence == 0 || self.max_triggers_per_sentence > self.min_len {
            return Err(Error::Config("triggers per sentence must be in 1..=min_len".into()));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction)
            || self.dev_fraction < 0.0
            || self.test_fraction < 0.0
            || self.dev_fraction + self.test_fraction >= 1.0
        {
            return Err(Error::Config("fractions out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriggerTask {
    pub fillers: Vec<String>,
    pub triggers: Vec<String>,
    pub train: Vec<LabeledInstance>,
    pub dev: Vec<LabeledInstance>,
    pub test: Vec<LabeledInstance>,
}

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:03}")).collect()
}

/// A sentence of filler words with `k` trigger positions; token labels mark
/// the triggers.
fn sentence(
    rng: &mut ChaCha8Rng,
    id: String,
    len: usize,
    fillers: &[String],
    triggers: &[String],
    k: usize,
) -> LabeledInstance {
    let mut tokens: Vec<String> = (0..len).map(|_| fillers.choose(rng).expect("fillers").clone()).collect();
    let mut labels = vec![0u8; len];
    let mut slots: Vec<usize> = (0..len).collect();
    slots.shuffle(rng);
    for &s in &slots[..k] {
        tokens[s] = triggers.choose(rng).expect("triggers").clone();
        labels[s] = 1;
    }
    LabeledInstance::new(id, tokens, u8::from(k > 0)).with_token_labels(labels)
}

pub fn trigger_task(cfg: &TriggerTaskConfig, seed: u64) -> Result<TriggerTask> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let triggers = words("t", cfg.num_triggers);
    let fillers = words("w", cfg.vocab_size - cfg.num_triggers);
    let mut all = Vec::with_capacity(cfg.num_sentences);
    for i in 0..cfg.num_sentences {
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let k = if rng.gen_bool(cfg.positive_fraction) {
            rng.gen_range(1..=cfg.max_triggers_per_sentence)
        } else {
            0
        };
        all.push(sentence(&mut rng, format!("s{i:05}"), len, &fillers, &triggers, k));
    }
    let n_dev = (cfg.num_sentences as f64 * cfg.dev_fraction).round() as usize;
    let n_test = (cfg.num_sentences as f64 * cfg.test_fraction).round() as usize;
    let test = all.split_off(all.len() - n_test);
    let dev = all.split_off(all.len() - n_dev);
    Ok(TriggerTask {
        fillers,
        triggers,
        train: all,
        dev,
        test,
    })
}

/// Negative-only sentences over `vocab_size` words that never occur in the
/// trigger task.
pub fn unseen_domain(n: usize, vocab_size: usize, min_len: usize, max_len: usize, id_prefix: &str, seed: u64) -> Result<Vec<LabeledInstance>> {
    if vocab_size == 0 || min_len == 0 || min_len > max_len {
        return Err(Error::Config("unseen domain needs words and a non-empty length range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = words("x", vocab_size);
    Ok((0..n)
        .map(|i| {
            let len = rng.gen_range(min_len..=max_len);
            sentence(&mut rng, format!("{id_prefix}{i:05}"), len, &vocab, &[], 0)
        })
        .collect())
}

/// Groups of candidates sharing a reference length. Every other candidate
/// carries 1 to `max_triggers_per_sentence` triggers; lengths vary by up to
/// two words around the reference.
pub fn candidate_groups(
    task: &TriggerTask,
    cfg: &TriggerTaskConfig,
    num_groups: usize,
    per_group: usize,
    seed: u64,
) -> Result<Vec<CandidateGroup>> {
    cfg.validate()?;
    if per_group == 0 {
        return Err(Error::Config("groups need at least one candidate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_groups)
        .map(|g| {
            let original_len = rng.gen_range(cfg.min_len + 2..=cfg.max_len.max(cfg.min_len + 2));
            let candidates = (0..per_group)
                .map(|c| {
                    let len = original_len + rng.gen_range(0..=4) - 2;
                    let k = if c % 2 == 1 {
                        rng.gen_range(1..=cfg.max_triggers_per_sentence.min(len))
                    } else {
                        0
                    };
                    sentence(&mut rng, format!("g{g:04}-c{c:03}"), len, &task.fillers, &task.triggers, k)
                })
                .collect();
            CandidateGroup::new(format!("g{g:04}"), original_len, candidates)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_mark_triggers() {
        let cfg = TriggerTaskConfig {
            num_sentences: 300,
            ..Default::default()
        };
        let t = trigger_task(&cfg, 3).unwrap();
        assert_eq!(t.train.len() + t.dev.len() + t.test.len(), 300);
        assert_eq!(t.fillers.len() + t.triggers.len(), 200);
        let mut positives = 0;
        for s in t.train.iter().chain(&t.dev).chain(&t.test) {
            let labels = s.token_labels.as_ref().unwrap();
            let k: usize = labels.iter().map(|&l| l as usize).sum();
            assert!(k <= 3);
            assert_eq!(s.sentence_label, u8::from(k > 0));
            for (w, &l) in s.tokens.iter().zip(labels) {
                assert_eq!(t.triggers.contains(w), l == 1);
            }
            positives += usize::from(k > 0);
        }
        assert!(positives > 100 && positives < 200);
        assert_eq!(trigger_task(&cfg, 3).unwrap(), t);
    }

    #[test]
    fn unseen_domain_is_disjoint_and_negative() {
        let t = trigger_task(&TriggerTaskConfig::default(), 1).unwrap();
        let u = unseen_domain(50, 40, 5, 9, "u", 2).unwrap();
        for s in &u {
            assert_eq!(s.sentence_label, 0);
            assert!(s.tokens.iter().all(|w| !t.fillers.contains(w) && !t.triggers.contains(w)));
        }
    }

    #[test]
    fn groups_alternate_trigger_candidates() {
        let cfg = TriggerTaskConfig::default();
        let t = trigger_task(&cfg, 1).unwrap();
        let gs = candidate_groups(&t, &cfg, 4, 50, 9).unwrap();
        assert_eq!(gs.len(), 4);
        for g in &gs {
            assert!(g.candidates.len() >= 49);
            for c in &g.candidates {
                assert!(c.num_words().abs_diff(g.original_len) <= 2);
            }
        }
    }
}
