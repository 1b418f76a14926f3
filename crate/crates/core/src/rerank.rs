//! Detection-constrained candidate selection: among candidate completions
//! that share a prefix, pick the one the detector flags least.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{parse_instance, CorpusSchema, LabeledInstance};
use crate::error::{Error, Result};
use crate::eval::{Confusion, Prf};
use crate::training::{predict_all, TrainExample};
use crate::model::BladeModel;

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateGroup {
    pub group_id: String,
    /// Length in words of the human-written reference.
    pub original_len: usize,
    pub candidates: Vec<LabeledInstance>,
}

impl CandidateGroup {
    /// Drops candidates whose token sequence repeats an earlier one.
    pub fn new(group_id: impl Into<String>, original_len: usize, candidates: Vec<LabeledInstance>) -> Result<Self> {
        let group_id = group_id.into();
        let mut seen = std::collections::HashSet::new();
        let candidates: Vec<LabeledInstance> = candidates
            .into_iter()
            .filter(|c| seen.insert(c.tokens.clone()))
            .collect();
        if candidates.is_empty() {
            return Err(Error::Data(format!("candidate group {group_id} is empty")));
        }
        Ok(Self {
            group_id,
            original_len,
            candidates,
        })
    }
}

#[derive(Deserialize)]
struct GroupFields {
    group_id: String,
    original_len: i64,
}

/// Reads corpus lines carrying the extra fields `group_id` and
/// `original_len`. Groups keep the order of their first appearance.
pub fn load_groups(path: impl AsRef<Path>, schema: &CorpusSchema) -> Result<Vec<CandidateGroup>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut order: Vec<(String, usize)> = Vec::new();
    let mut members: HashMap<String, Vec<LabeledInstance>> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedLine {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let g: GroupFields = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if g.original_len < 0 {
            return Err(malformed(format!("original_len {} is negative", g.original_len)));
        }
        let inst = parse_instance(&line, i + 1, schema).map_err(malformed)?;
        let original_len = g.original_len as usize;
        match members.get_mut(&g.group_id) {
            Some(v) => {
                let known = order.iter().find(|(id, _)| *id == g.group_id).map(|(_, l)| *l);
                if known != Some(original_len) {
                    return Err(malformed(format!(
                        "group {} has conflicting original_len values",
                        g.group_id
                    )));
                }
                v.push(inst);
            }
            None => {
                order.push((g.group_id.clone(), original_len));
                members.insert(g.group_id, vec![inst]);
            }
        }
    }
    order
        .into_iter()
        .map(|(id, len)| {
            let cands = members.remove(&id).unwrap_or_default();
            CandidateGroup::new(id, len, cands)
        })
        .collect()
}

/// Writes groups back in the extended corpus format.
pub fn groups_to_jsonl(groups: &[CandidateGroup]) -> Result<String> {
    let mut out = String::new();
    for g in groups {
        for c in &g.candidates {
            let mut v = serde_json::to_value(c).map_err(|e| Error::Format(e.to_string()))?;
            let obj = v.as_object_mut().expect("instance serializes to an object");
            obj.insert("group_id".into(), g.group_id.clone().into());
            obj.insert("original_len".into(), g.original_len.into());
            out.push_str(&v.to_string());
            out.push('\n');
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Fewest detections, then closest length, then seeded uniform choice.
    MinDetections,
    /// Seeded uniform choice over the whole group (the comparison baseline).
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub group_id: String,
    pub chosen_id: String,
    /// Position of the chosen candidate within its (deduplicated) group.
    #[serde(skip)]
    pub chosen_index: usize,
    pub detections: usize,
    pub pool_size: usize,
    pub pool_mean: f64,
    #[serde(skip)]
    pub pool_min: usize,
    #[serde(skip)]
    pub predicted_labels: Vec<u8>,
}

fn group_rng(seed: u64, group_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(group_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// The selection rule on its own: minimum detections, then minimum length
/// difference, then a uniform draw from `rng`.
pub fn choose(detections: &[usize], lengths: &[usize], original_len: usize, rng: &mut impl Rng) -> Result<usize> {
    if detections.is_empty() || detections.len() != lengths.len() {
        return Err(Error::Data("candidate pool is empty or inconsistent".into()));
    }
    let min_det = *detections.iter().min().expect("non-empty");
    let pool: Vec<usize> = (0..detections.len()).filter(|&i| detections[i] == min_det).collect();
    let gap = |i: usize| lengths[i].abs_diff(original_len);
    let min_gap = pool.iter().map(|&i| gap(i)).min().expect("non-empty");
    let finalists: Vec<usize> = pool.into_iter().filter(|&i| gap(i) == min_gap).collect();
    Ok(finalists[rng.gen_range(0..finalists.len())])
}

/// Selects one candidate per group. `examples[g]` holds the prepared inputs
/// of `groups[g].candidates`, in the same order.
pub fn rerank(
    model: &BladeModel,
    groups: &[CandidateGroup],
    examples: &[Vec<TrainExample>],
    seed: u64,
    offset: f64,
    strategy: Strategy,
) -> Result<Vec<Selection>> {
    if groups.len() != examples.len() {
        return Err(Error::Data(format!(
            "{} groups but {} prepared example lists",
            groups.len(),
            examples.len()
        )));
    }
    groups
        .par_iter()
        .zip(examples.par_iter())
        .map(|(g, exs)| {
            if g.candidates.is_empty() {
                return Err(Error::Data(format!("candidate group {} is empty", g.group_id)));
            }
            if exs.len() != g.candidates.len() {
                return Err(Error::Data(format!("group {} has mismatched inputs", g.group_id)));
            }
            let preds = predict_all(model, exs, offset)?;
            let detections: Vec<usize> = preds
                .iter()
                .map(|p| p.word_labels.iter().filter(|&&l| l == 1).count())
                .collect();
            let lengths: Vec<usize> = g.candidates.iter().map(LabeledInstance::num_words).collect();
            let mut rng = group_rng(seed, &g.group_id);
            let idx = match strategy {
                Strategy::MinDetections => choose(&detections, &lengths, g.original_len, &mut rng)?,
                Strategy::Random => rng.gen_range(0..detections.len()),
            };
            let n = detections.len();
            Ok(Selection {
                group_id: g.group_id.clone(),
                chosen_id: g.candidates[idx].id.clone(),
                chosen_index: idx,
                detections: detections[idx],
                pool_size: n,
                pool_mean: detections.iter().sum::<usize>() as f64 / n as f64,
                pool_min: *detections.iter().min().expect("non-empty"),
                predicted_labels: preds[idx].word_labels.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RerankEval {
    pub prf: Prf,
    pub mean_detections: f64,
}

/// Token PRF of the chosen candidates against their gold labels.
pub fn rerank_eval(selections: &[Selection], groups: &[CandidateGroup], beta: f64) -> Result<RerankEval> {
    let by_id: HashMap<&str, &CandidateGroup> = groups.iter().map(|g| (g.group_id.as_str(), g)).collect();
    let mut counts = Confusion::default();
    for s in selections {
        let g = by_id
            .get(s.group_id.as_str())
            .ok_or_else(|| Error::Data(format!("unknown group {}", s.group_id)))?;
        let cand = g
            .candidates
            .get(s.chosen_index)
            .filter(|c| c.id == s.chosen_id)
            .ok_or_else(|| Error::Data(format!("selection {} is not in group {}", s.chosen_id, s.group_id)))?;
        let gold = cand
            .token_labels
            .as_ref()
            .ok_or_else(|| Error::Data(format!("candidate {} lacks gold token labels", cand.id)))?;
        let kept = s.predicted_labels.len();
        if kept > gold.len() {
            return Err(Error::Dimension(format!("candidate {} has more predictions than labels", cand.id)));
        }
        counts.extend(&s.predicted_labels, &gold[..kept])?;
    }
    let mean_detections = if selections.is_empty() {
        0.0
    } else {
        selections.iter().map(|s| s.detections).sum::<usize>() as f64 / selections.len() as f64
    };
    Ok(RerankEval {
        prf: Prf::from_confusion(counts, beta),
        mean_detections,
    })
}
