//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs on a single worker thread.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use blade_core::embeddings::EmbeddedSentence;
use blade_core::eval::{f_beta, Confusion};
use blade_core::exemplar::{audit_instance, quantize, DecisionRule, ExemplarDatabase, RuleKind};
use blade_core::pipeline::prepare_examples;
use blade_core::rerank::{rerank, Strategy};
use blade_core::synthetic::{candidate_groups, trigger_task, unseen_domain, TriggerTask, TriggerTaskConfig};
use blade_core::training::{batch_loss, gradients, predict_all, train, Trainable};
use blade_core::{
    build_vocab, Architecture, BladeModel, LabeledInstance, LossKind, ModelInput, TrainConfig, TrainExample,
    Vocabulary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Line {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn check(name: &'static str, limit: Duration, f: impl FnOnce() -> (bool, String)) -> Line {
    let t0 = Instant::now();
    let (ok, detail) = f();
    let elapsed = t0.elapsed();
    let in_time = elapsed <= limit;
    let detail = if in_time {
        detail
    } else {
        format!("{detail}; exceeded time limit {limit:?}")
    };
    Line {
        name,
        pass: ok && in_time,
        detail,
        elapsed,
    }
}

// ---------------------------------------------------------------- metrics

fn metric_oracle() -> (bool, String) {
    // (P, R, beta, published F)
    let rows = [
        (47.67, 36.70, 1.0, 41.47),
        (47.67, 36.70, 0.5, 44.98),
        (65.53, 28.61, 0.5, 52.07),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (p, r, b, want) in rows {
        let got = f_beta(p, r, b);
        worst = worst.max((got - want).abs());
        parts.push(format!("F{b}({p},{r})={got:.3}"));
    }
    (worst <= 0.02, format!("{} max |diff| {worst:.4}", parts.join(" ")))
}

// ---------------------------------------------------------- decomposition

fn random_vocab(size: usize) -> Vocabulary {
    let mut t = vec!["<pad>".to_owned(), "<unk>".to_owned()];
    t.extend((2..size).map(|i| format!("v{i}")));
    Vocabulary::from_tokens(t).unwrap()
}

/// Random instance of `pieces` WordPieces split into words of 1 to 3 pieces,
/// with optional frozen rows.
fn random_input(
    rng: &mut ChaCha8Rng,
    arch: &Architecture,
    vocab: &Vocabulary,
    pieces: usize,
) -> (LabeledInstance, ModelInput) {
    let mut counts = Vec::new();
    let mut left = pieces;
    while left > 0 {
        let c = rng.gen_range(1..=left.min(3));
        counts.push(c as u32);
        left -= c;
    }
    let tokens: Vec<String> = (0..counts.len())
        .map(|_| format!("v{}", rng.gen_range(0..vocab.len() + 3)))
        .collect();
    let mut inst = LabeledInstance::new("r", tokens, rng.gen_range(0..2));
    inst.wordpiece_counts = Some(counts.clone());
    let emb = (arch.external_dim > 0).then(|| EmbeddedSentence {
        index: 0,
        fragment_counts: counts,
        rows: (0..pieces * arch.external_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    });
    let input = ModelInput::prepare(&inst, vocab, arch, pieces, emb.as_ref()).unwrap();
    (inst, input)
}

fn randomize(model: &mut BladeModel, rng: &mut ChaCha8Rng) {
    for t in model.params.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
}

/// Direct convolution: `g_m = max(0, max_n h_m[n])`.
fn oracle_pooled(model: &BladeModel, input: &ModelInput) -> Vec<f64> {
    let a = &model.arch;
    let (dw, de) = (a.word_dim, a.external_dim);
    let d = dw + de;
    let n = input.indexed.indices.len();
    let row = |p: usize, j: usize| -> f64 {
        if j < dw {
            model.params.embeddings[input.indexed.indices[p] * dw + j]
        } else {
            input.external.as_ref().unwrap()[p * de + (j - dw)] as f64
        }
    };
    (0..a.num_filters())
        .map(|m| {
            let k = a.widths[m];
            let w = &model.params.filter_weights[a.filter_range(m)];
            let mut best: f64 = 0.0;
            for start in 0..=n - k {
                let mut h = if a.filter_bias { model.params.filter_bias[m] } else { 0.0 };
                for kk in 0..k {
                    for j in 0..d {
                        h += w[kk * d + j] * row(start + kk, j);
                    }
                }
                best = best.max(h);
            }
            best
        })
        .collect()
}

fn decomposition_identity() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_w1: f64 = 0.0;
    let mut worst_gen: f64 = 0.0;
    let mut worst_pool: f64 = 0.0;
    for trial in 0..400 {
        let general = trial >= 200;
        let m = rng.gen_range(1..=64);
        let widths: Vec<usize> = if general {
            (0..m).map(|_| rng.gen_range(1..=5)).collect()
        } else {
            vec![1; m]
        };
        let vocab = random_vocab(rng.gen_range(2..30));
        let (dw, de) = match rng.gen_range(0..3) {
            0 => (rng.gen_range(1..6), 0),
            1 => (0, rng.gen_range(1..6)),
            _ => (rng.gen_range(1..6), rng.gen_range(1..6)),
        };
        let arch = Architecture::new(vocab.len(), dw, de, widths, rng.gen_bool(0.7)).unwrap();
        let mut model = BladeModel::zeros(arch.clone());
        randomize(&mut model, &mut rng);
        let n = rng.gen_range(arch.max_width()..=40);
        let (_, input) = random_input(&mut rng, &arch, &vocab, n);
        let trace = model.forward_with_mask(&input, None).unwrap();
        let decomp = model.decompose(&trace, &input.indexed).unwrap();
        let g = oracle_pooled(&model, &input);
        for (a, b) in g.iter().zip(&trace.pooled) {
            worst_pool = worst_pool.max((a - b).abs());
        }
        let mf = arch.num_filters();
        for (c, scores) in [(0usize, &decomp.negative), (1, &decomp.positive)] {
            let b_c = model.params.output_bias[c];
            let lhs: f64 = scores.iter().map(|s| s - b_c).sum();
            let w_row = &model.params.output_weights[c * mf..(c + 1) * mf];
            if general {
                let rhs: f64 = (0..mf).map(|j| arch.widths[j] as f64 * w_row[j] * g[j]).sum();
                worst_gen = worst_gen.max((lhs - rhs).abs());
            } else {
                let logit: f64 = w_row.iter().zip(&g).map(|(w, gv)| w * gv).sum::<f64>() + b_c;
                worst_w1 = worst_w1.max((lhs + b_c - logit).abs());
            }
        }
    }
    let pass = worst_w1 <= 1e-6 && worst_gen <= 1e-6 && worst_pool <= 1e-9;
    (
        pass,
        format!("200 width-1 max err {worst_w1:.2e}; 200 mixed-width max err {worst_gen:.2e}; pooled vs direct conv {worst_pool:.2e}"),
    )
}

// --------------------------------------------------------------- gradients

/// Discrete choices the loss depends on; a central difference is only valid
/// when none of them changes between theta - eps and theta + eps.
fn structure(model: &BladeModel, examples: &[TrainExample], masks: &[Option<Vec<f64>>]) -> Vec<i64> {
    let mut sig = Vec::new();
    for (ex, mask) in examples.iter().zip(masks) {
        let t = model.forward_with_mask(&ex.input, mask.clone()).unwrap();
        sig.extend(t.argmax.iter().map(|&a| a as i64));
        sig.extend(t.pooled.iter().map(|&g| (g > 0.0) as i64));
        let d = model.decompose(&t, &ex.input.indexed).unwrap();
        let real: Vec<(usize, f64)> = d
            .combined
            .iter()
            .zip(&d.mask)
            .enumerate()
            .filter(|(_, (_, &m))| m)
            .map(|(i, (&s, _))| (i, s))
            .collect();
        let arg = |better: fn(f64, f64) -> bool| {
            let mut best = real[0];
            for &(i, s) in &real[1..] {
                if better(s, best.1) {
                    best = (i, s);
                }
            }
            best.0 as i64
        };
        sig.push(arg(|a, b| a < b));
        sig.push(arg(|a, b| a > b));
    }
    sig
}

fn gradient_suite() -> (bool, String) {
    let eps = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut configs = 0usize;
    let mut frozen_nonzero = 0usize;
    let kinds = [LossKind::SentenceCe, LossKind::TokenBce, LossKind::Minmax];
    for cfg in 0..24 {
        let kind = kinds[cfg % 3];
        let trainable = if kind == LossKind::Minmax && cfg % 2 == 0 {
            Trainable::CnnOnly
        } else {
            Trainable::Full
        };
        let vocab = random_vocab(rng.gen_range(4..12));
        let m = rng.gen_range(1..=4);
        let widths: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=3)).collect();
        let de = if cfg % 4 == 3 { 2 } else { 0 };
        let arch = Architecture::new(vocab.len(), rng.gen_range(1..4), de, widths, cfg % 5 != 0).unwrap();
        let mut model = BladeModel::zeros(arch.clone());
        randomize(&mut model, &mut rng);
        let batch = rng.gen_range(1..4);
        let examples: Vec<TrainExample> = (0..batch)
            .map(|i| {
                let n = rng.gen_range(arch.max_width()..=6);
                let (inst, input) = random_input(&mut rng, &arch, &vocab, n);
                let words = inst.num_words();
                TrainExample {
                    id: format!("x{i}"),
                    input,
                    sentence_label: rng.gen_range(0..2),
                    word_labels: Some((0..words).map(|_| rng.gen_range(0..2)).collect()),
                }
            })
            .collect();
        let masks: Vec<Option<Vec<f64>>> = examples
            .iter()
            .map(|_| {
                if cfg % 2 == 1 {
                    Some((0..m).map(|_| if rng.gen_bool(0.5) { 2.0 } else { 0.0 }).collect())
                } else {
                    None
                }
            })
            .collect();
        let analytic = gradients(&model, &examples, &masks, kind, trainable).unwrap();
        let base_sig = structure(&model, &examples, &masks);
        configs += 1;
        for i in 0..model.params.len() {
            let a = analytic.grads.get_flat(i);
            if trainable == Trainable::CnnOnly && !is_filter_param(&model, i) {
                frozen_nonzero += usize::from(a != 0.0);
                continue;
            }
            let orig = model.params.get_flat(i);
            let mut probe = model.clone();
            probe.params.set_flat(i, orig + eps);
            let plus_sig = structure(&probe, &examples, &masks);
            let plus = batch_loss(&probe, &examples, &masks, kind).unwrap();
            probe.params.set_flat(i, orig - eps);
            let minus_sig = structure(&probe, &examples, &masks);
            let minus = batch_loss(&probe, &examples, &masks, kind).unwrap();
            if plus_sig != base_sig || minus_sig != base_sig {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (
        worst <= 1e-4 && configs >= 20 && checked > 20 * skipped && frozen_nonzero == 0,
        format!(
            "{configs} configs, {checked} coordinates, {skipped} skipped at kinks, max rel err {worst:.2e}, frozen non-zero {frozen_nonzero}"
        ),
    )
}

/// Whether flat parameter `i` is a filter weight or filter bias.
fn is_filter_param(model: &BladeModel, i: usize) -> bool {
    let p = &model.params;
    let e = p.embeddings.len();
    let f = p.filter_weights.len() + p.filter_bias.len();
    i >= e && i < e + f
}

// --------------------------------------------------------- synthetic task

struct Trained {
    task: TriggerTask,
    cfg: TriggerTaskConfig,
    unseen_aug: Vec<LabeledInstance>,
    unseen_test: Vec<LabeledInstance>,
    vocab: Vocabulary,
    model: BladeModel,
    train_x: Vec<TrainExample>,
    test_x: Vec<TrainExample>,
}

fn setup_synthetic() -> Trained {
    let cfg = TriggerTaskConfig::default();
    let task = trigger_task(&cfg, 11).unwrap();
    let unseen = unseen_domain(1000, 100, cfg.min_len, cfg.max_len, "u", 12).unwrap();
    let (aug, test) = unseen.split_at(500);
    // the vocabulary covers the unseen domain too, as a pretrained word table would
    let mut vocab_src = task.train.clone();
    vocab_src.extend(aug.iter().cloned());
    let vocab = build_vocab(&vocab_src, 7500).unwrap();
    let arch = Architecture::new(vocab.len(), 32, 0, vec![1; 50], true).unwrap();
    let prep = |c: &[LabeledInstance]| prepare_examples(c, &vocab, &arch, 50, None).unwrap();
    let train_x = prep(&task.train);
    let dev_x = prep(&task.dev);
    let test_x = prep(&task.test);
    let out = train(BladeModel::init_random(arch.clone(), 11), &train_x, &dev_x, &TrainConfig::default(), false).unwrap();
    Trained {
        cfg,
        unseen_aug: aug.to_vec(),
        unseen_test: test.to_vec(),
        vocab,
        model: out.best,
        train_x,
        test_x,
        task,
    }
}

fn zero_shot(t: &Trained) -> (bool, String) {
    let preds = predict_all(&t.model, &t.test_x, 0.0).unwrap();
    let mut sent = Confusion::default();
    let mut tok = Confusion::default();
    for (inst, p) in t.task.test.iter().zip(&preds) {
        sent.add(p.sentence, inst.sentence_label);
        // gold: trigger membership, recomputed from the word list
        let gold: Vec<u8> = inst.tokens.iter().map(|w| t.task.triggers.contains(w) as u8).collect();
        tok.extend(&p.word_labels, &gold[..p.word_labels.len()]).unwrap();
    }
    let sf1 = f_beta(sent.precision(), sent.recall(), 1.0) / 100.0;
    let tf1 = f_beta(tok.precision(), tok.recall(), 1.0) / 100.0;
    (
        sf1 >= 0.95 && tf1 >= 0.85,
        format!("held-out sentence F1 {sf1:.4} (>= 0.95), zero-shot token F1 {tf1:.4} (>= 0.85)"),
    )
}

fn exhaustive_nearest(db: &ExemplarDatabase, q: &[f64]) -> (usize, f64) {
    let q = quantize(q);
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, r) in db.records.iter().enumerate() {
        let d2: f64 = r.vector.iter().zip(&q).map(|(&a, &b)| (a as f64 - b) * (a as f64 - b)).sum();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    (best.0, best.1.sqrt())
}

fn rule_confusion(t: &Trained, db: &ExemplarDatabase, rule: Option<RuleKind>) -> Confusion {
    let index = db.norm_index();
    let mut c = Confusion::default();
    for ex in &t.test_x {
        let gold = ex.word_labels.as_ref().unwrap();
        let pred: Vec<u8> = match rule {
            None => predict_all(&t.model, std::slice::from_ref(ex), 0.0).unwrap()[0].word_labels.clone(),
            Some(k) => audit_instance(&t.model, db, Some(&index), ex, &DecisionRule::new(k), 0.0)
                .unwrap()
                .iter()
                .map(|a| a.admitted)
                .collect(),
        };
        c.extend(&pred, gold).unwrap();
    }
    c
}

fn exemplar_suite(t: &Trained) -> (bool, String) {
    let db = ExemplarDatabase::build(&t.model, &t.task.train, &t.train_x, 0.0).unwrap();
    let index = db.norm_index();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for qi in 0..1000 {
        let q: Vec<f64> = match qi % 3 {
            0 => db.records[rng.gen_range(0..db.len())].vector.iter().map(|&v| v as f64).collect(),
            1 => db.records[rng.gen_range(0..db.len())]
                .vector
                .iter()
                .map(|&v| v as f64 + rng.gen_range(-0.05..0.05))
                .collect(),
            _ => (0..db.dim).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        };
        let want = exhaustive_nearest(&db, &q);
        let got = db.nearest(&q).unwrap();
        let got_ix = index.nearest(&q).unwrap();
        if got != want || got_ix != want {
            mismatches += 1;
        }
    }
    let raw = rule_confusion(t, &db, None);
    let exa = rule_confusion(t, &db, Some(RuleKind::Exa));
    let exat = rule_confusion(t, &db, Some(RuleKind::Exat));
    let f05 = |c: &Confusion| f_beta(c.precision(), c.recall(), 0.5);
    let pass = mismatches == 0 && exa.precision() >= raw.precision() && f05(&exat) >= f05(&exa);
    (
        pass,
        format!(
            "NN mismatches {mismatches}/1000; precision raw {:.2} ExA {:.2}; F0.5 ExA {:.2} ExAT {:.2}",
            raw.precision(),
            exa.precision(),
            f05(&exa),
            f05(&exat)
        ),
    )
}

fn ood_augmentation(t: &Trained) -> (bool, String) {
    let arch = &t.model.arch;
    let aug_x = prepare_examples(&t.unseen_aug, &t.vocab, arch, 50, None).unwrap();
    let test_x = prepare_examples(&t.unseen_test, &t.vocab, arch, 50, None).unwrap();
    let raw_fp: usize = predict_all(&t.model, &test_x, 0.0)
        .unwrap()
        .iter()
        .map(|p| p.word_labels.iter().filter(|&&l| l == 1).count())
        .sum();
    let mut db = ExemplarDatabase::build(&t.model, &t.task.train, &t.train_x, 0.0).unwrap();
    db.augment(&t.model, &t.unseen_aug, &aug_x, "unseen", true, 0.0).unwrap();
    let index = db.norm_index();
    let rule = DecisionRule::new(RuleKind::Exag);
    let exag_fp: usize = test_x
        .iter()
        .map(|ex| {
            audit_instance(&t.model, &db, Some(&index), ex, &rule, 0.0)
                .unwrap()
                .iter()
                .filter(|a| a.admitted == 1)
                .count()
        })
        .sum();
    (
        raw_fp > 0 && 2 * exag_fp <= raw_fp,
        format!("unseen-domain false positives: raw {raw_fp}, ExAG over augmented db {exag_fp}"),
    )
}

fn reranker(t: &Trained) -> (bool, String) {
    let groups = candidate_groups(&t.task, &t.cfg, 20, 50, 13).unwrap();
    let examples: Vec<Vec<TrainExample>> = groups
        .iter()
        .map(|g| prepare_examples(&g.candidates, &t.vocab, &t.model.arch, 50, None).unwrap())
        .collect();
    let chosen = rerank(&t.model, &groups, &examples, 3, 0.0, Strategy::MinDetections).unwrap();
    let random = rerank(&t.model, &groups, &examples, 3, 0.0, Strategy::Random).unwrap();
    let mut all_min = true;
    for ((s, g), ex) in chosen.iter().zip(&groups).zip(&examples) {
        let counts: Vec<usize> = predict_all(&t.model, ex, 0.0)
            .unwrap()
            .iter()
            .map(|p| p.word_labels.iter().filter(|&&l| l == 1).count())
            .collect();
        let member = g.candidates.iter().position(|c| c.id == s.chosen_id);
        all_min &= member.is_some_and(|i| counts[i] == *counts.iter().min().unwrap() && counts[i] == s.detections);
    }
    let mean = |v: &[blade_core::rerank::Selection]| v.iter().map(|s| s.detections as f64).sum::<f64>() / v.len() as f64;
    let (mc, mr) = (mean(&chosen), mean(&random));
    (
        all_min && mr > 0.0 && mc <= 0.2 * mr,
        format!("mean detections reranked {mc:.3}, random choice {mr:.3}; all selections at group minimum: {all_min}"),
    )
}

// ------------------------------------------------------------ determinism

fn blade(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_blade"))
        .args(args)
        .output()
        .expect("run blade")
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.clone(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> (bool, String) {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let p = |s: &str| d.join(s).to_string_lossy().into_owned();
    let runs: Vec<Vec<String>> = vec![
        vec!["synth", "--out-dir", &p("data"), "--sentences", "400", "--unseen", "200", "--groups", "4", "--seed", "5"],
        vec!["stub-embed", "--input", &p("data/train.jsonl"), "--dim", "4", "--out", &p("train.blem")],
        vec!["stub-embed", "--input", &p("data/dev.jsonl"), "--dim", "4", "--out", &p("dev.blem")],
        vec![
            "train", "--train", &p("data/train.jsonl"), "--dev", &p("data/dev.jsonl"), "--word-dim", "8",
            "--filters", "1:12", "--epochs", "3", "--out", &p("m.blmd"), "--log", &p("log.jsonl"),
            "--vocab-extra", &p("data/unseen_aug.jsonl"), "--seed", "9", "--threads", "2",
        ],
        vec![
            "train", "--train", &p("data/train.jsonl"), "--dev", &p("data/dev.jsonl"), "--train-embeddings",
            &p("train.blem"), "--dev-embeddings", &p("dev.blem"), "--word-dim", "4", "--filters", "2:4,3:4",
            "--epochs", "2", "--out", &p("e.blmd"),
        ],
        vec![
            "finetune-tokens", "--model", &p("m.blmd"), "--train", &p("data/train.jsonl"), "--dev",
            &p("data/dev.jsonl"), "--epochs", "2", "--out", &p("ft.blmd"),
        ],
        vec![
            "finetune-minmax", "--model", &p("m.blmd"), "--train", &p("data/train.jsonl"), "--dev",
            &p("data/dev.jsonl"), "--epochs", "2", "--out", &p("mm.blmd"),
        ],
        vec!["predict", "--model", &p("m.blmd"), "--input", &p("data/test.jsonl"), "--out", &p("pred.jsonl")],
        vec!["tune-offset", "--model", &p("m.blmd"), "--input", &p("data/dev.jsonl"), "--out", &p("offset.json")],
        vec!["build-db", "--model", &p("m.blmd"), "--input", &p("data/train.jsonl"), "--db", &p("db.blex")],
        vec![
            "augment-db", "--model", &p("m.blmd"), "--db", &p("db.blex"), "--input", &p("data/unseen_aug.jsonl"),
            "--name", "unseen", "--out", &p("db2.blex"),
        ],
        vec![
            "edit-db", "--db", &p("db2.blex"), "--record", "0", "--field", "gold-token", "--value", "unknown",
            "--out", &p("db3.blex"),
        ],
        vec![
            "audit", "--model", &p("m.blmd"), "--db", &p("db3.blex"), "--input", &p("data/test.jsonl"), "--rule",
            "exag", "--out", &p("audit.jsonl"),
        ],
        vec![
            "extract-features", "--model", &p("m.blmd"), "--input", &p("data/test.jsonl"), "--zgram", "1-3",
            "--out", &p("features.txt"), "--jsonl", &p("features.jsonl"),
        ],
        vec!["rerank", "--model", &p("m.blmd"), "--groups", &p("data/groups.jsonl"), "--out", &p("sel.jsonl")],
        vec![
            "eval", "--pred", &p("pred.jsonl"), "--gold", &p("data/test.jsonl"), "--baselines", "--out",
            &p("eval.jsonl"),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(str::to_owned).collect())
    .collect();
    for args in &runs {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = blade(&refs);
        if !out.status.success() {
            return (
                false,
                format!("`{}` failed: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()),
            );
        }
    }
    let first = snapshot(d);
    let manifest_files: Vec<PathBuf> = first
        .keys()
        .filter(|k| k.to_string_lossy().ends_with(".manifest.json"))
        .cloned()
        .collect();
    // replay every command in its original order from one of its manifests
    let mut replayed = Vec::new();
    for args in &runs {
        let out_flag = ["--out", "--out-dir", "--db"]
            .iter()
            .find_map(|f| args.iter().position(|a| a == f).map(|i| &args[i + 1]))
            .unwrap();
        let m = if args[0] == "synth" {
            Path::new(out_flag).join("train.jsonl.manifest.json")
        } else {
            PathBuf::from(format!("{out_flag}.manifest.json"))
        };
        let out = blade(&["replay", "--manifest", m.to_str().unwrap()]);
        if !out.status.success() {
            return (false, format!("replay of {} failed", m.display()));
        }
        replayed.push(m);
    }
    let second = snapshot(d);
    let differing: Vec<String> = first
        .iter()
        .filter(|(k, v)| second.get(*k) != Some(*v))
        .map(|(k, _)| k.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    (
        differing.is_empty() && first.len() == second.len() && !manifest_files.is_empty(),
        format!(
            "{} commands, {} files ({} manifests) compared after replay; differing: {:?}",
            replayed.len(),
            first.len(),
            manifest_files.len(),
            differing
        ),
    )
}

fn main() {
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().ok();
    let mut lines = vec![
        check("metric-oracle", Duration::from_secs(1), metric_oracle),
        check("decomposition-identity", Duration::from_secs(10), decomposition_identity),
        check("gradient-suite", Duration::from_secs(30), gradient_suite),
    ];
    let t0 = Instant::now();
    let trained = setup_synthetic();
    let train_time = t0.elapsed();
    let mut zs = check("zero-shot-synthetic", Duration::from_secs(120), || zero_shot(&trained));
    zs.elapsed += train_time;
    zs.detail = format!("{} (training {:.1}s)", zs.detail, train_time.as_secs_f64());
    if zs.elapsed > Duration::from_secs(120) {
        zs.pass = false;
    }
    lines.push(zs);
    lines.push(check("exemplar-suite", Duration::from_secs(60), || exemplar_suite(&trained)));
    lines.push(check("ood-augmentation", Duration::from_secs(120), || ood_augmentation(&trained)));
    lines.push(check("reranker", Duration::from_secs(60), || reranker(&trained)));
    lines.push(check("determinism", Duration::from_secs(300), determinism));
    let mut failed = 0;
    for l in &lines {
        println!(
            "{}  {:<24} {:>7.2}s  {}",
            if l.pass { "PASS" } else { "FAIL" },
            l.name,
            l.elapsed.as_secs_f64(),
            l.detail
        );
        failed += usize::from(!l.pass);
    }
    println!("acceptance: {} passed, {} failed", lines.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
