use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use blade_core::data::save_corpus;
use blade_core::embeddings::{stub_export, EmbeddingFile};
use blade_core::eval::{baselines, token_prf_at, tune_offset, MetricRecord, OffsetGrid, ScoredTokens};
use blade_core::exemplar::{audit_instance, LabelField};
use blade_core::features::{
    ngram_jsonl, ngram_scores, report, sentence_scores, Class, ClassScores, ReportOptions, ScoreMode, ScoredInstance,
};
use blade_core::io::write_atomic;
use blade_core::model::predict_sentence;
use blade_core::pipeline::prepare_examples;
use blade_core::rerank::{groups_to_jsonl, load_groups, rerank, rerank_eval, Strategy};
use blade_core::synthetic::{candidate_groups, trigger_task, unseen_domain, TriggerTaskConfig};
use blade_core::training::{predict_all, train, AdadeltaConfig, DevMetric, Trainable};
use blade_core::{
    build_vocab, load_corpus, prf, Architecture, BladeModel, CorpusSchema, DecisionRule, Error, ExemplarDatabase,
    LabeledInstance, LossKind, Prf, Result, RuleKind, TrainConfig, TrainExample, Vocabulary,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::*;

/// Files a command read and wrote, for its manifest.
#[derive(Default)]
pub struct Touched {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub models: Vec<PathBuf>,
}

pub struct Globals {
    pub seed: u64,
    pub log_timing: bool,
}

fn vocab_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".vocab");
    PathBuf::from(s)
}

fn load_model(path: &Path, t: &mut Touched) -> Result<(BladeModel, Vocabulary)> {
    let model = BladeModel::load(path)?;
    let vp = vocab_path(path);
    let vocab = Vocabulary::load(&vp)?;
    t.inputs.push(path.to_path_buf());
    t.inputs.push(vp);
    t.models.push(path.to_path_buf());
    Ok((model, vocab))
}

fn save_model(model: &BladeModel, vocab: &Vocabulary, path: &Path, t: &mut Touched) -> Result<()> {
    model.save(path)?;
    let vp = vocab_path(path);
    vocab.save(&vp)?;
    t.outputs.push(path.to_path_buf());
    t.outputs.push(vp);
    t.models.push(path.to_path_buf());
    Ok(())
}

fn read_corpus(
    path: &Path,
    embeddings: Option<&Path>,
    schema: &CorpusSchema,
    t: &mut Touched,
) -> Result<(Vec<LabeledInstance>, Option<EmbeddingFile>)> {
    let mut corpus = load_corpus(path, schema)?;
    t.inputs.push(path.to_path_buf());
    let emb = match embeddings {
        Some(p) => {
            let e = EmbeddingFile::load(p)?;
            e.align_corpus(&mut corpus)?;
            t.inputs.push(p.to_path_buf());
            Some(e)
        }
        None => None,
    };
    Ok((corpus, emb))
}

fn examples_for(
    model: &BladeModel,
    vocab: &Vocabulary,
    input: &InputArgs,
    schema: &CorpusSchema,
    t: &mut Touched,
) -> Result<(Vec<LabeledInstance>, Vec<TrainExample>)> {
    let (corpus, emb) = read_corpus(&input.input, input.embeddings.as_deref(), schema, t)?;
    let ex = prepare_examples(&corpus, vocab, &model.arch, input.max_len, emb.as_ref())?;
    Ok((corpus, ex))
}

fn write_text(path: &Path, text: &str, t: &mut Touched) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    t.outputs.push(path.to_path_buf());
    Ok(())
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("serializable record"));
        out.push('\n');
    }
    out
}

/// Word labels over the full instance; truncated words get 0.
fn pad_labels(labels: &[u8], words: usize) -> Vec<u8> {
    let mut v = labels.to_vec();
    v.resize(words, 0);
    v
}

fn parse_filters(spec: &str) -> Result<Vec<usize>> {
    let mut groups = Vec::new();
    for part in spec.split(',') {
        let (w, c) = part
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("filter bank {part:?} is not width:count")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("filter bank {part:?} is not width:count")))
        };
        groups.push((parse(w)?, parse(c)?));
    }
    Ok(Architecture::expand_widths(&groups))
}

fn parse_zgram(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("--zgram {spec:?} is not a size or a range like 1-5"));
    let (lo, hi) = match spec.split_once('-') {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
        None => {
            let z: usize = spec.trim().parse().map_err(|_| bad())?;
            (z, z)
        }
    };
    if lo < 1 || lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).collect())
}

fn dev_metric(m: DevMetricArg) -> DevMetric {
    match m {
        DevMetricArg::SentenceF1 => DevMetric::SentenceF1,
        DevMetricArg::Accuracy => DevMetric::Accuracy,
        DevMetricArg::TokenF05 => DevMetric::TokenF05,
    }
}

fn fit_config(fit: &FitArgs, loss: LossKind, metric: DevMetric, trainable: Trainable, offset: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        loss,
        batch_size: fit.batch_size,
        max_epochs: fit.epochs,
        dropout: fit.dropout,
        dev_metric: metric,
        adadelta: AdadeltaConfig {
            rho: fit.rho,
            eps: fit.eps,
            lr: fit.lr,
        },
        seed,
        trainable,
        offset,
    }
}

fn run_fit(
    initial: BladeModel,
    vocab: &Vocabulary,
    fit: &FitArgs,
    config: &TrainConfig,
    schema: &CorpusSchema,
    g: &Globals,
    t: &mut Touched,
) -> Result<()> {
    let arch = initial.arch.clone();
    let (train_c, train_e) = read_corpus(&fit.train, fit.train_embeddings.as_deref(), schema, t)?;
    let (dev_c, dev_e) = read_corpus(&fit.dev, fit.dev_embeddings.as_deref(), schema, t)?;
    let train_x = prepare_examples(&train_c, vocab, &arch, fit.max_len, train_e.as_ref())?;
    let dev_x = prepare_examples(&dev_c, vocab, &arch, fit.max_len, dev_e.as_ref())?;
    let outcome = train(initial, &train_x, &dev_x, config, g.log_timing)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    match outcome.best_metric {
        Some(m) => eprintln!("best epoch {} dev metric {:.2}", outcome.best_epoch, m),
        None => eprintln!("no epochs run; initial parameters kept"),
    }
    save_model(&outcome.best, vocab, &fit.out, t)?;
    if let Some(log) = &fit.log {
        write_text(log, &jsonl(&outcome.log), t)?;
    }
    Ok(())
}

pub fn train_cmd(a: &TrainArgs, g: &Globals, t: &mut Touched) -> Result<()> {
    let schema = CorpusSchema::default();
    let mut vocab_source = load_corpus(&a.fit.train, &schema)?;
    if let Some(extra) = &a.vocab_extra {
        vocab_source.extend(load_corpus(extra, &schema)?);
        t.inputs.push(extra.clone());
    }
    let vocab = build_vocab(&vocab_source, a.vocab_size)?;
    let external_dim = match (&a.fit.train_embeddings, &a.fit.dev_embeddings) {
        (Some(p), Some(_)) => EmbeddingFile::load(p)?.dim,
        (None, None) => 0,
        _ => return Err(Error::Config("give embeddings for both --train and --dev, or neither".into())),
    };
    let arch = Architecture::new(vocab.len(), a.word_dim, external_dim, parse_filters(&a.filters)?, !a.no_filter_bias)?;
    let model = BladeModel::init_random(arch, g.seed);
    let config = fit_config(
        &a.fit,
        LossKind::SentenceCe,
        dev_metric(a.dev_metric),
        Trainable::Full,
        0.0,
        g.seed.wrapping_add(1),
    );
    run_fit(model, &vocab, &a.fit, &config, &schema, g, t)
}

pub fn finetune_cmd(a: &FinetuneArgs, loss: LossKind, g: &Globals, t: &mut Touched) -> Result<()> {
    let (model, vocab) = load_model(&a.model, t)?;
    let default_trainable = if loss == LossKind::Minmax {
        TrainableArg::CnnOnly
    } else {
        TrainableArg::Full
    };
    let trainable = match a.trainable.unwrap_or(default_trainable) {
        TrainableArg::Full => Trainable::Full,
        TrainableArg::CnnOnly => Trainable::CnnOnly,
    };
    let metric = dev_metric(a.dev_metric.unwrap_or(DevMetricArg::TokenF05));
    let config = fit_config(&a.fit, loss, metric, trainable, a.offset, g.seed.wrapping_add(1));
    run_fit(model, &vocab, &a.fit, &config, &CorpusSchema::token_labeled(), g, t)
}

#[derive(Serialize)]
struct PredictLine<'a> {
    id: &'a str,
    tokens: &'a [String],
    sentence_label: u8,
    token_labels: Vec<u8>,
    probs: &'a [f64],
    scores: &'a [f64],
}

pub fn predict_cmd(a: &PredictArgs, t: &mut Touched) -> Result<()> {
    let (model, vocab) = load_model(&a.model, t)?;
    let (corpus, ex) = examples_for(&model, &vocab, &a.input, &CorpusSchema::default(), t)?;
    let preds = predict_all(&model, &ex, a.offset)?;
    let lines: Vec<PredictLine> = corpus
        .iter()
        .zip(&preds)
        .map(|(inst, p)| PredictLine {
            id: &inst.id,
            tokens: &inst.tokens,
            sentence_label: p.sentence,
            token_labels: pad_labels(&p.word_labels, inst.num_words()),
            probs: &p.probs,
            scores: &p.decomposition.word_combined,
        })
        .collect();
    write_text(&a.out, &jsonl(&lines), t)
}

#[derive(Serialize)]
struct OffsetReport {
    offset: f64,
    #[serde(rename = "F0.5")]
    f05: f64,
    #[serde(rename = "F0.5_at_zero")]
    f05_at_zero: f64,
}

pub fn tune_offset_cmd(a: &TuneOffsetArgs, t: &mut Touched) -> Result<()> {
    let (model, vocab) = load_model(&a.model, t)?;
    let (_, ex) = examples_for(&model, &vocab, &a.input, &CorpusSchema::token_labeled(), t)?;
    let preds = predict_all(&model, &ex, 0.0)?;
    let items: Vec<ScoredTokens> = ex
        .iter()
        .zip(&preds)
        .map(|(e, p)| ScoredTokens {
            scores: p.decomposition.word_combined.clone(),
            gold: e.word_labels.clone().unwrap_or_default(),
        })
        .collect();
    let choice = tune_offset(&items, &OffsetGrid::Quantiles(a.grid_points))?;
    let at_zero = token_prf_at(&items, 0.0, 0.5)?;
    let rep = OffsetReport {
        offset: choice.offset,
        f05: choice.f05,
        f05_at_zero: at_zero.f_beta,
    };
    println!("offset {} F0.5 {:.2} (F0.5 at 0: {:.2})", rep.offset, rep.f05, rep.f05_at_zero);
    let mut text = serde_json::to_string_pretty(&rep).expect("serializable");
    text.push('\n');
    write_text(&a.out, &text, t)
}

fn save_db(db: &ExemplarDatabase, path: &Path, t: &mut Touched) -> Result<()> {
    db.save(path)?;
    t.outputs.push(path.to_path_buf());
    t.outputs.push(ExemplarDatabase::sidecar_path(path));
    Ok(())
}

fn load_db(path: &Path, t: &mut Touched) -> Result<ExemplarDatabase> {
    let db = ExemplarDatabase::load(path)?;
    t.inputs.push(path.to_path_buf());
    t.inputs.push(ExemplarDatabase::sidecar_path(path));
    Ok(db)
}

pub fn build_db_cmd(a: &BuildDbArgs, t: &mut Touched) -> Result<()> {
    let (model, vocab) = load_model(&a.model, t)?;
    let (corpus, ex) = examples_for(&model, &vocab, &a.input, &CorpusSchema::default(), t)?;
    let db = ExemplarDatabase::build(&model, &corpus, &ex, a.offset)?;
    eprintln!("{} exemplars from {} instances", db.len(), corpus.len());
    save_db(&db, &a.db, t)
}

pub fn augment_db_cmd(a: &AugmentDbArgs, t: &mut Touched) -> Result<()> {
    if a.out == a.db {
        return Err(Error::Config("--out must differ from --db".into()));
    }
    let (model, vocab) = load_model(&a.model, t)?;
    let mut db = load_db(&a.db, t)?;
    let (corpus, ex) = examples_for(&model, &vocab, &a.input, &CorpusSchema::default(), t)?;
    let before = db.len();
    db.augment(&model, &corpus, &ex, &a.name, !a.labels_unknown, a.offset)?;
    eprintln!("added {} exemplars ({} total)", db.len() - before, db.len());
    save_db(&db, &a.out, t)
}

pub fn edit_db_cmd(a: &EditDbArgs, t: &mut Touched) -> Result<()> {
    if a.out == a.db {
        return Err(Error::Config("--out must differ from --db".into()));
    }
    let value = match a.value.as_str() {
        "0" => Some(0),
        "1" => Some(1),
        "unknown" => None,
        other => return Err(Error::Config(format!("--value {other:?} must be 0, 1 or unknown"))),
    };
    let field = match a.field {
        LabelFieldArg::GoldSentence => LabelField::GoldSentence,
        LabelFieldArg::GoldToken => LabelField::GoldToken,
    };
    let mut db = load_db(&a.db, t)?;
    db.edit_label(a.record, field, value)?;
    save_db(&db, &a.out, t)
}

#[derive(Serialize)]
struct ExemplarMatch<'a> {
    word_index: usize,
    word: &'a str,
    distance: f64,
    admitted: u8,
    record: usize,
    exemplar_id: Option<&'a str>,
    exemplar_word_index: u32,
    exemplar_word: Option<&'a str>,
    exemplar_text: Option<String>,
    exemplar_token_pred: u8,
    exemplar_sentence_pred: u8,
    exemplar_gold_sentence: Option<u8>,
    exemplar_gold_token: Option<u8>,
    exemplar_tag: &'a str,
}

#[derive(Serialize)]
struct AuditLine<'a> {
    id: &'a str,
    tokens: &'a [String],
    sentence_label: u8,
    token_labels: Vec<u8>,
    raw_token_labels: Vec<u8>,
    matches: Vec<ExemplarMatch<'a>>,
}

pub fn audit_cmd(a: &AuditArgs, t: &mut Touched) -> Result<()> {
    let (model, vocab) = load_model(&a.model, t)?;
    let db = load_db(&a.db, t)?;
    if db.fingerprint != model.fingerprint()? {
        return Err(Error::FingerprintMismatch);
    }
    let (corpus, ex) = examples_for(&model, &vocab, &a.input, &CorpusSchema::default(), t)?;
    let rule = DecisionRule {
        kind: match a.rule {
            RuleArg::Exa => RuleKind::Exa,
            RuleArg::Exag => RuleKind::Exag,
            RuleArg::Exat => RuleKind::Exat,
        },
        distance_cap: a.distance_cap,
    };
    let index = db.norm_index();
    let audited: Vec<(u8, Vec<blade_core::exemplar::AuditedToken>)> = ex
        .par_iter()
        .map(|e| {
            let trace = model.forward_with_mask(&e.input, None)?;
            let toks = audit_instance(&model, &db, Some(&index), e, &rule, a.offset)?;
            Ok((predict_sentence(&trace), toks))
        })
        .collect::<Result<_>>()?;
    let mut lines = Vec::with_capacity(corpus.len());
    for (inst, (sentence, toks)) in corpus.iter().zip(&audited) {
        let n = inst.num_words();
        let admitted: Vec<u8> = toks.iter().map(|x| x.admitted).collect();
        let raw: Vec<u8> = toks.iter().map(|x| x.raw_pred).collect();
        let matches = toks
            .iter()
            .filter_map(|x| x.matched.map(|m| (x, m)))
            .map(|(x, (ri, d))| {
                let r = &db.records[ri];
                let text = db.record_text(ri);
                ExemplarMatch {
                    word_index: x.word_index,
                    word: &inst.tokens[x.word_index],
                    distance: d,
                    admitted: x.admitted,
                    record: ri,
                    exemplar_id: text.map(|t| t.id.as_str()),
                    exemplar_word_index: r.word_index,
                    exemplar_word: text.and_then(|t| t.tokens.get(r.word_index as usize)).map(String::as_str),
                    exemplar_text: text.map(|t| t.tokens.join(" ")),
                    exemplar_token_pred: r.token_pred,
                    exemplar_sentence_pred: r.sentence_pred,
                    exemplar_gold_sentence: r.gold_sentence,
                    exemplar_gold_token: r.gold_token,
                    exemplar_tag: db.tag_name(r.tag),
                }
            })
            .collect();
        lines.push(AuditLine {
            id: &inst.id,
            tokens: &inst.tokens,
            sentence_label: *sentence,
            token_labels: pad_labels(&admitted, n),
            raw_token_labels: pad_labels(&raw, n),
            matches,
        });
    }
    write_text(&a.out, &jsonl(&lines), t)
}

pub fn features_cmd(a: &FeatureArgs, t: &mut Touched) -> Result<()> {
    let zs = parse_zgram(&a.zgram)?;
    let (model, vocab) = load_model(&a.model, t)?;
    let (corpus, ex) = examples_for(&model, &vocab, &a.input, &CorpusSchema::default(), t)?;
    let preds = predict_all(&model, &ex, 0.0)?;
    let items: Vec<ScoredInstance> = corpus
        .iter()
        .zip(&preds)
        .map(|(inst, p)| ScoredInstance::new(&inst.id, &inst.tokens, &p.decomposition, inst.sentence_label, p.sentence))
        .collect();
    let classes = match a.class {
        ClassArg::Negative => vec![Class::Negative],
        ClassArg::Positive => vec![Class::Positive],
        ClassArg::Both => vec![Class::Negative, Class::Positive],
    };
    let mode = match a.mode {
        ModeArg::Total => ScoreMode::Total,
        ModeArg::Mean => ScoreMode::Mean,
    };
    let mut scores = Vec::new();
    let mut all_ngrams = Vec::new();
    for class in classes {
        let mut ngrams = Vec::new();
        for &z in &zs {
            ngrams.extend(ngram_scores(&items, class, z, mode, a.restrict)?);
        }
        all_ngrams.extend(ngrams.iter().cloned());
        let sentences = sentence_scores(&items, class, a.normalize)?;
        scores.push((class, ClassScores { ngrams, sentences }));
    }
    let opts = ReportOptions {
        top_k: a.top_k,
        mode,
        normalize: a.normalize,
        drop_equal_scores: a.drop_equal,
    };
    write_text(&a.out, &report(&scores, &items, &opts)?, t)?;
    if let Some(p) = &a.jsonl {
        write_text(p, &ngram_jsonl(&all_ngrams), t)?;
    }
    Ok(())
}

pub fn rerank_cmd(a: &RerankArgs, g: &Globals, t: &mut Touched) -> Result<()> {
    let (model, vocab) = load_model(&a.model, t)?;
    if model.arch.external_dim > 0 {
        return Err(Error::Unsupported(
            "re-ranking needs a model without external embeddings".into(),
        ));
    }
    let groups = load_groups(&a.groups, &CorpusSchema::default())?;
    t.inputs.push(a.groups.clone());
    let examples = groups
        .iter()
        .map(|gr| prepare_examples(&gr.candidates, &vocab, &model.arch, a.max_len, None))
        .collect::<Result<Vec<_>>>()?;
    let strategy = match a.strategy {
        StrategyArg::MinDetections => Strategy::MinDetections,
        StrategyArg::Random => Strategy::Random,
    };
    let selections = rerank(&model, &groups, &examples, g.seed, a.offset, strategy)?;
    let labeled = groups
        .iter()
        .all(|gr| gr.candidates.iter().all(|c| c.token_labels.is_some()));
    if labeled {
        let ev = rerank_eval(&selections, &groups, a.beta)?;
        println!(
            "groups {} mean detections {:.3} P={:.2} R={:.2} F{}={:.2}",
            selections.len(),
            ev.mean_detections,
            ev.prf.precision,
            ev.prf.recall,
            a.beta,
            ev.prf.f_beta
        );
    } else {
        let mean = selections.iter().map(|s| s.detections as f64).sum::<f64>() / selections.len().max(1) as f64;
        println!("groups {} mean detections {:.3}", selections.len(), mean);
    }
    write_text(&a.out, &jsonl(&selections), t)
}

fn print_prf(level: &str, p: &Prf) {
    println!(
        "{level}\tP={:.2}\tR={:.2}\tF{}={:.2}",
        p.precision, p.recall, p.beta, p.f_beta
    );
}

pub fn eval_cmd(a: &EvalArgs, g: &Globals, t: &mut Touched) -> Result<()> {
    let schema = CorpusSchema::default();
    let pred = load_corpus(&a.pred, &schema)?;
    let gold = load_corpus(&a.gold, &schema)?;
    t.inputs.push(a.pred.clone());
    t.inputs.push(a.gold.clone());
    if pred.len() != gold.len() {
        return Err(Error::Data(format!(
            "{} predictions but {} gold instances",
            pred.len(),
            gold.len()
        )));
    }
    for (p, q) in pred.iter().zip(&gold) {
        if p.id != q.id {
            return Err(Error::Data(format!("instance order differs: {} vs {}", p.id, q.id)));
        }
    }
    let has_tokens = |c: &[LabeledInstance]| c.iter().all(|i| i.token_labels.is_some());
    let levels: Vec<LevelArg> = match a.level {
        Some(l) => vec![l],
        None if has_tokens(&pred) && has_tokens(&gold) => vec![LevelArg::Sentence, LevelArg::Token],
        None => vec![LevelArg::Sentence],
    };
    let gold_sentences: Vec<u8> = gold.iter().map(|i| i.sentence_label).collect();
    let mut records = Vec::new();
    for level in levels {
        let (name, p_labels, g_labels) = match level {
            LevelArg::Sentence => (
                "sentence",
                vec![pred.iter().map(|i| i.sentence_label).collect::<Vec<u8>>()],
                vec![gold_sentences.clone()],
            ),
            LevelArg::Token => {
                if !has_tokens(&pred) || !has_tokens(&gold) {
                    return Err(Error::Data("token-level evaluation needs token_labels in both files".into()));
                }
                (
                    "token",
                    pred.iter().map(|i| i.token_labels.clone().unwrap_or_default()).collect(),
                    gold.iter().map(|i| i.token_labels.clone().unwrap_or_default()).collect(),
                )
            }
        };
        let score = prf(&p_labels, &g_labels, a.beta)?;
        print_prf(name, &score);
        records.push(MetricRecord::new("eval", name, &score));
        if a.baselines {
            let b = baselines(&g_labels, Some(&gold_sentences), g.seed, a.beta)?;
            print_prf(&format!("{name}/random"), &b.random);
            print_prf(&format!("{name}/majority({})", b.majority_label), &b.majority);
            records.push(MetricRecord::new("random", name, &b.random));
            records.push(MetricRecord::new("majority", name, &b.majority));
        }
    }
    if let Some(out) = &a.out {
        write_text(out, &jsonl(&records), t)?;
    }
    Ok(())
}

pub fn synth_cmd(a: &SynthArgs, g: &Globals, t: &mut Touched) -> Result<()> {
    let cfg = TriggerTaskConfig {
        vocab_size: a.vocab_size,
        num_triggers: a.triggers,
        num_sentences: a.sentences,
        ..TriggerTaskConfig::default()
    };
    let task = trigger_task(&cfg, g.seed)?;
    let unseen = unseen_domain(a.unseen, 100, cfg.min_len, cfg.max_len, "u", g.seed.wrapping_add(1))?;
    let (aug, test) = unseen.split_at(a.unseen / 2);
    let groups = candidate_groups(&task, &cfg, a.groups, a.per_group, g.seed.wrapping_add(2))?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let files: [(&str, &[LabeledInstance]); 5] = [
        ("train.jsonl", &task.train),
        ("dev.jsonl", &task.dev),
        ("test.jsonl", &task.test),
        ("unseen_aug.jsonl", aug),
        ("unseen_test.jsonl", test),
    ];
    for (name, corpus) in files {
        let p = a.out_dir.join(name);
        save_corpus(&p, corpus)?;
        t.outputs.push(p);
    }
    write_text(&a.out_dir.join("groups.jsonl"), &groups_to_jsonl(&groups)?, t)
}

pub fn stub_embed_cmd(a: &StubEmbedArgs, t: &mut Touched) -> Result<()> {
    if a.dim == 0 {
        return Err(Error::Config("--dim must be positive".into()));
    }
    let corpus = load_corpus(&a.input, &CorpusSchema::default())?;
    t.inputs.push(a.input.clone());
    let file = stub_export(&corpus, a.dim);
    file.save(&a.out)?;
    t.outputs.push(a.out.clone());
    t.outputs.push(EmbeddingFile::sidecar_path(&a.out));
    Ok(())
}

/// Drops repeated paths, keeping first occurrences.
pub fn unique_paths(paths: &[PathBuf]) -> Vec<PathBuf> {
    let mut seen = HashSet::new();
    paths.iter().filter(|p| seen.insert((*p).clone())).cloned().collect()
}
