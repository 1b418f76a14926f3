use blade_core::exemplar::{ExemplarDatabase, ExemplarRecord};
use blade_core::training::{gradients, Trainable};
use blade_core::{Architecture, BladeModel, LabeledInstance, LossKind, ModelInput, TrainExample, Vocabulary};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(widths: Vec<usize>, words: usize) -> (BladeModel, ModelInput) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tokens = vec!["<pad>".to_owned(), "<unk>".to_owned()];
    tokens.extend((2..2000).map(|i| format!("w{i}")));
    let vocab = Vocabulary::from_tokens(tokens).unwrap();
    let arch = Architecture::new(vocab.len(), 300, 0, widths, true).unwrap();
    let model = BladeModel::init_random(arch.clone(), 1);
    let toks: Vec<String> = (0..words).map(|_| format!("w{}", rng.gen_range(2..2000))).collect();
    let inst = LabeledInstance::new("b", toks, 1);
    let input = ModelInput::prepare(&inst, &vocab, &arch, words, None).unwrap();
    (model, input)
}

fn forward_decompose(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward_decompose");
    for (name, widths) in [("w1x1000", vec![1; 1000]), ("w345x100", [3, 4, 5].repeat(100))] {
        let (model, input) = setup(widths, 50);
        g.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| model.forward_with_mask(black_box(&input), None).unwrap())
        });
        let trace = model.forward_with_mask(&input, None).unwrap();
        g.bench_function(BenchmarkId::new("decompose", name), |b| {
            b.iter(|| model.decompose(black_box(&trace), &input.indexed).unwrap())
        });
    }
    g.finish();
}

fn nearest(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 1000;
    let mut db = ExemplarDatabase::empty(dim, [0; 32]);
    for i in 0..5000 {
        db.records.push(ExemplarRecord {
            vector: (0..dim).map(|_| rng.gen_range(0.0f32..1.0)).collect(),
            id_hash: i,
            word_index: 0,
            token_pred: 0,
            sentence_pred: 0,
            gold_sentence: None,
            gold_token: None,
            tag: 0,
        });
    }
    let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect();
    let ix = db.norm_index();
    let mut g = c.benchmark_group("nearest_5000x1000");
    g.bench_function("scan", |b| b.iter(|| db.nearest(black_box(&q)).unwrap()));
    g.bench_function("norm_index", |b| b.iter(|| ix.nearest(black_box(&q)).unwrap()));
    g.finish();
}

fn grads(c: &mut Criterion) {
    let (model, input) = setup(vec![1; 200], 30);
    let examples: Vec<TrainExample> = (0..16)
        .map(|i| TrainExample {
            id: format!("e{i}"),
            input: input.clone(),
            sentence_label: (i % 2) as u8,
            word_labels: Some((0..30).map(|w| ((w + i) % 2) as u8).collect()),
        })
        .collect();
    let masks = vec![None; examples.len()];
    let mut g = c.benchmark_group("gradients_batch16");
    for kind in [LossKind::SentenceCe, LossKind::TokenBce, LossKind::Minmax] {
        g.bench_function(format!("{kind:?}"), |b| {
            b.iter(|| gradients(&model, &examples, &masks, kind, Trainable::Full).unwrap())
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = forward_decompose, nearest, grads
}
criterion_main!(benches);
