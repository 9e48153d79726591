//! Sequential vs rayon execution for batch gradients and beam decoding.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use entcap_core::model::{EncoderConfig, EntityMode, Model, ModelConfig};
use entcap_core::synth::{generate, SynthConfig};
use entcap_core::text::dataset::{to_example, FeatureShape};
use entcap_core::text::prepare_record;
use entcap_core::text::vocab::build_vocab;
use entcap_core::train::trainer::{batch_gradients, entity_types, vocab_corpus};
use entcap_core::train::{decode_set, prepare_examples, BeamConfig, Conditioning, Prepared};
use entcap_core::Execution;

fn setup() -> (Model<f32>, Vec<Prepared>, entcap_core::text::Vocabulary) {
    let synth = SynthConfig::default();
    let shape = FeatureShape {
        rows: synth.feature_rows,
        dim: synth.feature_dim,
    };
    let examples: Vec<_> = generate(&synth, 3, "b", 64)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, mut r)| {
            prepare_record(&mut r).unwrap();
            to_example(r, shape, std::path::Path::new("."), i + 1).unwrap()
        })
        .collect();
    let mode = EntityMode::Type;
    let vocab = build_vocab(&vocab_corpus(&examples, mode), &entity_types(&examples), 500).unwrap();
    let e = EncoderConfig { layers: 1, heads: 2 };
    let cfg = ModelConfig {
        d_model: 32,
        ffn_dim: 64,
        max_len: 24,
        feature_rows: shape.rows,
        feature_dim: shape.dim,
        max_segments: 4,
        image: e,
        objects: e,
        entities: e,
        decoder: e,
    };
    let model = Model::for_vocab(&cfg, &vocab, 1).unwrap();
    let data = prepare_examples(&examples, &vocab, mode, &model, Execution::Sequential);
    (model, data, vocab)
}

fn bench(c: &mut Criterion) {
    let (model, data, vocab) = setup();
    let batch: Vec<&Prepared> = data.iter().take(32).collect();
    let mut g = c.benchmark_group("batch_gradients");
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| batch_gradients(&model, &batch, 0.2, 7, 1, exec).unwrap())
        });
    }
    g.finish();

    let beam = BeamConfig {
        beam_size: 4,
        max_len: 24,
    };
    let subset = &data[..16];
    let mut g = c.benchmark_group("decode_set");
    g.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                decode_set(
                    &model,
                    subset,
                    &vocab,
                    EntityMode::Type,
                    beam,
                    Conditioning::Actual,
                    exec,
                )
                .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
