use entcap_core::metrics::{aggregate_ratings, cider_scores, Dimension, Judgment, RatingRecord};
use entcap_core::model::coverage::{compute_coverage, coverage_vector, BoostFactors, CoveragePair};
use entcap_core::model::{EncoderConfig, Model, ModelConfig};
use entcap_core::synth::{generate, SynthConfig};
use entcap_core::text::labels::{ObjectLabel, WebEntity};
use entcap_core::text::vocab::{build_vocab, BOS, EOS, PAD};
use entcap_core::text::{prepare_record, selective_hypernymize, verify_surjectivity};
use entcap_core::train::beam::{beam_search_with, encode_memory, log_softmax, next_log_probs};
use entcap_core::train::{BeamConfig, SearchSpace};
use entcap_core::Execution;
use entcap_tensor::{Gradients, Graph, Mode, ParamStore, Tensor};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,7}"
}

fn sentence(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 0..max).prop_map(|w| w.join(" "))
}

fn tiny_cfg(d: usize, max_len: usize) -> ModelConfig {
    let e = EncoderConfig { layers: 1, heads: 2 };
    ModelConfig {
        d_model: d,
        ffn_dim: 2 * d,
        max_len,
        feature_rows: 3,
        feature_dim: 4,
        max_segments: 3,
        image: e,
        objects: e,
        entities: e,
        decoder: e,
    }
}

fn toy_input(seed: u64, vocab: usize) -> entcap_core::model::ModelInput {
    use entcap_core::model::LabelTokens;
    let pick = |i: u64| 4 + ((seed.wrapping_mul(31).wrapping_add(i * 7)) as usize % (vocab - 4));
    entcap_core::model::ModelInput {
        image: Some(Tensor::from_fn(&[3, 4], |i| ((i as f32 + seed as f32) * 0.37).sin())),
        objects: LabelTokens {
            tokens: vec![pick(1), pick(2)],
            segments: vec![0, 1],
            types: vec![],
        },
        entities: LabelTokens {
            tokens: vec![pick(3)],
            segments: vec![0],
            types: vec![(seed % 2) as usize],
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tokenize_round_trips_in_vocabulary_text(corpus in prop::collection::vec(sentence(8), 1..6), text in sentence(10)) {
        let mut lines = corpus;
        lines.push("abcdefghijklmnopqrstuvwxyz".into());
        let v = build_vocab(&lines, &["ARTIST".to_string()], 200).unwrap();
        prop_assert_eq!(v.detokenize(&v.tokenize(&text)), text.clone());
        let typed = format!("{text} TYPE:ARTIST {text}");
        let ids = v.tokenize(&typed);
        prop_assert!(ids.iter().filter(|&&i| v.is_type_token(i)).count() == 1);
        prop_assert_eq!(v.detokenize(&ids), typed.split_whitespace().collect::<Vec<_>>().join(" "));
    }

    #[test]
    fn preparation_is_idempotent_and_surjective(seed in any::<u64>()) {
        let cfg = SynthConfig::default();
        for mut r in generate(&cfg, seed, "p", 8).unwrap() {
            let (_, changed) = prepare_record(&mut r).unwrap();
            prop_assert!(changed);
            let cap = r.caption.clone().unwrap();
            let (again, _) = selective_hypernymize(&cap, &r.web_entities, &r.object_labels, &r.hypernyms);
            prop_assert_eq!(&again, &cap);
            prop_assert!(verify_surjectivity(&cap, &r.web_entities, &r.object_labels, &r.hypernyms).ok);
            let (_, changed) = prepare_record(&mut r).unwrap();
            prop_assert!(!changed);
        }
    }

    #[test]
    fn coverage_is_bounded_and_order_free(
        caption in sentence(12),
        objs in prop::collection::vec(sentence(3), 0..5),
        ents in prop::collection::vec(sentence(3), 0..5),
    ) {
        let objects: Vec<ObjectLabel> = objs.iter().map(|o| ObjectLabel::new(o.clone(), 0.5)).collect();
        let entities: Vec<WebEntity> = ents.iter().map(|e| WebEntity::new(e.clone(), "T", 0.5)).collect();
        let c = compute_coverage(&caption, &objects, &entities);
        prop_assert!((0.0..=1.0).contains(&c.cov_obj) && (0.0..=1.0).contains(&c.cov_we));
        let (mut ro, mut re) = (objects.clone(), entities.clone());
        ro.reverse();
        let k = re.len().min(1);
        re.rotate_left(k);
        prop_assert_eq!(compute_coverage(&caption, &ro, &re), c);
        // a caption made of every entity word covers all of them
        let all = ents.join(" ");
        if !all.trim().is_empty() {
            prop_assert_eq!(compute_coverage(&all, &objects, &entities).cov_we, 1.0);
        }
    }

    #[test]
    fn boosts_scale_each_half_linearly(we in 0.0..1.0f64, obj in 0.0..1.0f64, a in 0.0..3.0f64, b in 0.0..3.0f64, half in 1usize..8) {
        let pair = CoveragePair { cov_obj: obj, cov_we: we };
        let d = 2 * half;
        let base = coverage_vector(pair, BoostFactors::default(), d).unwrap();
        let v = coverage_vector(pair, BoostFactors { w_we: a, w_obj: b }, d).unwrap();
        for i in 0..d {
            let w = if i < half { a } else { b };
            prop_assert!((v[i] - w * base[i]).abs() < 1e-12);
        }
        prop_assert!(base[..half].iter().all(|&x| x == we));
        prop_assert!(base[half..].iter().all(|&x| x == obj));
    }

    #[test]
    fn cider_bounded_with_self_reference_on_top(refs in prop::collection::vec(sentence(9), 2..6), other in sentence(9)) {
        let refs: Vec<Vec<String>> = refs.into_iter().map(|r| vec![r]).collect();
        let own: Vec<String> = refs.iter().map(|r| r[0].clone()).collect();
        let (_, self_scores) = cider_scores(&own, &refs, Execution::Sequential).unwrap();
        let others = vec![other; refs.len()];
        let (_, other_scores) = cider_scores(&others, &refs, Execution::Sequential).unwrap();
        for (s, o) in self_scores.iter().zip(&other_scores) {
            prop_assert!((0.0..=10.0 + 1e-9).contains(s));
            prop_assert!((0.0..=10.0 + 1e-9).contains(o));
            prop_assert!(s + 1e-9 >= *o);
        }
    }

    #[test]
    fn rating_means_combine_linearly(xs in prop::collection::vec(0usize..5, 1..20), ys in prop::collection::vec(0usize..5, 1..20)) {
        const J: [Judgment; 5] = [
            Judgment::BaselineMuchBetter,
            Judgment::BaselineSlightlyBetter,
            Judgment::Equal,
            Judgment::OursSlightlyBetter,
            Judgment::OursMuchBetter,
        ];
        let recs = |v: &[usize]| -> Vec<RatingRecord> {
            v.iter()
                .enumerate()
                .map(|(i, &j)| RatingRecord { example_id: i.to_string(), dimension: Dimension::Fluency, judgment: J[j] })
                .collect()
        };
        let mean = |v: &[usize]| aggregate_ratings(&recs(v)).unwrap()[&Dimension::Fluency];
        let both: Vec<usize> = xs.iter().chain(&ys).copied().collect();
        let expect = (mean(&xs) * xs.len() as f64 + mean(&ys) * ys.len() as f64) / both.len() as f64;
        prop_assert!((mean(&both) - expect).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&mean(&both)));
    }

    #[test]
    fn clipping_never_grows_a_component(vals in prop::collection::vec(-10.0..10.0f64, 1..12), max in 0.1..20.0f64) {
        let mut s = ParamStore::<f64>::new();
        let id = s.add("w", Tensor::new(vec![vals.len()], vals.clone()).unwrap()).unwrap();
        let mut g = Gradients::zeros_like(&s);
        g.get_mut(id).data_mut().copy_from_slice(&vals);
        let before = g.global_norm();
        g.clip_global_norm(max);
        let after = g.get(id).data();
        for (a, b) in after.iter().zip(&vals) {
            prop_assert!(a.abs() <= b.abs() + 1e-12);
            prop_assert!(a * b >= 0.0);
        }
        if before <= max {
            prop_assert_eq!(after, &vals[..]);
        } else {
            prop_assert!((g.global_norm() - max).abs() < 1e-9 * max.max(1.0));
        }
    }

    #[test]
    fn beam_with_full_budget_is_exhaustive(table in prop::collection::vec(-4.0..0.0f64, 40..41), max_len in 1usize..4) {
        // vocab: PAD, BOS, EOS, 3, 4; the scorer depends on the whole prefix
        let vocab = 5;
        let next = |prefix: &[usize]| -> entcap_core::Result<Vec<f64>> {
            let mut h = 7usize;
            for &t in prefix {
                h = h.wrapping_mul(31).wrapping_add(t);
            }
            Ok(log_softmax(&(0..vocab).map(|k| table[(h + 3 * k) % table.len()] * 3.0).collect::<Vec<_>>()))
        };
        let space = SearchSpace::for_model(vocab);
        let bc = BeamConfig { beam_size: 3usize.pow(max_len as u32), max_len };
        let h = beam_search_with(&space, bc, Execution::Sequential, next).unwrap();

        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut frontier = vec![(Vec::<usize>::new(), 0.0)];
        for _ in 0..max_len {
            let mut grown = Vec::new();
            for (p, s) in frontier {
                let lp = next(&p).unwrap();
                for t in [EOS, 3, 4] {
                    let sc = s + lp[t];
                    if t == EOS {
                        if best.as_ref().is_none_or(|b| sc > b.1) {
                            best = Some((p.clone(), sc));
                        }
                    } else {
                        let mut q = p.clone();
                        q.push(t);
                        grown.push((q, sc));
                    }
                }
            }
            frontier = grown;
        }
        let (toks, score) = best.unwrap();
        prop_assert!(h.finished);
        prop_assert!((h.log_prob - score).abs() < 1e-9, "{} vs {}", h.log_prob, score);
        prop_assert_eq!(h.tokens, toks);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gates_stay_inside_the_open_unit_interval(seed in any::<u64>(), scale in 0.1..5.0f64) {
        let model = Model::<f64>::new(&tiny_cfg(4, 6), 12, 2, seed).unwrap();
        let layer = model.layout.decoder.layers[0].clone();
        let mut g = Graph::new(&model.params, Mode::Eval);
        let z: Vec<_> = (0..3)
            .map(|s| {
                let t = Tensor::from_fn(&[3, 4], |i| ((i + 5 * s) as f64 * 1.7 + seed as f64).sin() * scale);
                g.constant(t).unwrap()
            })
            .collect();
        let f = layer.gate_fusion(&mut g, z[0], z[1], z[2]).unwrap();
        for v in [f.gate_img, f.gate_obj, f.gate_we] {
            prop_assert!(g.value(v).data().iter().all(|x| x.abs() < 1.0));
        }
    }

    #[test]
    fn decoder_is_causal(seed in 0u64..1000, a in 4usize..12, b in 4usize..12, c in 4usize..12) {
        let model = Model::<f64>::new(&tiny_cfg(8, 6), 12, 2, seed).unwrap();
        let mem = encode_memory(&model, &toy_input(seed, 12)).unwrap();
        let cov = vec![0.5; 8];
        let early = next_log_probs(&model, &mem, &[a], &cov).unwrap();
        let mut g = Graph::new(&model.params, Mode::Eval);
        let enc = entcap_core::model::EncoderOutputs::new(
            g.constant(mem.img.clone()).unwrap(),
            g.constant(mem.obj.clone()).unwrap(),
            g.constant(mem.we.clone()).unwrap(),
        );
        let logits = model.decode(&mut g, &enc, &[BOS, a, b, c], &cov).unwrap();
        let row = log_softmax(g.value(logits).row(1));
        for (x, y) in row.iter().zip(&early) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn banned_tokens_never_generated() {
    let model = Model::<f64>::new(&tiny_cfg(8, 6), 12, 2, 3).unwrap();
    let mem = encode_memory(&model, &toy_input(3, 12)).unwrap();
    let cov = vec![1.0; 8];
    let space = SearchSpace::for_model(12);
    let bc = BeamConfig {
        beam_size: 4,
        max_len: 5,
    };
    let h = beam_search_with(&space, bc, Execution::Sequential, |p| {
        next_log_probs(&model, &mem, p, &cov)
    })
    .unwrap();
    assert!(h.tokens.iter().all(|&t| t != PAD && t != BOS && t != EOS));
}
