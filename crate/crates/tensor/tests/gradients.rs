use entcap_tensor::{grad_check, grad_check_in, Graph, Mode, ParamStore, Result, Tensor, Var, MASK_VALUE};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
// Fourth-order stencil: truncation ~h^4, so a large step keeps roundoff low.
const EPS: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Random tensor whose entries stay away from zero, for kinked ops.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random::<bool>() {
            v
        } else {
            -v
        }
    })
}

/// sum(out ⊙ R) for a fixed random R, so every output element matters.
fn project(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let w = random(&mut rng, g.shape(out));
    let w = g.constant(w)?;
    let p = g.mul(out, w)?;
    g.sum_all(p)
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..4, 1usize..5, 1usize..4, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matmul_grad((m, k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let a = s.add("a", random(&mut rng, &[m, k])).unwrap();
        let b = s.add("b", random(&mut rng, &[k, n])).unwrap();
        let r = grad_check(&s, EPS, |g| {
            let (x, y) = (g.param(a), g.param(b));
            let o = g.matmul(x, y)?;
            project(g, o, seed)
        }).unwrap();
        prop_assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn matmul_bt_grad((m, k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let a = s.add("a", random(&mut rng, &[m, k])).unwrap();
        let b = s.add("b", random(&mut rng, &[n, k])).unwrap();
        let r = grad_check(&s, EPS, |g| {
            let (x, y) = (g.param(a), g.param(b));
            let o = g.matmul_bt(x, y)?;
            project(g, o, seed)
        }).unwrap();
        prop_assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn elementwise_binary_grads((m, _k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let a = s.add("a", random(&mut rng, &[m, n])).unwrap();
        let b = s.add("b", random(&mut rng, &[m, n])).unwrap();
        let row = s.add("row", random(&mut rng, &[n])).unwrap();
        let r = grad_check(&s, EPS, |g| {
            let (x, y, rv) = (g.param(a), g.param(b), g.param(row));
            let s1 = g.add(x, y)?;
            let s2 = g.sub(s1, y)?;
            let s3 = g.mul(s2, y)?;
            let s4 = g.add_row(s3, rv)?;
            let s5 = g.scale(s4, 0.7)?;
            let s6 = g.square(s5)?;
            project(g, s6, seed)
        }).unwrap();
        prop_assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn activation_grads((m, _k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let a = s.add("a", random(&mut rng, &[m, n])).unwrap();
        let b = s.add("b", away_from_zero(&mut rng, &[m, n])).unwrap();
        let r = grad_check(&s, EPS, |g| {
            let x = g.param(a);
            let t = g.tanh(x)?;
            let sg = g.sigmoid(x)?;
            let y = g.param(b);
            let rl = g.relu(y)?;
            let sum = g.add(t, sg)?;
            let all = g.add(sum, rl)?;
            project(g, all, seed)
        }).unwrap();
        prop_assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn softmax_grad_with_mask((m, _k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let a = s.add("a", random(&mut rng, &[m, n + 1])).unwrap();
        // keep at least one position open per row
        let mask = Tensor::from_fn(&[m, n + 1], |i| {
            if i % (n + 1) != 0 && rng.random::<bool>() { MASK_VALUE } else { 0.0 }
        });
        let r = grad_check(&s, EPS, |g| {
            let x = g.param(a);
            let p = g.softmax(x, Some(&mask))?;
            project(g, p, seed)
        }).unwrap();
        prop_assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn layer_norm_grad((m, _k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // at least 3 well-separated entries per row: with 2 columns, or nearly
        // equal ones, the output is almost constant and finite differences
        // measure roundoff
        let n = n + 2;
        let mut s = ParamStore::new();
        let x = Tensor::from_fn(&[m, n], |i| (i % n) as f64 * 0.6 - 0.9 + rng.random_range(-0.2..0.2));
        let a = s.add("a", x).unwrap();
        let gm = s.add("gamma", random(&mut rng, &[n])).unwrap();
        let bt = s.add("beta", random(&mut rng, &[n])).unwrap();
        let r = grad_check(&s, EPS, |g| {
            let (x, ga, be) = (g.param(a), g.param(gm), g.param(bt));
            let y = g.layer_norm(x, ga, be)?;
            project(g, y, seed)
        }).unwrap();
        prop_assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn embedding_and_cross_entropy_grad((m, k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = n + 2;
        let mut s = ParamStore::new();
        let table = s.add("table", random(&mut rng, &[vocab, k])).unwrap();
        let proj = s.add("proj", random(&mut rng, &[k, vocab])).unwrap();
        let ids: Vec<usize> = (0..m).map(|_| rng.random_range(0..vocab)).collect();
        let targets: Vec<usize> = (0..m).map(|_| rng.random_range(0..vocab)).collect();
        let r = grad_check(&s, EPS, |g| {
            let (t, p) = (g.param(table), g.param(proj));
            let e = g.embedding(t, &ids)?;
            let logits = g.matmul(e, p)?;
            g.cross_entropy(logits, &targets)
        }).unwrap();
        prop_assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn structural_grads((m, k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let a = s.add("a", random(&mut rng, &[m, k])).unwrap();
        let b = s.add("b", random(&mut rng, &[m, n])).unwrap();
        let c = s.add("c", random(&mut rng, &[2, k + n])).unwrap();
        let r = grad_check(&s, EPS, |g| {
            let (x, y, z) = (g.param(a), g.param(b), g.param(c));
            let cat = g.concat_cols(&[x, y])?;
            let stacked = g.concat_rows(&[cat, z])?;
            let cols = g.slice_cols(stacked, 1.min(k + n - 1), 1)?;
            let rows = g.slice_rows(stacked, 1, m)?;
            let mean = g.mean_rows(rows)?;
            let flat = g.reshape(mean, &[k + n])?;
            let l1 = project(g, cols, seed)?;
            let l2 = project(g, flat, seed + 1)?;
            g.add(l1, l2)
        }).unwrap();
        prop_assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn dropout_grad_in_train_mode((m, _k, n, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let a = s.add("a", random(&mut rng, &[m, n])).unwrap();
        let r = grad_check_in(&s, EPS, Mode::Train, seed, |g| {
            let x = g.param(a);
            let d = g.dropout(x, 0.3)?;
            let t = g.tanh(d)?;
            project(g, t, seed)
        }).unwrap();
        prop_assert!(r.max_rel_err < TOL, "{r:?}");
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = ParamStore::<f64>::new();
        let mut g = Graph::new(&s, Mode::Eval);
        let x = g.constant(Tensor::from_fn(&[rows, cols], |_| rng.random_range(-20.0..20.0))).unwrap();
        let mask = Tensor::from_fn(&[rows, cols], |i| {
            if i % cols != 0 && rng.random::<bool>() { MASK_VALUE } else { 0.0 }
        });
        let p = g.softmax(x, Some(&mask)).unwrap();
        for r in 0..rows {
            let row = g.value(p).row(r);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn linear_layer_check_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut s = ParamStore::new();
    let w = s.add("w", random(&mut rng, &[4, 3])).unwrap();
    let b = s.add("b", random(&mut rng, &[3])).unwrap();
    let x = random(&mut rng, &[5, 4]);
    let r = grad_check(&s, 1e-5, |g| {
        let xv = g.constant(x.clone())?;
        let (wv, bv) = (g.param(w), g.param(b));
        let h = g.matmul(xv, wv)?;
        let y = g.add_row(h, bv)?;
        project(g, y, 3)
    })
    .unwrap();
    assert!(r.max_rel_err < 1e-6, "{r:?}");
}

#[test]
fn zero_parameter_graph_has_zero_error() {
    let s = ParamStore::<f64>::new();
    let r = grad_check(&s, 1e-5, |g| {
        let c = g.constant(Tensor::scalar(2.0))?;
        g.square(c)
    })
    .unwrap();
    assert_eq!(r.max_rel_err, 0.0);
    assert_eq!(r.checked, 0);
}

#[test]
fn random_composite_of_five_parameters() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let ids: Vec<_> = (0..5)
            .map(|i| {
                s.add(format!("p{i}"), Tensor::scalar(rng.random_range(-1.5..1.5)))
                    .unwrap()
            })
            .collect();
        let r = grad_check(&s, 1e-4, |g| {
            let v: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
            let a = g.mul(v[0], v[1])?;
            let b = g.tanh(a)?;
            let c = g.sigmoid(v[2])?;
            let d = g.add(b, c)?;
            let e = g.mul(d, v[3])?;
            let f = g.square(v[4])?;
            let h = g.sub(e, f)?;
            g.tanh(h)
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-4, "seed {seed}: {r:?}");
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParamStore::<f32>::new();
    let w = s
        .add("w", Tensor::from_fn(&[6, 6], |_| rng.random_range(-1.0..1.0)))
        .unwrap();
    let run = || {
        let mut g = Graph::with_seed(&s, Mode::Train, 99);
        let x = g.param(w);
        let d = g.dropout(x, 0.2).unwrap();
        let y = g.matmul_bt(d, x).unwrap();
        let p = g.softmax(y, None).unwrap();
        g.value(p).clone()
    };
    let (a, b) = (run(), run());
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}
