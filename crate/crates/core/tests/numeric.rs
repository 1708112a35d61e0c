mod common;

use mmfuse::autodiff::{bce, Graph};
use mmfuse::cflm::{msl_score_raw, Cflm};
use mmfuse::gfrm::{Gfrm, SimilarityGraph};
use mmfuse::gradcheck::finite_diff_check;
use mmfuse::optim::Adam;
use mmfuse::store::Lexicon;
use mmfuse::tensor::sigmoid;
use mmfuse::{Matrix, Modality, ParamStore, Rng};
use proptest::prelude::*;

fn randn(r: usize, c: usize, rng: &mut Rng) -> Matrix<f64> {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
}

/// Two different scalar functions of the same parameters.
fn f_and_g(g: &mut Graph<f64>, store: &ParamStore<f64>, x: &Matrix<f64>) -> (mmfuse::Var, mmfuse::Var) {
    let w = g.param(store, store.id("w").unwrap());
    let b = g.param(store, store.id("b").unwrap());
    let xv = g.constant(x.clone());
    let h = g.affine(xv, w, b).unwrap();
    let s = g.sigmoid(h);
    let f = g.sum(s);
    let r = g.relu(h);
    let sq = g.mul(r, h).unwrap();
    let sm = g.softmax_rows(sq, None).unwrap();
    let gg = g.mul(sm, h).unwrap();
    (f, g.sum(gg))
}

fn grads(store: &mut ParamStore<f64>, x: &Matrix<f64>, a: f64, b: f64) -> Vec<f64> {
    store.zero_grad();
    let mut g = Graph::new();
    let (f, gv) = f_and_g(&mut g, store, x);
    let fa = g.scale(f, a);
    let gb = g.scale(gv, b);
    let l = g.add(fa, gb).unwrap();
    g.backward(l, store).unwrap();
    store.iter().flat_map(|(_, e)| e.grad.data().to_vec()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_handles_large_magnitudes(seed in 0u64..10_000, cols in 1usize..16) {
        let mut rng = Rng::new(seed);
        let m = Matrix::from_vec(3, cols, (0..3 * cols).map(|_| rng.uniform(-1e4, 1e4) as f32).collect()).unwrap();
        let s = m.softmax_rows(None).unwrap();
        prop_assert!(s.is_finite());
        for r in 0..3 {
            prop_assert!((s.row(r).iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn sigmoid_strictly_inside_and_monotone(a in -30.0f64..30.0, d in 1e-3f64..5.0) {
        let (lo, hi) = (sigmoid(a), sigmoid(a + d));
        prop_assert!(lo > 0.0 && lo < 1.0 && hi > 0.0 && hi < 1.0);
        prop_assert!(hi > lo);
        let (l32, h32) = (sigmoid(a as f32), sigmoid((a + d) as f32));
        prop_assert!((0.0..=1.0).contains(&l32) && h32 >= l32);
    }

    #[test]
    fn backward_is_linear(seed in 0u64..10_000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        store.add_weight("w", 4, 3, &mut rng).unwrap();
        store.add("b", randn(1, 3, &mut rng)).unwrap();
        let x = randn(5, 4, &mut rng);
        let combined = grads(&mut store, &x, a, b);
        let gf = grads(&mut store, &x, 1.0, 0.0);
        let gg = grads(&mut store, &x, 0.0, 1.0);
        for i in 0..combined.len() {
            prop_assert!((combined[i] - (a * gf[i] + b * gg[i])).abs() <= 1e-5);
        }
    }

    #[test]
    fn loss_is_finite_for_any_probability(p in 0.0f64..=1.0, y in 0u8..2) {
        prop_assert!(bce(p, y as f64, 1e-7).is_finite());
        prop_assert!(bce(p as f32, y as f32, 1e-7).is_finite());
    }

    #[test]
    fn raising_threshold_never_adds_edges(seed in 0u64..10_000, r in 1usize..30, t1 in -1.0f64..1.0, t2 in -1.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let m = common::gaussian(r, 6, &mut Rng::new(seed));
        let a = SimilarityGraph::build(m.clone(), lo, Modality::Image).adjacency();
        let b = SimilarityGraph::build(m, hi, Modality::Image).adjacency();
        for i in 0..r {
            for j in 0..r {
                prop_assert!(!b[i][j] || a[i][j]);
            }
        }
    }

    #[test]
    fn msl_ignores_case_and_outer_whitespace(words in prop::collection::vec(prop::sample::select(vec!["karen", "nag", "Witch", "hello", "THE", "shrew!"]), 0..10), pad in 0usize..4) {
        let lex = Lexicon::from_terms(["karen", "nag", "witch", "shrew"]);
        let text = words.join(" ");
        let base = msl_score_raw(&text, &lex);
        prop_assert_eq!(msl_score_raw(&text.to_uppercase(), &lex), base);
        prop_assert_eq!(msl_score_raw(&text.to_lowercase(), &lex), base);
        let padded = format!("{}{}{}", " ".repeat(pad), text, "\t".repeat(pad));
        prop_assert_eq!(msl_score_raw(&padded, &lex), base);
    }
}

#[test]
fn adam_with_zero_lr_is_identity() {
    let mut rng = Rng::new(1);
    let mut store = ParamStore::<f32>::new();
    let id = store.add_weight("w", 3, 3, &mut rng).unwrap();
    let before = store.value(id).clone();
    store.entry_mut(id).grad = Matrix::filled(3, 3, 0.7);
    for t in 1..=5 {
        Adam::with_lr(0.0).step(&mut store, t).unwrap();
    }
    assert_eq!(store.value(id), &before);
}

#[test]
fn content_and_relation_layers_pass_gradient_check() {
    let mut rng = Rng::new(2);
    let mut store = ParamStore::<f64>::new();
    let cflm = Cflm::register(&mut store, 12, 5, &mut rng).unwrap();
    let gfrm = Gfrm::register(&mut store, 4, 3, &mut rng).unwrap();
    let content = randn(3, 12, &mut rng);
    let (ri, rt) = (randn(3, 8, &mut rng), randn(3, 8, &mut rng));
    let f = |p: &mut ParamStore<f64>, with_grad: bool| {
        let mut g = Graph::new();
        let c = g.constant(content.clone());
        let (a, b) = (g.constant(ri.clone()), g.constant(rt.clone()));
        let y1 = cflm.forward(&mut g, p, c).unwrap();
        let y2 = gfrm.forward(&mut g, p, a, b).unwrap();
        let (s1, s2) = (g.sum(y1), g.sum(y2));
        let y2sq = g.mul(s2, s2).unwrap();
        let l = g.add(s1, y2sq).unwrap();
        let v = g.value(l).get(0, 0);
        if with_grad {
            g.backward(l, p).unwrap();
        }
        v
    };
    let report = finite_diff_check(f, &mut store, 200, 1e-5, &mut Rng::new(3));
    assert!(report.max_rel_error <= 1e-3, "{}", report.max_rel_error);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn synthetic_splits_are_balanced(n in 1usize..12, seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        let mut c = mmfuse::store::SynthConfig::new(n, 1.0, seed);
        c.schema = mmfuse::model::ModelConfig::tiny().schema;
        let s = mmfuse::store::synth_dataset(dir.path(), &c).unwrap();
        let train = (8 * n + 5) / 10;
        prop_assert_eq!(s.train_per_class, [train, train]);
        prop_assert_eq!(s.test_per_class, [n - train, n - train]);
    }
}
