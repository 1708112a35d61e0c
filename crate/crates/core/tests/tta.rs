mod common;

use mmfuse::model::{FusionModel, ModelConfig, ModelInput};
use mmfuse::store::Schema;
use mmfuse::tta::{augment_sample, seq_cosine, tta_predict, Aggregation, TtaConfig};
use mmfuse::{Matrix, ParamStore, Rng};

#[test]
fn accepted_copies_stay_in_band_and_share_content() {
    let schema = Schema::default();
    let cfg = TtaConfig::default();
    let mut rng = Rng::new(5);
    for i in 0..200 {
        let vt = rng.range_inclusive(1, 8);
        let vr = rng.range_inclusive(1, 8);
        let b = common::random_bundle(&schema, &format!("b{i}"), 0, vt, vr, &mut rng);
        let aug = augment_sample(&b, &cfg, &mut rng.split_index("tta", i)).expect("no skips on Gaussian bundles");
        assert_eq!(aug.copies.len(), 4);
        for c in &aug.copies {
            for s in c.similarities {
                assert!((0.6 - 1e-6..=0.7 + 1e-6).contains(&s), "{s}");
            }
            let cb = &c.bundle;
            assert_eq!(cb.tox, b.tox);
            assert_eq!(cb.nsfw, b.nsfw);
            assert_eq!(cb.cap, b.cap);
            assert_eq!(cb.geometry, b.geometry);
            assert_eq!(cb.raw_text, b.raw_text);
            // padding rows untouched
            assert!(cb.tokens.data()[vt * 768..].iter().all(|&x| x == 0.0));
            assert!(cb.regions.data()[vr * 1024..].iter().all(|&x| x == 0.0));
            let block = |m: &Matrix<f32>, n: usize| m.slice_rows(0, n).unwrap();
            let s = seq_cosine(&block(&b.tokens, vt), &block(&cb.tokens, vt)).unwrap();
            assert_eq!(s, c.similarities[0]);
        }
    }
}

#[test]
fn zero_tensor_signals_skip() {
    let schema = Schema::default();
    let mut rng = Rng::new(6);
    let mut b = common::random_bundle(&schema, "z", 1, 2, 2, &mut rng);
    b.pair_img = vec![0.0; 512];
    let skip = augment_sample(&b, &TtaConfig::default(), &mut rng).unwrap_err();
    assert_eq!(skip.tensor, "pair_img");
}

#[test]
fn augmentation_is_seed_deterministic() {
    let schema = Schema::default();
    let b = common::random_bundle(&schema, "d", 0, 3, 2, &mut Rng::new(7));
    let a1 = augment_sample(&b, &TtaConfig::default(), &mut Rng::new(8)).unwrap();
    let a2 = augment_sample(&b, &TtaConfig::default(), &mut Rng::new(8)).unwrap();
    assert_eq!(a1, a2);
}

#[test]
fn degenerate_config_reproduces_plain_inference() {
    let cfg = ModelConfig::tiny();
    let (bundles, _, graphs) = common::random_inputs(&cfg, 12, 0.2, 3);
    let mut params = ParamStore::<f32>::new();
    let model = FusionModel::register(&mut params, cfg, &mut Rng::new(4)).unwrap();
    let degenerate = TtaConfig {
        band_lo: -1.0,
        band_hi: 1.0,
        p0: Some(0.0),
        ..Default::default()
    };
    for (i, b) in bundles.iter().enumerate() {
        let plain = model.predict(&params, &ModelInput::from_bundle(b, 0.5, &graphs, None).unwrap()).unwrap();
        for aggregation in [Aggregation::MeanProb, Aggregation::Majority] {
            let c = TtaConfig { aggregation, ..degenerate.clone() };
            let t = tta_predict(&model, &params, b, 0.5, &graphs, &c, &mut Rng::new(i as u64)).unwrap();
            assert_eq!(t.members.len(), 5);
            assert_eq!(t.probability.to_bits(), plain.to_bits());
            assert_eq!(t.class, u8::from(plain >= 0.5));
        }
    }
}

#[test]
fn tta_predict_deterministic_and_records_members() {
    let cfg = ModelConfig::tiny();
    let (bundles, _, graphs) = common::random_inputs(&cfg, 6, 0.2, 9);
    let mut params = ParamStore::<f32>::new();
    let model = FusionModel::register(&mut params, cfg, &mut Rng::new(10)).unwrap();
    let c = TtaConfig::default();
    for b in &bundles {
        let a = tta_predict(&model, &params, b, 0.2, &graphs, &c, &mut Rng::new(1)).unwrap();
        let z = tta_predict(&model, &params, b, 0.2, &graphs, &c, &mut Rng::new(1)).unwrap();
        assert_eq!(a, z);
        assert_eq!(a.members.len(), 5);
        assert_eq!(a.similarities.len(), 4);
        let mean = a.members.iter().sum::<f64>() / 5.0;
        assert!((a.probability - mean).abs() < 1e-12);
    }
}
