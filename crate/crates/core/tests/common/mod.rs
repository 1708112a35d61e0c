#![allow(dead_code)]

use mmfuse::gfrm::GraphPair;
use mmfuse::model::{ModelConfig, ModelInput};
use mmfuse::store::{FeatureBundle, Schema};
use mmfuse::{Matrix, Rng};

pub fn gaussian(r: usize, c: usize, rng: &mut Rng) -> Matrix<f32> {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal() as f32).collect()).unwrap()
}

fn padded(valid: usize, len: usize, width: usize, rng: &mut Rng, f: impl Fn(&mut Rng) -> f32) -> Matrix<f32> {
    let mut m = Matrix::zeros(len, width);
    for v in &mut m.data_mut()[..valid * width] {
        *v = f(rng);
    }
    m
}

/// A schema-conformant bundle with Gaussian features.
pub fn random_bundle(schema: &Schema, id: &str, label: u8, vt: usize, vr: usize, rng: &mut Rng) -> FeatureBundle {
    let normal = |r: &mut Rng| r.normal() as f32;
    let unit = |r: &mut Rng| r.uniform(0.0, 1.0) as f32;
    let vec_of = |n: usize, rng: &mut Rng, f: &dyn Fn(&mut Rng) -> f32| (0..n).map(|_| f(rng)).collect::<Vec<f32>>();
    FeatureBundle {
        id: id.into(),
        tokens: padded(vt, schema.seq_len, schema.d_txt, rng, normal),
        regions: padded(vr, schema.seq_len, schema.d_region, rng, normal),
        geometry: padded(vr, schema.seq_len, schema.d_geom, rng, unit),
        pair_txt: vec_of(schema.d_pair, rng, &normal),
        pair_img: vec_of(schema.d_pair, rng, &normal),
        tox: vec_of(schema.d_tox, rng, &unit),
        nsfw: vec_of(schema.d_nsfw, rng, &unit),
        cap: vec_of(schema.d_cap, rng, &normal),
        raw_text: String::new(),
        label,
        valid_tokens: vt,
        valid_regions: vr,
    }
}

/// `n` random samples with alternating labels, their graphs built over
/// themselves at `thr`.
pub fn random_inputs(cfg: &ModelConfig, n: usize, thr: f64, seed: u64) -> (Vec<FeatureBundle>, Vec<ModelInput>, GraphPair) {
    let mut rng = Rng::new(seed);
    let s = &cfg.schema;
    let bundles: Vec<FeatureBundle> = (0..n)
        .map(|i| {
            let vt = rng.range_inclusive(1, s.seq_len.min(4));
            let vr = rng.range_inclusive(1, s.seq_len.min(4));
            random_bundle(s, &format!("s{i}"), (i % 2) as u8, vt, vr, &mut rng)
        })
        .collect();
    let stack = |f: fn(&FeatureBundle) -> &Vec<f32>| {
        Matrix::from_vec(n, s.d_pair, bundles.iter().flat_map(|b| f(b).iter().copied()).collect()).unwrap()
    };
    let graphs = GraphPair::build(stack(|b| &b.pair_img), stack(|b| &b.pair_txt), thr);
    let inputs = bundles
        .iter()
        .enumerate()
        .map(|(k, b)| ModelInput::from_bundle(b, rng.uniform(0.0, 1.0) as f32, &graphs, Some(k)).unwrap())
        .collect();
    (bundles, inputs, graphs)
}
