mod common;

use mmfuse::autodiff::Graph;
use mmfuse::manm::SeqLayout;
use mmfuse::model::{fuse_joint, FusionModel, ModelConfig, ModelInput, Mode};
use mmfuse::store::Schema;
use mmfuse::{Matrix, ParamStore, Rng};

#[test]
fn module_outputs_have_full_widths() {
    let cfg = ModelConfig::default();
    let mut store = ParamStore::<f32>::new();
    let model = FusionModel::register(&mut store, cfg.clone(), &mut Rng::new(1)).unwrap();
    let (_, inputs, _) = common::random_inputs(&cfg, 2, 0.5, 2);
    let x = &inputs[0];
    let mut g = Graph::new();
    let layout = SeqLayout::new(&[(x.valid_tokens, x.valid_regions)]);
    let (t, r, geo) = (g.constant(x.tokens.clone()), g.constant(x.regions.clone()), g.constant(x.geometry.clone()));
    let attended = model.manm.forward(&mut g, &store, t, r, geo, &layout).unwrap();
    let (ri, rt) = (g.constant(Matrix::row_vector(x.rel_img.clone())), g.constant(Matrix::row_vector(x.rel_txt.clone())));
    let relation = model.gfrm.forward(&mut g, &store, ri, rt).unwrap();
    let c = g.constant(Matrix::row_vector(x.content.clone()));
    let content = model.cflm.forward(&mut g, &store, c).unwrap();
    assert_eq!(g.shape(attended), (1, 512));
    assert_eq!(g.shape(relation), (1, 512));
    assert_eq!(g.shape(content), (1, 256));
    assert_eq!(x.content.len(), 524);
    assert_eq!(x.rel_img.len(), 1024);
    let joint = fuse_joint(g.value(attended).data(), g.value(relation).data(), g.value(content).data(), &cfg).unwrap();
    assert_eq!(joint.len(), 1280);

    let widths: Vec<(usize, usize)> = model.head.hidden.iter().chain([&model.head.out]).map(|d| store.value(d.w).shape()).collect();
    assert_eq!(widths, vec![(1280, 1024), (1024, 512), (512, 256), (256, 1)]);

    let batch: Vec<&ModelInput> = inputs.iter().collect();
    let p = model.forward(&mut g, &store, &batch, Mode::Infer, &mut Rng::new(0)).unwrap();
    assert_eq!(g.shape(p), (2, 1));
    assert!(g.value(p).data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn schema_defaults() {
    let s = Schema::default();
    assert_eq!((s.seq_len, s.d_txt, s.d_region, s.d_geom, s.d_pair), (100, 768, 1024, 6, 512));
    assert_eq!((s.d_tox, s.d_nsfw, s.d_cap, s.content_dim()), (6, 5, 512, 524));
}
