//! The fused classifier: attended ‖ relation ‖ content vectors feeding a
//! three-layer ReLU head with dropout and a sigmoid output.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Var};
use crate::cflm::{assemble_content, Cflm};
use crate::gfrm::{GfrmError, Gfrm, GraphPair, GraphQuery};
use crate::manm::{Manm, ManmConfig, SeqLayout};
use crate::params::{ParamError, ParamId, ParamStore};
use crate::rng::Rng;
use crate::store::{FeatureBundle, Schema};
use crate::tensor::{Matrix, Scalar, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Graph(#[from] GfrmError),
    #[error("{what}: expected length {expected}, got {actual}")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub schema: Schema,
    pub manm: ManmConfig,
    pub relation_dim: usize,
    pub content_out: usize,
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            schema: Schema::default(),
            manm: ManmConfig::default(),
            relation_dim: 256,
            content_out: 256,
            hidden: vec![1024, 512, 256],
        }
    }
}

impl ModelConfig {
    /// Small widths for fast tests; same topology as the default.
    pub fn tiny() -> Self {
        let schema = Schema {
            seq_len: 6,
            d_txt: 8,
            d_region: 10,
            d_geom: 6,
            d_pair: 6,
            d_tox: 6,
            d_nsfw: 5,
            d_cap: 4,
        };
        Self {
            schema,
            manm: ManmConfig {
                d_txt: 8,
                d_region_in: 10,
                d_geom: 6,
                d_model: 8,
                msan_dim: 4,
                msan_heads: 2,
                seq_len: 6,
                pooling: crate::Reduce::Max,
            },
            relation_dim: 3,
            content_out: 5,
            hidden: vec![7, 6, 5],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.manm.validate().map_err(ModelError::Config)?;
        let s = &self.schema;
        let m = &self.manm;
        if m.d_txt != s.d_txt || m.d_region_in != s.d_region || m.d_geom != s.d_geom || m.seq_len != s.seq_len {
            return Err(ModelError::Config("attention widths disagree with the feature schema".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(ModelError::Config("head needs at least one non-empty hidden layer".into()));
        }
        Ok(())
    }

    pub fn attended_dim(&self) -> usize {
        self.manm.out_dim()
    }

    pub fn relation_out(&self) -> usize {
        2 * self.relation_dim
    }

    pub fn joint_dim(&self) -> usize {
        self.attended_dim() + self.relation_out() + self.content_out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone)]
pub struct Head {
    pub hidden: Vec<Dense>,
    pub out: Dense,
}

/// Whether dropout is active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Train { dropout_p: f64 },
    Infer,
}

/// One sample in model-ready form. Sequence matrices keep only the first
/// `max(valid_tokens, valid_regions)` rows of the padded bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub id: String,
    pub label: u8,
    pub tokens: Matrix<f32>,
    pub regions: Matrix<f32>,
    pub geometry: Matrix<f32>,
    pub valid_tokens: usize,
    pub valid_regions: usize,
    pub rel_img: Vec<f32>,
    pub rel_txt: Vec<f32>,
    pub content: Vec<f32>,
}

impl ModelInput {
    /// `msl` is the normalized lexicon score; `graph_node` locates a
    /// training sample on the graphs, otherwise the pair vectors are
    /// queried inductively.
    pub fn from_bundle(bundle: &FeatureBundle, msl: f32, graphs: &GraphPair, graph_node: Option<usize>) -> Result<Self, ModelError> {
        let n = bundle.valid_tokens.max(bundle.valid_regions);
        let (qi, qt) = match graph_node {
            Some(k) => (GraphQuery::Node(k), GraphQuery::Node(k)),
            None => (GraphQuery::External(&bundle.pair_img), GraphQuery::External(&bundle.pair_txt)),
        };
        Ok(Self {
            id: bundle.id.clone(),
            label: bundle.label,
            tokens: bundle.tokens.slice_rows(0, n)?,
            regions: bundle.regions.slice_rows(0, n)?,
            geometry: bundle.geometry.slice_rows(0, n)?,
            valid_tokens: bundle.valid_tokens,
            valid_regions: bundle.valid_regions,
            rel_img: graphs.image.relation_input(qi)?,
            rel_txt: graphs.text.relation_input(qt)?,
            content: assemble_content(bundle, msl),
        })
    }
}

/// All trainable modules.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub cfg: ModelConfig,
    pub manm: Manm,
    pub gfrm: Gfrm,
    pub cflm: Cflm,
    pub head: Head,
}

fn head_names(i: usize) -> (String, String) {
    (format!("head.{i}.w"), format!("head.{i}.b"))
}

impl FusionModel {
    /// Registers every parameter with seeded uniform weights and zero biases.
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, cfg: ModelConfig, rng: &mut Rng) -> Result<Self, ModelError> {
        cfg.validate()?;
        Manm::register(store, cfg.manm, &mut rng.split("init.manm"))?;
        Gfrm::register(store, cfg.schema.d_pair, cfg.relation_dim, &mut rng.split("init.gfrm"))?;
        Cflm::register(store, cfg.schema.content_dim(), cfg.content_out, &mut rng.split("init.cflm"))?;
        let mut head_rng = rng.split("init.head");
        let mut widths = vec![cfg.joint_dim()];
        widths.extend(&cfg.hidden);
        widths.push(1);
        for i in 0..widths.len() - 1 {
            let (w, b) = head_names(i);
            store.add_weight(&w, widths[i], widths[i + 1], &mut head_rng)?;
            store.add_bias(&b, widths[i + 1])?;
        }
        Self::bind(store, cfg)
    }

    /// Resolves parameters already present in `store`, checking shapes.
    pub fn bind<T: Scalar>(store: &ParamStore<T>, cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let manm = Manm::bind(store, cfg.manm)?;
        let pd = cfg.schema.d_pair;
        let mut expected: Vec<(String, (usize, usize))> = vec![
            ("gfrm.img.w".into(), (2 * pd, cfg.relation_dim)),
            ("gfrm.img.b".into(), (1, cfg.relation_dim)),
            ("gfrm.txt.w".into(), (2 * pd, cfg.relation_dim)),
            ("gfrm.txt.b".into(), (1, cfg.relation_dim)),
            ("cflm.w".into(), (cfg.schema.content_dim(), cfg.content_out)),
            ("cflm.b".into(), (1, cfg.content_out)),
        ];
        let mut widths = vec![cfg.joint_dim()];
        widths.extend(&cfg.hidden);
        widths.push(1);
        for i in 0..widths.len() - 1 {
            let (w, b) = head_names(i);
            expected.push((w, (widths[i], widths[i + 1])));
            expected.push((b, (1, widths[i + 1])));
        }
        for (name, shape) in &expected {
            let actual = store.value(store.id(name)?).shape();
            if actual != *shape {
                return Err(ParamError::Shape {
                    name: name.clone(),
                    expected: *shape,
                    actual,
                }
                .into());
            }
        }
        let gfrm = Gfrm::bind(store, pd, cfg.relation_dim)?;
        let cflm = Cflm::bind(store, cfg.schema.content_dim(), cfg.content_out)?;
        let mut layers = Vec::new();
        for i in 0..widths.len() - 1 {
            let (w, b) = head_names(i);
            layers.push(Dense {
                w: store.id(&w)?,
                b: store.id(&b)?,
            });
        }
        let out = layers.pop().expect("at least one layer");
        Ok(Self {
            cfg,
            manm,
            gfrm,
            cflm,
            head: Head { hidden: layers, out },
        })
    }

    /// Head on a `batch × joint_dim` input; returns `batch × 1` probabilities.
    pub fn head_graph<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, joint: Var, mode: Mode, rng: &mut Rng) -> Result<Var, ModelError> {
        let mut h = joint;
        for layer in &self.head.hidden {
            let w = g.param(store, layer.w);
            let b = g.param(store, layer.b);
            let a = g.affine(h, w, b)?;
            h = g.relu(a);
            if let Mode::Train { dropout_p } = mode {
                if dropout_p > 0.0 {
                    let (r, c) = g.shape(h);
                    let keep = 1.0 - dropout_p;
                    let scale = T::of(1.0 / keep);
                    let mask: Vec<T> = (0..r * c).map(|_| if rng.bernoulli(keep) { scale } else { T::zero() }).collect();
                    h = g.mul_const(h, Matrix::from_vec(r, c, mask)?)?;
                }
            }
        }
        let w = g.param(store, self.head.out.w);
        let b = g.param(store, self.head.out.b);
        let logit = g.affine(h, w, b)?;
        Ok(g.sigmoid(logit))
    }

    /// Full forward pass on a batch; returns the `batch × 1` probability node.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, batch: &[&ModelInput], mode: Mode, rng: &mut Rng) -> Result<Var, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let s = &self.cfg.schema;
        for x in batch {
            check_len("relation input (image)", 2 * s.d_pair, x.rel_img.len())?;
            check_len("relation input (text)", 2 * s.d_pair, x.rel_txt.len())?;
            check_len("content", s.content_dim(), x.content.len())?;
        }
        let layout = SeqLayout::new(&batch.iter().map(|x| (x.valid_tokens, x.valid_regions)).collect::<Vec<_>>());
        let stack = |f: fn(&ModelInput) -> &Matrix<f32>| -> Result<Matrix<T>, TensorError> {
            let parts: Vec<&Matrix<f32>> = batch.iter().map(|x| f(x)).collect();
            Ok(Matrix::concat_rows(&parts)?.cast())
        };
        let tokens = g.constant(stack(|x| &x.tokens)?);
        let regions = g.constant(stack(|x| &x.regions)?);
        let geometry = g.constant(stack(|x| &x.geometry)?);
        let rows = |f: fn(&ModelInput) -> &Vec<f32>, w: usize| -> Matrix<T> {
            let data = batch.iter().flat_map(|x| f(x).iter().map(|&v| T::of(v as f64))).collect();
            Matrix::from_vec(batch.len(), w, data).expect("lengths checked")
        };
        let rel_img = g.constant(rows(|x| &x.rel_img, 2 * s.d_pair));
        let rel_txt = g.constant(rows(|x| &x.rel_txt, 2 * s.d_pair));
        let content = g.constant(rows(|x| &x.content, s.content_dim()));

        let attended = self.manm.forward(g, store, tokens, regions, geometry, &layout)?;
        let relation = self.gfrm.forward(g, store, rel_img, rel_txt)?;
        let content = self.cflm.forward(g, store, content)?;
        let joint = g.concat_cols(&[attended, relation, content])?;
        self.head_graph(g, store, joint, mode, rng)
    }

    /// Inference probability for one sample.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, input: &ModelInput) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let p = self.forward(&mut g, store, &[input], Mode::Infer, &mut Rng::new(0))?;
        Ok(g.value(p).get(0, 0).as_f64())
    }
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<(), ModelError> {
    if expected != actual {
        return Err(ModelError::Length { what, expected, actual });
    }
    Ok(())
}

/// `attended ‖ relation ‖ content`.
pub fn fuse_joint<T: Copy>(attended: &[T], relation: &[T], content: &[T], cfg: &ModelConfig) -> Result<Vec<T>, ModelError> {
    check_len("attended vector", cfg.attended_dim(), attended.len())?;
    check_len("relation vector", cfg.relation_out(), relation.len())?;
    check_len("content vector", cfg.content_out, content.len())?;
    let mut v = Vec::with_capacity(cfg.joint_dim());
    v.extend_from_slice(attended);
    v.extend_from_slice(relation);
    v.extend_from_slice(content);
    Ok(v)
}

/// Head probability for a single joint vector.
pub fn head_forward<T: Scalar>(model: &FusionModel, store: &ParamStore<T>, joint: &[T], mode: Mode, rng: &mut Rng) -> Result<T, ModelError> {
    check_len("joint vector", model.cfg.joint_dim(), joint.len())?;
    let mut g = Graph::new();
    let x = g.constant(Matrix::row_vector(joint.to_vec()));
    let p = model.head_graph(&mut g, store, x, mode, rng)?;
    Ok(g.value(p).get(0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dimensions() {
        let c = ModelConfig::default();
        assert_eq!(c.attended_dim(), 512);
        assert_eq!(c.relation_out(), 512);
        assert_eq!(c.content_out, 256);
        assert_eq!(c.joint_dim(), 1280);
        assert_eq!(c.hidden, vec![1024, 512, 256]);
        assert!(c.validate().is_ok());
        assert!(ModelConfig::tiny().validate().is_ok());
    }

    #[test]
    fn fuse_layout_and_errors() {
        let c = ModelConfig::default();
        let j = fuse_joint(&[1.0f32; 512], &[2.0; 512], &[0.0; 256], &c).unwrap();
        assert_eq!(j.len(), 1280);
        assert!(j[1024..].iter().all(|&x| x == 0.0));
        assert_eq!(j[511], 1.0);
        assert_eq!(j[512], 2.0);
        assert!(fuse_joint(&[1.0f32; 511], &[2.0; 512], &[0.0; 256], &c).is_err());
    }

    #[test]
    fn head_zero_weights_half() {
        let mut store = ParamStore::<f64>::new();
        let m = FusionModel::register(&mut store, ModelConfig::tiny(), &mut Rng::new(1)).unwrap();
        let ids: Vec<ParamId> = m.head.hidden.iter().chain([&m.head.out]).map(|d| d.w).collect();
        for id in ids {
            let (r, c) = store.value(id).shape();
            store.set_value(id, Matrix::zeros(r, c)).unwrap();
        }
        let joint = vec![0.3; m.cfg.joint_dim()];
        let p = head_forward(&m, &store, &joint, Mode::Infer, &mut Rng::new(0)).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn dropout_zero_matches_infer_and_infer_is_repeatable() {
        let mut store = ParamStore::<f64>::new();
        let m = FusionModel::register(&mut store, ModelConfig::tiny(), &mut Rng::new(2)).unwrap();
        let joint: Vec<f64> = (0..m.cfg.joint_dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = head_forward(&m, &store, &joint, Mode::Infer, &mut Rng::new(0)).unwrap();
        let b = head_forward(&m, &store, &joint, Mode::Infer, &mut Rng::new(9)).unwrap();
        let c = head_forward(&m, &store, &joint, Mode::Train { dropout_p: 0.0 }, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn bind_rejects_wrong_shape() {
        let mut store = ParamStore::<f32>::new();
        let m = FusionModel::register(&mut store, ModelConfig::tiny(), &mut Rng::new(3)).unwrap();
        let mut other = ModelConfig::tiny();
        other.content_out = 6;
        assert!(FusionModel::bind(&store, other).is_err());
        assert!(FusionModel::bind(&store, m.cfg.clone()).is_ok());
    }
}
