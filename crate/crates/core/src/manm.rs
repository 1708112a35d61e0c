//! Multimodal attention: context-aware region features, gated
//! cross-attention in both directions, per-modality multi-head
//! self-attention and masked pooling into the attended vector.
//!
//! A batch is a vertical stack of per-sample row blocks (see
//! [`SeqLayout`]). Row-wise maps (projections, gates) run once over the
//! whole stack; attention runs block by block. Sample `s` owns
//! `max(valid_tokens, valid_regions)` rows: positions past a modality's
//! valid count hold that modality's zero padding, and positions past both
//! counts are never materialised because every mask below excludes them.
//!
//! Cross-attention follows the query/key modality for its row and key
//! masks: the image-valued features `softmax(Q_t K_tᵀ / √d) V_i` have one
//! row per text position, the text-valued ones one row per region.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::params::{ParamError, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Reduce, Scalar, TensorError};
use crate::Modality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManmConfig {
    pub d_txt: usize,
    pub d_region_in: usize,
    pub d_geom: usize,
    /// Shared width of queries, keys and values; equals `d_txt`.
    pub d_model: usize,
    pub msan_dim: usize,
    pub msan_heads: usize,
    pub seq_len: usize,
    pub pooling: Reduce,
}

impl Default for ManmConfig {
    fn default() -> Self {
        Self {
            d_txt: 768,
            d_region_in: 1024,
            d_geom: 6,
            d_model: 768,
            msan_dim: 256,
            msan_heads: 4,
            seq_len: 100,
            pooling: Reduce::Max,
        }
    }
}

impl ManmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.msan_heads == 0 || !self.msan_dim.is_multiple_of(self.msan_heads) {
            return Err(format!("msan_dim {} not divisible by {} heads", self.msan_dim, self.msan_heads));
        }
        if self.d_model != self.d_txt {
            return Err(format!("d_model {} must equal d_txt {}", self.d_model, self.d_txt));
        }
        Ok(())
    }

    /// Width of the attended vector.
    pub fn out_dim(&self) -> usize {
        2 * self.msan_dim
    }
}

/// Which cross-attended feature is being produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossDirection {
    /// Text queries and keys over image values.
    ImageFeatures,
    /// Image queries and keys over text values.
    TextFeatures,
}

/// Row blocks of a stacked batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqLayout {
    pub offsets: Vec<usize>,
    pub lens: Vec<usize>,
    pub valid_txt: Vec<usize>,
    pub valid_img: Vec<usize>,
}

impl SeqLayout {
    /// One block of `max(t, r)` rows per `(valid_tokens, valid_regions)`.
    pub fn new(valid: &[(usize, usize)]) -> Self {
        let mut offsets = Vec::with_capacity(valid.len());
        let mut lens = Vec::with_capacity(valid.len());
        let mut off = 0;
        for &(t, r) in valid {
            assert!(t >= 1 && r >= 1, "every sample needs at least one token and one region");
            let n = t.max(r);
            offsets.push(off);
            lens.push(n);
            off += n;
        }
        Self {
            offsets,
            lens,
            valid_txt: valid.iter().map(|v| v.0).collect(),
            valid_img: valid.iter().map(|v| v.1).collect(),
        }
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    pub fn total_rows(&self) -> usize {
        self.lens.iter().sum()
    }

    /// Valid rows of the cross-attended features for `dir`.
    pub fn valid_for(&self, dir: CrossDirection) -> &[usize] {
        match dir {
            CrossDirection::ImageFeatures => &self.valid_txt,
            CrossDirection::TextFeatures => &self.valid_img,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QkvParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct GateParams {
    pub wqg: ParamId,
    pub bqg: ParamId,
    pub wkg: ParamId,
    pub bkg: ParamId,
    pub wqm: ParamId,
    pub bqm: ParamId,
    pub wkm: ParamId,
    pub bkm: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct MsanParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct Manm {
    pub cfg: ManmConfig,
    pub region_w: ParamId,
    pub region_b: ParamId,
    pub pos_w: ParamId,
    pub pos_b: ParamId,
    pub qkv_img: QkvParams,
    pub qkv_txt: QkvParams,
    pub gate_img: GateParams,
    pub gate_txt: GateParams,
    pub msan_img: MsanParams,
    pub msan_txt: MsanParams,
}

/// Parameter names and shapes, in registration order.
fn layout(cfg: &ManmConfig) -> Vec<(String, usize, usize, bool)> {
    let d = cfg.d_model;
    let h = cfg.msan_dim;
    let mut v = vec![
        ("manm.region.w".to_string(), cfg.d_region_in, d, true),
        ("manm.region.b".to_string(), 1, d, false),
        ("manm.pos.w".to_string(), cfg.d_geom, d, true),
        ("manm.pos.b".to_string(), 1, d, false),
    ];
    for m in ["img", "txt"] {
        for w in ["wq", "wk", "wv"] {
            v.push((format!("manm.{m}.{w}"), d, d, true));
        }
    }
    for m in ["img", "txt"] {
        for p in ["q", "k"] {
            v.push((format!("manm.gate_{m}.w{p}g"), d, d, true));
            v.push((format!("manm.gate_{m}.b{p}g"), 1, d, false));
        }
        for p in ["q", "k"] {
            v.push((format!("manm.gate_{m}.w{p}m"), d, d, true));
            v.push((format!("manm.gate_{m}.b{p}m"), 1, d, false));
        }
    }
    for m in ["img", "txt"] {
        for w in ["wq", "wk", "wv"] {
            v.push((format!("manm.msan_{m}.{w}"), d, h, true));
        }
        v.push((format!("manm.msan_{m}.wo"), h, h, true));
        v.push((format!("manm.msan_{m}.bo"), 1, h, false));
    }
    v
}

impl Manm {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, cfg: ManmConfig, rng: &mut Rng) -> Result<Self, ParamError> {
        for (name, r, c, is_weight) in layout(&cfg) {
            if is_weight {
                store.add_weight(&name, r, c, rng)?;
            } else {
                store.add_bias(&name, c)?;
            }
        }
        Self::bind(store, cfg)
    }

    /// Looks up already-registered parameters (e.g. from a checkpoint).
    pub fn bind<T: Scalar>(store: &ParamStore<T>, cfg: ManmConfig) -> Result<Self, ParamError> {
        for (name, r, c, _) in layout(&cfg) {
            let id = store.id(&name)?;
            let actual = store.value(id).shape();
            if actual != (r, c) {
                return Err(ParamError::Shape {
                    name,
                    expected: (r, c),
                    actual,
                });
            }
        }
        let id = |n: &str| store.id(n);
        let qkv = |m: &str| -> Result<QkvParams, ParamError> {
            Ok(QkvParams {
                wq: id(&format!("manm.{m}.wq"))?,
                wk: id(&format!("manm.{m}.wk"))?,
                wv: id(&format!("manm.{m}.wv"))?,
            })
        };
        let gate = |m: &str| -> Result<GateParams, ParamError> {
            let p = |s: &str| id(&format!("manm.gate_{m}.{s}"));
            Ok(GateParams {
                wqg: p("wqg")?,
                bqg: p("bqg")?,
                wkg: p("wkg")?,
                bkg: p("bkg")?,
                wqm: p("wqm")?,
                bqm: p("bqm")?,
                wkm: p("wkm")?,
                bkm: p("bkm")?,
            })
        };
        let msan = |m: &str| -> Result<MsanParams, ParamError> {
            let p = |s: &str| id(&format!("manm.msan_{m}.{s}"));
            Ok(MsanParams {
                wq: p("wq")?,
                wk: p("wk")?,
                wv: p("wv")?,
                wo: p("wo")?,
                bo: p("bo")?,
            })
        };
        Ok(Self {
            cfg,
            region_w: id("manm.region.w")?,
            region_b: id("manm.region.b")?,
            pos_w: id("manm.pos.w")?,
            pos_b: id("manm.pos.b")?,
            qkv_img: qkv("img")?,
            qkv_txt: qkv("txt")?,
            gate_img: gate("img")?,
            gate_txt: gate("txt")?,
            msan_img: msan("img")?,
            msan_txt: msan("txt")?,
        })
    }

    /// `regions · W_i + b_i`.
    pub fn project_regions<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, regions: Var) -> Result<Var, TensorError> {
        let w = g.param(store, self.region_w);
        let b = g.param(store, self.region_b);
        g.affine(regions, w, b)
    }

    /// `proj ⊙ σ(geometry · W_I + b_I)`.
    pub fn context_aware_regions<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, proj: Var, geometry: Var) -> Result<Var, TensorError> {
        let w = g.param(store, self.pos_w);
        let b = g.param(store, self.pos_b);
        let pre = g.affine(geometry, w, b)?;
        let pos = g.sigmoid(pre);
        g.mul(proj, pos)
    }

    /// Bias-free query, key and value maps of one modality.
    pub fn qkv<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, modality: Modality) -> Result<(Var, Var, Var), TensorError> {
        let p = match modality {
            Modality::Image => self.qkv_img,
            Modality::Text => self.qkv_txt,
        };
        let wq = g.param(store, p.wq);
        let wk = g.param(store, p.wk);
        let wv = g.param(store, p.wv);
        Ok((g.matmul(x, wq)?, g.matmul(x, wk)?, g.matmul(x, wv)?))
    }

    fn gate_params(&self, dir: CrossDirection) -> GateParams {
        match dir {
            CrossDirection::ImageFeatures => self.gate_img,
            CrossDirection::TextFeatures => self.gate_txt,
        }
    }

    /// Fusion `G = (Q W_QG + b_QG) ⊙ (K W_KG + b_KG)` and the masks
    /// `M_Q = σ(G W_QM + b_QM)`, `M_K = σ(G W_KM + b_KM)`.
    pub fn adaptive_gate<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, q: Var, k: Var, dir: CrossDirection) -> Result<(Var, Var), TensorError> {
        if g.shape(q) != g.shape(k) {
            return Err(TensorError::Shape {
                op: "adaptive_gate",
                left: g.shape(q),
                right: g.shape(k),
            });
        }
        let p = self.gate_params(dir);
        let lin = |x: Var, w: ParamId, b: ParamId, g: &mut Graph<T>| -> Result<Var, TensorError> {
            let w = g.param(store, w);
            let b = g.param(store, b);
            g.affine(x, w, b)
        };
        let qg = lin(q, p.wqg, p.bqg, g)?;
        let kg = lin(k, p.wkg, p.bkg, g)?;
        let fused = g.mul(qg, kg)?;
        let mq = lin(fused, p.wqm, p.bqm, g)?;
        let mk = lin(fused, p.wkm, p.bkm, g)?;
        Ok((g.sigmoid(mq), g.sigmoid(mk)))
    }

    /// Gated cross-attention for one direction.
    #[allow(clippy::too_many_arguments)]
    pub fn gated_cross_attention<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        q: Var,
        k: Var,
        v: Var,
        dir: CrossDirection,
        layout: &SeqLayout,
    ) -> Result<Var, TensorError> {
        let (mq, mk) = self.adaptive_gate(g, store, q, k, dir)?;
        let gq = g.mul(mq, q)?;
        let gk = g.mul(mk, k)?;
        cross_attention(g, gq, gk, v, layout, layout.valid_for(dir))
    }

    /// Multi-head self-attention over stacked rows; returns `rows × msan_dim`.
    pub fn msan<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, modality: Modality, layout: &SeqLayout, valid: &[usize]) -> Result<Var, TensorError> {
        let p = match modality {
            Modality::Image => self.msan_img,
            Modality::Text => self.msan_txt,
        };
        let wq = g.param(store, p.wq);
        let wk = g.param(store, p.wk);
        let wv = g.param(store, p.wv);
        let q = g.matmul(x, wq)?;
        let k = g.matmul(x, wk)?;
        let v = g.matmul(x, wv)?;
        let hd = self.cfg.msan_dim / self.cfg.msan_heads;
        let mut heads = Vec::with_capacity(self.cfg.msan_heads);
        for h in 0..self.cfg.msan_heads {
            let qh = g.slice_cols(q, h * hd, hd)?;
            let kh = g.slice_cols(k, h * hd, hd)?;
            let vh = g.slice_cols(v, h * hd, hd)?;
            heads.push(cross_attention(g, qh, kh, vh, layout, valid)?);
        }
        let cat = g.concat_cols(&heads)?;
        let wo = g.param(store, p.wo);
        let bo = g.param(store, p.bo);
        g.affine(cat, wo, bo)
    }

    /// Masked per-sample pooling of both streams, concatenated image then
    /// text: `batch × 2 * msan_dim`.
    pub fn pool_concat<T: Scalar>(&self, g: &mut Graph<T>, x_img: Var, x_txt: Var, layout: &SeqLayout) -> Result<Var, TensorError> {
        let mut rows = Vec::with_capacity(layout.batch());
        for s in 0..layout.batch() {
            let off = layout.offsets[s];
            let pi = g.pool_rows(x_img, off, layout.valid_for(CrossDirection::ImageFeatures)[s], self.cfg.pooling)?;
            let pt = g.pool_rows(x_txt, off, layout.valid_for(CrossDirection::TextFeatures)[s], self.cfg.pooling)?;
            rows.push(g.concat_cols(&[pi, pt])?);
        }
        g.concat_rows(&rows)
    }

    /// Full attention path on stacked inputs; returns `batch × 2 * msan_dim`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, tokens: Var, regions: Var, geometry: Var, layout: &SeqLayout) -> Result<Var, TensorError> {
        let proj = self.project_regions(g, store, regions)?;
        let img = self.context_aware_regions(g, store, proj, geometry)?;
        let (qi, ki, vi) = self.qkv(g, store, img, Modality::Image)?;
        let (qt, kt, vt) = self.qkv(g, store, tokens, Modality::Text)?;
        let x_img = self.gated_cross_attention(g, store, qt, kt, vi, CrossDirection::ImageFeatures, layout)?;
        let x_txt = self.gated_cross_attention(g, store, qi, ki, vt, CrossDirection::TextFeatures, layout)?;
        let s_img = self.msan(g, store, x_img, Modality::Image, layout, layout.valid_for(CrossDirection::ImageFeatures))?;
        let s_txt = self.msan(g, store, x_txt, Modality::Text, layout, layout.valid_for(CrossDirection::TextFeatures))?;
        self.pool_concat(g, s_img, s_txt, layout)
    }
}

/// Block-wise `softmax(Q Kᵀ / √d) V`, with keys past `key_valid[s]` masked.
#[allow(clippy::needless_range_loop)]
pub fn cross_attention<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var, layout: &SeqLayout, key_valid: &[usize]) -> Result<Var, TensorError> {
    let d = g.shape(k).1;
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut outs = Vec::with_capacity(layout.batch());
    for s in 0..layout.batch() {
        let (off, n) = (layout.offsets[s], layout.lens[s]);
        let qs = g.slice_rows(q, off, n)?;
        let ks = g.slice_rows(k, off, n)?;
        let vs = g.slice_rows(v, off, n)?;
        let scores = g.matmul_nt(qs, ks)?;
        let scores = g.scale(scores, scale);
        let mask: Vec<bool> = (0..n).map(|j| j < key_valid[s]).collect();
        let att = g.softmax_rows(scores, Some(&mask))?;
        outs.push(g.matmul(att, vs)?);
    }
    g.concat_rows(&outs)
}
