//! Content-specific features: lexicon scoring and the learned content vector.

use crate::autodiff::{Graph, Var};
use crate::params::{ParamError, ParamId, ParamStore};
use crate::rng::Rng;
use crate::store::{FeatureBundle, Lexicon};
use crate::tensor::{Scalar, TensorError};

/// Lowercases and tokenizes `text` the way lexicon matching expects: URLs
/// and `@user` mentions are dropped, apostrophes are deleted, any other
/// non-alphanumeric character separates tokens.
pub fn msl_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase();
        if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.") || lower.starts_with('@') {
            continue;
        }
        let cleaned: String = lower
            .chars()
            .filter(|&c| c != '\'' && c != '’')
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
        out.extend(cleaned.split_whitespace().map(str::to_string));
    }
    out
}

/// Number of tokens (with multiplicity) that exactly match a lexicon term.
pub fn msl_score_raw(text: &str, lexicon: &Lexicon) -> usize {
    msl_tokens(text).iter().filter(|t| lexicon.contains(t)).count()
}

/// Min-max normalization clamped to [0, 1]; a degenerate range gives 0.
pub fn msl_normalize(count: f64, msl_min: f64, msl_max: f64) -> f32 {
    if msl_max <= msl_min {
        return 0.0;
    }
    ((count - msl_min) / (msl_max - msl_min)).clamp(0.0, 1.0) as f32
}

/// `tox ‖ nsfw ‖ msl ‖ cap`.
pub fn assemble_content(bundle: &FeatureBundle, msl: f32) -> Vec<f32> {
    let mut v = Vec::with_capacity(bundle.tox.len() + bundle.nsfw.len() + 1 + bundle.cap.len());
    v.extend_from_slice(&bundle.tox);
    v.extend_from_slice(&bundle.nsfw);
    v.push(msl);
    v.extend_from_slice(&bundle.cap);
    v
}

/// Single affine layer with ReLU mapping the content vector to `out_dim`.
#[derive(Debug, Clone, Copy)]
pub struct Cflm {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Cflm {
    pub fn register<T: Scalar>(store: &mut ParamStore<T>, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Result<Self, ParamError> {
        Ok(Self {
            w: store.add_weight("cflm.w", in_dim, out_dim, rng)?,
            b: store.add_bias("cflm.b", out_dim)?,
            in_dim,
            out_dim,
        })
    }

    pub fn bind<T: Scalar>(store: &ParamStore<T>, in_dim: usize, out_dim: usize) -> Result<Self, ParamError> {
        Ok(Self {
            w: store.id("cflm.w")?,
            b: store.id("cflm.b")?,
            in_dim,
            out_dim,
        })
    }

    /// `content` is `batch × in_dim`; returns `batch × out_dim`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, content: Var) -> Result<Var, TensorError> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let h = g.affine(content, w, b)?;
        Ok(g.relu(h))
    }
}
