//! Test-time augmentation: additive uniform noise in feature space, tuned
//! per tensor until the perturbed copy lands in a cosine band, and
//! aggregation of the predictions on the original plus its copies.
//!
//! Only the valid rows of token and region matrices are perturbed and
//! compared; padding stays zero. Geometry and content features are shared
//! with the original.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gfrm::GraphPair;
use crate::metrics::decide;
use crate::model::{FusionModel, ModelError, ModelInput};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::store::FeatureBundle;
use crate::tensor::{cosine_similarity, Matrix, Scalar, TensorError};

#[derive(Debug, Error)]
pub enum TtaError {
    #[error("invalid TTA config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    MeanProb,
    Majority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtaConfig {
    pub n_aug: usize,
    pub band_lo: f64,
    pub band_hi: f64,
    /// Starting noise half-range; `None` uses a tenth of the tensor's RMS.
    pub p0: Option<f64>,
    pub growth: f64,
    pub max_tries: usize,
    /// Ladder restarts before the sample is skipped.
    pub max_cycles: usize,
    pub aggregation: Aggregation,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            n_aug: 4,
            band_lo: 0.6,
            band_hi: 0.7,
            p0: None,
            growth: 1.5,
            max_tries: 64,
            max_cycles: 8,
            aggregation: Aggregation::MeanProb,
        }
    }
}

impl TtaConfig {
    pub fn validate(&self) -> Result<(), TtaError> {
        let bad = |m: String| Err(TtaError::Config(m));
        if self.n_aug == 0 {
            return bad("n_aug must be at least 1".into());
        }
        if !(-1.0 <= self.band_lo && self.band_lo <= self.band_hi && self.band_hi <= 1.0) {
            return bad(format!("band [{}, {}] must satisfy -1 <= lo <= hi <= 1", self.band_lo, self.band_hi));
        }
        if let Some(p) = self.p0 {
            if !(p >= 0.0 && p.is_finite()) {
                return bad(format!("p0 {p} must be finite and non-negative"));
            }
        }
        if !(self.growth > 1.0 && self.growth.is_finite()) {
            return bad(format!("growth {} must exceed 1", self.growth));
        }
        if self.max_tries == 0 || self.max_cycles == 0 {
            return bad("max_tries and max_cycles must be at least 1".into());
        }
        Ok(())
    }
}

/// `x + r` with every `r` entry drawn from `Uniform(-p, p)`.
pub fn rand_perturb(x: &Matrix<f32>, p: f64, rng: &mut Rng) -> Matrix<f32> {
    assert!(p >= 0.0, "perturbation half-range must be non-negative");
    if p == 0.0 {
        return x.clone();
    }
    let mut y = x.clone();
    for v in y.data_mut() {
        *v += rng.uniform(-p, p) as f32;
    }
    y
}

/// Cosine similarity of the row means of `a` and `b` (single-row inputs
/// are compared directly).
pub fn seq_cosine(a: &Matrix<f32>, b: &Matrix<f32>) -> Result<f64, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape {
            op: "seq_cosine",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(cosine_similarity(&row_mean(a), &row_mean(b)))
}

fn row_mean(m: &Matrix<f32>) -> Vec<f64> {
    let mut acc = vec![0.0f64; m.cols()];
    for r in 0..m.rows() {
        for (a, &x) in acc.iter_mut().zip(m.row(r)) {
            *a += x as f64;
        }
    }
    let n = m.rows().max(1) as f64;
    acc.iter().map(|a| a / n).collect()
}

fn rms(m: &Matrix<f32>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    (m.data().iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / m.len() as f64).sqrt()
}

/// Names of the perturbed tensors, in the order similarities are reported.
pub const PERTURBED: [&str; 4] = ["tokens", "regions", "pair_txt", "pair_img"];

/// One accepted copy and its achieved similarities (order of [`PERTURBED`]).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedCopy {
    pub bundle: FeatureBundle,
    pub similarities: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub original: FeatureBundle,
    pub copies: Vec<AugmentedCopy>,
}

/// Why a sample fell back to the original only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtaSkip {
    pub tensor: String,
    pub reason: String,
}

/// Searches a noise level whose copy lands inside the band. Too-similar
/// draws grow `p`, too-dissimilar draws shrink it; once both sides have
/// been seen the next `p` is their geometric midpoint.
fn search(x: &Matrix<f32>, cfg: &TtaConfig, rng: &mut Rng) -> Result<(Matrix<f32>, f64), String> {
    if row_mean(x).iter().all(|&v| v == 0.0) {
        return Err("zero-norm original; cosine undefined".into());
    }
    let p0 = cfg.p0.unwrap_or(0.1 * rms(x));
    for _ in 0..cfg.max_cycles {
        let mut p = p0;
        let mut too_close: Option<f64> = None;
        let mut too_far: Option<f64> = None;
        for _ in 0..cfg.max_tries {
            let y = rand_perturb(x, p, rng);
            let s = seq_cosine(x, &y).expect("same shape");
            if s >= cfg.band_lo && s <= cfg.band_hi {
                return Ok((y, s));
            }
            if s > cfg.band_hi {
                too_close = Some(too_close.map_or(p, |c: f64| c.max(p)));
            } else {
                too_far = Some(too_far.map_or(p, |f: f64| f.min(p)));
            }
            p = match (too_close, too_far) {
                (Some(c), Some(f)) => (c * f).sqrt(),
                (Some(_), None) => p * cfg.growth,
                (None, Some(_)) => p / cfg.growth,
                (None, None) => unreachable!(),
            };
        }
    }
    Err(format!("no draw inside [{}, {}] after {} cycles", cfg.band_lo, cfg.band_hi, cfg.max_cycles))
}

fn valid_block(m: &Matrix<f32>, rows: usize) -> Matrix<f32> {
    m.slice_rows(0, rows).expect("valid rows within matrix")
}

fn put_block(m: &mut Matrix<f32>, block: &Matrix<f32>) {
    m.data_mut()[..block.len()].copy_from_slice(block.data());
}

/// `n_aug` perturbed copies of `bundle`, each tensor inside the band.
pub fn augment_sample(bundle: &FeatureBundle, cfg: &TtaConfig, rng: &mut Rng) -> Result<AugmentedSample, TtaSkip> {
    let tensors = [
        valid_block(&bundle.tokens, bundle.valid_tokens),
        valid_block(&bundle.regions, bundle.valid_regions),
        Matrix::row_vector(bundle.pair_txt.clone()),
        Matrix::row_vector(bundle.pair_img.clone()),
    ];
    let mut copies = Vec::with_capacity(cfg.n_aug);
    for _ in 0..cfg.n_aug {
        let mut copy = bundle.clone();
        let mut sims = [0.0; 4];
        for (i, x) in tensors.iter().enumerate() {
            let (y, s) = search(x, cfg, rng).map_err(|reason| TtaSkip {
                tensor: PERTURBED[i].to_string(),
                reason,
            })?;
            sims[i] = s;
            match i {
                0 => put_block(&mut copy.tokens, &y),
                1 => put_block(&mut copy.regions, &y),
                2 => copy.pair_txt = y.into_vec(),
                _ => copy.pair_img = y.into_vec(),
            }
        }
        copies.push(AugmentedCopy { bundle: copy, similarities: sims });
    }
    Ok(AugmentedSample {
        original: bundle.clone(),
        copies,
    })
}

/// Aggregated prediction for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TtaPrediction {
    pub probability: f64,
    pub class: u8,
    /// Original first, then the copies.
    pub members: Vec<f64>,
    pub similarities: Vec<[f64; 4]>,
    pub skip: Option<TtaSkip>,
}

/// Mean written as `first + mean(deviation)` so identical members
/// reproduce the first one exactly.
pub fn mean_probability(members: &[f64]) -> f64 {
    let first = members[0];
    let dev: f64 = members.iter().map(|p| p - first).sum();
    first + dev / members.len() as f64
}

/// Class vote; ties go to the positive class.
pub fn majority_class(members: &[f64]) -> u8 {
    let pos = members.iter().filter(|&&p| decide(p) == 1).count();
    u8::from(2 * pos >= members.len())
}

pub fn aggregate(members: &[f64], how: Aggregation) -> (f64, u8) {
    let mean = mean_probability(members);
    match how {
        Aggregation::MeanProb => (mean, decide(mean)),
        Aggregation::Majority => (mean, majority_class(members)),
    }
}

/// Predicts on the original and its copies. Pair vectors are queried on
/// the graphs inductively, so perturbed copies get fresh neighbourhoods.
pub fn tta_predict<T: Scalar>(
    model: &FusionModel,
    params: &ParamStore<T>,
    bundle: &FeatureBundle,
    msl: f32,
    graphs: &GraphPair,
    cfg: &TtaConfig,
    rng: &mut Rng,
) -> Result<TtaPrediction, TtaError> {
    cfg.validate()?;
    let p_orig = model.predict(params, &ModelInput::from_bundle(bundle, msl, graphs, None)?)?;
    match augment_sample(bundle, cfg, rng) {
        Err(skip) => {
            log::warn!("sample `{}`: TTA skipped ({}: {})", bundle.id, skip.tensor, skip.reason);
            Ok(TtaPrediction {
                probability: p_orig,
                class: decide(p_orig),
                members: vec![p_orig],
                similarities: vec![],
                skip: Some(skip),
            })
        }
        Ok(aug) => {
            let mut members = vec![p_orig];
            for c in &aug.copies {
                members.push(model.predict(params, &ModelInput::from_bundle(&c.bundle, msl, graphs, None)?)?);
            }
            let (probability, class) = aggregate(&members, cfg.aggregation);
            Ok(TtaPrediction {
                probability,
                class,
                members,
                similarities: aug.copies.iter().map(|c| c.similarities).collect(),
                skip: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturb_zero_and_bounds() {
        let x = Matrix::from_rows(&[[1.0f32, -2.0, 3.0], [0.5, 0.0, 4.0]]);
        assert_eq!(rand_perturb(&x, 0.0, &mut Rng::new(1)), x);
        let y = rand_perturb(&x, 0.3, &mut Rng::new(1));
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 0.3 + 1e-6);
        }
        assert_eq!(y, rand_perturb(&x, 0.3, &mut Rng::new(1)));
    }

    #[test]
    fn seq_cosine_cases() {
        let a = Matrix::from_rows(&[[1.0f32, 0.0], [1.0, 0.0]]);
        let b = Matrix::from_rows(&[[0.0f32, 1.0], [0.0, 1.0]]);
        assert_eq!(seq_cosine(&a, &b).unwrap(), 0.0);
        assert!((seq_cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((seq_cosine(&a, &a.scale(-1.0)).unwrap() + 1.0).abs() < 1e-12);
        assert!(seq_cosine(&a, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let m = [0.6, 0.55, 0.65, 0.7, 0.5];
        let (p, c) = aggregate(&m, Aggregation::MeanProb);
        assert!((p - 0.6).abs() < 1e-12);
        assert_eq!(c, 1);
        let mut r = m;
        r.reverse();
        assert!((mean_probability(&r) - p).abs() < 1e-12);
        assert_eq!(mean_probability(&[0.3; 5]), 0.3);
        assert_eq!(majority_class(&[0.9, 0.1]), 1);
        assert_eq!(majority_class(&[0.9, 0.1, 0.2]), 0);
    }

    #[test]
    fn search_hits_band() {
        let mut rng = Rng::new(3);
        let x = Matrix::from_vec(3, 16, (0..48).map(|_| rng.normal() as f32).collect()).unwrap();
        let cfg = TtaConfig::default();
        for _ in 0..20 {
            let (y, s) = search(&x, &cfg, &mut rng).unwrap();
            assert!((0.6..=0.7).contains(&s));
            assert_eq!(seq_cosine(&x, &y).unwrap(), s);
        }
    }

    #[test]
    fn zero_tensor_skips() {
        let x = Matrix::zeros(2, 4);
        assert!(search(&x, &TtaConfig::default(), &mut Rng::new(0)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TtaConfig::default().validate().is_ok());
        let degenerate = TtaConfig {
            band_lo: -1.0,
            band_hi: 1.0,
            p0: Some(0.0),
            ..Default::default()
        };
        assert!(degenerate.validate().is_ok());
        assert!(TtaConfig { n_aug: 0, ..Default::default() }.validate().is_err());
        assert!(TtaConfig { band_lo: 0.8, band_hi: 0.7, ..Default::default() }.validate().is_err());
    }
}
