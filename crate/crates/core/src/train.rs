//! Dataset assembly and the mini-batch training loop.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph};
use crate::cflm::{msl_normalize, msl_score_raw};
use crate::gfrm::GraphPair;
use crate::model::{FusionModel, ModelConfig, ModelError, ModelInput, Mode};
use crate::optim::{Adam, OptimError};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::store::{load_bundle, FeatureBundle, Lexicon, Manifest, Schema, Split, StoreError};
use crate::tensor::{Matrix, Scalar};

/// Probability clamp used by the loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("training manifest has no samples")]
    EmptyManifest,
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub dropout_p: f64,
    pub seed: u64,
    /// Cosine threshold for the similarity graphs.
    pub thr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr: 1e-4,
            epochs: 50,
            dropout_p: 0.3,
            seed: 0,
            thr: 0.85,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(TrainError::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if !(-1.0..=1.0).contains(&self.thr) {
            return Err(TrainError::Config(format!("graph threshold {} outside [-1, 1]", self.thr)));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Adam {
        Adam::with_lr(self.lr)
    }
}

/// Normalized lexicon score for `text` with the manifest's constants.
pub fn msl_for(text: &str, lexicon: &Lexicon, manifest: &Manifest) -> f32 {
    msl_normalize(msl_score_raw(text, lexicon) as f64, manifest.msl_min as f64, manifest.msl_max as f64)
}

/// Drops padded rows past both valid counts.
fn truncate(mut b: FeatureBundle) -> FeatureBundle {
    let n = b.valid_tokens.max(b.valid_regions);
    b.tokens = b.tokens.slice_rows(0, n).expect("n within seq_len");
    b.regions = b.regions.slice_rows(0, n).expect("n within seq_len");
    b.geometry = b.geometry.slice_rows(0, n).expect("n within seq_len");
    b
}

/// Training split in model-ready form plus the graphs built from it.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub manifest: Manifest,
    pub inputs: Vec<ModelInput>,
    pub graphs: GraphPair,
}

fn pair_matrix(bundles: &[FeatureBundle], f: fn(&FeatureBundle) -> &Vec<f32>, d: usize) -> Matrix<f32> {
    let data = bundles.iter().flat_map(|b| f(b).iter().copied()).collect();
    Matrix::from_vec(bundles.len(), d, data).expect("pair widths checked on load")
}

/// Loads `train.json` under `root`, builds both similarity graphs and the
/// per-sample inputs (graph nodes are the manifest order).
pub fn load_training_set(root: &Path, schema: &Schema, thr: f64, lexicon: &Lexicon) -> Result<TrainingSet, TrainError> {
    let manifest = Manifest::load(&root.join(Split::Train.file_name()))?;
    if manifest.samples.is_empty() {
        return Err(TrainError::EmptyManifest);
    }
    let bundles = manifest
        .samples
        .iter()
        .map(|e| load_bundle(root, e, schema).map(truncate))
        .collect::<Result<Vec<_>, _>>()?;
    let graphs = GraphPair::build(
        pair_matrix(&bundles, |b| &b.pair_img, schema.d_pair),
        pair_matrix(&bundles, |b| &b.pair_txt, schema.d_pair),
        thr,
    );
    let inputs = bundles
        .iter()
        .enumerate()
        .map(|(k, b)| ModelInput::from_bundle(b, msl_for(&b.raw_text, lexicon, &manifest), &graphs, Some(k)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TrainingSet { manifest, inputs, graphs })
}

/// Parameters after training and the mean loss of each epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar = f32> {
    pub model: FusionModel,
    pub params: ParamStore<T>,
    pub loss_log: Vec<f64>,
}

/// Registers a fresh model from `cfg.seed`.
pub fn init_model<T: Scalar>(model_cfg: ModelConfig, seed: u64) -> Result<(FusionModel, ParamStore<T>), TrainError> {
    let mut store = ParamStore::new();
    let model = FusionModel::register(&mut store, model_cfg, &mut Rng::new(seed).split("init"))?;
    Ok((model, store))
}

/// Mini-batch BCE training with Adam over every parameter. The final
/// partial batch is kept. Each epoch reshuffles with the seeded stream.
pub fn train<T: Scalar>(inputs: &[ModelInput], model_cfg: ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(TrainError::EmptyManifest);
    }
    let (model, mut params) = init_model::<T>(model_cfg, cfg.seed)?;
    let root = Rng::new(cfg.seed);
    let mut shuffle_rng = root.split("train.shuffle");
    let mut dropout_rng = root.split("train.dropout");
    let adam = cfg.optimizer();
    let mode = Mode::Train { dropout_p: cfg.dropout_p };
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut loss_log = Vec::with_capacity(cfg.epochs);
    let mut t = 0u64;
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut total = 0.0f64;
        let mut timing = [std::time::Duration::ZERO; 3];
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ModelInput> = chunk.iter().map(|&i| &inputs[i]).collect();
            let labels: Vec<T> = batch.iter().map(|x| T::of(x.label as f64)).collect();
            let clock = std::time::Instant::now();
            let mut g = Graph::new();
            let p = model.forward(&mut g, &params, &batch, mode, &mut dropout_rng)?;
            let loss = g.bce_mean(p, &labels, T::of(BCE_EPS)).map_err(ModelError::from)?;
            total += g.value(loss).get(0, 0).as_f64() * batch.len() as f64;
            timing[0] += clock.elapsed();
            g.backward(loss, &mut params)?;
            timing[1] += clock.elapsed();
            t += 1;
            adam.step(&mut params, t)?;
            timing[2] += clock.elapsed();
        }
        log::debug!(
            "epoch {}: forward {:.2?}, backward {:.2?}, step {:.2?}",
            epoch + 1,
            timing[0],
            timing[1] - timing[0],
            timing[2] - timing[1]
        );
        let mean = total / inputs.len() as f64;
        log::info!("epoch {}/{}: loss {:.6}", epoch + 1, cfg.epochs, mean);
        loss_log.push(mean);
    }
    Ok(TrainOutcome { model, params, loss_log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { dropout_p: 1.0, ..Default::default() },
            TrainConfig { lr: -1.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.batch_size, c.lr, c.dropout_p, c.thr), (128, 1e-4, 0.3, 0.85));
    }

    #[test]
    fn empty_inputs_rejected() {
        let r = train::<f32>(&[], ModelConfig::tiny(), &TrainConfig::default());
        assert!(matches!(r, Err(TrainError::EmptyManifest)));
    }
}
