//! Per-sample evaluation on a test manifest, with optional TTA.
//!
//! Samples are predicted one at a time, so a prediction never depends on
//! which other samples share its batch.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gfrm::GraphPair;
use crate::metrics::{decide, MetricsReport};
use crate::model::{FusionModel, ModelError, ModelInput};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::store::{load_bundle, Lexicon, Manifest, Schema, Split, StoreError};
use crate::train::msl_for;
use crate::tta::{tta_predict, TtaConfig, TtaError, TtaSkip};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tta(#[from] TtaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub id: String,
    pub label: u8,
    pub probability: f64,
    pub class: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub members: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarities: Option<Vec<[f64; 4]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tta_skip: Option<TtaSkip>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: MetricsReport,
    pub tta: Option<TtaConfig>,
    pub tta_skipped: usize,
    pub predictions: Vec<SamplePrediction>,
}

/// Evaluates `manifest` (rooted at `root`) against graphs built from the
/// training split. TTA draws come from `seed` split per sample index.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    model: &FusionModel,
    params: &ParamStore<f32>,
    root: &Path,
    manifest: &Manifest,
    schema: &Schema,
    lexicon: &Lexicon,
    graphs: &GraphPair,
    tta: Option<&TtaConfig>,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if let Some(cfg) = tta {
        cfg.validate()?;
    }
    let root_rng = Rng::new(seed).split("eval.tta");
    let mut predictions = Vec::with_capacity(manifest.samples.len());
    let mut skipped = 0;
    for (i, entry) in manifest.samples.iter().enumerate() {
        let bundle = load_bundle(root, entry, schema)?;
        let msl = msl_for(&bundle.raw_text, lexicon, manifest);
        let pred = match tta {
            None => {
                let p = model.predict(params, &ModelInput::from_bundle(&bundle, msl, graphs, None)?)?;
                SamplePrediction {
                    id: bundle.id.clone(),
                    label: bundle.label,
                    probability: p,
                    class: decide(p),
                    members: None,
                    similarities: None,
                    tta_skip: None,
                }
            }
            Some(cfg) => {
                let mut rng = root_rng.split_index("sample", i as u64);
                let t = tta_predict(model, params, &bundle, msl, graphs, cfg, &mut rng)?;
                if t.skip.is_some() {
                    skipped += 1;
                }
                SamplePrediction {
                    id: bundle.id.clone(),
                    label: bundle.label,
                    probability: t.probability,
                    class: t.class,
                    members: Some(t.members),
                    similarities: Some(t.similarities),
                    tta_skip: t.skip,
                }
            }
        };
        predictions.push(pred);
    }
    let classes: Vec<u8> = predictions.iter().map(|p| p.class).collect();
    let labels: Vec<u8> = predictions.iter().map(|p| p.label).collect();
    Ok(EvalReport {
        metrics: MetricsReport::compute(&classes, &labels),
        tta: tta.cloned(),
        tta_skipped: skipped,
        predictions,
    })
}

/// Loads the test manifest under `root`.
pub fn load_test_manifest(root: &Path) -> Result<Manifest, StoreError> {
    Manifest::load(&root.join(Split::Test.file_name()))
}
