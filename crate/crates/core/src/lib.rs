//! Multimodal fusion and classification on precomputed feature files.
//!
//! The pipeline combines gated cross-modal attention over token and region
//! matrices ([`manm`]), graph-based reconstruction of paired embeddings
//! ([`gfrm`]), learned content features ([`cflm`]) and a fully connected
//! classifier head ([`model`]), trained with Adam on a small reverse-mode
//! autodiff core and evaluated with optional feature-space test-time
//! augmentation ([`tta`]).

pub mod autodiff;
pub mod cflm;
pub mod checkpoint;
pub mod eval;
pub mod gfrm;
pub mod gradcheck;
pub mod manm;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod store;
pub mod tensor;
pub mod train;
pub mod tta;

pub use autodiff::{Graph, Var};
pub use params::{ParamId, ParamStore};
pub use rng::Rng;
pub use tensor::{Matrix, Reduce, Scalar};

/// Input stream of a feature or layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}
