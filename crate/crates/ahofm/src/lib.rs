//! Additive models with factorized higher-order spline interactions.
//!
//! The model class combines a generalized additive model backbone (one
//! penalized B-spline smooth per feature) with interaction terms of degree
//! two and above. Instead of materializing tensor-product bases, each
//! interaction degree is represented through latent univariate smooths whose
//! products are combined by elementary symmetric polynomials. That keeps
//! evaluation and memory linear in the number of features while still
//! covering all feature subsets of a given size.
//!
//! Crate layout:
//!
//! * [`basis`] — per-feature B-spline bases and difference penalties
//! * [`factor`] — latent factor evaluation, symmetric-polynomial recursions,
//!   and the naive oracles used to validate them
//! * [`smoothing`] — degrees-of-freedom calibration of penalty weights
//! * [`trainer`] — penalized objective, gradients, Adam and block
//!   coordinate descent loops
//! * [`model`] — end-to-end fit/predict plus interpretability exports and
//!   (de)serialization
//! * [`data`], [`sim`], [`study`], [`scaling`] — CSV ingestion, synthetic
//!   data generation, the estimation-quality study, and the scaling
//!   benchmark harness
//!
//! The `parallel` feature (on by default) runs the data-parallel inner
//! loops on a rayon pool. Reductions are chunked in a fixed order, so
//! results are bit-identical with and without the feature.

pub mod basis;
pub mod data;
pub mod factor;
pub mod model;
mod par;
pub mod scaling;
pub mod sim;
pub mod smoothing;
pub mod study;
pub mod trainer;

pub use basis::{build_basis, difference_penalty, eval_design, PenaltyMatrix, SplineBasis};
pub use data::{ingest_csv, Dataset};
pub use factor::{FactorTensor, MainEffects};
pub use model::{fit, FitOutput, FittedModel, ModelConfig, ModelError, Predictions};
pub use trainer::{LossKind, OptimizerKind, TrainConfig};
