//! Mixture of adversarial multinomial pairs for categorical data.
//!
//! Each cluster models every feature as a two-way mixture: a sparse
//! "synchronization" distribution `alpha` that captures coordinated values
//! and a smooth "randomness" distribution `beta`. Regularized EM drives
//! `alpha` toward sparsity and prunes unused clusters; the fitted model then
//! supports outlier filtering, fraud-group scoring and per-row anomaly
//! scores.

pub mod data;
pub mod detect;
pub mod em;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod simplex;
pub mod synth;

pub use data::{
    encode, encode_with_vocab, load_csv, EncodedDataset, FeatureSchema, FeatureSpec, UNK,
};
pub use em::{e_step, fit, objective, FitResult, FitTrace, Responsibilities};
pub use error::{FirdError, Result};
pub use model::{init_params, FitConfig, InnerSolver, ModelFile, ModelParams, RegWeights};
