//! Desk-scale workbench for textual backdoor poisoning and the
//! noise-augmented contrastive defense: attack a text-classification
//! dataset, train a clean model from the untrusted data, and measure the
//! defense with clean accuracy and attack success rate.

pub mod attacks;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod label_correction;
pub mod linalg;
pub mod noise;
pub mod objectives;
pub mod onion;
pub mod pipeline;
pub mod plot;
pub mod scalar;
pub mod seed;
pub mod toygen;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar type for the training pipeline.
pub type Real = f64;
/// The pipeline's model type.
pub type RealModel = encoder::Model<Real>;
