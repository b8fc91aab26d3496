//! Mutual information machines and a matched VAE baseline.
//!
//! The crate is layered bottom-up: [`autodiff`] and [`distributions`] feed
//! [`model`] and [`objectives`], which [`training`] optimizes; [`estimators`]
//! score trained models and [`harness`] wires everything to configs and
//! result files. [`oracle`] holds exact finite-space references.

pub mod autodiff;
pub mod container;
pub mod data;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod model;
pub mod noise;
pub mod objectives;
pub mod oracle;
pub mod tensor;
pub mod training;

#[cfg(test)]
mod testutil;

pub use autodiff::{Gradients, Graph, Var};
pub use distributions::{DiagonalGaussian, FactorizedBernoulli, GaussianMixture};
pub use error::{Error, Result};
pub use model::{DecoderFamily, ModelConfig, ModelParams, ObjectiveKind};
pub use noise::NoiseSource;
pub use objectives::{LossValue, Objective};
pub use oracle::{DiscreteJoint, DiscreteModel};
pub use tensor::Tensor;
pub use training::{train, AdamState, TrainConfig, TrainOutcome};
pub use estimators::PairedSamples;
pub use data::{DatasetSplits, Split};
pub use harness::{ExperimentConfig, RunSpec, RunSummary};
