//! Feature-generating networks for any-shot learning.
//!
//! A conditional VAE-GAN learns to synthesize feature vectors from class
//! embeddings; an extra unconditional critic lets unlabeled novel-class
//! features shape the generator in the transductive setting. Synthetic
//! features for sparsely labeled classes then train ordinary softmax
//! classifiers, evaluated under the zero-shot, generalized zero-shot,
//! few-shot and generalized few-shot protocols.
//!
//! Modules, bottom-up:
//! - [`autodiff`]: reverse-mode differentiation with double backprop
//! - [`models`]: encoder, generator and the two critics
//! - [`losses`]: WGAN-GP, VAE and combined objectives
//! - [`training`]: Adam and the alternating critic/generator schedule
//! - [`data`]: datasets, the on-disk format, rescaling, splits
//! - [`anyshot`]: feature synthesis, softmax classifiers and evaluation
//! - [`gradcheck`]: finite-difference verification of the loss gradients

pub mod anyshot;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod training;

pub use anyshot::{EvalConfig, EvalReport, Protocol, SoftmaxClassifier};
pub use autodiff::{Graph, ParamId, Parameter, Var};
pub use data::{Dataset, SplitSpec, SyntheticSpec};
pub use error::{AutodiffError, DataError, Error, Result};
pub use losses::LossWeights;
pub use models::{CriticNet, EncoderNet, FeatureModels, GeneratorNet, LatentSpec};
pub use tensor::Tensor;
pub use training::{Mode, TrainingConfig, Variant};
