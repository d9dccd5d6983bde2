//! Multi-subject fMRI encoding models over precomputed stimulus features.
//!
//! The crate is `no_std` (with `alloc`): it holds the numerical core only.
//! Reading and writing datasets, checkpoints and reports lives in the `aenc`
//! crate.
//!
//! - [`data`]: episodes, splits, train-split z-scoring and training windows.
//! - [`encoder`]: per-backbone projection, depthwise temporal convolution and
//!   group + subject-residual prediction heads.
//! - [`trainer`]: MSE loss, analytic gradients, AdamW and early stopping.
//! - [`metrics`]: per-parcel Pearson scoring and nested aggregation.
//! - [`ensemble`]: random sweeps, per-parcel top-k selection and averaging.
//! - [`ceilings`]: split-half and cross-subject performance ceilings.
//! - [`synth`]: planted-parameter synthetic datasets for verification.

#![no_std]

extern crate alloc;

pub mod ceilings;
pub mod conv;
pub mod data;
pub mod encoder;
pub mod ensemble;
mod error;
pub mod matrix;
pub mod metrics;
pub mod params;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use conv::KernelType;
pub use data::{Backbone, Dataset, Episode, EpisodeId, SplitSpec, Window};
pub use encoder::{EncoderConfig, EncoderParams, FittedEncoder, HeadMode};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use metrics::{ParcelScores, Predictor};
pub use params::ParamBlocks;
pub use trainer::{TrainConfig, TrainLog};
