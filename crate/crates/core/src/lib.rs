//! Unsupervised image classification over pretrained CNN features with a
//! Hopfield associative memory bank.
//!
//! Training groups labeled feature vectors by class and stores K-means
//! centers ("core patterns") in a [`MemoryBank`](corepatterns::MemoryBank).
//! Inference returns the label of the core pattern whose single-pattern
//! Hebbian weight matrix is closest to the test pattern's.
//!
//! - [`hopfield`]: Hebbian storage, sign dynamics, energy, weight-matrix distance
//! - [`corepatterns`]: K-means, binarization, bank construction
//! - [`classifier`]: classification, evaluation report, core-pattern sweeps
//! - [`datasetio`]: feature tables, splits, bank persistence
//! - [`cli`]: the `hopmem` command line

pub mod classifier;
pub mod cli;
pub mod corepatterns;
pub mod datasetio;
pub mod error;
pub mod hopfield;
pub mod rng;

pub use classifier::{
    classify, evaluate, sweep_core_patterns, ClassificationResult, EvalReport, SweepPoint,
};
pub use corepatterns::{build_bank, kmeans, CoreId, CorePattern, KMeans, KMeansParams, MemoryBank};
pub use datasetio::{
    load_bank, load_features, save_bank, save_features, split, FeatureTable, SplitSpec,
};
pub use error::{Error, Result};
pub use hopfield::{
    diff_fast, diff_naive, hebbian_store, recall, Mode, Pattern, RecallResult, WeightMatrix,
};
pub use rng::SplitMix64;
