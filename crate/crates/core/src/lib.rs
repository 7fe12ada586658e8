//! Two-layer Leaky-ReLU networks on linearly separable data.
//!
//! The network is `N(x) = v * sum_i s(w_i . x) - v * sum_i s(u_i . x)` with
//! `s(z) = max(z, alpha z)`. Only the first layer is trained. The crate covers
//! training with cross-entropy SGD or full-batch GD, the clustering geometry of
//! the learned neurons, agreement-regime detection, and the max-margin program
//! whose solution predicts the directions the neurons converge to.

pub mod datagen;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod network;
pub mod regimes;
pub mod rng;
pub mod svm;
pub mod trace;
pub mod training;

pub use datagen::Dataset;
pub use error::{Error, Result};
pub use geometry::ClusterReport;
pub use network::{ActivationConfig, Label, LabeledPoint, NetworkParams};
pub use regimes::{NarSpec, RegimeReport};
pub use svm::{SolverOptions, SvmSolution};
pub use trace::{Checkpoint, TrainTrace};
pub use training::{TrainConfig, TrainMode};
