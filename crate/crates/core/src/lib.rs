//! Feed-forward networks with a closed-form ridge output layer, trained
//! against a loss that penalizes fitting permuted labels. Includes the
//! tabular preprocessing pipeline, bagged ensembles, and the benchmark
//! statistics used to compare methods across datasets.

pub mod autograd;
pub mod bench;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod model_io;
pub mod train;

pub use error::{Error, Result};
pub use matrix::{ridge_projector, spd_solve, Matrix, Real};
pub use model::{MlrConfig, TaskKind, TrainedModel};
