//! Core library of the FedS3A simulator: a deterministic implementation of
//! federated semi-supervised learning with semi-asynchronous updates,
//! staleness-tolerant distribution, group-based aggregation, adaptive
//! per-client learning rates and sparse-difference transport, together with
//! the data pipeline, metrics and the virtual-clock event loop that ties
//! them together.

pub mod adaptive;
pub mod aggregation;
pub mod config;
pub mod data;
pub mod error;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod protocol;
pub mod report;
pub mod seed;
pub mod ssl;
pub mod transport;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{LayerKind, LayerShape, ModelSpec, ParamVector, VersionedModel};
pub use nn::{forward, loss_and_grad, DropoutMode, OptimizerKind, OptimizerState};
