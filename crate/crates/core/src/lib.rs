//! Curvature-tunable activations and the loss-Hessian diagonal of small
//! fully-connected networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`activation`]: the RCT-AF family (`beta` in 0..=2) and baseline
//!   activations with overflow-safe first and second derivatives.
//! - [`network`]: scalar-output MLPs, forward traces and backpropagated deltas.
//! - [`hessian`]: exact Hessian diagonals of the squared loss through the
//!   D-recursion and the path expansion, plus finite-difference oracles.
//! - [`attacks`]: l-infinity FGSM / PGD and robust accuracy.
//! - [`data`], [`train`], [`sweep`]: synthetic datasets, SGD training and the
//!   curvature sweep harness.
//! - [`chart`]: deterministic SVG line charts for sweep results.
//!
//! Data-parallel loops go through [`par`], which falls back to sequential
//! iteration when the `parallel` feature is disabled.

pub mod activation;
pub mod attacks;
pub mod chart;
pub mod data;
pub mod error;
pub mod hessian;
pub mod network;
pub mod par;
pub mod sweep;
pub mod train;
pub mod verify;

pub use activation::{Activation, ActivationSpec, CurvatureBound, CurvatureProfile};
pub use attacks::AttackConfig;
pub use data::{Dataset, Generator};
pub use error::{Error, Result};
pub use hessian::{DTable, HessianDiagReport, Reduction};
pub use network::{Deltas, ForwardTrace, InitScheme, Network};
pub use sweep::{SweepConfig, SweepResult};
pub use train::{TrainConfig, TrainMode};
