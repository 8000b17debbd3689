//! Representation costs of ReLU networks with added linear layers.
//!
//! * [`linalg`]: dense SVD, Schatten quasi-norms and subspace distances.
//! * [`network`]: deep-linear-plus-ReLU networks, their collapse to two
//!   layers, the weight cost `C_L` and exact gradients.
//! * [`penalty`]: the rescaling-invariant penalty `Φ_L` on the end matrix
//!   `D_a W`, its closed form at `L = 2` and the bounds that sandwich it.
//! * [`analysis`]: gradient covariance estimates, spectra, mixed variation
//!   and active subspaces.
//! * [`experiment`]: the teacher-student training pipeline and run reports.
//! * [`cli`]: config files, CSV output and the `repcost` subcommands.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod network;
pub mod penalty;
pub mod rng;

pub use error::{Error, Result};
pub use linalg::{Matrix, Spectrum};
pub use network::{DeepNet, NetGradients, TwoLayerNet};
