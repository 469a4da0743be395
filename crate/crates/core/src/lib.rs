//! Edge-assisted U-shaped split federated learning.
//!
//! The crate trains small real networks across simulated clients, edge
//! servers and a central server, and measures what that costs:
//!
//! - [`nn`]: tensors, layers and exact reverse-mode gradients.
//! - [`split`]: cutting a network into front/middle/rear parts and merging
//!   them back, plus per-part parameter, FLOP and smashed-data accounting.
//! - [`labeldp`]: Laplace noise on one-hot labels and an empirical ε-DP audit.
//! - [`aggregation`]: FedAvg, FedProx, Scaffold, FedNova, FedDC and the
//!   two-tier edge/central mean.
//! - [`sim`]: the discrete-event protocol simulator for FL, EFL, SFL, USFL,
//!   ESFL and EUSFL.
//! - [`cost`]: closed-form epoch times and the reference result tables.
//! - [`attack`]: gradient-based label inference and its success rate under noise.
//! - [`data`]: synthetic blobs and the IDX (MNIST) file format.

pub mod aggregation;
pub mod attack;
pub mod cost;
pub mod data;
pub mod error;
pub mod labeldp;
pub mod nn;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod split;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
