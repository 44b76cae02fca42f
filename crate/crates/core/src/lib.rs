//! Deterministic single-process simulator for element-level personalized
//! federated learning.
//!
//! Each round, clients train locally, estimate a diagonal Laplace posterior
//! from the empirical Fisher, and the server moment-matches those posteriors
//! into a global Gaussian. The elements with the largest global variance stay
//! personal to each client; all others are overwritten by the global mean.
//! FedAvg, FedPer and LG-FedAvg run through the same merge path with fixed
//! masks.

pub mod aggregation;
pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod harness;
pub mod laplace;
pub mod masking;
pub mod nn;
pub mod tensor;

pub use aggregation::{aggregate, default_weights, ClientWeight};
pub use config::{parse_config, FederationConfig};
pub use data::{Dataset, PartitionPlan};
pub use error::{Error, Result};
pub use federation::{ClientState, Method, RoundRecord};
pub use laplace::{DiagCurvature, DiagGaussian};
pub use masking::{merge, select_mask, Mask};
pub use nn::{Batch, NetworkSpec};
pub use tensor::{LayerTag, ParamSet, Tensor};
