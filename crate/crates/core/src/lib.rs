//! Stochastic reachability for closed-loop vehicle dynamics.
//!
//! A joint state density is represented by weighted samples whose weights
//! are the exact density values. Samples move along the closed-loop
//! trajectories and their weights follow `d/dt ρ = −ρ ∇·g`, which is the
//! characteristic form of the Liouville transport equation. On top of the
//! propagated clouds the crate builds marginals, collision probabilities and
//! entropic Wasserstein barycenters.

// `!(x > 0)` rejects NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// kernels index several parallel buffers with one counter
#![allow(clippy::needless_range_loop)]

pub mod cloud;
pub mod control;
pub mod density;
pub mod error;
pub mod exec;
pub mod gaussian;
pub mod linalg;
pub mod liouville;
pub mod models;
pub mod montecarlo;
pub mod scalar;
pub mod scenario;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` instantiations of the generic types.
pub type Cloud = cloud::WeightedCloud<f64>;
pub type Gaussian = gaussian::GaussianSpec<f64>;
pub type Mat = linalg::Matrix<f64>;
pub type Settings = liouville::PropagationSettings<f64>;
pub type Trajectory = liouville::CloudTrajectory<f64>;
pub type Grid = density::DensityGrid<f64>;
pub type Measure = transport::DiscreteMeasure<f64>;
pub type Field = control::ClosedLoop<f64>;
