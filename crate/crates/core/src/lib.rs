//! Byzantine-robust federated aggregation on randomly projected gradients.
//!
//! The server projects the `M` client updates from dimension `p` to `k` with a
//! seeded sparse (Achlioptas) or Gaussian matrix, computes reliability weights
//! with a distance-based robust rule on the projections, and applies those
//! weights to the original updates.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the default double precision.

pub mod aggregation;
pub mod attacks;
pub mod engine;
pub mod error;
pub mod harness;
pub mod objectives;
pub mod projection;
pub mod rng;
pub mod scalar;
pub mod vector;

pub use error::{PdrError, Result};
pub use scalar::Scalar;

pub type ReliabilityWeights = aggregation::ReliabilityWeights<f64>;
pub type SparseProjection = projection::SparseProjection<f64>;
pub type Projection = projection::Projection<f64>;
pub type FederatedTask = objectives::FederatedTask<f64>;
pub type ModelVector = vector::ModelVector<f64>;

pub type ReliabilityWeights32 = aggregation::ReliabilityWeights<f32>;
pub type SparseProjection32 = projection::SparseProjection<f32>;
pub type Projection32 = projection::Projection<f32>;
pub type FederatedTask32 = objectives::FederatedTask<f32>;
pub type ModelVector32 = vector::ModelVector<f32>;
