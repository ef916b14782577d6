//! Latent sparse identification of swing-equation power-grid dynamics.
//!
//! Pipeline: simulate an effective-network model ([`grid_model`], [`ode`]),
//! collect snapshot matrices ([`snapshots`]), reduce them with a truncated
//! SVD ([`reduction`]), regress latent derivatives on a candidate library
//! ([`library`], [`sparse_id`]) and compare the back-projected prediction
//! with the truth ([`metrics`]).

pub mod error;
pub mod exec;
pub mod grid_model;
pub mod io;
pub mod library;
pub mod metrics;
pub mod ode;
pub mod reduction;
pub mod snapshots;
pub mod sparse_id;

pub use error::{Error, Result};
pub use exec::Parallelism;
pub use grid_model::{EffectiveNetwork, GridState};
pub use library::{CandidateLibrary, Coordinates, FunctionLibrary, LibrarySpec, TrigTerms};
pub use ode::{IntegrationConfig, Trajectory};
pub use reduction::{RankCriterion, ReducedBasis};
pub use snapshots::{DerivativeMode, SnapshotSet};
pub use sparse_id::{RegressionConfig, SparseModel};
