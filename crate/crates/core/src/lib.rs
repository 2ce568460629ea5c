//! Sharp bounds and confidence intervals for the local average treatment
//! effect when the binary treatment is endogenous and misclassified.
//!
//! The identified set is `[ITT, ITT / TV]` (mirrored for negative ITT), where
//! TV is the total-variation distance between the instrument arms'
//! distributions of the observables. Inference inverts a many-moment
//! multiplier-bootstrap test over a θ grid.

pub mod data;
pub mod error;
pub mod identify;
pub mod inference;
pub mod moments;
pub mod oracle;
pub mod partition;
pub mod propensity;
pub mod rng;
pub mod scalar;
pub mod simulation;
pub mod stats;

pub use data::{Covariates, MissingPolicy, ObservationTable, ParameterSpace, Schema};
pub use error::{Error, Result};
pub use identify::{CellDistribution, IdentifiedSet, Regime, SetKind};
pub use moments::MomentSystem;
pub use oracle::{DiscreteJoint, LatentDgp};
pub use partition::{CellPartition, PartitionConfig, SignFunction, Spacing, Variant};
pub use propensity::{PropensityCandidateSet, PropensityModel};
pub use scalar::{Exact, Real, Scalar};

/// Identified set in double precision.
pub type Bounds = IdentifiedSet<f64>;
/// Identified set in exact rational arithmetic.
pub type ExactBounds = IdentifiedSet<Exact>;
/// Cell probabilities in double precision.
pub type CellProbs = CellDistribution<f64>;
/// Cell probabilities in exact rational arithmetic.
pub type ExactCellProbs = CellDistribution<Exact>;
