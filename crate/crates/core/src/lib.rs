//! Secure collaborative scoring: from a vouch graph and pairwise comparisons
//! to bounded, manipulation-resilient global scores.
//!
//! The stages live in their own modules and can be used separately;
//! [`run_pipeline`] chains them.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod generative;
pub mod pipeline;
pub mod preference;
pub mod primitives;
pub mod scaling;
pub mod solver;
pub mod stats;
pub mod trust;
pub mod voting;

pub use aggregation::{AggregationParams, EntityScore, GlobalScores, UserScore};
pub use config::{ExperimentConfig, PipelineConfig, ScalingStep};
pub use dataset::{Comparison, Dataset, EntityId, Privacy, UserId};
pub use error::{Error, Result, SolverError, Stage};
pub use experiment::{run_experiment, ExperimentResult};
pub use generative::{generate, GenerativeConfig, Generated, GroundTruth};
pub use pipeline::{run_pipeline, PipelineOutput};
pub use preference::{GbtParams, Score, UserModel};
pub use primitives::{Uncertainty, WeightedInput};
pub use scaling::{MehestanParams, Models, ZeroShiftParams};
pub use stats::BucketBy;
pub use trust::TrustState;
pub use voting::{OvertrustParams, VotingRightsMatrix};
