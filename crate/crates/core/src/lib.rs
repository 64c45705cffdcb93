//! Simulator for private, diversity-preserving aggregation of teacher
//! distributions: coordinated ensemble sampling, noisy aggregation, privacy
//! accounting, synthetic ensembles and a Monte Carlo harness.

pub mod accounting;
pub mod aggregation;
pub mod error;
pub mod harness;
pub mod mechanisms;
pub mod randomness;
pub mod sampling;
pub mod synth;
pub mod trials;
pub mod types;

pub use accounting::{default_hit_budget, ChargeStatus, HitBudget, PrivacyLedger};
pub use aggregation::{
    aggregate_heterogeneous_individual, aggregate_heterogeneous_sampled, aggregate_homogeneous,
    hot_pate_loop, AggregationMode, LoopConfig, StepRecord, TeacherProvider,
};
pub use error::{Error, Result};
pub use mechanisms::{boundary_wrapper, discrete_laplace, noisy_argmax, outcome_distribution};
pub use randomness::{exp_from_seed, SharedRandomness};
pub use sampling::{coordinated_sample, independent_sample, VoteVector};
pub use types::{
    AggregateOutcome, DiversityParams, FrequencyHistogram, OutcomeLabel, PrivacyParams,
    TeacherDistribution, TokenId,
};
