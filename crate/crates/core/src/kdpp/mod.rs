//! Exact k-DPP sampling and inclusion statistics.

pub mod enumerate;
pub mod esp;
pub mod marginals;
pub mod sampler;
pub mod schedule;

pub use enumerate::{binomial, brute_force_subset_distribution, SubsetDistribution, ENUMERATION_BUDGET};
pub use esp::{elementary_symmetric_polynomials, ElementarySymmetricTable};
pub use marginals::{
    correlation_matrix, marginal_probabilities, pair_inclusion_probabilities, subset_log_probability,
    CorrelationMatrix, MarginalVector, PairInclusions, PairMode,
};
pub use sampler::{sample_eigenvector_indices, sample_items, sample_minibatch, spawn_producer, KdppSampler, MiniBatch};
pub use schedule::Schedule;
