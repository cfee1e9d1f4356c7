//! Gradient-variance decomposition, class-balance diagnostics and synthetic
//! data for small-scale checks.

pub mod balance;
pub mod synth;
pub mod variance;

pub use balance::{balance_histogram, imbalance_factor, BalanceHistogram};
pub use synth::{balanced_counterpart, generate_held_out, generate_imbalanced_gaussians, synthetic_preset, ClassBlob};
pub use variance::{
    expected_gradient, gradient_variance_closed_form, gradient_variance_exact, gradient_variance_monte_carlo,
    per_example_gradients, MonteCarloVariance, SufficientCondition, VarianceReport,
};
