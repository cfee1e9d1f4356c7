//! Loss models, risks and the SGD training loops.

pub mod loss;
pub mod risk;
pub mod train;

pub use loss::{LossModel, QuadraticLoss, SoftmaxRegression};
pub use risk::{balanced_accuracy, diversified_risk, empirical_risk, per_class_recall, risk_report, RiskReport};
pub use train::{
    dm_sgd_step, gradient_estimate, stratification_kernel, steps_per_pass, train, uniform_batch, uniform_sgd_step,
    unbiased_dm_sgd_step, BatchSource, LearningRate, StepRecord, TrainConfig, TrainMode, TrainTrace,
};
