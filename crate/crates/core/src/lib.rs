//! Joint training of paired conditional models under a
//! probabilistic-duality regularizer.
//!
//! A primal model P(y|x; θ_xy) and a dual model P(x|y; θ_yx) are trained
//! together; each minibatch adds λ·(log P̂(x) + log P(y|x) - log P̂(y)
//! - log P(x|y))² to both objectives, pulling the two models toward
//! factorizing the same joint distribution. The crate ships exact
//! synthetic tasks with brute-force oracles, the training loop with its
//! λ = 0 supervised baseline, and a config-driven experiment runner.

pub mod data;
pub mod duality;
pub mod error;
pub mod marginals;
pub mod models;
pub mod optim;
pub mod tasks;
pub mod trainer;

pub use data::{log_sum_exp, split_dataset, Alphabet, Dataset, Item, Rng, SamplePair, Split, Splits};
pub use duality::{duality_grads, duality_term, lambda_for, DualityTerm, LambdaRule};
pub use error::{Error, Result};
pub use marginals::{
    fit_ngram, marginal_log_prob, EmpiricalCategorical, Marginal, MarginalModel, NGramLM,
    UniformLabelMarginal,
};
pub use models::{
    finite_diff_grad, max_grad_check_error, ConditionalModel, Gradient, LinearSoftmaxModel,
    Model, ParamLayout, ParamVector, RecurrentTransducerModel, TabularSoftmaxModel,
};
pub use optim::{clip_by_norm, OptimizerKind, OptimizerState, PlateauSchedule};
