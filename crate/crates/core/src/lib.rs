//! Conditional maximum entropy modeling over discrete domains.
//!
//! A model `m(y|x) = r(y|x) / Z(x)` with `r(y|x) = prod_i alpha_i^g_i(x,y)` is
//! described by two ASCII documents: a parameters file (weights and target
//! expectations) and an events file (how the features behave on the data).
//! This crate reads and writes those documents, estimates the weights with
//! improved iterative scaling, checks files for consistency, evaluates
//! probability expressions, and builds Markov/trigger feature files from a
//! token corpus.

pub mod checker;
pub mod cli;
pub mod estimator;
pub mod evaluator;
pub mod features;
pub mod formats;
pub mod model;
pub mod numeric;
