//! Taxonomy expansion by modelling each node's features as inherited parent
//! features plus independent non-Gaussian supplementary features.

pub mod assignment;
pub mod cli;
mod dag;
pub mod error;
pub mod evalmetrics;
pub mod inference;
pub mod learner;
pub mod preprocess;
pub mod rng;
pub mod synthlab;
pub mod taxonomy;

pub use error::{Error, Result};
