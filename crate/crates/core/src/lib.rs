//! Counterfactual edge-deletion explanations of group unfairness in
//! graph-based recommenders.

pub mod data;
pub mod error;
pub mod evalstat;
pub mod explainer;
pub mod graph;
pub mod labels;
pub mod losses;
pub mod model;
pub mod optim;
pub mod perturb;
pub mod topology;

pub use error::{Error, Result};
