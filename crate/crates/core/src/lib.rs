//! Certified bounds on the log partition function of discrete pairwise
//! Markov random fields.
//!
//! Upper bounds come from convex combinations of spanning trees
//! (tree-reweighted message passing); lower bounds come from ensembles with
//! one positive tree and negatively weighted trees, where a reversed Jensen
//! inequality applies. Naive and structured mean field appear as limits of
//! the same message-passing engine.

pub mod bound;
pub mod ensemble;
pub mod error;
pub mod exact;
pub mod format;
pub mod math;
pub mod meanfield;
pub mod model;
pub mod mp;
pub mod optimize;
pub mod tree;

pub use error::{Error, Result};
