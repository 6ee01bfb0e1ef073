//! Fraud detection on signed trust graphs.
//!
//! The pipeline: load a signed rating edge list ([`graph`]), derive
//! ground-truth labels by trust propagation from PageRank seeds
//! ([`labeling`]), build topological node features ([`features`]), train a
//! dual-channel signed attention network ([`model`], [`training`]) and
//! compare it with heuristic and unsigned baselines ([`baselines`],
//! [`evaluation`]).

pub mod baselines;
pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod graph;
pub mod labeling;
pub mod linalg;
pub mod model;
pub mod training;

pub use error::{Error, Result};
