//! Spatial-configuration classification of multi-category point patterns.
//!
//! [`pointset`] holds the data model, [`spatial_graph`] and [`lrfc`] build
//! the geometric inputs, [`model`] is the neural classifier, [`colocation`]
//! provides the classical statistics baselines, and [`interpret`] extracts
//! what a trained model relies on.

pub mod colocation;
pub mod error;
pub mod interpret;
pub mod lrfc;
pub mod model;
pub mod pointset;
pub mod spatial_graph;

pub use error::{Error, Result};
