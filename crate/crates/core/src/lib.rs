//! Knowledge selection for knowledge-grounded dialogue: transition-aware
//! candidate features, graph-comparative pointer scoring, variance-aware
//! training, response generation and evaluation.

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod model;
pub mod nn;
pub mod objective;
pub mod selector;
pub mod text;
pub mod transition;

pub use error::{Error, Result};
