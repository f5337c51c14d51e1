//! Nested named-entity recognition with a bipartite flat-graph network.
//!
//! A BiLSTM-CRF tags outermost mentions; a bidirectional graph convolution
//! over the flat predictions scores every span for inner mentions; the
//! span scores are turned back into a weighted graph whose features feed a
//! second flat pass.

pub mod data;
pub mod error;
pub mod eval;
pub mod flat;
pub mod graph;
pub mod nn;
pub mod numerics;
pub mod representation;
pub mod training;

pub use error::{Error, Result};
