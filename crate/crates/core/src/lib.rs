//! High-order evolving graphs for traffic-scene action classification.
//!
//! Per-frame object detections become a temporal bidirectional bipartite
//! graph, two message-passing layers aggregate each node's neighborhood with
//! several statistics at once (mean, median, standard deviation and the third
//! and fourth central moments), and a feature-gated attention readout feeds a
//! linear classifier. All gradients are derived by hand.

pub mod aggregators;
mod binio;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod graph;
pub mod layer;
pub mod numerics;
pub mod pooling;
pub mod scene;
pub mod synth;
pub mod train;

pub use error::{HegError, Result};
pub use numerics::Matrix;
