//! Learned coverage path planning on occupancy grids.
//!
//! A graph-convolution network predicts, for every pair of free cells, the
//! probability that the pair is consecutive in a short coverage tour. A
//! greedy decoder turns those probabilities into a tour and A* stitches the
//! tour into a collision-free path. Open-path 2-opt supplies the training
//! labels and the comparison baseline.

pub mod bench;
pub mod cli;
pub mod decode;
pub mod error;
pub mod graph;
pub mod grid;
pub mod model;
pub mod render;
pub mod scenario;
pub mod train;
pub mod tsp;
pub mod util;

pub use error::{Error, Result};
