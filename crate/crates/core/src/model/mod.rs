//! Edge-probability network: input embeddings, residual gated graph
//! convolutions with batch normalization, and an MLP edge head, all with
//! hand-written reverse-mode gradients.

mod checkpoint;
mod loss;
mod network;
mod params;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use loss::{
    class_weights, edge_targets, loss_and_grads, weighted_bce, ClassWeights, EdgeTargets,
    PROB_CLAMP,
};
pub use network::{
    backward, conv_backward, conv_forward, embed_input, forward, mlp_head, predict, sigmoid,
    update_running_stats, ForwardCache, GraphBatch, LayerCache, BN_EPS, BN_MOMENTUM, GATE_EPS,
};
pub use params::{
    init_bound, init_params, ConvWeights, InputWeights, Linear, ModelParams, RunningStats, Weights,
};

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Hidden width `h`; must be even.
    pub hidden: usize,
    /// Number of graph-convolution layers.
    pub layers: usize,
    /// Number of affine maps in the edge head.
    pub mlp_layers: usize,
    /// Node capacity of the encoded graph.
    pub n_max: usize,
    pub normalize_coords: bool,
}

impl ModelConfig {
    /// h = 50, three conv layers, two head layers, 100 nodes.
    pub fn standard() -> Self {
        Self {
            hidden: 50,
            layers: 3,
            mlp_layers: 2,
            n_max: 100,
            normalize_coords: false,
        }
    }

    pub fn small(hidden: usize, layers: usize, mlp_layers: usize) -> Self {
        Self {
            hidden,
            layers,
            mlp_layers,
            ..Self::standard()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || !self.hidden.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "hidden width {} must be even and positive",
                self.hidden
            )));
        }
        if self.layers == 0 || self.mlp_layers == 0 {
            return Err(Error::InvalidArgument(
                "need at least one conv layer and one head layer".into(),
            ));
        }
        if self.n_max == 0 {
            return Err(Error::InvalidArgument(
                "graph capacity must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running stats are returned in the cache for update.
    Train,
    /// Running statistics; no state changes.
    Eval,
}

/// Per-edge tour membership probabilities for one graph. Rows and columns
/// past `n_free` are padding and hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatGraph {
    pub probs: Array2<f64>,
    n_free: usize,
}

impl HeatGraph {
    pub fn new(probs: Array2<f64>, n_free: usize) -> Self {
        Self { probs, n_free }
    }

    /// Constant probability on every real pair.
    pub fn uniform(n_max: usize, n_free: usize, p: f64) -> Self {
        let mut probs = Array2::zeros((n_max, n_max));
        probs.slice_mut(ndarray::s![..n_free, ..n_free]).fill(p);
        Self { probs, n_free }
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn n_max(&self) -> usize {
        self.probs.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[[i, j]]
    }

    /// `(p_ij + p_ji) / 2`
    #[inline]
    pub fn symmetric(&self, i: usize, j: usize) -> f64 {
        0.5 * (self.probs[[i, j]] + self.probs[[j, i]])
    }
}
