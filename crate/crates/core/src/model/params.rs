use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::Result;

/// Affine map `y = x W^T + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Input embeddings for node coordinates and the two edge channels.
#[derive(Debug, Clone, PartialEq)]
pub struct InputWeights {
    /// `h x 2`
    pub node_w: Array2<f64>,
    pub node_b: Array1<f64>,
    /// `h/2 x 1`, applied to the pair distance
    pub dist_w: Array2<f64>,
    pub dist_b: Array1<f64>,
    /// `h/2 x 1`, applied to the adjacency indicator (no bias)
    pub ind_w: Array2<f64>,
}

/// One gated graph-convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    /// self term of the node update
    pub w1: Array2<f64>,
    /// neighbor message of the node update
    pub w2: Array2<f64>,
    /// edge self term
    pub w3: Array2<f64>,
    /// source node term of the edge update
    pub w4: Array2<f64>,
    /// target node term of the edge update
    pub w5: Array2<f64>,
    pub node_gamma: Array1<f64>,
    pub node_beta: Array1<f64>,
    pub edge_gamma: Array1<f64>,
    pub edge_beta: Array1<f64>,
}

/// All trainable tensors. Gradients share this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub input: InputWeights,
    pub conv: Vec<ConvWeights>,
    pub mlp: Vec<Linear>,
}

/// Batch-norm running statistics for one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub node_mean: Array1<f64>,
    pub node_var: Array1<f64>,
    pub edge_mean: Array1<f64>,
    pub edge_var: Array1<f64>,
}

impl RunningStats {
    pub(crate) fn zeros(h: usize) -> Self {
        Self {
            node_mean: Array1::zeros(h),
            node_var: Array1::zeros(h),
            edge_mean: Array1::zeros(h),
            edge_var: Array1::zeros(h),
        }
    }

    fn new(h: usize) -> Self {
        Self {
            node_mean: Array1::zeros(h),
            node_var: Array1::ones(h),
            edge_mean: Array1::zeros(h),
            edge_var: Array1::ones(h),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights,
    pub running: Vec<RunningStats>,
}

impl Weights {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden;
        let half = h / 2;
        let sq = || Array2::zeros((h, h));
        let vec = || Array1::zeros(h);
        Self {
            input: InputWeights {
                node_w: Array2::zeros((h, 2)),
                node_b: vec(),
                dist_w: Array2::zeros((half, 1)),
                dist_b: Array1::zeros(half),
                ind_w: Array2::zeros((half, 1)),
            },
            conv: (0..config.layers)
                .map(|_| ConvWeights {
                    w1: sq(),
                    w2: sq(),
                    w3: sq(),
                    w4: sq(),
                    w5: sq(),
                    node_gamma: vec(),
                    node_beta: vec(),
                    edge_gamma: vec(),
                    edge_beta: vec(),
                })
                .collect(),
            mlp: (0..config.mlp_layers)
                .map(|k| {
                    let out = if k + 1 == config.mlp_layers { 1 } else { h };
                    Linear {
                        w: Array2::zeros((out, h)),
                        b: Array1::zeros(out),
                    }
                })
                .collect(),
        }
    }

    /// Tensors in declared order, with stable names.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            (
                "input.node_w".to_string(),
                self.input.node_w.view().into_dyn(),
            ),
            (
                "input.node_b".to_string(),
                self.input.node_b.view().into_dyn(),
            ),
            (
                "input.dist_w".to_string(),
                self.input.dist_w.view().into_dyn(),
            ),
            (
                "input.dist_b".to_string(),
                self.input.dist_b.view().into_dyn(),
            ),
            (
                "input.ind_w".to_string(),
                self.input.ind_w.view().into_dyn(),
            ),
        ];
        for (l, c) in self.conv.iter().enumerate() {
            out.push((format!("conv{l}.w1"), c.w1.view().into_dyn()));
            out.push((format!("conv{l}.w2"), c.w2.view().into_dyn()));
            out.push((format!("conv{l}.w3"), c.w3.view().into_dyn()));
            out.push((format!("conv{l}.w4"), c.w4.view().into_dyn()));
            out.push((format!("conv{l}.w5"), c.w5.view().into_dyn()));
            out.push((
                format!("conv{l}.node_gamma"),
                c.node_gamma.view().into_dyn(),
            ));
            out.push((format!("conv{l}.node_beta"), c.node_beta.view().into_dyn()));
            out.push((
                format!("conv{l}.edge_gamma"),
                c.edge_gamma.view().into_dyn(),
            ));
            out.push((format!("conv{l}.edge_beta"), c.edge_beta.view().into_dyn()));
        }
        for (k, lin) in self.mlp.iter().enumerate() {
            out.push((format!("mlp{k}.w"), lin.w.view().into_dyn()));
            out.push((format!("mlp{k}.b"), lin.b.view().into_dyn()));
        }
        out
    }

    /// Mutable views in the same order as [`Weights::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = vec![
            self.input.node_w.view_mut().into_dyn(),
            self.input.node_b.view_mut().into_dyn(),
            self.input.dist_w.view_mut().into_dyn(),
            self.input.dist_b.view_mut().into_dyn(),
            self.input.ind_w.view_mut().into_dyn(),
        ];
        for c in &mut self.conv {
            out.push(c.w1.view_mut().into_dyn());
            out.push(c.w2.view_mut().into_dyn());
            out.push(c.w3.view_mut().into_dyn());
            out.push(c.w4.view_mut().into_dyn());
            out.push(c.w5.view_mut().into_dyn());
            out.push(c.node_gamma.view_mut().into_dyn());
            out.push(c.node_beta.view_mut().into_dyn());
            out.push(c.edge_gamma.view_mut().into_dyn());
            out.push(c.edge_beta.view_mut().into_dyn());
        }
        for lin in &mut self.mlp {
            out.push(lin.w.view_mut().into_dyn());
            out.push(lin.b.view_mut().into_dyn());
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Scalar `k` in declared flat order.
    pub fn get_flat(&self, mut k: usize) -> f64 {
        for (_, t) in self.tensors() {
            if k < t.len() {
                return t.iter().nth(k).copied().unwrap();
            }
            k -= t.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut k: usize, value: f64) {
        for mut t in self.tensors_mut() {
            if k < t.len() {
                *t.iter_mut().nth(k).unwrap() = value;
                return;
            }
            k -= t.len();
        }
        panic!("flat index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }
}

/// Bound of the fan-in scaled uniform initialization.
pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Deterministic initialization: every weight and bias is drawn from
/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; batch-norm scale 1 and shift 0.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Weights::zeros(config);
    let mut fill = |a: &mut ArrayViewMutD<'_, f64>, fan_in: usize| {
        let b = init_bound(fan_in);
        let dist = Uniform::new_inclusive(-b, b).expect("finite bound");
        a.iter_mut().for_each(|x| *x = dist.sample(&mut rng));
    };
    let h = config.hidden;
    fill(&mut weights.input.node_w.view_mut().into_dyn(), 2);
    fill(&mut weights.input.node_b.view_mut().into_dyn(), 2);
    fill(&mut weights.input.dist_w.view_mut().into_dyn(), 1);
    fill(&mut weights.input.dist_b.view_mut().into_dyn(), 1);
    fill(&mut weights.input.ind_w.view_mut().into_dyn(), 1);
    for c in &mut weights.conv {
        for w in [&mut c.w1, &mut c.w2, &mut c.w3, &mut c.w4, &mut c.w5] {
            fill(&mut w.view_mut().into_dyn(), h);
        }
        c.node_gamma.fill(1.0);
        c.edge_gamma.fill(1.0);
    }
    for lin in &mut weights.mlp {
        fill(&mut lin.w.view_mut().into_dyn(), h);
        fill(&mut lin.b.view_mut().into_dyn(), h);
    }
    Ok(ModelParams {
        config: config.clone(),
        running: (0..config.layers).map(|_| RunningStats::new(h)).collect(),
        weights,
    })
}
