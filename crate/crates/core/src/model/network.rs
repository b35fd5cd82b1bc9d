use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};

use super::{
    ConvWeights, HeatGraph, InputWeights, Linear, Mode, ModelParams, RunningStats, Weights,
};
use crate::error::{Error, Result};
use crate::graph::{ScenarioGraph, ADJACENT};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Stabilizer in the denominator of the neighbor gate normalization.
pub const GATE_EPS: f64 = 1e-20;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Several graphs flattened into one node table and one edge table. Only
/// real nodes are materialized; each graph contributes `n * n` ordered
/// pairs (self pairs included) in row-major order.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub sizes: Vec<usize>,
    pub node_offsets: Vec<usize>,
    pub edge_offsets: Vec<usize>,
    /// `N x 2`
    pub coords: Array2<f64>,
    /// pair distance per edge row
    pub dist: Array1<f64>,
    /// indicator per edge row
    pub indicator: Array1<f64>,
    /// per node: (neighbor node, edge row of node -> neighbor)
    pub neighbors: Vec<Vec<(usize, usize)>>,
}

impl GraphBatch {
    pub fn new(graphs: &[&ScenarioGraph]) -> Self {
        let sizes: Vec<usize> = graphs.iter().map(|g| g.n_free()).collect();
        let mut node_offsets = Vec::with_capacity(graphs.len());
        let mut edge_offsets = Vec::with_capacity(graphs.len());
        let (mut nodes, mut edges) = (0, 0);
        for &n in &sizes {
            node_offsets.push(nodes);
            edge_offsets.push(edges);
            nodes += n;
            edges += n * n;
        }
        let mut coords = Array2::zeros((nodes, 2));
        let mut dist = Array1::zeros(edges);
        let mut indicator = Array1::zeros(edges);
        let mut neighbors = vec![Vec::new(); nodes];
        for (g, graph) in graphs.iter().enumerate() {
            let n = sizes[g];
            let (no, eo) = (node_offsets[g], edge_offsets[g]);
            coords
                .slice_mut(s![no..no + n, ..])
                .assign(&graph.coords.slice(s![..n, ..]));
            for i in 0..n {
                for j in 0..n {
                    dist[eo + i * n + j] = graph.dist[[i, j]];
                    indicator[eo + i * n + j] = graph.indicator[[i, j]] as f64;
                }
                neighbors[no + i] = graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| {
                        debug_assert_eq!(graph.indicator[[i, j]], ADJACENT);
                        (no + j, eo + i * n + j)
                    })
                    .collect();
            }
        }
        Self {
            sizes,
            node_offsets,
            edge_offsets,
            coords,
            dist,
            indicator,
            neighbors,
        }
    }

    pub fn num_graphs(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.nrows()
    }

    pub fn num_edges(&self) -> usize {
        self.dist.len()
    }

    #[inline]
    pub fn edge_row(&self, graph: usize, i: usize, j: usize) -> usize {
        self.edge_offsets[graph] + i * self.sizes[graph] + j
    }
}

/// Initial node features `x W^T + b` and edge features
/// `[dist * w_d + b_d ; indicator * w_i]`.
pub fn embed_input(w: &InputWeights, batch: &GraphBatch) -> (Array2<f64>, Array2<f64>) {
    let nodes = batch.coords.dot(&w.node_w.t()) + &w.node_b;
    let half = w.dist_w.nrows();
    let mut edges = Array2::zeros((batch.num_edges(), 2 * half));
    let dw = w.dist_w.column(0);
    let iw = w.ind_w.column(0);
    for (r, mut row) in edges.axis_iter_mut(Axis(0)).enumerate() {
        let (d, ind) = (batch.dist[r], batch.indicator[r]);
        for c in 0..half {
            row[c] = d * dw[c] + w.dist_b[c];
            row[half + c] = ind * iw[c];
        }
    }
    (nodes, edges)
}

fn embed_backward(
    w: &mut InputWeights,
    batch: &GraphBatch,
    dnodes: &Array2<f64>,
    dedges: &Array2<f64>,
) {
    w.node_w += &dnodes.t().dot(&batch.coords);
    w.node_b += &dnodes.sum_axis(Axis(0));
    let half = w.dist_w.nrows();
    let dd = dedges.slice(s![.., ..half]);
    let di = dedges.slice(s![.., half..]);
    let mut dw = w.dist_w.column_mut(0);
    dw += &dd.t().dot(&batch.dist);
    w.dist_b += &dd.sum_axis(Axis(0));
    let mut iw = w.ind_w.column_mut(0);
    iw += &di.t().dot(&batch.indicator);
}

/// Normalizes `a` in place per column and returns `(istd, batch mean, batch var)`.
fn bn_normalize(
    a: &mut Array2<f64>,
    mode: Mode,
    run_mean: &Array1<f64>,
    run_var: &Array1<f64>,
) -> (Array1<f64>, Option<(Array1<f64>, Array1<f64>)>) {
    let (mean, var, batch) = match mode {
        Mode::Train => {
            let mean = a
                .mean_axis(Axis(0))
                .unwrap_or_else(|| Array1::zeros(a.ncols()));
            let var = if a.nrows() > 0 {
                a.var_axis(Axis(0), 0.0)
            } else {
                Array1::zeros(a.ncols())
            };
            (mean.clone(), var.clone(), Some((mean, var)))
        }
        Mode::Eval => (run_mean.clone(), run_var.clone(), None),
    };
    let istd = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    Zip::from(a.rows_mut()).for_each(|mut row| {
        Zip::from(&mut row)
            .and(&mean)
            .and(&istd)
            .for_each(|x, &m, &s| *x = (*x - m) * s);
    });
    (istd, batch)
}

/// Gradient through the normalization given the gradient w.r.t. the
/// normalized values; overwrites `dhat`.
fn bn_backward(dhat: &mut Array2<f64>, hat: &Array2<f64>, istd: &Array1<f64>, mode: Mode) {
    match mode {
        Mode::Eval => {
            Zip::from(dhat.rows_mut()).for_each(|mut row| row *= istd);
        }
        Mode::Train => {
            let n = dhat.nrows().max(1) as f64;
            let mean_d = dhat.sum_axis(Axis(0)) / n;
            let mut mean_dh = Array1::<f64>::zeros(dhat.ncols());
            Zip::from(dhat.rows()).and(hat.rows()).for_each(|d, h| {
                Zip::from(&mut mean_dh)
                    .and(&d)
                    .and(&h)
                    .for_each(|acc, &d, &h| *acc += d * h);
            });
            mean_dh /= n;
            Zip::from(dhat.rows_mut())
                .and(hat.rows())
                .for_each(|mut d, h| {
                    Zip::from(&mut d)
                        .and(&h)
                        .and(istd)
                        .and(&mean_d)
                        .and(&mean_dh)
                        .for_each(|d, &h, &s, &md, &mdh| *d = s * (*d - md - h * mdh));
                });
        }
    }
}

/// `out += relu(gamma * hat + beta)` elementwise.
fn add_relu_affine(
    out: &mut Array2<f64>,
    hat: &Array2<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
) {
    Zip::from(out.rows_mut())
        .and(hat.rows())
        .for_each(|mut o, h| {
            Zip::from(&mut o)
                .and(&h)
                .and(gamma)
                .and(beta)
                .for_each(|o, &h, &g, &b| {
                    let y = g * h + b;
                    if y > 0.0 {
                        *o += y;
                    }
                });
        });
}

/// Gradient through `relu(gamma * hat + beta)`: returns `d hat` and
/// accumulates the scale and shift gradients.
fn relu_affine_backward(
    dout: &Array2<f64>,
    hat: &Array2<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    let mut dhat = Array2::zeros(hat.raw_dim());
    let (g, b) = (gamma.as_slice().unwrap(), beta.as_slice().unwrap());
    let (dg, db) = (
        dgamma.as_slice_mut().unwrap(),
        dbeta.as_slice_mut().unwrap(),
    );
    Zip::from(dhat.rows_mut())
        .and(dout.rows())
        .and(hat.rows())
        .for_each(|mut dh, d, h| {
            for c in 0..g.len() {
                if g[c] * h[c] + b[c] > 0.0 {
                    dg[c] += d[c] * h[c];
                    db[c] += d[c];
                    dh[c] = d[c] * g[c];
                }
            }
        });
    dhat
}

/// Intermediates of one convolution layer kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub x: Array2<f64>,
    pub e: Array2<f64>,
    /// neighbor messages `x W2^T`
    v: Array2<f64>,
    /// gate normalizer per node and channel (epsilon included)
    denom: Array2<f64>,
    agg: Array2<f64>,
    node_hat: Array2<f64>,
    node_istd: Array1<f64>,
    edge_hat: Array2<f64>,
    edge_istd: Array1<f64>,
    node_batch_stats: Option<(Array1<f64>, Array1<f64>)>,
    edge_batch_stats: Option<(Array1<f64>, Array1<f64>)>,
}

fn check_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteActivation(what.to_string()))
    }
}

/// One residual gated convolution:
///
/// ```text
/// x_i' = x_i + relu(BN(W1 x_i + sum_{j~i} eta_ij * W2 x_j))
/// eta_ij = sigmoid(e_ij) / (sum_{k~i} sigmoid(e_ik) + eps)
/// e_ij' = e_ij + relu(BN(W3 e_ij + W4 x_i + W5 x_j))
/// ```
///
/// `j ~ i` ranges over grid-adjacent free pairs only.
pub fn conv_forward(
    w: &ConvWeights,
    stats: &RunningStats,
    batch: &GraphBatch,
    x: Array2<f64>,
    e: Array2<f64>,
    mode: Mode,
) -> Result<(Array2<f64>, Array2<f64>, LayerCache)> {
    let h = x.ncols();
    let n_nodes = x.nrows();

    // node branch
    let v = x.dot(&w.w2.t());
    let mut denom = Array2::from_elem((n_nodes, h), GATE_EPS);
    let mut agg = Array2::<f64>::zeros((n_nodes, h));
    for i in 0..n_nodes {
        let mut d = denom.row_mut(i);
        let mut a = agg.row_mut(i);
        for &(j, r) in &batch.neighbors[i] {
            let er = e.row(r);
            let vj = v.row(j);
            for c in 0..h {
                let sg = sigmoid(er[c]);
                d[c] += sg;
                a[c] += sg * vj[c];
            }
        }
        a /= &d;
    }
    let mut node_hat = x.dot(&w.w1.t()) + &agg;
    let (node_istd, node_batch_stats) =
        bn_normalize(&mut node_hat, mode, &stats.node_mean, &stats.node_var);
    let mut x_next = x.clone();
    add_relu_affine(&mut x_next, &node_hat, &w.node_gamma, &w.node_beta);

    // edge branch
    let p = x.dot(&w.w4.t());
    let q = x.dot(&w.w5.t());
    let mut edge_hat = e.dot(&w.w3.t());
    for (g, &n) in batch.sizes.iter().enumerate() {
        let (no, eo) = (batch.node_offsets[g], batch.edge_offsets[g]);
        let qg = q.slice(s![no..no + n, ..]);
        for i in 0..n {
            let mut rows = edge_hat.slice_mut(s![eo + i * n..eo + (i + 1) * n, ..]);
            rows += &qg;
            rows += &p.row(no + i);
        }
    }
    let (edge_istd, edge_batch_stats) =
        bn_normalize(&mut edge_hat, mode, &stats.edge_mean, &stats.edge_var);
    let mut e_next = e.clone();
    add_relu_affine(&mut e_next, &edge_hat, &w.edge_gamma, &w.edge_beta);

    if mode == Mode::Train {
        check_finite(&x_next, "node features")?;
        check_finite(&e_next, "edge features")?;
    }

    let cache = LayerCache {
        x,
        e,
        v,
        denom,
        agg,
        node_hat,
        node_istd,
        edge_hat,
        edge_istd,
        node_batch_stats,
        edge_batch_stats,
    };
    Ok((x_next, e_next, cache))
}

/// Backward pass of [`conv_forward`]. Accumulates parameter gradients into
/// `grads` and returns the gradients w.r.t. the layer inputs.
pub fn conv_backward(
    w: &ConvWeights,
    batch: &GraphBatch,
    cache: &LayerCache,
    mode: Mode,
    dx_out: Array2<f64>,
    de_out: Array2<f64>,
    grads: &mut ConvWeights,
) -> (Array2<f64>, Array2<f64>) {
    let x = &cache.x;
    let h = x.ncols();

    // edge branch
    let mut dc = relu_affine_backward(
        &de_out,
        &cache.edge_hat,
        &w.edge_gamma,
        &w.edge_beta,
        &mut grads.edge_gamma,
        &mut grads.edge_beta,
    );
    bn_backward(&mut dc, &cache.edge_hat, &cache.edge_istd, mode);
    grads.w3 += &dc.t().dot(&cache.e);
    let mut de = de_out;
    de += &dc.dot(&w.w3);

    let mut dp = Array2::<f64>::zeros(x.raw_dim());
    let mut dq = Array2::<f64>::zeros(x.raw_dim());
    for (g, &n) in batch.sizes.iter().enumerate() {
        let (no, eo) = (batch.node_offsets[g], batch.edge_offsets[g]);
        for i in 0..n {
            let rows = dc.slice(s![eo + i * n..eo + (i + 1) * n, ..]);
            let mut dpi = dp.row_mut(no + i);
            dpi += &rows.sum_axis(Axis(0));
            let mut dqg = dq.slice_mut(s![no..no + n, ..]);
            dqg += &rows;
        }
    }
    grads.w4 += &dp.t().dot(x);
    grads.w5 += &dq.t().dot(x);

    // node branch
    let mut da = relu_affine_backward(
        &dx_out,
        &cache.node_hat,
        &w.node_gamma,
        &w.node_beta,
        &mut grads.node_gamma,
        &mut grads.node_beta,
    );
    bn_backward(&mut da, &cache.node_hat, &cache.node_istd, mode);
    grads.w1 += &da.t().dot(x);

    let mut dv = Array2::<f64>::zeros(x.raw_dim());
    for i in 0..x.nrows() {
        let dagg = da.row(i);
        let denom = cache.denom.row(i);
        let agg = cache.agg.row(i);
        for &(j, r) in &batch.neighbors[i] {
            let vj = cache.v.row(j);
            let er = cache.e.row(r);
            let mut dvj = dv.row_mut(j);
            let mut der = de.row_mut(r);
            for c in 0..h {
                let sg = sigmoid(er[c]);
                dvj[c] += sg / denom[c] * dagg[c];
                let ds = dagg[c] * (vj[c] - agg[c]) / denom[c];
                der[c] += ds * sg * (1.0 - sg);
            }
        }
    }
    grads.w2 += &dv.t().dot(x);

    let mut dx = dx_out;
    dx += &dp.dot(&w.w4);
    dx += &dq.dot(&w.w5);
    dx += &da.dot(&w.w1);
    dx += &dv.dot(&w.w2);
    (dx, de)
}

/// Edge head: affine maps with ReLU between, scalar logit per edge row.
/// Returns the logits and the input of every head layer.
fn mlp_forward(layers: &[Linear], edges: Array2<f64>) -> (Array1<f64>, Vec<Array2<f64>>) {
    let mut inputs = vec![edges];
    for (k, lin) in layers.iter().enumerate() {
        let mut z = inputs.last().unwrap().dot(&lin.w.t());
        z += &lin.b;
        if k + 1 == layers.len() {
            return (z.column(0).to_owned(), inputs);
        }
        z.mapv_inplace(|v| v.max(0.0));
        inputs.push(z);
    }
    unreachable!("head has at least one layer")
}

/// Probabilities `sigmoid(MLP(e))` for every edge row.
pub fn mlp_head(layers: &[Linear], edges: Array2<f64>) -> Array1<f64> {
    mlp_forward(layers, edges).0.mapv(sigmoid)
}

fn mlp_backward(
    layers: &[Linear],
    inputs: &[Array2<f64>],
    dlogits: ArrayView1<f64>,
    grads: &mut [Linear],
) -> Array2<f64> {
    let mut dz = dlogits.insert_axis(Axis(1)).to_owned();
    for k in (0..layers.len()).rev() {
        grads[k].w += &dz.t().dot(&inputs[k]);
        grads[k].b += &dz.sum_axis(Axis(0));
        let mut dh = dz.dot(&layers[k].w);
        if k > 0 {
            Zip::from(&mut dh).and(&inputs[k]).for_each(|d, &hv| {
                if hv <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        dz = dh;
    }
    dz
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: Mode,
    pub layers: Vec<LayerCache>,
    mlp_inputs: Vec<Array2<f64>>,
    pub logits: Array1<f64>,
}

impl ForwardCache {
    pub fn probabilities(&self) -> Array1<f64> {
        self.logits.mapv(sigmoid)
    }

    /// Splits edge probabilities back into one padded heat graph per graph.
    pub fn heat_graphs(&self, batch: &GraphBatch, n_max: usize) -> Vec<HeatGraph> {
        heat_graphs(&self.logits, batch, n_max)
    }
}

fn heat_graphs(logits: &Array1<f64>, batch: &GraphBatch, n_max: usize) -> Vec<HeatGraph> {
    batch
        .sizes
        .iter()
        .enumerate()
        .map(|(g, &n)| {
            let mut probs = Array2::zeros((n_max.max(n), n_max.max(n)));
            for i in 0..n {
                for j in 0..n {
                    probs[[i, j]] = sigmoid(logits[batch.edge_row(g, i, j)]);
                }
            }
            HeatGraph::new(probs, n)
        })
        .collect()
}

/// Full forward pass over a batch.
pub fn forward(params: &ModelParams, batch: &GraphBatch, mode: Mode) -> Result<ForwardCache> {
    let w = &params.weights;
    let (mut x, mut e) = embed_input(&w.input, batch);
    let mut layers = Vec::with_capacity(w.conv.len());
    for (conv, stats) in w.conv.iter().zip(&params.running) {
        let (xn, en, cache) = conv_forward(conv, stats, batch, x, e, mode)?;
        layers.push(cache);
        x = xn;
        e = en;
    }
    let (logits, mlp_inputs) = mlp_forward(&w.mlp, e);
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFiniteActivation("edge logits".into()));
    }
    Ok(ForwardCache {
        mode,
        layers,
        mlp_inputs,
        logits,
    })
}

/// Eval-mode heat graphs for each graph of the batch.
pub fn predict(params: &ModelParams, graphs: &[&ScenarioGraph]) -> Result<Vec<HeatGraph>> {
    let batch = GraphBatch::new(graphs);
    let cache = forward(params, &batch, Mode::Eval)?;
    let n_max = graphs.iter().map(|g| g.n_max()).max().unwrap_or(0);
    Ok(graphs
        .iter()
        .zip(heat_graphs(&cache.logits, &batch, n_max))
        .map(|(g, heat)| {
            if heat.n_max() == g.n_max() {
                heat
            } else {
                let n = g.n_max();
                HeatGraph::new(heat.probs.slice(s![..n, ..n]).to_owned(), heat.n_free())
            }
        })
        .collect())
}

/// Gradients of a scalar loss given `d loss / d logit` per edge row.
pub fn backward(
    params: &ModelParams,
    batch: &GraphBatch,
    cache: &ForwardCache,
    dlogits: &Array1<f64>,
) -> Weights {
    let w = &params.weights;
    let mut grads = Weights::zeros(&params.config);
    let mut de = mlp_backward(&w.mlp, &cache.mlp_inputs, dlogits.view(), &mut grads.mlp);
    let mut dx = Array2::zeros((batch.num_nodes(), params.config.hidden));
    for (l, layer) in cache.layers.iter().enumerate().rev() {
        let (ndx, nde) = conv_backward(
            &w.conv[l],
            batch,
            layer,
            cache.mode,
            dx,
            de,
            &mut grads.conv[l],
        );
        dx = ndx;
        de = nde;
    }
    embed_backward(&mut grads.input, batch, &dx, &de);
    grads
}

/// Folds the batch statistics of a training forward pass into the running
/// statistics (unbiased variance).
pub fn update_running_stats(
    params: &mut ModelParams,
    cache: &ForwardCache,
    batch: &GraphBatch,
    momentum: f64,
) {
    let n_nodes = batch.num_nodes() as f64;
    let n_edges = batch.num_edges() as f64;
    let unbias = |n: f64| if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    for (stats, layer) in params.running.iter_mut().zip(&cache.layers) {
        if let Some((m, v)) = &layer.node_batch_stats {
            stats
                .node_mean
                .zip_mut_with(m, |r, &b| *r = (1.0 - momentum) * *r + momentum * b);
            let u = unbias(n_nodes);
            stats
                .node_var
                .zip_mut_with(v, |r, &b| *r = (1.0 - momentum) * *r + momentum * b * u);
        }
        if let Some((m, v)) = &layer.edge_batch_stats {
            stats
                .edge_mean
                .zip_mut_with(m, |r, &b| *r = (1.0 - momentum) * *r + momentum * b);
            let u = unbias(n_edges);
            stats
                .edge_var
                .zip_mut_with(v, |r, &b| *r = (1.0 - momentum) * *r + momentum * b * u);
        }
    }
}
