use ndarray::Array1;

use super::network::{backward, forward, sigmoid, ForwardCache, GraphBatch};
use super::{Mode, ModelParams, Weights};
use crate::error::{Error, Result};
use crate::tsp::LabelGraph;

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the log.
pub const PROB_CLAMP: f64 = 1e-7;

/// Per edge row: tour label and whether the row participates in the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeTargets {
    pub labels: Array1<f64>,
    pub mask: Vec<bool>,
}

/// Ordered pairs of distinct real nodes participate; self pairs do not.
pub fn edge_targets(batch: &GraphBatch, labels: &[&LabelGraph]) -> Result<EdgeTargets> {
    if labels.len() != batch.num_graphs() {
        return Err(Error::ShapeMismatch(format!(
            "{} label graphs for {} graphs",
            labels.len(),
            batch.num_graphs()
        )));
    }
    let mut y = Array1::zeros(batch.num_edges());
    let mut mask = vec![false; batch.num_edges()];
    for (g, lab) in labels.iter().enumerate() {
        let n = batch.sizes[g];
        if lab.matrix.nrows() < n {
            return Err(Error::ShapeMismatch(format!(
                "label graph smaller than {n} nodes"
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let r = batch.edge_row(g, i, j);
                y[r] = lab.get(i, j) as f64;
                mask[r] = i != j;
            }
        }
    }
    Ok(EdgeTargets { labels: y, mask })
}

/// Balanced inverse-frequency class weights over the masked entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassWeights {
    pub positive: f64,
    pub negative: f64,
    pub count: usize,
    pub positives: usize,
    pub negatives: usize,
}

pub fn class_weights(targets: &EdgeTargets) -> Result<ClassWeights> {
    let (mut pos, mut neg) = (0usize, 0usize);
    for (y, &m) in targets.labels.iter().zip(&targets.mask) {
        if m {
            if *y > 0.5 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateBatch {
            positives: pos,
            negatives: neg,
        });
    }
    let m = (pos + neg) as f64;
    Ok(ClassWeights {
        positive: m / (2.0 * pos as f64),
        negative: m / (2.0 * neg as f64),
        count: pos + neg,
        positives: pos,
        negatives: neg,
    })
}

/// Weighted binary cross-entropy on logits, averaged over the masked
/// entries. Returns the loss and its gradient w.r.t. each logit.
pub fn weighted_bce(
    logits: &Array1<f64>,
    targets: &EdgeTargets,
    weights: &ClassWeights,
) -> (f64, Array1<f64>) {
    let m = weights.count as f64;
    let mut loss = 0.0;
    let mut grad = Array1::zeros(logits.len());
    for (r, &z) in logits.iter().enumerate() {
        if !targets.mask[r] {
            continue;
        }
        let y = targets.labels[r];
        let p = sigmoid(z);
        let clamped = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= weights.positive * y * clamped.ln()
            + weights.negative * (1.0 - y) * (1.0 - clamped).ln();
        if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
            grad[r] = (weights.negative * (1.0 - y) * p - weights.positive * y * (1.0 - p)) / m;
        }
    }
    (loss / m, grad)
}

/// Training-mode forward, weighted loss and exact gradients for every
/// trainable tensor.
pub fn loss_and_grads(
    params: &ModelParams,
    batch: &GraphBatch,
    targets: &EdgeTargets,
    mode: Mode,
) -> Result<(f64, Weights, ForwardCache)> {
    let weights = class_weights(targets)?;
    let cache = forward(params, batch, mode)?;
    let (loss, dlogits) = weighted_bce(&cache.logits, targets, &weights);
    let grads = backward(params, batch, &cache, &dlogits);
    Ok((loss, grads, cache))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn targets(labels: &[f64]) -> EdgeTargets {
        EdgeTargets {
            labels: Array1::from(labels.to_vec()),
            mask: vec![true; labels.len()],
        }
    }

    #[test]
    fn balanced_weights_are_one() {
        let w = class_weights(&targets(&[1.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!((w.positive, w.negative), (1.0, 1.0));
        let w = class_weights(&targets(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!((w.positive, w.negative), (2.0, 4.0 / 6.0));
    }

    #[test]
    fn degenerate_batches() {
        assert!(matches!(
            class_weights(&targets(&[0.0, 0.0])),
            Err(Error::DegenerateBatch { positives: 0, .. })
        ));
        assert!(matches!(
            class_weights(&targets(&[1.0])),
            Err(Error::DegenerateBatch { negatives: 0, .. })
        ));
    }

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let t = targets(&[1.0, 0.0, 1.0, 0.0, 0.0]);
        let w = class_weights(&t).unwrap();
        let logits = t.labels.mapv(|y| if y > 0.5 { 40.0 } else { -40.0 });
        let (loss, grad) = weighted_bce(&logits, &t, &w);
        // clamped at 1e-7: loss = -ln(1 - 1e-7) ~ 1e-7
        assert!(loss < 2e-7, "{loss}");
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn masked_rows_do_not_count() {
        let mut t = targets(&[1.0, 0.0, 1.0]);
        t.mask[2] = false;
        let w = class_weights(&t).unwrap();
        assert_eq!(w.count, 2);
        let logits = Array1::from(vec![0.0, 0.0, 100.0]);
        let (loss, grad) = weighted_bce(&logits, &t, &w);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(grad[2], 0.0);
    }
}
