//! Mini-batch training with Adam, validation metrics and checkpoints.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{encode_with, EncodeOptions, ScenarioGraph};
use crate::grid::GridMap;
use crate::model::{
    class_weights, edge_targets, forward, init_params, loss_and_grads, save_checkpoint,
    update_running_stats, ClassWeights, EdgeTargets, GraphBatch, Mode, ModelConfig, ModelParams,
    Weights, BN_MOMENTUM, PROB_CLAMP,
};
use crate::scenario::{ScenarioSet, Split};
use crate::tsp::{
    cost_matrix, ground_truth_tour, tour_to_labels, LabelCache, LabelGraph, LABEL_SEED,
};
use crate::util::{fmt_f64, sub_seed};

pub const REPORT_HEADER: &str = "epoch,train_loss,val_loss,val_f1,seconds";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Graphs evaluated per forward pass during validation.
const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// `best.ckpt` and `final.ckpt` are written here after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Ground-truth tours are read from and written to this cache.
    pub label_cache: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 20,
            max_epochs: 6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            checkpoint_dir: None,
            label_cache: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        // zero is allowed: it turns an epoch into a pure statistics pass
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        Ok(())
    }
}

/// Parses `key = value` lines into a training and a model configuration.
/// Blank lines and `#` comments are ignored; unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<(TrainConfig, ModelConfig)> {
    let mut train = TrainConfig::default();
    let mut model = ModelConfig::standard();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(format!("line {}: expected `key = value`", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let err =
            |e: &dyn std::fmt::Display| Error::parse(format!("line {}: {key}: {e}", lineno + 1));
        macro_rules! num {
            () => {
                value.parse().map_err(|e| err(&e))?
            };
        }
        match key {
            "learning_rate" => train.learning_rate = num!(),
            "batch_size" => train.batch_size = num!(),
            "max_epochs" => train.max_epochs = num!(),
            "beta1" => train.beta1 = num!(),
            "beta2" => train.beta2 = num!(),
            "epsilon" => train.epsilon = num!(),
            "seed" => train.seed = num!(),
            "checkpoint_dir" => train.checkpoint_dir = Some(PathBuf::from(value)),
            "label_cache" => train.label_cache = Some(PathBuf::from(value)),
            "hidden" => model.hidden = num!(),
            "layers" => model.layers = num!(),
            "mlp_layers" => model.mlp_layers = num!(),
            "n_max" => model.n_max = num!(),
            "normalize_coords" => model.normalize_coords = num!(),
            _ => return Err(err(&"unknown key")),
        }
    }
    train.validate()?;
    model.validate()?;
    Ok((train, model))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Weights,
    v: Weights,
    t: i32,
}

impl Adam {
    pub fn new(config: &TrainConfig, model: &ModelConfig) -> Self {
        Self {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            m: Weights::zeros(model),
            v: Weights::zeros(model),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, weights: &mut Weights, grads: &Weights) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.learning_rate;
        let eps = self.epsilon;
        let grads = grads.tensors();
        for (((mut w, mut m), mut v), (_, g)) in weights
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads)
        {
            ndarray::Zip::from(&mut w)
                .and(&mut m)
                .and(&mut v)
                .and(&g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// An encoded scenario together with its ground-truth label graph.
#[derive(Debug, Clone)]
pub struct LabeledScenario {
    pub graph: ScenarioGraph,
    pub labels: LabelGraph,
}

/// Encodes maps and attaches 2-opt labels, computed in parallel and cached
/// by content hash when a cache is given.
pub fn label_scenarios(
    maps: &[&GridMap],
    model: &ModelConfig,
    cache: Option<&LabelCache>,
) -> Result<Vec<LabeledScenario>> {
    let options = EncodeOptions {
        normalize_coords: model.normalize_coords,
    };
    maps.par_iter()
        .map(|map| {
            let graph = encode_with(map, model.n_max, options)?;
            let costs = cost_matrix(map);
            let tour = match cache {
                Some(c) => c.get_or_compute(map, &costs)?,
                None => ground_truth_tour(map, &costs, LABEL_SEED)?,
            };
            Ok(LabeledScenario {
                labels: tour_to_labels(&tour, model.n_max),
                graph,
            })
        })
        .collect()
}

/// Edge classification quality of a model on labeled scenarios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    /// Weighted cross-entropy with class weights taken over the whole set.
    pub loss: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metrics from per-edge probabilities and targets. A probability equal to
/// the threshold counts as a positive prediction.
pub fn edge_metrics(entries: &[(f64, f64)], weights: &ClassWeights, threshold: f64) -> EvalMetrics {
    let (mut loss, mut tp, mut fp, mut fn_) = (0.0, 0usize, 0usize, 0usize);
    for &(p, y) in entries {
        let c = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let positive = y > 0.5;
        loss -= if positive {
            weights.positive * c.ln()
        } else {
            weights.negative * (1.0 - c).ln()
        };
        match (p >= threshold, positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| {
        if a + b == 0 {
            0.0
        } else {
            a as f64 / (a + b) as f64
        }
    };
    let precision = ratio(tp, fp);
    let recall = ratio(tp, fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    EvalMetrics {
        loss: loss / weights.count as f64,
        precision,
        recall,
        f1,
    }
}

/// Eval-mode loss, precision, recall and F1 over all masked edges.
pub fn evaluate(
    params: &ModelParams,
    scenarios: &[LabeledScenario],
    threshold: f64,
) -> Result<EvalMetrics> {
    if scenarios.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let mut entries = Vec::new();
    for chunk in scenarios.chunks(EVAL_CHUNK) {
        let graphs: Vec<&ScenarioGraph> = chunk.iter().map(|s| &s.graph).collect();
        let labels: Vec<&LabelGraph> = chunk.iter().map(|s| &s.labels).collect();
        let batch = GraphBatch::new(&graphs);
        let targets = edge_targets(&batch, &labels)?;
        let probs = forward(params, &batch, Mode::Eval)?.probabilities();
        for (r, &m) in targets.mask.iter().enumerate() {
            if m {
                entries.push((probs[r], targets.labels[r]));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let pooled = EdgeTargets {
        labels: entries.iter().map(|e| e.1).collect(),
        mask: vec![true; entries.len()],
    };
    let weights = class_weights(&pooled)?;
    Ok(edge_metrics(&entries, &weights, threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean loss over the epoch's trained batches.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Loss of every trained batch, in order.
    pub batch_losses: Vec<f64>,
    pub skipped_batches: usize,
    /// Validation metrics of the untrained initialization.
    pub initial_val: EvalMetrics,
    /// Epoch whose parameters had the lowest validation loss (0 = untrained).
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch,
                fmt_f64(e.train_loss),
                fmt_f64(e.val_loss),
                fmt_f64(e.val_f1),
                fmt_f64(e.seconds)
            );
        }
        out
    }
}

/// Final and best-by-validation parameters of a run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelParams,
    pub last: ModelParams,
    pub report: TrainReport,
}

/// Labels the train and validation splits, then trains.
pub fn train(set: &ScenarioSet, config: &TrainConfig, model: &ModelConfig) -> Result<TrainOutcome> {
    train_observed(set, config, model, |_| {})
}

/// [`train`], reporting each epoch as it completes.
pub fn train_observed(
    set: &ScenarioSet,
    config: &TrainConfig,
    model: &ModelConfig,
    observer: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    let cache = config.label_cache.as_ref().map(LabelCache::new);
    let train_maps: Vec<&GridMap> = set.split(Split::Train).collect();
    let val_maps: Vec<&GridMap> = set.split(Split::Validation).collect();
    if train_maps.is_empty() || val_maps.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs nonempty train and validation splits".into(),
        ));
    }
    let train_set = label_scenarios(&train_maps, model, cache.as_ref())?;
    let val_set = label_scenarios(&val_maps, model, cache.as_ref())?;
    train_labeled(&train_set, &val_set, config, model, observer)
}

/// Trains from freshly initialized parameters on pre-labeled data. The
/// observer sees each epoch as it completes.
pub fn train_labeled(
    train_set: &[LabeledScenario],
    val_set: &[LabeledScenario],
    config: &TrainConfig,
    model: &ModelConfig,
    mut observer: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training split".into()));
    }
    let mut params = init_params(model, sub_seed(config.seed, 0x1417))?;
    train_from(&mut params, train_set, val_set, config, &mut observer)
}

fn train_from(
    params: &mut ModelParams,
    train_set: &[LabeledScenario],
    val_set: &[LabeledScenario],
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let initial_val = evaluate(params, val_set, 0.5)?;
    let mut best = (initial_val.loss, 0usize, params.clone());
    let mut adam = Adam::new(config, &params.config);
    let mut report = TrainReport {
        epochs: Vec::new(),
        batch_losses: Vec::new(),
        skipped_batches: 0,
        initial_val,
        best_epoch: 0,
    };

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(
            config.seed,
            epoch as u64,
        )));
        let mut epoch_losses = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let graphs: Vec<&ScenarioGraph> = chunk.iter().map(|&k| &train_set[k].graph).collect();
            let labels: Vec<&LabelGraph> = chunk.iter().map(|&k| &train_set[k].labels).collect();
            let batch = GraphBatch::new(&graphs);
            let targets = edge_targets(&batch, &labels)?;
            let (loss, grads, cache) = match loss_and_grads(params, &batch, &targets, Mode::Train) {
                Ok(r) => r,
                Err(Error::DegenerateBatch { .. }) => {
                    report.skipped_batches += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            update_running_stats(params, &cache, &batch, BN_MOMENTUM);
            adam.step(&mut params.weights, &grads);
            if !params.weights.all_finite() {
                return Err(Error::NonFiniteActivation(format!(
                    "parameters after epoch {epoch} step"
                )));
            }
            epoch_losses.push(loss);
        }
        let train_loss = if epoch_losses.is_empty() {
            f64::NAN
        } else {
            epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64
        };
        report.batch_losses.extend(&epoch_losses);

        let val = evaluate(params, val_set, 0.5)?;
        if val.loss < best.0 {
            best = (val.loss, epoch, params.clone());
        }
        if let Some(dir) = &config.checkpoint_dir {
            save_checkpoint(&best.2, &dir.join(BEST_CHECKPOINT))?;
            save_checkpoint(params, &dir.join(FINAL_CHECKPOINT))?;
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss: val.loss,
            val_f1: val.f1,
            seconds: started.elapsed().as_secs_f64(),
        };
        observer(&stats);
        report.epochs.push(stats);
    }
    report.best_epoch = best.1;
    Ok(TrainOutcome {
        best: best.2,
        last: params.clone(),
        report,
    })
}

/// Writes the report CSV atomically.
pub fn save_report(report: &TrainReport, path: &Path) -> Result<()> {
    crate::util::atomic_write(path, report.to_csv().as_bytes())
}
