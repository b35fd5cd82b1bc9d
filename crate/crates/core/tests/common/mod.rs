#![allow(dead_code)]

use covernet::graph::{encode, ScenarioGraph};
use covernet::grid::GridMap;
use covernet::model::{
    class_weights, forward, weighted_bce, EdgeTargets, GraphBatch, Mode, ModelParams,
};
use covernet::scenario::GeneratorConfig;
use covernet::tsp::{cost_matrix, ground_truth_tour, tour_to_labels, LabelGraph};

/// Training-mode weighted loss, recomputed from scratch.
pub fn loss_at(params: &ModelParams, batch: &GraphBatch, targets: &EdgeTargets) -> f64 {
    let w = class_weights(targets).unwrap();
    let cache = forward(params, batch, Mode::Train).unwrap();
    weighted_bce(&cache.logits, targets, &w).0
}

/// Fourth-order central difference of the loss in flat parameter `k`.
pub fn central_difference(
    params: &ModelParams,
    batch: &GraphBatch,
    targets: &EdgeTargets,
    k: usize,
    step: f64,
) -> f64 {
    let mut p = params.clone();
    let x0 = params.weights.get_flat(k);
    let mut at = |x: f64| {
        p.weights.set_flat(k, x);
        loss_at(&p, batch, targets)
    };
    let f2p = at(x0 + 2.0 * step);
    let f1p = at(x0 + step);
    let f1m = at(x0 - step);
    let f2m = at(x0 - 2.0 * step);
    (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * step)
}

/// Random small map with at most `max_free` free cells.
pub fn small_map(seed: u64, max_free: usize) -> GridMap {
    let shapes = [
        (2, 3, 0.0),
        (3, 3, 0.0),
        (2, 4, 0.0),
        (3, 3, 0.25),
        (3, 4, 0.25),
        (4, 4, 0.5),
        (3, 4, 0.4),
    ];
    let mut s = seed;
    loop {
        let (r, c, d) = shapes[(s % shapes.len() as u64) as usize];
        if let Ok(m) = GeneratorConfig::new(r, c, 1.0).generate(d, s) {
            if m.free_count() <= max_free {
                return m;
            }
        }
        s = s
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
    }
}

pub fn labeled(map: &GridMap, n_max: usize) -> (ScenarioGraph, LabelGraph) {
    let graph = encode(map, n_max).unwrap();
    let costs = cost_matrix(map);
    let tour = ground_truth_tour(map, &costs, 0).unwrap();
    (graph, tour_to_labels(&tour, n_max))
}

/// Moves batch-norm scale and shift away from their initial 1 and 0 so the
/// check does not sit on a ReLU kink in symmetric maps.
pub fn randomize_norm(params: &mut ModelParams, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for c in &mut params.weights.conv {
        for g in [&mut c.node_gamma, &mut c.edge_gamma] {
            g.mapv_inplace(|_| rng.random_range(0.5..1.5));
        }
        for b in [&mut c.node_beta, &mut c.edge_beta] {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
    }
}

const GRADIENT_STEPS: [f64; 4] = [1e-4, 1e-5, 1e-6, 1e-7];
// below this magnitude both values are treated as zero up to roundoff
const ZERO_FLOOR: f64 = 1e-8;

pub fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < ZERO_FLOOR {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Best relative error of `analytic` against the finite differences of
/// scalar `k` over all step sizes.
pub fn finite_difference_error(
    params: &ModelParams,
    batch: &GraphBatch,
    targets: &EdgeTargets,
    k: usize,
    analytic: f64,
) -> f64 {
    GRADIENT_STEPS
        .iter()
        .map(|&step| {
            relative_error(
                analytic,
                central_difference(params, batch, targets, k, step),
            )
        })
        .fold(f64::INFINITY, f64::min)
}

/// Worst relative error between analytic and finite-difference gradients
/// over every scalar parameter, for one (params, map) pair per seed.
///
/// Larger steps keep roundoff down for small gradients; smaller ones step
/// over ReLU kinks. The best agreement over the steps counts, since a wrong
/// derivative disagrees at every step. Returns the worst error and where.
pub fn gradient_check(seeds: std::ops::Range<u64>) -> (f64, String) {
    use covernet::model::{edge_targets, init_params, loss_and_grads, ModelConfig};
    let cfg = ModelConfig {
        n_max: 9,
        ..ModelConfig::small(6, 2, 2)
    };
    let mut worst = (0.0f64, String::new());
    for seed in seeds {
        let map = small_map(seed, 9);
        let (graph, labels) = labeled(&map, 9);
        let mut params = init_params(&cfg, 100 + seed).unwrap();
        randomize_norm(&mut params, seed);
        let batch = GraphBatch::new(&[&graph]);
        let targets = edge_targets(&batch, &[&labels]).unwrap();
        let (_, grads, _) = loss_and_grads(&params, &batch, &targets, Mode::Train).unwrap();
        for k in 0..grads.num_scalars() {
            let a = grads.get_flat(k);
            let err = finite_difference_error(&params, &batch, &targets, k, a);
            if err > worst.0 {
                worst = (err, format!("seed {seed}, scalar {k}, analytic {a:e}"));
            }
        }
    }
    worst
}
