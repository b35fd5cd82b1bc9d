//! Ground-truth coverage tours: grid-path cost matrix, nearest-neighbor
//! construction, open-path 2-opt and an exhaustive solver for tiny maps.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{parse_field, GridMap};
use crate::util::atomic_write;

pub const LABELS_MAGIC: &str = "cpp-labels v1";
pub const BRUTE_FORCE_MAX: usize = 10;
const IMPROVEMENT_EPS: f64 = 1e-9;

/// Shortest collision-free grid-path lengths between free cells, indexed by
/// row-major free-cell slot (the same slots the graph encoder uses).
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    cost: Array2<f64>,
}

impl CostMatrix {
    pub fn from_matrix(cost: Array2<f64>) -> Result<Self> {
        if cost.nrows() != cost.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "cost matrix {:?} is not square",
                cost.dim()
            )));
        }
        Ok(Self { cost })
    }

    pub fn n(&self) -> usize {
        self.cost.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cost[[i, j]]
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.cost
    }

    /// Open-path length of a visiting order.
    pub fn path_length(&self, order: &[usize]) -> f64 {
        order.windows(2).map(|w| self.get(w[0], w[1])).sum()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    cell: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All-pairs shortest paths over free cells (Dijkstra from every free cell).
pub fn cost_matrix(map: &GridMap) -> CostMatrix {
    let cells = map.free_cells();
    let n = cells.len();
    let total = map.rows() * map.cols();
    let mut slot_of = vec![usize::MAX; total];
    for (k, &c) in cells.iter().enumerate() {
        slot_of[map.index(c)] = k;
    }
    let mut cost = Array2::from_elem((n, n), f64::INFINITY);
    let mut dist = vec![f64::INFINITY; total];
    let mut heap = BinaryHeap::new();
    for (src, &source) in cells.iter().enumerate() {
        dist.fill(f64::INFINITY);
        let s = map.index(source);
        dist[s] = 0.0;
        heap.push(Frontier { dist: 0.0, cell: s });
        while let Some(Frontier { dist: d, cell }) = heap.pop() {
            if d > dist[cell] {
                continue;
            }
            for (nb, step) in map.neighbors(map.cell_at(cell)) {
                let k = map.index(nb);
                let nd = d + step;
                if nd < dist[k] {
                    dist[k] = nd;
                    heap.push(Frontier { dist: nd, cell: k });
                }
            }
        }
        for (dst, &c) in cells.iter().enumerate() {
            cost[[src, dst]] = dist[map.index(c)];
        }
    }
    debug_assert!(
        cost.iter().all(|c| c.is_finite()),
        "free cells must be connected"
    );
    CostMatrix { cost }
}

/// A visiting order over node slots, starting at the start node.
#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    pub order: Vec<usize>,
    pub length: f64,
}

impl Tour {
    pub fn new(order: Vec<usize>, costs: &CostMatrix) -> Self {
        let length = costs.path_length(&order);
        Self { order, length }
    }

    /// Checks the order is a permutation of `0..n` beginning at `start`.
    pub fn is_feasible(&self, n: usize, start: usize) -> bool {
        if self.order.len() != n || self.order.first() != Some(&start) {
            return false;
        }
        let mut seen = vec![false; n];
        self.order
            .iter()
            .all(|&k| k < n && !std::mem::replace(&mut seen[k], true))
    }
}

/// Greedy nearest-neighbor path. Ties go to the candidate ranked first by a
/// seed-derived priority; seed 0 ranks by slot index.
pub fn nearest_neighbor(costs: &CostMatrix, start: usize, seed: u64) -> Tour {
    let n = costs.n();
    let mut priority: Vec<usize> = (0..n).collect();
    if seed != 0 {
        priority.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut current = start;
    visited[start] = true;
    order.push(start);
    for _ in 1..n {
        let mut best: Option<(f64, usize, usize)> = None;
        for j in 0..n {
            if visited[j] {
                continue;
            }
            let c = costs.get(current, j);
            let better = match best {
                None => true,
                Some((bc, bp, _)) => c < bc || (c == bc && priority[j] < bp),
            };
            if better {
                best = Some((c, priority[j], j));
            }
        }
        let (_, _, next) = best.expect("an unvisited node remains");
        visited[next] = true;
        order.push(next);
        current = next;
    }
    Tour::new(order, costs)
}

/// Length change from reversing `order[a..=b]` in an open path (`a >= 1`).
#[inline]
fn reversal_delta(costs: &CostMatrix, order: &[usize], a: usize, b: usize) -> f64 {
    let prev = order[a - 1];
    let mut delta = costs.get(prev, order[b]) - costs.get(prev, order[a]);
    if let Some(&next) = order.get(b + 1) {
        delta += costs.get(order[a], next) - costs.get(order[b], next);
    }
    delta
}

/// Applies first-improvement segment reversals to `tour`, restarting the scan
/// after every accepted move, until no reversal shortens the path.
pub fn two_opt_improve(costs: &CostMatrix, mut tour: Tour) -> Tour {
    let n = tour.order.len();
    'scan: loop {
        for a in 1..n {
            for b in a + 1..n {
                if reversal_delta(costs, &tour.order, a, b) < -IMPROVEMENT_EPS {
                    tour.order[a..=b].reverse();
                    continue 'scan;
                }
            }
        }
        break;
    }
    tour.length = costs.path_length(&tour.order);
    tour
}

/// Nearest-neighbor construction followed by open-path 2-opt.
pub fn two_opt(costs: &CostMatrix, start: usize, seed: u64) -> Result<Tour> {
    if costs.n() < 2 {
        return Err(Error::InvalidArgument(format!(
            "2-opt needs at least 2 nodes, got {}",
            costs.n()
        )));
    }
    if start >= costs.n() {
        return Err(Error::OutOfRange {
            slot: start,
            n_free: costs.n(),
        });
    }
    Ok(two_opt_improve(costs, nearest_neighbor(costs, start, seed)))
}

/// True when no single segment reversal strictly shortens the path.
pub fn is_two_opt_optimal(costs: &CostMatrix, tour: &Tour) -> bool {
    let n = tour.order.len();
    (1..n).all(|a| (a + 1..n).all(|b| reversal_delta(costs, &tour.order, a, b) >= -IMPROVEMENT_EPS))
}

/// Exact shortest open path from `start` by depth-first enumeration in
/// lexicographic order; the first minimum found wins ties.
pub fn brute_force(costs: &CostMatrix, start: usize) -> Result<Tour> {
    let n = costs.n();
    if n > BRUTE_FORCE_MAX {
        return Err(Error::TooLarge {
            n,
            max: BRUTE_FORCE_MAX,
        });
    }
    if start >= n {
        return Err(Error::OutOfRange {
            slot: start,
            n_free: n,
        });
    }

    struct Search<'a> {
        costs: &'a CostMatrix,
        visited: Vec<bool>,
        path: Vec<usize>,
        best: Option<(f64, Vec<usize>)>,
    }

    impl Search<'_> {
        fn run(&mut self, partial: f64) {
            if let Some((best, _)) = &self.best {
                if partial >= *best - IMPROVEMENT_EPS {
                    return;
                }
            }
            if self.path.len() == self.visited.len() {
                self.best = Some((partial, self.path.clone()));
                return;
            }
            let last = *self.path.last().unwrap();
            for j in 0..self.visited.len() {
                if self.visited[j] {
                    continue;
                }
                self.visited[j] = true;
                self.path.push(j);
                self.run(partial + self.costs.get(last, j));
                self.path.pop();
                self.visited[j] = false;
            }
        }
    }

    let mut search = Search {
        costs,
        visited: vec![false; n],
        path: vec![start],
        best: None,
    };
    search.visited[start] = true;
    search.run(0.0);
    let (_, order) = search.best.expect("at least one order exists");
    Ok(Tour::new(order, costs))
}

/// Symmetric 0/1 membership of consecutive tour pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGraph {
    pub matrix: Array2<u8>,
}

impl LabelGraph {
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.matrix[[i, j]]
    }

    /// Number of undirected tour edges marked.
    pub fn undirected_count(&self) -> usize {
        let n = self.matrix.nrows();
        (0..n)
            .map(|i| (i + 1..n).filter(|&j| self.matrix[[i, j]] == 1).count())
            .sum()
    }
}

pub fn tour_to_labels(tour: &Tour, n_max: usize) -> LabelGraph {
    let mut matrix = Array2::zeros((n_max, n_max));
    for w in tour.order.windows(2) {
        matrix[[w[0], w[1]]] = 1;
        matrix[[w[1], w[0]]] = 1;
    }
    LabelGraph { matrix }
}

/// Serializes a tour as its consecutive pairs.
pub fn labels_to_text(tour: &Tour) -> String {
    let mut out = String::from(LABELS_MAGIC);
    out.push('\n');
    for w in tour.order.windows(2) {
        out.push_str(&format!("{} {}\n", w[0], w[1]));
    }
    out
}

/// Rebuilds a tour from its pair list; an empty list is the single-node tour at `start`.
pub fn labels_from_text(text: &str, costs: &CostMatrix, start: usize) -> Result<Tour> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse("empty label file"))?;
    if header != LABELS_MAGIC {
        return Err(Error::FormatVersionMismatch {
            expected: LABELS_MAGIC.into(),
            found: header.into(),
        });
    }
    let mut order = vec![start];
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (i, j) = line
            .split_once(' ')
            .ok_or_else(|| Error::parse(format!("bad label pair `{line}`")))?;
        let i: usize = parse_field(i, "label slot")?;
        let j: usize = parse_field(j, "label slot")?;
        if i != *order.last().unwrap() {
            return Err(Error::parse(format!(
                "label pair {i} {j} does not continue the tour"
            )));
        }
        order.push(j);
    }
    let tour = Tour::new(order, costs);
    if !tour.is_feasible(costs.n(), start) {
        return Err(Error::parse("label file does not describe a covering tour"));
    }
    Ok(tour)
}

/// Seed used for ground-truth tours unless a caller overrides it.
pub const LABEL_SEED: u64 = 0;

/// 2-opt tour for a map, with the degenerate single-cell case handled.
pub fn ground_truth_tour(map: &GridMap, costs: &CostMatrix, seed: u64) -> Result<Tour> {
    let start = start_slot(map);
    if costs.n() == 1 {
        return Ok(Tour::new(vec![start], costs));
    }
    two_opt(costs, start, seed)
}

/// Slot of the start cell in row-major free-cell order.
pub fn start_slot(map: &GridMap) -> usize {
    let s = map.index(map.start());
    map.occupancy()[..s].iter().filter(|&&o| !o).count()
}

/// On-disk cache of ground-truth tours keyed by scenario content hash.
#[derive(Debug, Clone)]
pub struct LabelCache {
    dir: PathBuf,
}

impl LabelCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, map: &GridMap) -> PathBuf {
        self.dir.join(format!("{}.labels", map.content_hash()))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Loads the cached tour or computes and stores it.
    pub fn get_or_compute(&self, map: &GridMap, costs: &CostMatrix) -> Result<Tour> {
        let path = self.path_for(map);
        if path.exists() {
            return labels_from_text(&fs::read_to_string(&path)?, costs, start_slot(map));
        }
        let tour = ground_truth_tour(map, costs, LABEL_SEED)?;
        atomic_write(&path, labels_to_text(&tour).as_bytes())?;
        Ok(tour)
    }
}
