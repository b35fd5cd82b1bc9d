//! From edge heat to a coverage trajectory: greedy tour construction over
//! growing Chebyshev neighborhoods, then A* stitching between tour stops.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::graph::{encode_with, EncodeOptions, ScenarioGraph};
use crate::grid::{parse_field, Cell, GridMap};
use crate::model::{predict, HeatGraph, ModelParams};
use crate::tsp::{start_slot, Tour};
use crate::util::fmt_f64;

pub const TRAJECTORY_MAGIC: &str = "cpp-traj v1";

/// A tour over free cells realized as a grid path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Visiting order of the free cells; its length is the stitched length.
    pub tour: Tour,
    /// Every cell traversed, revisits included.
    pub path: Vec<Cell>,
    /// Meters.
    pub length: f64,
}

/// Visits every free cell starting at `start`. From the current cell the
/// next stop is the unvisited cell within the smallest Chebyshev radius that
/// maximizes `(p_ij + p_ji) / 2`; equal scores go to the nearer cell center,
/// then to the lower slot.
pub fn greedy_decode(
    heat: &HeatGraph,
    graph: &ScenarioGraph,
    map: &GridMap,
    start: usize,
) -> Vec<usize> {
    greedy_decode_by(graph, map, start, |i, j| heat.symmetric(i, j))
}

/// [`greedy_decode`] with an arbitrary pair score; NaN scores rank lowest.
pub fn greedy_decode_by(
    graph: &ScenarioGraph,
    map: &GridMap,
    start: usize,
    mut score: impl FnMut(usize, usize) -> f64,
) -> Vec<usize> {
    let n = graph.n_free();
    let cells = graph.cells();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut current = start;
    visited[start] = true;
    order.push(start);
    let max_radius = map.rows().max(map.cols());

    while order.len() < n {
        let here = cells[current];
        let [hx, hy] = map.center(here);
        let mut best: Option<(f64, f64, usize)> = None;
        for r in 1..=max_radius {
            for cell in ring(map, here, r) {
                let Some(j) = graph.node_index(cell, map.cols()) else {
                    continue;
                };
                if visited[j] {
                    continue;
                }
                let s = score(current, j);
                let s = if s.is_nan() { f64::NEG_INFINITY } else { s };
                let [x, y] = map.center(cell);
                let d = (x - hx).hypot(y - hy);
                let better = match best {
                    None => true,
                    Some((bs, bd, bj)) => s
                        .total_cmp(&bs)
                        .then_with(|| bd.total_cmp(&d))
                        .then_with(|| bj.cmp(&j))
                        .is_gt(),
                };
                if better {
                    best = Some((s, d, j));
                }
            }
            if best.is_some() {
                break;
            }
        }
        let (_, _, next) =
            best.expect("connected map leaves an unvisited cell within the map diameter");
        visited[next] = true;
        order.push(next);
        current = next;
    }
    order
}

/// In-bounds cells at Chebyshev distance exactly `r` from `center`.
fn ring(map: &GridMap, center: Cell, r: usize) -> impl Iterator<Item = Cell> + '_ {
    let (cr, cc, r) = (center.row as isize, center.col as isize, r as isize);
    (-r..=r)
        .flat_map(move |dr| {
            let step = if dr.abs() == r { 1 } else { 2 * r };
            (-r..=r)
                .step_by(step as usize)
                .map(move |dc| (cr + dr, cc + dc))
        })
        .filter(move |&(row, col)| map.in_bounds(row, col))
        .map(|(row, col)| Cell::new(row as usize, col as usize))
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    g: f64,
    cell: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // max-heap: lower f, then higher g, then lower cell index pops first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| self.g.total_cmp(&other.g))
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest grid path from `from` to `to` (both included) and its length,
/// by A* with the straight-line distance between centers as heuristic.
pub fn astar(map: &GridMap, from: Cell, to: Cell) -> Option<(Vec<Cell>, f64)> {
    if !map.is_free(from) || !map.is_free(to) {
        return None;
    }
    if from == to {
        return Some((vec![from], 0.0));
    }
    let goal = map.center(to);
    let h = |c: Cell| {
        let [x, y] = map.center(c);
        (x - goal[0]).hypot(y - goal[1])
    };
    let total = map.rows() * map.cols();
    let mut g = vec![f64::INFINITY; total];
    let mut parent = vec![usize::MAX; total];
    let mut closed = vec![false; total];
    let mut open = BinaryHeap::new();
    let s = map.index(from);
    let t = map.index(to);
    g[s] = 0.0;
    open.push(Open {
        f: h(from),
        g: 0.0,
        cell: s,
    });
    while let Some(Open { g: gc, cell, .. }) = open.pop() {
        if closed[cell] {
            continue;
        }
        closed[cell] = true;
        if cell == t {
            let mut path = vec![to];
            let mut k = t;
            while k != s {
                k = parent[k];
                path.push(map.cell_at(k));
            }
            path.reverse();
            return Some((path, gc));
        }
        for (nb, step) in map.neighbors(map.cell_at(cell)) {
            let k = map.index(nb);
            let ng = gc + step;
            if !closed[k] && ng < g[k] {
                g[k] = ng;
                parent[k] = cell;
                open.push(Open {
                    f: ng + h(nb),
                    g: ng,
                    cell: k,
                });
            }
        }
    }
    None
}

/// Joins consecutive tour stops by A* paths. Shared segment endpoints
/// appear once in the path.
pub fn stitch(order: &[usize], graph: &ScenarioGraph, map: &GridMap) -> Trajectory {
    let cells = graph.cells();
    let mut path = Vec::with_capacity(order.len());
    let mut length = 0.0;
    if let Some(&first) = order.first() {
        path.push(cells[first]);
    }
    for w in order.windows(2) {
        let (a, b) = (cells[w[0]], cells[w[1]]);
        if map.are_adjacent(a, b) {
            // same step lengths the neighbor iterator reports
            let diagonal = a.row != b.row && a.col != b.col;
            length += if diagonal {
                std::f64::consts::SQRT_2
            } else {
                1.0
            } * map.cell_size();
            path.push(b);
            continue;
        }
        let (segment, len) = astar(map, a, b).expect("free cells are connected");
        length += len;
        path.extend_from_slice(&segment[1..]);
    }
    Trajectory {
        tour: Tour {
            order: order.to_vec(),
            length,
        },
        path,
        length,
    }
}

/// Trajectory produced by the learned planner and the time it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub trajectory: Trajectory,
    /// Encode, forward pass, decoding and stitching.
    pub inference: Duration,
}

/// Encode, eval-mode forward, greedy decoding and stitching.
pub fn plan(map: &GridMap, params: &ModelParams) -> Result<Plan> {
    let started = Instant::now();
    let options = EncodeOptions {
        normalize_coords: params.config.normalize_coords,
    };
    let graph = encode_with(map, params.config.n_max, options)?;
    let heat = predict(params, &[&graph])?
        .pop()
        .expect("one heat graph per input graph");
    let order = greedy_decode(&heat, &graph, map, start_slot(map));
    let trajectory = stitch(&order, &graph, map);
    Ok(Plan {
        trajectory,
        inference: started.elapsed(),
    })
}

/// Contents of a trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub scenario_hash: String,
    pub trajectory: Trajectory,
    pub inference_ms: f64,
}

impl TrajectoryRecord {
    pub fn to_text(&self) -> String {
        let t = &self.trajectory;
        let mut out = format!("{TRAJECTORY_MAGIC}\n{}\n", self.scenario_hash);
        out.push_str("tour");
        for k in &t.tour.order {
            let _ = write!(out, " {k}");
        }
        out.push_str("\npath");
        for c in &t.path {
            let _ = write!(out, " {c}");
        }
        let _ = writeln!(out, "\nlength {}", fmt_f64(t.length));
        let _ = writeln!(out, "inference_ms {}", fmt_f64(self.inference_ms));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(format!("trajectory file ends before {what}")))
        };
        let magic = next("header")?;
        if magic != TRAJECTORY_MAGIC {
            return Err(Error::FormatVersionMismatch {
                expected: TRAJECTORY_MAGIC.into(),
                found: magic.into(),
            });
        }
        let scenario_hash = next("scenario hash")?.trim().to_string();
        let tagged = |line: &'_ str, tag: &str| -> Result<Vec<String>> {
            let mut it = line.split_whitespace();
            if it.next() != Some(tag) {
                return Err(Error::parse(format!("expected `{tag}` line")));
            }
            Ok(it.map(str::to_string).collect())
        };
        let order = tagged(next("tour")?, "tour")?
            .iter()
            .map(|s| parse_field(s, "tour slot"))
            .collect::<Result<Vec<usize>>>()?;
        let path = tagged(next("path")?, "path")?
            .iter()
            .map(|s| {
                let (r, c) = s
                    .split_once(',')
                    .ok_or_else(|| Error::parse(format!("bad cell `{s}`")))?;
                Ok(Cell::new(parse_field(r, "row")?, parse_field(c, "col")?))
            })
            .collect::<Result<Vec<Cell>>>()?;
        let scalar = |fields: Vec<String>, what: &str| -> Result<f64> {
            match fields.as_slice() {
                [v] => parse_field(v, what),
                _ => Err(Error::parse(format!("expected one value for {what}"))),
            }
        };
        let length = scalar(tagged(next("length")?, "length")?, "length")?;
        let inference_ms = scalar(
            tagged(next("inference time")?, "inference_ms")?,
            "inference time",
        )?;
        Ok(Self {
            scenario_hash,
            trajectory: Trajectory {
                tour: Tour { order, length },
                path,
                length,
            },
            inference_ms,
        })
    }
}
