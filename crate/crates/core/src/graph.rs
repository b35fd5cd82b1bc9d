//! Fixed-capacity graph view of a grid map: node centers, the adjacency
//! distance matrix and the edge-type indicator.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{Cell, GridMap};

/// Indicator value for adjacent free pairs.
pub const ADJACENT: u8 = 1;
/// Indicator value on the diagonal of real nodes.
pub const SELF_LOOP: u8 = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EncodeOptions {
    /// Scale node coordinates into [0, 1] by the map extent.
    pub normalize_coords: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioGraph {
    n_max: usize,
    n_free: usize,
    /// `n_max x 2` cell centers; padding rows are zero.
    pub coords: Array2<f64>,
    /// Pairwise distance between adjacent free cells, zero elsewhere.
    pub dist: Array2<f64>,
    pub indicator: Array2<u8>,
    cells: Vec<Cell>,
    /// cell index -> slot
    slot_of: Vec<Option<usize>>,
    /// Per real node: adjacent slots in increasing order.
    neighbors: Vec<Vec<usize>>,
}

impl ScenarioGraph {
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn neighbors(&self, slot: usize) -> &[usize] {
        &self.neighbors[slot]
    }

    /// Slot holding a free cell, if any.
    pub fn node_index(&self, cell: Cell, cols: usize) -> Option<usize> {
        self.slot_of
            .get(cell.row * cols + cell.col)
            .copied()
            .flatten()
    }

    pub fn decode_node(&self, slot: usize) -> Result<Cell> {
        self.cells.get(slot).copied().ok_or(Error::OutOfRange {
            slot,
            n_free: self.n_free,
        })
    }

    /// The same graph with slots relabeled: new slot `perm[k]` holds old slot `k`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_free;
        if perm.len() != n || {
            let mut seen = vec![false; n];
            perm.iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        } {
            return Err(Error::InvalidArgument(
                "not a permutation of the real slots".into(),
            ));
        }
        let mut out = self.clone();
        let mut cells = vec![Cell::new(0, 0); n];
        for k in 0..n {
            let p = perm[k];
            cells[p] = self.cells[k];
            out.coords.row_mut(p).assign(&self.coords.row(k));
            for l in 0..n {
                out.dist[[p, perm[l]]] = self.dist[[k, l]];
                out.indicator[[p, perm[l]]] = self.indicator[[k, l]];
            }
        }
        out.cells = cells;
        for slot in out.slot_of.iter_mut().flatten() {
            *slot = perm[*slot];
        }
        out.neighbors = vec![Vec::new(); n];
        for k in 0..n {
            let mut ns: Vec<usize> = self.neighbors[k].iter().map(|&j| perm[j]).collect();
            ns.sort_unstable();
            out.neighbors[perm[k]] = ns;
        }
        Ok(out)
    }
}

/// Encodes a map with free cells enumerated in row-major order.
pub fn encode(map: &GridMap, n_max: usize) -> Result<ScenarioGraph> {
    encode_with(map, n_max, EncodeOptions::default())
}

pub fn encode_with(map: &GridMap, n_max: usize, options: EncodeOptions) -> Result<ScenarioGraph> {
    let cells = map.free_cells();
    let n_free = cells.len();
    if n_free > n_max {
        return Err(Error::CapacityExceeded {
            free: n_free,
            capacity: n_max,
        });
    }
    let mut slot_of = vec![None; map.rows() * map.cols()];
    for (k, &c) in cells.iter().enumerate() {
        slot_of[map.index(c)] = Some(k);
    }

    let (sx, sy) = if options.normalize_coords {
        (
            1.0 / (map.cols() as f64 * map.cell_size()),
            1.0 / (map.rows() as f64 * map.cell_size()),
        )
    } else {
        (1.0, 1.0)
    };

    let mut coords = Array2::zeros((n_max, 2));
    let mut dist = Array2::zeros((n_max, n_max));
    let mut indicator = Array2::zeros((n_max, n_max));
    let mut neighbors = vec![Vec::new(); n_free];
    for (i, &cell) in cells.iter().enumerate() {
        let [x, y] = map.center(cell);
        coords[[i, 0]] = x * sx;
        coords[[i, 1]] = y * sy;
        indicator[[i, i]] = SELF_LOOP;
        for (n, _) in map.neighbors(cell) {
            let j = slot_of[map.index(n)].expect("free neighbor has a slot");
            let [nx, ny] = map.center(n);
            dist[[i, j]] = (x - nx).hypot(y - ny);
            indicator[[i, j]] = ADJACENT;
            neighbors[i].push(j);
        }
        neighbors[i].sort_unstable();
    }

    Ok(ScenarioGraph {
        n_max,
        n_free,
        coords,
        dist,
        indicator,
        cells,
        slot_of,
        neighbors,
    })
}
