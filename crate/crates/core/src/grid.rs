//! Occupancy grid tiling of a rectangular search area.

use std::collections::VecDeque;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCENARIO_MAGIC: &str = "cpp-scenario v1";

/// A grid cell as (row, col). Row 0 is the top of the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn chebyshev(self, other: Cell) -> usize {
        self.row
            .abs_diff(other.row)
            .max(self.col.abs_diff(other.col))
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.row, self.col)
    }
}

/// Which neighboring cells count as adjacent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    /// Neighbor offsets with their step length in cells.
    pub fn offsets(self) -> &'static [(isize, isize, f64)] {
        const FOUR: [(isize, isize, f64); 4] =
            [(-1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0), (1, 0, 1.0)];
        const EIGHT: [(isize, isize, f64); 8] = [
            (-1, -1, std::f64::consts::SQRT_2),
            (-1, 0, 1.0),
            (-1, 1, std::f64::consts::SQRT_2),
            (0, -1, 1.0),
            (0, 1, 1.0),
            (1, -1, std::f64::consts::SQRT_2),
            (1, 0, 1.0),
            (1, 1, std::f64::consts::SQRT_2),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// Rectangular tiling with an obstacle/free split and a start cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    rows: usize,
    cols: usize,
    cell_size: f64,
    /// Row-major, `true` = obstacle.
    occupancy: Vec<bool>,
    start: Cell,
    connectivity: Connectivity,
}

impl GridMap {
    /// Builds a map and checks every invariant: free start, at least one free
    /// cell, all free cells connected.
    pub fn new(
        rows: usize,
        cols: usize,
        cell_size: f64,
        occupancy: Vec<bool>,
        start: Cell,
        connectivity: Connectivity,
    ) -> Result<Self> {
        let map = Self::new_unchecked(rows, cols, cell_size, occupancy, start, connectivity)?;
        if map.is_obstacle(start) {
            return Err(Error::InvalidMap(format!(
                "start cell {start} is an obstacle"
            )));
        }
        if !map.is_connected() {
            return Err(Error::InvalidMap("free cells are not connected".into()));
        }
        Ok(map)
    }

    /// Shape checks only; connectivity is left to the caller.
    pub(crate) fn new_unchecked(
        rows: usize,
        cols: usize,
        cell_size: f64,
        occupancy: Vec<bool>,
        start: Cell,
        connectivity: Connectivity,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidMap(format!("empty grid {rows}x{cols}")));
        }
        if occupancy.len() != rows * cols {
            return Err(Error::InvalidMap(format!(
                "occupancy has {} cells, expected {}",
                occupancy.len(),
                rows * cols
            )));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::InvalidMap(format!(
                "cell size {cell_size} must be positive"
            )));
        }
        if start.row >= rows || start.col >= cols {
            return Err(Error::InvalidMap(format!(
                "start {start} outside {rows}x{cols}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            cell_size,
            occupancy,
            start,
            connectivity,
        })
    }

    /// An obstacle-free map.
    pub fn open(rows: usize, cols: usize, cell_size: f64) -> Result<Self> {
        Self::new(
            rows,
            cols,
            cell_size,
            vec![false; rows * cols],
            Cell::new(0, 0),
            Connectivity::Four,
        )
    }

    /// Parses the `#`/`.` picture used in scenario files. Start is (0, 0).
    pub fn from_ascii(picture: &str, connectivity: Connectivity) -> Result<Self> {
        let lines: Vec<&str> = picture
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect();
        let rows = lines.len();
        let cols = lines.first().map_or(0, |l| l.len());
        let mut occupancy = Vec::with_capacity(rows * cols);
        for line in &lines {
            if line.len() != cols {
                return Err(Error::parse("ragged map picture"));
            }
            for ch in line.chars() {
                occupancy.push(parse_cell_char(ch)?);
            }
        }
        Self::new(rows, cols, 1.0, occupancy, Cell::new(0, 0), connectivity)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn with_connectivity(mut self, connectivity: Connectivity) -> Result<Self> {
        self.connectivity = connectivity;
        if !self.is_connected() {
            return Err(Error::InvalidMap("free cells are not connected".into()));
        }
        Ok(self)
    }

    pub fn with_start(mut self, start: Cell) -> Result<Self> {
        if start.row >= self.rows || start.col >= self.cols || self.is_obstacle(start) {
            return Err(Error::InvalidMap(format!(
                "start {start} is not a free cell"
            )));
        }
        self.start = start;
        Ok(self)
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.cols + cell.col
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index / self.cols, index % self.cols)
    }

    pub fn in_bounds(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.rows && (col as usize) < self.cols
    }

    pub fn is_obstacle(&self, cell: Cell) -> bool {
        self.occupancy[self.index(cell)]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        cell.row < self.rows && cell.col < self.cols && !self.is_obstacle(cell)
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    pub fn obstacle_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    pub fn free_count(&self) -> usize {
        self.occupancy.len() - self.obstacle_count()
    }

    /// Realized obstacle fraction.
    pub fn density(&self) -> f64 {
        self.obstacle_count() as f64 / self.occupancy.len() as f64
    }

    /// Free cells in row-major order.
    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.occupancy.len())
            .filter(|&i| !self.occupancy[i])
            .map(|i| self.cell_at(i))
            .collect()
    }

    /// Free neighbors under the map's connectivity, with step lengths in meters.
    pub fn neighbors(&self, cell: Cell) -> impl Iterator<Item = (Cell, f64)> + '_ {
        self.connectivity
            .offsets()
            .iter()
            .filter_map(move |&(dr, dc, len)| {
                let r = cell.row as isize + dr;
                let c = cell.col as isize + dc;
                if !self.in_bounds(r, c) {
                    return None;
                }
                let n = Cell::new(r as usize, c as usize);
                (!self.is_obstacle(n)).then_some((n, len * self.cell_size))
            })
    }

    pub fn are_adjacent(&self, a: Cell, b: Cell) -> bool {
        if a == b || !self.is_free(a) || !self.is_free(b) {
            return false;
        }
        match self.connectivity {
            Connectivity::Four => a.row.abs_diff(b.row) + a.col.abs_diff(b.col) == 1,
            Connectivity::Eight => a.chebyshev(b) == 1,
        }
    }

    /// Center of a cell in meters, x to the right and y down the rows.
    pub fn center(&self, cell: Cell) -> [f64; 2] {
        [
            (cell.col as f64 + 0.5) * self.cell_size,
            (cell.row as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Cells reachable from the start by flood fill.
    pub fn reachable_from_start(&self) -> usize {
        if self.is_obstacle(self.start) {
            return 0;
        }
        let mut seen = vec![false; self.occupancy.len()];
        let mut queue = VecDeque::from([self.start]);
        seen[self.index(self.start)] = true;
        let mut count = 0;
        while let Some(cell) = queue.pop_front() {
            count += 1;
            for (n, _) in self.neighbors(cell) {
                let k = self.index(n);
                if !seen[k] {
                    seen[k] = true;
                    queue.push_back(n);
                }
            }
        }
        count
    }

    pub fn is_connected(&self) -> bool {
        self.reachable_from_start() == self.free_count()
    }

    /// Serializes to the line-oriented scenario format.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{SCENARIO_MAGIC} {} {} {} {} {}",
            self.rows, self.cols, self.cell_size, self.start.row, self.start.col
        );
        if self.connectivity == Connectivity::Eight {
            out.push_str(" c8");
        }
        out.push('\n');
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(if self.occupancy[r * self.cols + c] {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("empty scenario file"))?;
        let rest =
            header
                .strip_prefix(SCENARIO_MAGIC)
                .ok_or_else(|| Error::FormatVersionMismatch {
                    expected: SCENARIO_MAGIC.into(),
                    found: header.chars().take(32).collect(),
                })?;
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if fields.len() != 5 && fields.len() != 6 {
            return Err(Error::parse(format!(
                "scenario header has {} fields",
                fields.len()
            )));
        }
        let rows: usize = parse_field(fields[0], "rows")?;
        let cols: usize = parse_field(fields[1], "cols")?;
        let cell_size: f64 = parse_field(fields[2], "cell size")?;
        let start = Cell::new(
            parse_field(fields[3], "start row")?,
            parse_field(fields[4], "start col")?,
        );
        let connectivity = match fields.get(5) {
            None => Connectivity::Four,
            Some(&"c8") => Connectivity::Eight,
            Some(other) => return Err(Error::parse(format!("unknown connectivity tag `{other}`"))),
        };
        let mut occupancy = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(format!("scenario truncated at row {r} of {rows}")))?;
            if line.len() != cols {
                return Err(Error::parse(format!(
                    "row {r} has {} cells, expected {cols}",
                    line.len()
                )));
            }
            for ch in line.chars() {
                occupancy.push(parse_cell_char(ch)?);
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::parse("trailing data after scenario rows"));
        }
        Self::new(rows, cols, cell_size, occupancy, start, connectivity)
    }

    /// Short content hash of the serialized map, used to key caches and records.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut out = String::with_capacity(16);
        for b in &digest[..8] {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

fn parse_cell_char(ch: char) -> Result<bool> {
    match ch {
        '.' => Ok(false),
        '#' => Ok(true),
        other => Err(Error::parse(format!("unexpected map character `{other}`"))),
    }
}

pub(crate) fn parse_field<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(format!("bad {what}: `{s}`")))
}
