//! Random obstacle scenarios and train/validation/test datasets.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{parse_field, Cell, Connectivity, GridMap};
use crate::util::{atomic_write, sub_seed};

pub const MANIFEST_MAGIC: &str = "cpp-scenario-set v1";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const MAX_LAYOUT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::parse(format!("unknown split `{other}`"))),
        }
    }
}

/// Geometry shared by every scenario of a generator run.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    pub connectivity: Connectivity,
    pub start: Cell,
}

impl GeneratorConfig {
    pub fn new(rows: usize, cols: usize, cell_size: f64) -> Self {
        Self {
            rows,
            cols,
            cell_size,
            connectivity: Connectivity::Four,
            start: Cell::new(0, 0),
        }
    }

    /// Places exactly `round(density * rows * cols)` obstacles uniformly at
    /// random away from the start cell, retrying with a fresh sub-seed until
    /// the free cells are connected.
    pub fn generate(&self, density: f64, seed: u64) -> Result<GridMap> {
        if !(0.0..=0.5).contains(&density) {
            return Err(Error::InvalidDensity(density));
        }
        if self.rows < 2 || self.cols < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid must be at least 2x2, got {}x{}",
                self.rows, self.cols
            )));
        }
        if self.start.row >= self.rows || self.start.col >= self.cols {
            return Err(Error::InvalidArgument(format!(
                "start {} outside the grid",
                self.start
            )));
        }
        let total = self.rows * self.cols;
        let obstacles = (density * total as f64).round() as usize;
        let start_index = self.start.row * self.cols + self.start.col;

        for attempt in 0..MAX_LAYOUT_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, attempt as u64));
            let mut occupancy = vec![false; total];
            for k in index::sample(&mut rng, total - 1, obstacles) {
                // skip over the start cell
                let cell = if k >= start_index { k + 1 } else { k };
                occupancy[cell] = true;
            }
            let map = GridMap::new_unchecked(
                self.rows,
                self.cols,
                self.cell_size,
                occupancy,
                self.start,
                self.connectivity,
            )?;
            if map.is_connected() {
                return Ok(map);
            }
        }
        Err(Error::ConnectivityFailure {
            rows: self.rows,
            cols: self.cols,
            density,
            attempts: MAX_LAYOUT_ATTEMPTS,
        })
    }
}

/// Generates one scenario with 4-connectivity and a top-left start.
pub fn generate_scenario(
    rows: usize,
    cols: usize,
    cell_size: f64,
    density: f64,
    seed: u64,
) -> Result<GridMap> {
    GeneratorConfig::new(rows, cols, cell_size).generate(density, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub scenarios: Vec<GridMap>,
    pub splits: Vec<Split>,
    pub seed: u64,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn split(&self, which: Split) -> impl Iterator<Item = &GridMap> + '_ {
        self.scenarios
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == which)
            .map(|(m, _)| m)
    }

    pub fn split_count(&self, which: Split) -> usize {
        self.splits.iter().filter(|&&s| s == which).count()
    }
}

/// Split proportions for train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let r = Self {
            train,
            validation,
            test,
        };
        let ok = [train, validation, test]
            .iter()
            .all(|x| x.is_finite() && *x >= 0.0)
            && (train + validation + test - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "split ratios ({train}, {validation}, {test}) must be non-negative and sum to 1"
            )));
        }
        Ok(r)
    }

    /// Validation and test sizes are floored; the remainder goes to train.
    pub fn sizes(&self, count: usize) -> (usize, usize, usize) {
        let floor = |r: f64| ((r * count as f64) + 1e-9).floor() as usize;
        let validation = floor(self.validation);
        let test = floor(self.test).min(count - validation);
        (count - validation - test, validation, test)
    }
}

/// Builds a deterministic dataset of `count` scenarios with densities drawn
/// uniformly from `density_range` and splits assigned by a seeded shuffle.
pub fn dataset_build(
    count: usize,
    geometry: &GeneratorConfig,
    density_range: (f64, f64),
    ratios: SplitRatios,
    seed: u64,
) -> Result<ScenarioSet> {
    if count < 3 {
        return Err(Error::InvalidArgument(format!(
            "dataset needs at least 3 scenarios, got {count}"
        )));
    }
    let (lo, hi) = density_range;
    if !(0.0..=0.5).contains(&lo) || !(0.0..=0.5).contains(&hi) || lo > hi {
        return Err(Error::InvalidDensity(if (0.0..=0.5).contains(&lo) {
            hi
        } else {
            lo
        }));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jobs: Vec<(f64, u64)> = (0..count)
        .map(|k| {
            let density = if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            };
            (density, sub_seed(seed, 0x5ce0_0000 + k as u64))
        })
        .collect();

    let scenarios = jobs
        .par_iter()
        .enumerate()
        .map(|(index, &(density, s))| {
            geometry.generate(density, s).map_err(|e| Error::Scenario {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (n_train, n_val, _) = ratios.sizes(count);
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut rng);
    let mut splits = vec![Split::Test; count];
    for (rank, &k) in order.iter().enumerate() {
        splits[k] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(ScenarioSet {
        scenarios,
        splits,
        seed,
    })
}

fn scenario_file_name(index: usize) -> String {
    format!("scenario_{index:05}.txt")
}

/// Writes `dir/manifest.txt` plus one scenario file per map.
pub fn save_scenarios(set: &ScenarioSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = format!("{MANIFEST_MAGIC} {} {}\n", set.seed, set.scenarios.len());
    for (k, (map, split)) in set.scenarios.iter().zip(&set.splits).enumerate() {
        let name = scenario_file_name(k);
        atomic_write(&dir.join(&name), map.to_text().as_bytes())?;
        manifest.push_str(&format!("{} {}\n", split.as_str(), name));
    }
    atomic_write(&dir.join(MANIFEST_FILE), manifest.as_bytes())
}

/// Resolves a dataset path given either the directory or its manifest.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn load_scenarios(path: &Path) -> Result<ScenarioSet> {
    let manifest = manifest_path(path);
    let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = fs::read_to_string(&manifest)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse("empty manifest"))?;
    let rest = header
        .strip_prefix(MANIFEST_MAGIC)
        .ok_or_else(|| Error::FormatVersionMismatch {
            expected: MANIFEST_MAGIC.into(),
            found: header.chars().take(32).collect(),
        })?;
    let fields: Vec<&str> = rest.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(Error::parse("manifest header must carry seed and count"));
    }
    let seed: u64 = parse_field(fields[0], "seed")?;
    let count: usize = parse_field(fields[1], "count")?;

    let mut scenarios = Vec::with_capacity(count);
    let mut splits = Vec::with_capacity(count);
    for k in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(format!("manifest truncated: {k} of {count} entries")))?;
        let (split, name) = line
            .split_once(' ')
            .ok_or_else(|| Error::parse(format!("bad manifest entry `{line}`")))?;
        splits.push(split.parse()?);
        let map_text = fs::read_to_string(dir.join(name))?;
        scenarios.push(GridMap::from_text(&map_text).map_err(|e| Error::Scenario {
            index: k,
            source: Box::new(e),
        })?);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::parse("trailing manifest entries"));
    }
    Ok(ScenarioSet {
        scenarios,
        splits,
        seed,
    })
}

/// Loads a single scenario file.
pub fn load_map(path: &Path) -> Result<GridMap> {
    GridMap::from_text(&fs::read_to_string(path)?)
}
