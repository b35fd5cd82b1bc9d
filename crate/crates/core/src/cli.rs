//! Command-line front end. Each verb parses its arguments and hands off to
//! the library; exit code 0 on success, 1 on usage errors, 2 on failures.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::bench::{records_from_csv, records_to_csv, run_benchmark, summarize, summary_to_text};
use crate::decode::{plan, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::grid::Connectivity;
use crate::model::{load_checkpoint, save_checkpoint};
use crate::render::{render_boxplot, render_trajectory};
use crate::scenario::{
    dataset_build, load_map, load_scenarios, save_scenarios, GeneratorConfig, Split, SplitRatios,
};
use crate::train::{parse_config, save_report, train_observed, TrainConfig};
use crate::tsp::{cost_matrix, LabelCache};
use crate::util::atomic_write;

pub const VERSION_TEXT: &str = "0.1.0 (formats: cpp-scenario v1, cpp-scenario-set v1, cpp-labels v1, cpp-ckpt v1, cpp-traj v1)";

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "CPPNET_THREADS";

#[derive(Debug, Parser)]
#[command(name = "covernet", version = VERSION_TEXT, about = "Learned coverage path planning on occupancy grids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded scenario set with train/validation/test splits.
    Generate(GenerateArgs),
    /// Compute 2-opt ground-truth tours into a label cache.
    Label(LabelArgs),
    /// Train a model on the train split, selecting by validation loss.
    Train(TrainArgs),
    /// Plan a coverage trajectory for one scenario.
    Solve(SolveArgs),
    /// Compare 2-opt and the learned planner on a split.
    Bench(BenchArgs),
    /// Render benchmark records or a trajectory as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    #[arg(long, default_value_t = 1.0)]
    pub cell_size: f64,
    #[arg(long, default_value_t = 0.0)]
    pub density_min: f64,
    #[arg(long, default_value_t = 0.5)]
    pub density_max: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of scenarios held out for validation.
    #[arg(long, default_value_t = 200.0 / 1384.0)]
    pub val_fraction: f64,
    /// Fraction of scenarios held out for testing.
    #[arg(long, default_value_t = 160.0 / 1384.0)]
    pub test_fraction: f64,
    /// Use 8-connectivity instead of 4.
    #[arg(long)]
    pub eight_connected: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub scenarios: PathBuf,
    /// Label cache directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub scenarios: PathBuf,
    /// `key = value` file; standard settings (h = 50, L = 3) when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint of the best-validation model.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV; defaults to the checkpoint path with `.csv` appended.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub scenarios: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Records CSV; existing records are kept and their scenarios skipped.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Optional quartile summary output.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(
        long,
        required_unless_present = "trajectory",
        conflicts_with = "trajectory"
    )]
    pub records: Option<PathBuf>,
    #[arg(long, requires = "scenario")]
    pub trajectory: Option<PathBuf>,
    /// Scenario the trajectory belongs to.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the verb and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        // a second initialization (e.g. repeated in-process runs) is harmless
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Label(a) => label(a),
        Command::Train(a) => train_cmd(a),
        Command::Solve(a) => solve(a),
        Command::Bench(a) => bench(a),
        Command::Plot(a) => plot(a),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut geometry = GeneratorConfig::new(a.rows, a.cols, a.cell_size);
    if a.eight_connected {
        geometry.connectivity = Connectivity::Eight;
    }
    let ratios = SplitRatios::new(
        1.0 - a.val_fraction - a.test_fraction,
        a.val_fraction,
        a.test_fraction,
    )?;
    let set = dataset_build(
        a.count,
        &geometry,
        (a.density_min, a.density_max),
        ratios,
        a.seed,
    )?;
    save_scenarios(&set, &a.out)
}

fn label(a: LabelArgs) -> Result<()> {
    let set = load_scenarios(&a.scenarios)?;
    let cache = LabelCache::new(&a.out);
    std::fs::create_dir_all(&a.out)?;
    set.scenarios
        .par_iter()
        .try_for_each(|map| cache.get_or_compute(map, &cost_matrix(map)).map(|_| ()))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (config, model) = match &a.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => (
            TrainConfig::default(),
            crate::model::ModelConfig::standard(),
        ),
    };
    let set = load_scenarios(&a.scenarios)?;
    let outcome = train_observed(&set, &config, &model, |e| {
        eprintln!(
            "epoch {}: train loss {:.5}, val loss {:.5}, val F1 {:.4} ({:.1}s)",
            e.epoch, e.train_loss, e.val_loss, e.val_f1, e.seconds
        );
    })?;
    save_checkpoint(&outcome.best, &a.out)?;
    let report = a.report.unwrap_or_else(|| with_suffix(&a.out, ".csv"));
    save_report(&outcome.report, &report)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn solve(a: SolveArgs) -> Result<()> {
    let map = load_map(&a.scenario)?;
    let params = load_checkpoint(&a.model)?;
    let p = plan(&map, &params)?;
    let record = TrajectoryRecord {
        scenario_hash: map.content_hash(),
        trajectory: p.trajectory,
        inference_ms: p.inference.as_secs_f64() * 1e3,
    };
    atomic_write(&a.out, record.to_text().as_bytes())?;
    if let Some(svg) = &a.svg {
        atomic_write(svg, render_trajectory(&map, &record.trajectory).as_bytes())?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let set = load_scenarios(&a.scenarios)?;
    let params = load_checkpoint(&a.model)?;
    let existing = if a.out.exists() {
        records_from_csv(&std::fs::read_to_string(&a.out)?)?
    } else {
        Vec::new()
    };
    let maps: Vec<_> = set.split(a.split).collect();
    let (records, failures) = run_benchmark(&maps, &params, &existing, |_, _| {});
    for (hash, e) in &failures {
        eprintln!("scenario {hash}: {e}");
    }
    atomic_write(&a.out, records_to_csv(&records).as_bytes())?;
    if let Some(path) = &a.summary {
        atomic_write(path, summary_to_text(&summarize(&records)?).as_bytes())?;
    }
    match failures.len() {
        0 => Ok(()),
        n => Err(Error::InvalidArgument(format!(
            "{n} scenarios failed; see messages above"
        ))),
    }
}

fn plot(a: PlotArgs) -> Result<()> {
    let svg = if let Some(records) = &a.records {
        render_boxplot(&summarize(&records_from_csv(&std::fs::read_to_string(
            records,
        )?)?)?)
    } else {
        let traj = a.trajectory.as_ref().expect("clap enforces one source");
        let scenario = a
            .scenario
            .as_ref()
            .expect("clap enforces --scenario with --trajectory");
        let map = load_map(scenario)?;
        let record = TrajectoryRecord::from_text(&std::fs::read_to_string(traj)?)?;
        if record.scenario_hash != map.content_hash() {
            return Err(Error::InvalidArgument(format!(
                "trajectory belongs to scenario {}, not {}",
                record.scenario_hash,
                map.content_hash()
            )));
        }
        render_trajectory(&map, &record.trajectory)
    };
    atomic_write(&a.out, svg.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn version_lists_every_format() {
        for magic in [
            crate::grid::SCENARIO_MAGIC,
            crate::scenario::MANIFEST_MAGIC,
            crate::tsp::LABELS_MAGIC,
            crate::decode::TRAJECTORY_MAGIC,
        ] {
            assert!(VERSION_TEXT.contains(magic), "{magic}");
        }
        assert!(VERSION_TEXT.contains("cpp-ckpt v1"));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with(["covernet", "frobnicate"]), 1);
        assert_eq!(main_with(["covernet", "generate", "--count", "3"]), 1);
        assert_eq!(main_with(["covernet", "plot", "--out", "x.svg"]), 1);
    }
}
