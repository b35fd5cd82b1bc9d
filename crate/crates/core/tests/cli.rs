use std::path::Path;
use std::process::Command;

use covernet::bench::{records_from_csv, Method};
use covernet::decode::TrajectoryRecord;
use covernet::grid::GridMap;
use covernet::model::{init_params, save_checkpoint, ModelConfig};
use covernet::scenario::load_scenarios;

fn covernet(args: &[&str], cwd: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_covernet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> std::process::Output {
    let out = covernet(args, cwd);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn version_and_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["--version"], dir.path());
    assert!(String::from_utf8_lossy(&out.stdout).contains("cpp-ckpt v1"));
    assert_eq!(covernet(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(
        covernet(
            &[
                "solve",
                "--scenario",
                "missing.txt",
                "--model",
                "m",
                "--out",
                "t"
            ],
            dir.path()
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &[
            "generate",
            "--count",
            "12",
            "--rows",
            "5",
            "--cols",
            "5",
            "--density-max",
            "0.3",
            "--seed",
            "4",
            "--out",
            "set",
        ],
        d,
    );
    let set = load_scenarios(&d.join("set")).unwrap();
    assert_eq!(set.len(), 12);
    assert!(std::fs::read_dir(d.join("set")).unwrap().count() >= 13);

    ok(&["label", "--scenarios", "set", "--out", "labels"], d);
    assert_eq!(std::fs::read_dir(d.join("labels")).unwrap().count(), 12);

    std::fs::write(
        d.join("train.cfg"),
        "# tiny\nhidden = 8\nlayers = 1\nn_max = 25\nmax_epochs = 1\nbatch_size = 4\n",
    )
    .unwrap();
    ok(
        &[
            "train",
            "--scenarios",
            "set",
            "--config",
            "train.cfg",
            "--out",
            "model.ckpt",
        ],
        d,
    );
    let report = std::fs::read_to_string(d.join("model.ckpt.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);

    ok(
        &[
            "bench",
            "--scenarios",
            "set",
            "--model",
            "model.ckpt",
            "--out",
            "records.csv",
            "--summary",
            "summary.txt",
        ],
        d,
    );
    let first = std::fs::read_to_string(d.join("records.csv")).unwrap();
    let records = records_from_csv(&first).unwrap();
    assert_eq!(
        records.len(),
        2 * set.split_count(covernet::scenario::Split::Test)
    );
    assert!(records.iter().any(|r| r.method == Method::Learned));
    // resuming keeps every finished record untouched
    ok(
        &[
            "bench",
            "--scenarios",
            "set",
            "--model",
            "model.ckpt",
            "--out",
            "records.csv",
        ],
        d,
    );
    assert_eq!(
        std::fs::read_to_string(d.join("records.csv")).unwrap(),
        first
    );

    ok(&["plot", "--records", "records.csv", "--out", "box.svg"], d);
    assert!(std::fs::read_to_string(d.join("box.svg"))
        .unwrap()
        .contains("class=\"box\""));
}

#[test]
fn solve_single_cell_and_open_map() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    save_checkpoint(
        &init_params(&ModelConfig::small(8, 1, 2), 1).unwrap(),
        &d.join("m.ckpt"),
    )
    .unwrap();

    std::fs::write(
        d.join("one.txt"),
        GridMap::open(1, 1, 1.0).unwrap().to_text(),
    )
    .unwrap();
    ok(
        &[
            "solve",
            "--scenario",
            "one.txt",
            "--model",
            "m.ckpt",
            "--out",
            "one.traj",
        ],
        d,
    );
    let rec =
        TrajectoryRecord::from_text(&std::fs::read_to_string(d.join("one.traj")).unwrap()).unwrap();
    assert_eq!(rec.trajectory.path.len(), 1);
    assert_eq!(rec.trajectory.length, 0.0);

    let open = GridMap::open(4, 5, 1.0).unwrap();
    std::fs::write(d.join("open.txt"), open.to_text()).unwrap();
    ok(
        &[
            "solve",
            "--scenario",
            "open.txt",
            "--model",
            "m.ckpt",
            "--out",
            "open.traj",
            "--svg",
            "open.svg",
        ],
        d,
    );
    let rec = TrajectoryRecord::from_text(&std::fs::read_to_string(d.join("open.traj")).unwrap())
        .unwrap();
    assert!(rec.trajectory.length >= 19.0 - 1e-9);
    assert!(open
        .free_cells()
        .iter()
        .all(|c| rec.trajectory.path.contains(c)));
    ok(
        &[
            "plot",
            "--trajectory",
            "open.traj",
            "--scenario",
            "open.txt",
            "--out",
            "open2.svg",
        ],
        d,
    );
    assert_eq!(
        std::fs::read(d.join("open.svg")).unwrap(),
        std::fs::read(d.join("open2.svg")).unwrap()
    );

    // a trajectory never renders against the wrong scenario
    assert_eq!(
        covernet(
            &[
                "plot",
                "--trajectory",
                "open.traj",
                "--scenario",
                "one.txt",
                "--out",
                "x.svg"
            ],
            d
        )
        .status
        .code(),
        Some(2)
    );
}
