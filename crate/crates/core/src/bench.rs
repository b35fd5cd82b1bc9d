//! Side-by-side comparison of the 2-opt baseline and the learned planner.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::decode::{plan, stitch, Trajectory};
use crate::error::{Error, Result};
use crate::graph::encode;
use crate::grid::{parse_field, GridMap};
use crate::model::ModelParams;
use crate::tsp::{cost_matrix, ground_truth_tour, LABEL_SEED};
use crate::util::fmt_f64;

pub const RECORDS_HEADER: &str = "scenario_hash,density,method,length_m,wall_time_s";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    TwoOpt,
    Learned,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::TwoOpt, Method::Learned];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::TwoOpt => "two_opt",
            Method::Learned => "learned",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_opt" => Ok(Method::TwoOpt),
            "learned" => Ok(Method::Learned),
            _ => Err(Error::parse(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub scenario_hash: String,
    pub density: f64,
    pub method: Method,
    /// Meters.
    pub length: f64,
    /// Seconds.
    pub wall_time: f64,
}

/// 2-opt baseline: cost matrix, nearest-neighbor start, 2-opt, stitching.
pub fn baseline(map: &GridMap) -> Result<(Trajectory, Duration)> {
    let started = Instant::now();
    let costs = cost_matrix(map);
    let tour = ground_truth_tour(map, &costs, LABEL_SEED)?;
    let graph = encode(map, costs.n())?;
    let trajectory = stitch(&tour.order, &graph, map);
    Ok((trajectory, started.elapsed()))
}

/// Scenarios whose measurement failed, with the reason.
pub type BenchFailures = Vec<(String, Error)>;

/// Measures both methods on every map, one scenario at a time so timings
/// do not compete for cores. Scenarios already present in `existing` with
/// both methods are carried over instead of re-measured. A failing scenario
/// is reported and the sweep continues.
pub fn run_benchmark(
    maps: &[&GridMap],
    params: &ModelParams,
    existing: &[BenchRecord],
    mut progress: impl FnMut(usize, &[BenchRecord]),
) -> (Vec<BenchRecord>, BenchFailures) {
    let mut records = Vec::with_capacity(2 * maps.len());
    let mut failures = Vec::new();
    for (k, map) in maps.iter().enumerate() {
        let hash = map.content_hash();
        let previous: Vec<&BenchRecord> = Method::ALL
            .iter()
            .filter_map(|&m| {
                existing
                    .iter()
                    .find(|r| r.scenario_hash == hash && r.method == m)
            })
            .collect();
        if previous.len() == Method::ALL.len() {
            records.extend(previous.into_iter().cloned());
            continue;
        }
        match measure(map, params, &hash) {
            Ok(pair) => {
                progress(k, &pair);
                records.extend(pair);
            }
            Err(e) => failures.push((hash, e)),
        }
    }
    (records, failures)
}

fn measure(map: &GridMap, params: &ModelParams, hash: &str) -> Result<Vec<BenchRecord>> {
    let (two_opt, t_base) = baseline(map)?;
    let learned = plan(map, params)?;
    let record = |method, length, time: Duration| BenchRecord {
        scenario_hash: hash.to_string(),
        density: map.density(),
        method,
        length,
        wall_time: time.as_secs_f64(),
    };
    Ok(vec![
        record(Method::TwoOpt, two_opt.length, t_base),
        record(
            Method::Learned,
            learned.trajectory.length,
            learned.inference,
        ),
    ])
}

pub fn records_to_csv(records: &[BenchRecord]) -> String {
    let mut out = format!("{RECORDS_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.scenario_hash,
            fmt_f64(r.density),
            r.method,
            fmt_f64(r.length),
            fmt_f64(r.wall_time)
        );
    }
    out
}

pub fn records_from_csv(text: &str) -> Result<Vec<BenchRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == RECORDS_HEADER => {}
        other => {
            return Err(Error::FormatVersionMismatch {
                expected: RECORDS_HEADER.into(),
                found: other.unwrap_or("").into(),
            })
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::parse(format!(
                    "record `{line}` has {} fields",
                    f.len()
                )));
            }
            Ok(BenchRecord {
                scenario_hash: f[0].to_string(),
                density: parse_field(f[1], "density")?,
                method: f[2].parse()?,
                length: parse_field(f[3], "length")?,
                wall_time: parse_field(f[4], "wall time")?,
            })
        })
        .collect()
}

/// Five-number summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    /// Quantile `q` sits at position `q * (n - 1)` of the sorted sample,
    /// interpolated linearly between neighbors.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self {
            min: v[0],
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub count: usize,
    pub length: Quartiles,
    pub wall_time: Quartiles,
}

/// Per-method quartiles of length and wall time, in [`Method::ALL`] order.
pub fn summarize(records: &[BenchRecord]) -> Result<Vec<MethodSummary>> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    Ok(Method::ALL
        .iter()
        .filter_map(|&method| {
            let rs: Vec<&BenchRecord> = records.iter().filter(|r| r.method == method).collect();
            let lengths: Vec<f64> = rs.iter().map(|r| r.length).collect();
            let times: Vec<f64> = rs.iter().map(|r| r.wall_time).collect();
            Some(MethodSummary {
                method,
                count: rs.len(),
                length: Quartiles::of(&lengths)?,
                wall_time: Quartiles::of(&times)?,
            })
        })
        .collect())
}

pub fn summary_to_text(summary: &[MethodSummary]) -> String {
    let mut out =
        String::from("# quartiles by linear interpolation at q*(n-1) of the sorted sample\n");
    out.push_str("method,quantity,count,min,q1,median,q3,max\n");
    for s in summary {
        for (name, q) in [("length_m", &s.length), ("wall_time_s", &s.wall_time)] {
            let _ = writeln!(
                out,
                "{},{name},{},{},{},{},{},{}",
                s.method,
                s.count,
                fmt_f64(q.min),
                fmt_f64(q.q1),
                fmt_f64(q.median),
                fmt_f64(q.q3),
                fmt_f64(q.max)
            );
        }
    }
    out
}

/// Learned-to-baseline ratios of length and wall time for every scenario
/// that has both methods, in record order.
pub fn paired_ratios(records: &[BenchRecord]) -> Vec<(String, f64, f64)> {
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.method == Method::Learned) {
        if let Some(b) = records
            .iter()
            .find(|b| b.method == Method::TwoOpt && b.scenario_hash == r.scenario_hash)
        {
            out.push((
                r.scenario_hash.clone(),
                r.length / b.length,
                r.wall_time / b.wall_time,
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(hash: &str, method: Method, length: f64) -> BenchRecord {
        BenchRecord {
            scenario_hash: hash.into(),
            density: 0.25,
            method,
            length,
            wall_time: length / 100.0,
        }
    }

    #[test]
    fn textbook_quartiles() {
        let q = Quartiles::of(&[5.0, 1.0, 4.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            (q.min, q.q1, q.median, q.q3, q.max),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        let q = Quartiles::of(&[7.5]).unwrap();
        assert_eq!(
            (q.min, q.q1, q.median, q.q3, q.max),
            (7.5, 7.5, 7.5, 7.5, 7.5)
        );
        let q = Quartiles::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((q.q1, q.median, q.q3), (1.75, 2.5, 3.25));
    }

    #[test]
    fn summarize_groups_by_method() {
        let records: Vec<BenchRecord> = (1..=5)
            .flat_map(|k| {
                [
                    rec(&format!("h{k}"), Method::TwoOpt, k as f64),
                    rec(&format!("h{k}"), Method::Learned, 2.0 * k as f64),
                ]
            })
            .collect();
        let s = summarize(&records).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].method, Method::TwoOpt);
        assert_eq!(s[0].length.median, 3.0);
        assert_eq!(s[1].length.median, 6.0);
        assert_eq!(s[1].count, 5);
        let mut reversed = records.clone();
        reversed.reverse();
        assert_eq!(summarize(&reversed).unwrap(), s);
        assert!(matches!(summarize(&[]), Err(Error::EmptyRecords)));
        assert!(paired_ratios(&records)
            .iter()
            .all(|&(_, l, t)| l == 2.0 && t == 2.0));
    }

    #[test]
    fn csv_round_trip() {
        let records = vec![
            rec("00ff", Method::TwoOpt, 90.82),
            rec("00ff", Method::Learned, 0.1 + 0.2),
        ];
        let text = records_to_csv(&records);
        assert!(text.starts_with(RECORDS_HEADER));
        assert_eq!(records_from_csv(&text).unwrap(), records);
        assert!(records_from_csv("a,b\n").is_err());
    }

    #[test]
    fn baseline_on_open_map_respects_counting_bound() {
        let map = GridMap::open(4, 5, 1.0).unwrap();
        let (t, _) = baseline(&map).unwrap();
        assert!(t.length >= 19.0);
        assert_eq!(t.length, 19.0);
    }
}
