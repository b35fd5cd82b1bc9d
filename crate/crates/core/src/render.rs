//! Deterministic SVG output: maps with trajectories, and box plots.

use std::fmt::Write as _;

use crate::bench::{MethodSummary, Quartiles};
use crate::decode::Trajectory;
use crate::grid::{Cell, GridMap};

/// Pixels per grid cell.
const CELL_PX: f64 = 24.0;
const MARGIN: f64 = 12.0;

fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Map with obstacle cells filled, the trajectory as one red polyline
/// through cell centers, and a marker on the start cell.
pub fn render_trajectory(map: &GridMap, trajectory: &Trajectory) -> String {
    let w = map.cols() as f64 * CELL_PX;
    let h = map.rows() as f64 * CELL_PX;
    let center = |c: Cell| {
        (
            MARGIN + (c.col as f64 + 0.5) * CELL_PX,
            MARGIN + (c.row as f64 + 0.5) * CELL_PX,
        )
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        px(w + 2.0 * MARGIN),
        px(h + 2.0 * MARGIN),
        px(w + 2.0 * MARGIN),
        px(h + 2.0 * MARGIN)
    );
    let _ = writeln!(
        s,
        r#"<title>{}x{} grid, {} free cells, length {} m</title>"#,
        map.rows(),
        map.cols(),
        map.free_count(),
        crate::util::fmt_f64(trajectory.length)
    );

    let mut grid = String::new();
    for r in 0..=map.rows() {
        let y = MARGIN + r as f64 * CELL_PX;
        let _ = write!(grid, "M{} {}H{}", px(MARGIN), px(y), px(MARGIN + w));
    }
    for c in 0..=map.cols() {
        let x = MARGIN + c as f64 * CELL_PX;
        let _ = write!(grid, "M{} {}V{}", px(x), px(MARGIN), px(MARGIN + h));
    }
    let _ = writeln!(
        s,
        r##"<path class="grid" d="{grid}" fill="none" stroke="#bbbbbb" stroke-width="1"/>"##
    );

    for r in 0..map.rows() {
        for c in 0..map.cols() {
            if map.is_obstacle(Cell::new(r, c)) {
                let _ = writeln!(
                    s,
                    r##"<rect class="obstacle" x="{}" y="{}" width="{}" height="{}" fill="#333333"/>"##,
                    px(MARGIN + c as f64 * CELL_PX),
                    px(MARGIN + r as f64 * CELL_PX),
                    px(CELL_PX),
                    px(CELL_PX)
                );
            }
        }
    }

    let points: Vec<String> = trajectory
        .path
        .iter()
        .map(|&c| {
            let (x, y) = center(c);
            format!("{},{}", px(x), px(y))
        })
        .collect();
    let _ = writeln!(
        s,
        r##"<polyline class="trajectory" points="{}" fill="none" stroke="#d62728" stroke-width="2.5" stroke-linejoin="round"/>"##,
        points.join(" ")
    );

    let (sx, sy) = center(map.start());
    let _ = writeln!(
        s,
        r##"<circle class="start" cx="{}" cy="{}" r="{}" fill="#1f77b4"/>"##,
        px(sx),
        px(sy),
        px(CELL_PX * 0.25)
    );
    s.push_str("</svg>\n");
    s
}

/// Two panels of box plots (length and wall time), one box per method.
pub fn render_boxplot(summary: &[MethodSummary]) -> String {
    const PANEL_W: f64 = 260.0;
    const PANEL_H: f64 = 220.0;
    const PAD: f64 = 40.0;
    let width = 2.0 * PANEL_W + 3.0 * PAD;
    let height = PANEL_H + 2.0 * PAD;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="11">"#,
        px(width),
        px(height),
        px(width),
        px(height)
    );
    let panels: [(&str, fn(&MethodSummary) -> Quartiles); 2] = [
        ("trajectory length (m)", |m| m.length),
        ("wall time (s)", |m| m.wall_time),
    ];
    for (p, (label, get)) in panels.iter().enumerate() {
        let x0 = PAD + p as f64 * (PANEL_W + PAD);
        let y0 = PAD;
        let lo = summary
            .iter()
            .map(|m| get(m).min)
            .fold(f64::INFINITY, f64::min);
        let hi = summary
            .iter()
            .map(|m| get(m).max)
            .fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        };
        let y = |v: f64| y0 + PANEL_H - (v - lo) / (hi - lo) * PANEL_H;
        let _ = writeln!(
            s,
            r##"<rect class="panel" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#000000"/>"##,
            px(x0),
            px(y0),
            px(PANEL_W),
            px(PANEL_H)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
            px(x0 + PANEL_W / 2.0),
            px(y0 - 10.0)
        );
        for (v, anchor) in [(lo, y0 + PANEL_H), (hi, y0)] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
                px(x0 - 4.0),
                px(anchor + 4.0),
                fmt_tick(v)
            );
        }
        let slot = PANEL_W / summary.len().max(1) as f64;
        for (k, m) in summary.iter().enumerate() {
            let q = get(m);
            let cx = x0 + (k as f64 + 0.5) * slot;
            let half = slot * 0.2;
            let _ = writeln!(
                s,
                r##"<path class="whisker" d="M{cx} {}V{}M{cx} {}V{}M{} {}H{}M{} {}H{}" stroke="#000000" fill="none"/>"##,
                px(y(q.max)),
                px(y(q.q3)),
                px(y(q.q1)),
                px(y(q.min)),
                px(cx - half / 2.0),
                px(y(q.max)),
                px(cx + half / 2.0),
                px(cx - half / 2.0),
                px(y(q.min)),
                px(cx + half / 2.0),
                cx = px(cx)
            );
            let _ = writeln!(
                s,
                r##"<rect class="box" x="{}" y="{}" width="{}" height="{}" fill="#9ecae1" stroke="#000000"/>"##,
                px(cx - half),
                px(y(q.q3)),
                px(2.0 * half),
                px(y(q.q1) - y(q.q3))
            );
            let _ = writeln!(
                s,
                r##"<path class="median" d="M{} {}H{}" stroke="#d62728" stroke-width="2"/>"##,
                px(cx - half),
                px(y(q.median)),
                px(cx + half)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{} (n={})</text>"#,
                px(cx),
                px(y0 + PANEL_H + 16.0),
                m.method,
                m.count
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.4}")
    }
}
