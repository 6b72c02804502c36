//! CSV, JSON and SVG output.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::harness::{EstimateRow, MonteCarloEstimate};
use crate::optimizers::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExportError {
    #[error("estimates CSV: {0}")]
    Schema(String),
    #[error("nothing to plot: {0}")]
    Empty(String),
}

pub const ESTIMATE_COLUMNS: [&str; 5] = ["checkpoint", "mean_grad_sq", "se_grad_sq", "mean_gap", "se_gap"];
pub const AVERAGED_COLUMNS: [&str; 2] = ["mean_avg_gap", "se_avg_gap"];

/// `checkpoint,mean_grad_sq,se_grad_sq,mean_gap,se_gap[,mean_avg_gap,se_avg_gap]`.
pub fn estimates_csv(est: &MonteCarloEstimate) -> String {
    rows_csv(&est.rows)
}

pub fn rows_csv(rows: &[EstimateRow]) -> String {
    let averaged = rows.first().is_some_and(|r| r.mean_avg_gap.is_some());
    let mut out = ESTIMATE_COLUMNS.join(",");
    if averaged {
        out.push(',');
        out.push_str(&AVERAGED_COLUMNS.join(","));
    }
    out.push('\n');
    for r in rows {
        write!(
            out,
            "{},{},{},{},{}",
            r.checkpoint, r.mean_grad_sq, r.se_grad_sq, r.mean_gap, r.se_gap
        )
        .unwrap();
        if averaged {
            write!(
                out,
                ",{},{}",
                r.mean_avg_gap.unwrap_or(f64::NAN),
                r.se_avg_gap.unwrap_or(f64::NAN)
            )
            .unwrap();
        }
        out.push('\n');
    }
    out
}

/// Reads rows written by [`estimates_csv`], checking the header.
pub fn parse_estimates_csv(text: &str) -> Result<Vec<EstimateRow>, ExportError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| ExportError::Schema("missing header".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let averaged = match header.len() {
        5 => false,
        7 => true,
        n => return Err(ExportError::Schema(format!("expected 5 or 7 columns, found {n}"))),
    };
    let expected: Vec<&str> = ESTIMATE_COLUMNS
        .iter()
        .chain(AVERAGED_COLUMNS.iter().take(if averaged { 2 } else { 0 }))
        .copied()
        .collect();
    if header != expected {
        return Err(ExportError::Schema(format!("header {header:?} does not match {expected:?}")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != header.len() {
                return Err(ExportError::Schema(format!("row {} has {} cells", i + 1, cells.len())));
            }
            let num = |j: usize| {
                cells[j]
                    .parse::<f64>()
                    .map_err(|_| ExportError::Schema(format!("row {} column {}: {:?}", i + 1, header[j], cells[j])))
            };
            let checkpoint = cells[0]
                .parse::<u64>()
                .map_err(|_| ExportError::Schema(format!("row {} checkpoint: {:?}", i + 1, cells[0])))?;
            Ok(EstimateRow {
                checkpoint,
                mean_grad_sq: num(1)?,
                se_grad_sq: num(2)?,
                mean_gap: num(3)?,
                se_gap: num(4)?,
                mean_avg_gap: if averaged { Some(num(5)?) } else { None },
                se_avg_gap: if averaged { Some(num(6)?) } else { None },
            })
        })
        .collect()
}

#[derive(Serialize)]
struct TrajectoryRecord {
    k: u64,
    alpha: f64,
    mu: f64,
    f: f64,
    grad_sq: f64,
    #[serde(rename = "H", skip_serializing_if = "Option::is_none")]
    h: Option<f64>,
    #[serde(rename = "Zt", skip_serializing_if = "Option::is_none")]
    zt: Option<f64>,
    #[serde(rename = "Ht", skip_serializing_if = "Option::is_none")]
    ht: Option<f64>,
}

fn records(t: &Trajectory) -> Vec<TrajectoryRecord> {
    t.states
        .iter()
        .map(|c| TrajectoryRecord {
            k: c.k,
            alpha: c.alpha,
            mu: c.mu,
            f: c.f,
            grad_sq: c.grad_sq,
            h: c.lyapunov.map(|l| l.h),
            zt: c.lyapunov.map(|l| l.z_tilde),
            ht: c.lyapunov.map(|l| l.h_tilde),
        })
        .collect()
}

/// `k,alpha,mu,f,grad_sq[,H,Zt,Ht]`.
pub fn trajectory_csv(t: &Trajectory) -> String {
    let lyap = t.states.first().is_some_and(|c| c.lyapunov.is_some());
    let mut out = String::from("k,alpha,mu,f,grad_sq");
    if lyap {
        out.push_str(",H,Zt,Ht");
    }
    out.push('\n');
    for r in records(t) {
        write!(out, "{},{},{},{},{}", r.k, r.alpha, r.mu, r.f, r.grad_sq).unwrap();
        if let (Some(h), Some(zt), Some(ht)) = (r.h, r.zt, r.ht) {
            write!(out, ",{h},{zt},{ht}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// The same fields as [`trajectory_csv`], one JSON object per checkpoint.
pub fn trajectory_json(t: &Trajectory) -> String {
    serde_json::to_string_pretty(&records(t)).expect("records serialize") + "\n"
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

struct Series<'a> {
    label: &'a str,
    colour: &'a str,
    points: Vec<(f64, f64, f64)>,
}

/// Log-log plot of `mean_grad_sq` and `mean_gap` against `k`, each with a
/// shaded band of one standard error. Non-positive values are left out.
pub fn svg_plot(rows: &[EstimateRow]) -> Result<String, ExportError> {
    if rows.is_empty() {
        return Err(ExportError::Empty("no data rows".into()));
    }
    let pick = |label, colour, get: fn(&EstimateRow) -> (f64, f64)| Series {
        label,
        colour,
        points: rows
            .iter()
            .filter(|r| r.checkpoint > 0)
            .map(|r| {
                let (m, se) = get(r);
                (r.checkpoint as f64, m, se)
            })
            .filter(|(_, m, _)| m.is_finite() && *m > 0.0)
            .collect(),
    };
    let series = [
        pick("mean_grad_sq", "#1f77b4", |r| (r.mean_grad_sq, r.se_grad_sq)),
        pick("mean_gap", "#d62728", |r| (r.mean_gap, r.se_gap)),
    ];
    let all: Vec<&(f64, f64, f64)> = series.iter().flat_map(|s| &s.points).collect();
    if all.is_empty() {
        return Err(ExportError::Empty("no positive values to place on a log scale".into()));
    }
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, m, se) in &all {
        x_lo = x_lo.min(k.log10());
        x_hi = x_hi.max(k.log10());
        y_lo = y_lo.min(m.log10());
        y_hi = y_hi.max((m + se).log10());
    }
    if x_hi - x_lo < 1e-9 {
        x_lo -= 0.5;
        x_hi += 0.5;
    }
    if y_hi - y_lo < 1e-9 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let px = |k: f64| MARGIN + (k.log10() - x_lo) / (x_hi - x_lo) * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| {
        let t = (v.max(10f64.powf(y_lo)).log10() - y_lo) / (y_hi - y_lo);
        HEIGHT - MARGIN - t * (HEIGHT - 2.0 * MARGIN)
    };

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="grey"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    )
    .unwrap();
    for s in &series {
        if s.points.is_empty() {
            continue;
        }
        let upper = s.points.iter().map(|(k, m, se)| format!("{},{}", px(*k), py(m + se)));
        let lower = s.points.iter().rev().map(|(k, m, se)| format!("{},{}", px(*k), py(m - se)));
        let band: Vec<String> = upper.chain(lower).collect();
        writeln!(
            out,
            r#"<polygon class="band" points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" "),
            s.colour
        )
        .unwrap();
    }
    for s in &series {
        if s.points.is_empty() {
            continue;
        }
        let line: Vec<String> = s.points.iter().map(|(k, m, _)| format!("{},{}", px(*k), py(*m))).collect();
        writeln!(
            out,
            r#"<polyline class="{}" points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            s.label,
            line.join(" "),
            s.colour
        )
        .unwrap();
    }
    let label = |out: &mut String, x: f64, y: f64, anchor: &str, text: &str| {
        writeln!(out, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{text}</text>"#).unwrap();
    };
    label(&mut out, WIDTH / 2.0, HEIGHT - 12.0, "middle", "iteration k (log10)");
    label(&mut out, MARGIN, HEIGHT - MARGIN + 16.0, "middle", &format!("{x_lo:.1}"));
    label(&mut out, WIDTH - MARGIN, HEIGHT - MARGIN + 16.0, "middle", &format!("{x_hi:.1}"));
    label(&mut out, MARGIN - 6.0, HEIGHT - MARGIN, "end", &format!("{y_lo:.1}"));
    label(&mut out, MARGIN - 6.0, MARGIN + 4.0, "end", &format!("{y_hi:.1}"));
    for (i, s) in series.iter().enumerate() {
        let y = MARGIN - 24.0 + 14.0 * i as f64;
        writeln!(
            out,
            r#"<text x="{}" y="{y}" fill="{}">{}</text>"#,
            WIDTH - MARGIN,
            s.colour,
            s.label
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}
