use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::compare::Comparison;
use super::run::RunRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Md,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Md),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    row: String,
    a: f64,
    b: f64,
    improvement_pct: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SignificanceCsv {
    metric: &'static str,
    n: usize,
    statistic: Option<f64>,
    p_value: Option<f64>,
    degenerate: bool,
}

#[derive(Debug, Serialize)]
struct RunCsv {
    side: &'static str,
    run_index: usize,
    seed: u64,
    status: &'static str,
    loss: Option<f64>,
    accuracy: Option<f64>,
    precision: Option<f64>,
    recall: Option<f64>,
    f1: Option<f64>,
    time_s: Option<f64>,
    final_train_loss: Option<f64>,
    epochs_trained: usize,
}

#[derive(Debug, Serialize)]
struct CurvePoint {
    side: &'static str,
    run_index: usize,
    epoch: usize,
    loss: f64,
}

#[derive(Debug, Serialize)]
struct AccuracyPoint {
    side: &'static str,
    run_index: usize,
    accuracy: f64,
}

fn sides(cmp: &Comparison) -> [(&'static str, &[RunRecord]); 2] {
    [("a", &cmp.runs_a), ("b", &cmp.runs_b)]
}

fn run_rows(cmp: &Comparison) -> Vec<RunCsv> {
    sides(cmp)
        .into_iter()
        .flat_map(|(side, runs)| {
            runs.iter().map(move |r| {
                let m = r.metrics.filter(|_| r.is_ok());
                RunCsv {
                    side,
                    run_index: r.run_index,
                    seed: r.seed,
                    status: if r.is_ok() { "ok" } else { "failed" },
                    loss: m.map(|m| m.loss),
                    accuracy: m.map(|m| m.accuracy),
                    precision: m.map(|m| m.precision),
                    recall: m.map(|m| m.recall),
                    f1: m.map(|m| m.f1),
                    time_s: m.map(|m| m.time_s),
                    final_train_loss: r.final_train_loss,
                    epochs_trained: r.epochs_trained,
                }
            })
        })
        .collect()
}

fn curve_points(cmp: &Comparison) -> Vec<CurvePoint> {
    sides(cmp)
        .into_iter()
        .flat_map(|(side, runs)| {
            runs.iter().flat_map(move |r| {
                r.loss_curve.iter().enumerate().map(move |(i, &loss)| CurvePoint {
                    side,
                    run_index: r.run_index,
                    epoch: i + 1,
                    loss,
                })
            })
        })
        .collect()
}

fn accuracy_points(cmp: &Comparison) -> Vec<AccuracyPoint> {
    sides(cmp)
        .into_iter()
        .flat_map(|(side, runs)| {
            runs.iter().filter(|r| r.is_ok()).filter_map(move |r| {
                r.metrics.map(|m| AccuracyPoint {
                    side,
                    run_index: r.run_index,
                    accuracy: m.accuracy,
                })
            })
        })
        .collect()
}

fn summary_rows(cmp: &Comparison) -> Vec<SummaryRow> {
    cmp.improvements
        .iter()
        .map(|r| SummaryRow {
            row: r.name(),
            a: r.a,
            b: r.b,
            improvement_pct: r.improvement_pct,
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fmt_opt(x: Option<f64>, digits: usize) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.digits$}"))
}

fn markdown(cmp: &Comparison) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "## Summary\n");
    let _ = writeln!(s, "| Row | A | B | Improvement (%) |");
    let _ = writeln!(s, "|---|---:|---:|---:|");
    for r in &cmp.improvements {
        let _ = writeln!(
            s,
            "| {} | {:.6} | {:.6} | {} |",
            r.name(),
            r.a,
            r.b,
            fmt_opt(r.improvement_pct, 2)
        );
    }
    let _ = writeln!(s, "\n## Significance ({:?} pairing)\n", cmp.pairing);
    let _ = writeln!(s, "| Metric | n | W | p |");
    let _ = writeln!(s, "|---|---:|---:|---:|");
    for r in &cmp.significance {
        let p = match (r.p_value, r.degenerate) {
            (Some(p), true) => format!("{p:.6} (degenerate)"),
            (p, _) => fmt_opt(p, 6),
        };
        let _ = writeln!(s, "| {} | {} | {} | {} |", r.metric.label(), r.n, fmt_opt(r.statistic, 1), p);
    }
    let _ = writeln!(s, "\nTime ratio (B/A): {}", fmt_opt(cmp.time_ratio, 3));
    let _ = writeln!(s, "Failed runs: A {}, B {}", cmp.failed_a, cmp.failed_b);
    let _ = writeln!(s, "\n## Runs\n");
    let _ = writeln!(s, "| Side | Run | Seed | Status | Loss | Accuracy | F1 | Time (s) |");
    let _ = writeln!(s, "|---|---:|---:|---|---:|---:|---:|---:|");
    for r in run_rows(cmp) {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            r.side,
            r.run_index,
            r.seed,
            r.status,
            fmt_opt(r.loss, 6),
            fmt_opt(r.accuracy, 4),
            fmt_opt(r.f1, 4),
            fmt_opt(r.time_s, 3)
        );
    }
    s
}

/// Writes the comparison to `dir` and returns the files written.
///
/// * csv: `summary.csv`, `significance.csv`, `runs.csv`, `loss_curves.csv`,
///   `accuracy.csv`
/// * json: `comparison.json` (everything, including curves)
/// * md: `summary.md`, plus the two series CSVs for plotting
pub fn emit_reports(cmp: &Comparison, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let series = |written: &mut Vec<PathBuf>| -> Result<()> {
        let p = dir.join("loss_curves.csv");
        write_csv(&p, &curve_points(cmp))?;
        written.push(p);
        let p = dir.join("accuracy.csv");
        write_csv(&p, &accuracy_points(cmp))?;
        written.push(p);
        Ok(())
    };
    match format {
        ReportFormat::Csv => {
            let p = dir.join("summary.csv");
            write_csv(&p, &summary_rows(cmp))?;
            written.push(p);
            let p = dir.join("significance.csv");
            let rows: Vec<SignificanceCsv> = cmp
                .significance
                .iter()
                .map(|r| SignificanceCsv {
                    metric: r.metric.key(),
                    n: r.n,
                    statistic: r.statistic,
                    p_value: r.p_value,
                    degenerate: r.degenerate,
                })
                .collect();
            write_csv(&p, &rows)?;
            written.push(p);
            let p = dir.join("runs.csv");
            write_csv(&p, &run_rows(cmp))?;
            written.push(p);
            series(&mut written)?;
        }
        ReportFormat::Json => {
            let p = dir.join("comparison.json");
            write_text(&p, &serde_json::to_string_pretty(cmp)?)?;
            written.push(p);
        }
        ReportFormat::Md => {
            let p = dir.join("summary.md");
            write_text(&p, &markdown(cmp))?;
            written.push(p);
            series(&mut written)?;
        }
    }
    Ok(written)
}
