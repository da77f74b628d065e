use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::RunRecord;
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, percentage_improvement, wilcoxon_exact, Metric, MetricsReport, RunMetrics,
    WILCOXON_MAX_N,
};

/// How paired observations for the signed-rank test are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// The i-th successful run of side A against the i-th of side B.
    PerRun,
    /// The mean of the i-th cell of side A against the i-th of side B.
    CellMean,
}

impl FromStr for Pairing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_run" | "run" => Ok(Pairing::PerRun),
            "cell_mean" | "cell" => Ok(Pairing::CellMean),
            other => Err(Error::Config(format!("unknown pairing '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    StdDev,
}

impl Statistic {
    pub fn label(self) -> &'static str {
        match self {
            Statistic::Mean => "Mean",
            Statistic::StdDev => "StdDev",
        }
    }
}

/// One row of the improvement table. `improvement_pct` is positive when
/// B is better than A and `None` when A is exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub metric: Metric,
    pub statistic: Statistic,
    pub a: f64,
    pub b: f64,
    pub improvement_pct: Option<f64>,
}

impl ImprovementRow {
    pub fn name(&self) -> String {
        format!("{} {}", self.metric.label(), self.statistic.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub metric: Metric,
    pub n: usize,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// Every paired difference was zero; reported as p = 1.
    pub degenerate: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pairing: Pairing,
    pub report_a: MetricsReport,
    pub report_b: MetricsReport,
    pub improvements: Vec<ImprovementRow>,
    pub significance: Vec<SignificanceRow>,
    /// Mean wall time of B over that of A.
    pub time_ratio: Option<f64>,
    pub failed_a: usize,
    pub failed_b: usize,
    pub runs_a: Vec<RunRecord>,
    pub runs_b: Vec<RunRecord>,
}

fn improvement(metric: Metric, a: f64, b: f64) -> Option<f64> {
    if a == b {
        Some(0.0)
    } else {
        percentage_improvement(a, b, metric.direction()).ok()
    }
}

/// Improvement rows (mean and std of each metric) from two reports.
/// Std rows use the direction of their metric.
pub fn compare_reports(a: &MetricsReport, b: &MetricsReport) -> Vec<ImprovementRow> {
    Metric::ALL
        .iter()
        .flat_map(|&metric| {
            let (sa, sb) = (a.summary(metric), b.summary(metric));
            [
                (Statistic::Mean, sa.mean, sb.mean),
                (Statistic::StdDev, sa.std, sb.std),
            ]
            .map(|(statistic, a, b)| ImprovementRow {
                metric,
                statistic,
                a,
                b,
                improvement_pct: improvement(metric, a, b),
            })
        })
        .collect()
}

fn ok_metrics(cell: &[RunRecord]) -> Vec<RunMetrics> {
    cell.iter().filter_map(|r| r.metrics.filter(|_| r.is_ok())).collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Paired observations per side for each metric, in `Metric::ALL` order.
fn paired_values(
    cells_a: &[Vec<RunRecord>],
    cells_b: &[Vec<RunRecord>],
    pairing: Pairing,
) -> Result<(Vec<RunMetrics>, Vec<RunMetrics>)> {
    let side = |cells: &[Vec<RunRecord>]| -> Vec<RunMetrics> {
        match pairing {
            Pairing::PerRun => cells.iter().flat_map(|c| ok_metrics(c)).collect(),
            Pairing::CellMean => cells
                .iter()
                .map(|c| ok_metrics(c))
                .filter(|m| !m.is_empty())
                .map(|m| RunMetrics {
                    loss: mean(m.iter().map(|r| r.loss)),
                    accuracy: mean(m.iter().map(|r| r.accuracy)),
                    precision: mean(m.iter().map(|r| r.precision)),
                    recall: mean(m.iter().map(|r| r.recall)),
                    f1: mean(m.iter().map(|r| r.f1)),
                    time_s: mean(m.iter().map(|r| r.time_s)),
                })
                .collect(),
        }
    };
    let (a, b) = (side(cells_a), side(cells_b));
    if a.len() != b.len() {
        return Err(Error::Pairing(format!(
            "{} paired observations on side A but {} on side B",
            a.len(),
            b.len()
        )));
    }
    Ok((a, b))
}

fn significance(metric: Metric, a: &[RunMetrics], b: &[RunMetrics]) -> SignificanceRow {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| metric.of(y) - metric.of(x)).collect();
    let mut row = SignificanceRow {
        metric,
        n: diffs.len(),
        statistic: None,
        p_value: None,
        degenerate: false,
        note: None,
    };
    let nonzero = diffs.iter().filter(|d| **d != 0.0).count();
    if diffs.len() < 2 {
        row.note = Some("fewer than 2 paired observations".into());
    } else if nonzero == 0 {
        row.degenerate = true;
        row.statistic = Some(0.0);
        row.p_value = Some(1.0);
        row.note = Some("all paired differences are zero".into());
    } else if nonzero > WILCOXON_MAX_N {
        row.note = Some(format!("{nonzero} nonzero pairs exceed the exact-test limit {WILCOXON_MAX_N}"));
    } else {
        match wilcoxon_exact(&diffs) {
            Ok(w) => {
                row.n = w.n;
                row.statistic = Some(w.statistic);
                row.p_value = Some(w.p_value);
            }
            Err(e) => row.note = Some(e.to_string()),
        }
    }
    row
}

/// Aggregates both sides, computes improvements of B over A and runs
/// the exact signed-rank test on the paired values of every metric.
pub fn compare(
    cells_a: &[Vec<RunRecord>],
    cells_b: &[Vec<RunRecord>],
    pairing: Pairing,
) -> Result<Comparison> {
    let runs_a: Vec<RunRecord> = cells_a.iter().flatten().cloned().collect();
    let runs_b: Vec<RunRecord> = cells_b.iter().flatten().cloned().collect();
    if runs_a.is_empty() || runs_b.is_empty() {
        return Err(Error::Config("both sides of a comparison need at least one run".into()));
    }
    let report_a = aggregate(&ok_metrics(&runs_a))?;
    let report_b = aggregate(&ok_metrics(&runs_b))?;
    let (pa, pb) = paired_values(cells_a, cells_b, pairing)?;
    let significance = Metric::ALL.iter().map(|&m| significance(m, &pa, &pb)).collect();
    let time_ratio = (report_a.time_s.mean > 0.0).then(|| report_b.time_s.mean / report_a.time_s.mean);
    Ok(Comparison {
        pairing,
        improvements: compare_reports(&report_a, &report_b),
        report_a,
        report_b,
        significance,
        time_ratio,
        failed_a: runs_a.iter().filter(|r| !r.is_ok()).count(),
        failed_b: runs_b.iter().filter(|r| !r.is_ok()).count(),
        runs_a,
        runs_b,
    })
}
