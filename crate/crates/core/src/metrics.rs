//! Classification metrics, cross-run aggregation, percentage improvement
//! and the exact Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts where entry `(i, j)` is the number of samples of true class `i`
/// predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_labels(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape {
                op: "ConfusionMatrix::from_labels",
                left: (truth.len(), 1),
                right: (predicted.len(), 1),
            });
        }
        let mut cm = ConfusionMatrix::new(num_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    /// Row-major `C×C` counts.
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::Shape {
                op: "ConfusionMatrix::from_counts",
                left: (num_classes, num_classes),
                right: (counts.len(), 1),
            });
        }
        Ok(ConfusionMatrix {
            num_classes,
            counts,
        })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for v in [truth, predicted] {
            if v >= self.num_classes {
                return Err(Error::Range {
                    value: v,
                    limit: self.num_classes,
                });
            }
        }
        self.counts[truth * self.num_classes + predicted] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes).map(|c| self.get(c, c)).sum()
    }
}

/// trace / total
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Domain("accuracy of an empty confusion matrix".into()));
    }
    Ok(cm.correct() as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Unweighted mean over classes.
    Macro,
    /// Mean weighted by each class's true-sample count.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Per-class precision, recall and F1. A class whose denominator is zero
/// scores 0 for that quantity; F1 is 0 when precision + recall is 0.
pub fn per_class_scores(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    let c = cm.num_classes();
    (0..c)
        .map(|k| {
            let tp = cm.get(k, k) as f64;
            let predicted: u64 = (0..c).map(|i| cm.get(i, k)).sum();
            let support: u64 = (0..c).map(|j| cm.get(k, j)).sum();
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect()
}

/// `(precision, recall, f1)` averaged over classes.
pub fn precision_recall_f1(cm: &ConfusionMatrix, averaging: Averaging) -> Result<(f64, f64, f64)> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Domain("precision/recall of an empty confusion matrix".into()));
    }
    let scores = per_class_scores(cm);
    let weights: Vec<f64> = match averaging {
        Averaging::Macro => vec![1.0 / scores.len() as f64; scores.len()],
        Averaging::Weighted => scores
            .iter()
            .map(|s| s.support as f64 / total as f64)
            .collect(),
    };
    let avg = |f: fn(&ClassScores) -> f64| -> f64 {
        scores.iter().zip(&weights).map(|(s, w)| f(s) * w).sum()
    };
    Ok((avg(|s| s.precision), avg(|s| s.recall), avg(|s| s.f1)))
}

/// Arithmetic mean of run times in seconds.
pub fn time_avg(times: &[f64]) -> Result<f64> {
    if times.is_empty() {
        return Err(Error::Domain("time_avg of an empty sequence".into()));
    }
    Ok(times.iter().sum::<f64>() / times.len() as f64)
}

/// Final metrics of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

fn summarize(values: &[f64]) -> Summary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // guard against the last-ulp drift of a sum of identical values
    Summary {
        mean: mean.clamp(min, max),
        std,
        min,
        max,
    }
}

/// The six reported metrics, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Loss,
    Accuracy,
    Precision,
    Recall,
    F1,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Loss,
        Metric::Accuracy,
        Metric::Precision,
        Metric::Recall,
        Metric::F1,
        Metric::Time,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Loss => "Loss",
            Metric::Accuracy => "Accuracy",
            Metric::Precision => "Precision",
            Metric::Recall => "Recall",
            Metric::F1 => "F1-Score",
            Metric::Time => "Time",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Metric::Loss => "loss",
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::Time => "time",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Metric::Loss | Metric::Time => Direction::LowerIsBetter,
            _ => Direction::HigherIsBetter,
        }
    }

    pub fn of(self, run: &RunMetrics) -> f64 {
        match self {
            Metric::Loss => run.loss,
            Metric::Accuracy => run.accuracy,
            Metric::Precision => run.precision,
            Metric::Recall => run.recall,
            Metric::F1 => run.f1,
            Metric::Time => run.time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub loss: Summary,
    pub accuracy: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
    pub time_s: Summary,
    pub runs: Vec<RunMetrics>,
    /// Set when only one run contributed and every std is reported as 0.
    pub single_run: bool,
}

impl MetricsReport {
    pub fn summary(&self, metric: Metric) -> &Summary {
        match metric {
            Metric::Loss => &self.loss,
            Metric::Accuracy => &self.accuracy,
            Metric::Precision => &self.precision,
            Metric::Recall => &self.recall,
            Metric::F1 => &self.f1,
            Metric::Time => &self.time_s,
        }
    }

    /// Builds a report from precomputed mean/std columns (no raw runs).
    pub fn from_columns(columns: [(f64, f64); 6]) -> Self {
        let s = |(mean, std): (f64, f64)| Summary {
            mean,
            std,
            min: mean,
            max: mean,
        };
        MetricsReport {
            loss: s(columns[0]),
            accuracy: s(columns[1]),
            precision: s(columns[2]),
            recall: s(columns[3]),
            f1: s(columns[4]),
            time_s: s(columns[5]),
            runs: Vec::new(),
            single_run: false,
        }
    }

    /// Flat `(row name, value)` pairs: "Loss Mean", "Loss StdDev", ...,
    /// "Time StdDev".
    pub fn to_record(&self) -> Vec<(String, f64)> {
        Metric::ALL
            .iter()
            .flat_map(|&m| {
                let s = self.summary(m);
                [
                    (format!("{} Mean", m.label()), s.mean),
                    (format!("{} StdDev", m.label()), s.std),
                ]
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map = self
            .to_record()
            .into_iter()
            .map(|(k, v)| (k, serde_json::json!(v)))
            .collect::<serde_json::Map<_, _>>();
        serde_json::Value::Object(map)
    }

    /// Header line and value line of a one-row CSV.
    pub fn to_csv_row(&self) -> (String, String) {
        let rec = self.to_record();
        let header = rec.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join(",");
        let values = rec.iter().map(|(_, v)| v.to_string()).collect::<Vec<_>>().join(",");
        (header, values)
    }
}

/// Means and sample (N−1) standard deviations of each metric.
pub fn aggregate(runs: &[RunMetrics]) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(Error::Domain("cannot aggregate zero runs".into()));
    }
    let col = |m: Metric| summarize(&runs.iter().map(|r| m.of(r)).collect::<Vec<_>>());
    Ok(MetricsReport {
        loss: col(Metric::Loss),
        accuracy: col(Metric::Accuracy),
        precision: col(Metric::Precision),
        recall: col(Metric::Recall),
        f1: col(Metric::F1),
        time_s: col(Metric::Time),
        runs: runs.to_vec(),
        single_run: runs.len() == 1,
    })
}

/// Relative change from `baseline` to `candidate` in percent, signed so
/// that positive means the candidate is better.
pub fn percentage_improvement(baseline: f64, candidate: f64, direction: Direction) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::Domain("percentage improvement over a zero baseline".into()));
    }
    Ok(match direction {
        Direction::LowerIsBetter => (baseline - candidate) / baseline * 100.0,
        Direction::HigherIsBetter => (candidate - baseline) / baseline * 100.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(W+, W−)
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    /// Exact two-sided p-value.
    pub p_value: f64,
}

pub const WILCOXON_MAX_N: usize = 20;

/// Exact two-sided Wilcoxon signed-rank test on paired differences.
///
/// Zero differences are dropped; tied magnitudes get average ranks. The
/// p-value is the fraction of the 2ⁿ equally likely sign assignments whose
/// `min(W+, W−)` is at most the observed statistic.
pub fn wilcoxon_exact(paired_diffs: &[f64]) -> Result<WilcoxonResult> {
    if paired_diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Domain("paired differences must be finite".into()));
    }
    let nonzero: Vec<f64> = paired_diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let n = nonzero.len();
    if !(2..=WILCOXON_MAX_N).contains(&n) {
        return Err(Error::Domain(format!(
            "exact enumeration supports 2..={WILCOXON_MAX_N} non-zero pairs, got {n}"
        )));
    }

    // doubled ranks keep average ranks integral
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| nonzero[a].abs().total_cmp(&nonzero[b].abs()));
    let mut ranks2 = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && nonzero[order[j + 1]].abs() == nonzero[order[i]].abs() {
            j += 1;
        }
        // positions i..=j share rank ((i+1) + (j+1)) / 2
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks2[k] = r2;
        }
        i = j + 1;
    }
    let total2: u64 = ranks2.iter().sum();
    let plus2: u64 = (0..n).filter(|&k| nonzero[k] > 0.0).map(|k| ranks2[k]).sum();
    let minus2 = total2 - plus2;
    let observed2 = plus2.min(minus2);

    // Gray-code walk over every sign assignment
    let mut current = 0u64;
    let mut extreme = 0u64;
    let assignments = 1u64 << n;
    for step in 0..assignments {
        if step > 0 {
            let bit = step.trailing_zeros() as usize;
            let gray = step ^ (step >> 1);
            if gray & (1 << bit) != 0 {
                current += ranks2[bit];
            } else {
                current -= ranks2[bit];
            }
        }
        if current.min(total2 - current) <= observed2 {
            extreme += 1;
        }
    }
    Ok(WilcoxonResult {
        statistic: observed2 as f64 / 2.0,
        w_plus: plus2 as f64 / 2.0,
        w_minus: minus2 as f64 / 2.0,
        n,
        p_value: extreme as f64 / assignments as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn cm(c: usize, counts: &[u64]) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(c, counts.to_vec()).unwrap()
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&cm(2, &[5, 0, 0, 7])).unwrap(), 1.0);
        let truth = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let pred = [0, 0, 0, 0, 0, 1, 1, 1, 1, 0];
        let m = ConfusionMatrix::from_labels(&truth, &pred, 2).unwrap();
        assert_eq!(accuracy(&m).unwrap(), 0.9);
        assert!(matches!(accuracy(&ConfusionMatrix::new(3)), Err(Error::Domain(_))));
        assert!(ConfusionMatrix::from_labels(&[0], &[2], 2).is_err());
    }

    #[test]
    fn prf_cases() {
        let (p, r, f) = precision_recall_f1(&cm(2, &[4, 0, 0, 6]), Averaging::Macro).unwrap();
        assert_eq!((p, r, f), (1.0, 1.0, 1.0));
        // class 0: tp 3, fp 1, fn 1 ⇒ p = r = 0.75; class 1 symmetric
        let (p, r, f) = precision_recall_f1(&cm(2, &[3, 1, 1, 3]), Averaging::Macro).unwrap();
        assert_eq!(p, 0.75);
        assert_eq!(r, 0.75);
        assert!((f - 0.75).abs() < 1e-15);
    }

    #[test]
    fn prf_zero_denominator_contributes_zero() {
        // class 2 never predicted and never present
        let m = cm(3, &[2, 0, 0, 0, 2, 0, 0, 0, 0]);
        let s = per_class_scores(&m);
        assert_eq!((s[2].precision, s[2].recall, s[2].f1), (0.0, 0.0, 0.0));
        let (p, _, _) = precision_recall_f1(&m, Averaging::Macro).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        let (pw, rw, fw) = precision_recall_f1(&m, Averaging::Weighted).unwrap();
        assert_eq!((pw, rw, fw), (1.0, 1.0, 1.0));
    }

    #[test]
    fn random_three_class_against_hand_computation() {
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let counts: Vec<u64> = (0..9).map(|_| rng.below(20) as u64 + 1).collect();
            let m = cm(3, &counts);
            let (p, r, f) = precision_recall_f1(&m, Averaging::Macro).unwrap();
            let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
            for k in 0..3 {
                let tp = counts[k * 3 + k] as f64;
                let col = (counts[k] + counts[3 + k] + counts[6 + k]) as f64;
                let row = (counts[k * 3] + counts[k * 3 + 1] + counts[k * 3 + 2]) as f64;
                let (pk, rk) = (tp / col, tp / row);
                ps += pk;
                rs += rk;
                fs += 2.0 * pk * rk / (pk + rk);
            }
            assert!((p - ps / 3.0).abs() < 1e-12);
            assert!((r - rs / 3.0).abs() < 1e-12);
            assert!((f - fs / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn time_avg_cases() {
        assert_eq!(time_avg(&[5.0]).unwrap(), 5.0);
        assert_eq!(time_avg(&[1.0, 3.0]).unwrap(), 2.0);
        assert!(time_avg(&[]).is_err());
    }

    fn run(v: f64) -> RunMetrics {
        RunMetrics {
            loss: v,
            accuracy: v,
            precision: v,
            recall: v,
            f1: v,
            time_s: v,
        }
    }

    #[test]
    fn aggregate_cases() {
        let same = aggregate(&[run(0.3), run(0.3), run(0.3)]).unwrap();
        assert_eq!(same.loss.std, 0.0);
        assert_eq!(same.loss.mean, 0.3);
        let two = aggregate(&[run(0.2), run(0.4)]).unwrap();
        assert!((two.loss.mean - 0.3).abs() < 1e-15);
        assert!((two.loss.std - 0.141421356).abs() < 1e-8);
        let single = aggregate(&[run(0.7)]).unwrap();
        assert!(single.single_run);
        assert_eq!(single.f1.std, 0.0);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn report_record_names() {
        let r = aggregate(&[run(0.2), run(0.4)]).unwrap();
        let names: Vec<String> = r.to_record().into_iter().map(|(k, _)| k).collect();
        assert_eq!(names.len(), 12);
        assert_eq!(names[0], "Loss Mean");
        assert_eq!(names[9], "F1-Score StdDev");
        assert_eq!(names[11], "Time StdDev");
        let (h, v) = r.to_csv_row();
        assert_eq!(h.split(',').count(), v.split(',').count());
        assert!(r.to_json().get("Accuracy Mean").is_some());
    }

    #[test]
    fn improvement_cases() {
        let lower = Direction::LowerIsBetter;
        let v = percentage_improvement(16.402, 9.508, lower).unwrap();
        assert!((v - 42.03).abs() < 0.01);
        let t = percentage_improvement(9.177, 39.541, lower).unwrap();
        assert!((t + 330.87).abs() < 0.01);
        assert_eq!(percentage_improvement(3.0, 3.0, Direction::HigherIsBetter).unwrap(), 0.0);
        assert!(percentage_improvement(0.0, 1.0, lower).is_err());
    }

    /// Number of subsets of {1..n} with sum ≤ w (subset-sum DP).
    fn subsets_with_sum_at_most(n: usize, w: usize) -> u64 {
        let max = n * (n + 1) / 2;
        let mut ways = vec![0u64; max + 1];
        ways[0] = 1;
        for k in 1..=n {
            for s in (k..=max).rev() {
                ways[s] += ways[s - k];
            }
        }
        ways[..=w.min(max)].iter().sum()
    }

    fn diffs_with_plus_rank_sum(n: usize, plus_ranks: &[usize]) -> Vec<f64> {
        (1..=n)
            .map(|r| if plus_ranks.contains(&r) { r as f64 } else { -(r as f64) })
            .collect()
    }

    #[test]
    fn wilcoxon_small_tables() {
        // n = 10: W+ = 4 from ranks {1, 3}
        let res = wilcoxon_exact(&diffs_with_plus_rank_sum(10, &[1, 3])).unwrap();
        assert_eq!(res.statistic, 4.0);
        assert_eq!(res.n, 10);
        let oracle = 2.0 * subsets_with_sum_at_most(10, 4) as f64 / 1024.0;
        assert_eq!(res.p_value, oracle);
        assert_eq!(format!("{:.6}", res.p_value), "0.013672");
    }

    #[test]
    fn wilcoxon_degenerate_and_range() {
        assert!(matches!(wilcoxon_exact(&[0.0, 0.0]), Err(Error::Degenerate(_))));
        assert!(wilcoxon_exact(&[1.0]).is_err());
        assert!(wilcoxon_exact(&[1.0; 21]).is_err());
        // zeros are dropped before ranking
        let a = wilcoxon_exact(&[0.0, 1.0, -2.0, 3.0]).unwrap();
        let b = wilcoxon_exact(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wilcoxon_all_same_sign_minimum_p() {
        let res = wilcoxon_exact(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(res.statistic, 0.0);
        assert_eq!(res.p_value, 2.0 / 32.0);
    }

    #[test]
    fn wilcoxon_ties_get_average_ranks() {
        // |d| = 1, 1, 2: ranks 1.5, 1.5, 3
        let res = wilcoxon_exact(&[1.0, -1.0, 2.0]).unwrap();
        assert_eq!(res.w_plus, 4.5);
        assert_eq!(res.w_minus, 1.5);
        // brute force over 8 sign patterns of ranks (1.5, 1.5, 3)
        let ranks = [1.5, 1.5, 3.0];
        let extreme = (0..8u32)
            .filter(|mask| {
                let plus: f64 = (0..3).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
                plus.min(6.0 - plus) <= 1.5
            })
            .count();
        assert_eq!(res.p_value, extreme as f64 / 8.0);
    }

    proptest! {
        #[test]
        fn wilcoxon_sign_flip_symmetry(diffs in proptest::collection::vec(-5.0f64..5.0, 2..12)) {
            prop_assume!(diffs.iter().filter(|&&d| d != 0.0).count() >= 2);
            let a = wilcoxon_exact(&diffs).unwrap();
            let flipped: Vec<f64> = diffs.iter().map(|d| -d).collect();
            let b = wilcoxon_exact(&flipped).unwrap();
            prop_assert_eq!(a.p_value, b.p_value);
            prop_assert_eq!(a.statistic, b.statistic);
            prop_assert!(a.p_value > 0.0 && a.p_value <= 1.0);
        }

        #[test]
        fn improvement_recovers_relative_reduction(b in 1e-3f64..1e3, k in -50.0f64..99.0) {
            let cand = b * (1.0 - k / 100.0);
            let v = percentage_improvement(b, cand, Direction::LowerIsBetter).unwrap();
            prop_assert!((v - k).abs() < 1e-9);
        }

        #[test]
        fn f1_equals_p_when_p_equals_r(x in 0.01f64..1.0) {
            // p = r = x on every class: tp = x·support, fp = fn
            let tp = (x * 1000.0).round() as u64;
            let off = 1000 - tp;
            let m = cm(2, &[tp, off, off, tp]);
            let (p, r, f) = precision_recall_f1(&m, Averaging::Macro).unwrap();
            prop_assert!((p - r).abs() < 1e-15);
            prop_assert!((f - p).abs() < 1e-12);
        }

        #[test]
        fn aggregate_mean_within_range(vals in proptest::collection::vec(-100.0f64..100.0, 1..20)) {
            let runs: Vec<RunMetrics> = vals.iter().map(|&v| run(v)).collect();
            let r = aggregate(&runs).unwrap();
            prop_assert!(r.loss.mean >= r.loss.min && r.loss.mean <= r.loss.max);
            prop_assert!(r.loss.std >= 0.0);
        }
    }

    #[test]
    fn wilcoxon_p_monotone_in_statistic() {
        let n = 10;
        let mut last = 0.0;
        // W from 0 up to n(n+1)/4 by choosing positive-rank sets with that sum
        for w in 0..=27usize {
            let mut plus = Vec::new();
            let mut rest = w;
            for r in (1..=n).rev() {
                if r <= rest {
                    plus.push(r);
                    rest -= r;
                }
            }
            let res = wilcoxon_exact(&diffs_with_plus_rank_sum(n, &plus)).unwrap();
            assert_eq!(res.statistic, w as f64);
            assert!(res.p_value >= last);
            last = res.p_value;
        }
    }
}
