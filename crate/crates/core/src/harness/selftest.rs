use serde::Serialize;

use super::compare::compare_reports;
use crate::datasets::{
    mnist_from_bytes, one_hot, split_train_test, synth_binary, write_idx_images, write_idx_labels,
};
use crate::error::Result;
use crate::metrics::{
    accuracy, per_class_scores, precision_recall_f1, wilcoxon_exact, Averaging, ConfusionMatrix,
    MetricsReport,
};
use crate::models::{backward, init_params, Mode, ModelSpec};
use crate::numerics::{Matrix, Rng};
use crate::optimizers::{adam_step, AdamConfig, AdamState, FoxtsageConfig};
use crate::models::{Gradient, ParamSet};
use crate::training::{ModelContext, TrainSet};

#[derive(Debug, Clone, Serialize)]
pub struct SelfCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SelfCheck {
    match f() {
        Ok((passed, detail)) => SelfCheck { name, passed, detail },
        Err(e) => SelfCheck {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Brute-force two-sided p for the signed-rank statistic of distinct
/// ranks 1..=n.
fn brute_p(n: usize, w: u32) -> f64 {
    let total: u32 = (1..=n as u32).sum();
    let hits = (0u32..1 << n)
        .filter(|mask| {
            let plus: u32 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i as u32 + 1).sum();
            plus.min(total - plus) <= w
        })
        .count();
    hits as f64 / (1u64 << n) as f64
}

fn wilcoxon_check() -> Result<(bool, String)> {
    let mut ok = true;
    let mut detail = Vec::new();
    for w in [4u32, 7, 8] {
        // only rank w is negative, so W = w
        let diffs: Vec<f64> = (1..=10)
            .map(|r| if r == w { -(r as f64) } else { r as f64 })
            .collect();
        let got = wilcoxon_exact(&diffs)?;
        let want = brute_p(10, w);
        ok &= got.statistic == w as f64 && got.p_value == want;
        detail.push(format!("W={w} p={:.6}", got.p_value));
    }
    Ok((ok, detail.join(", ")))
}

fn improvement_check() -> Result<(bool, String)> {
    let adam = MetricsReport::from_columns([
        (16.402, 2.3),
        (0.899, 0.02),
        (0.898, 0.02),
        (0.897, 0.02),
        (0.896, 0.02),
        (9.177, 1.0),
    ]);
    let fox = MetricsReport::from_columns([
        (9.508, 1.0),
        (0.906, 0.02),
        (0.906, 0.02),
        (0.906, 0.02),
        (0.904, 0.02),
        (39.541, 2.0),
    ]);
    let rows = compare_reports(&adam, &fox);
    let loss = rows[0].improvement_pct.unwrap_or(f64::NAN);
    let time = rows[10].improvement_pct.unwrap_or(f64::NAN);
    let want_loss = (16.402 - 9.508) / 16.402 * 100.0;
    let want_time = (9.177 - 39.541) / 9.177 * 100.0;
    Ok((
        loss == want_loss && time == want_time && rows.len() == 12,
        format!("loss {loss:.2}%, time {time:.2}%"),
    ))
}

fn gradient_check() -> Result<(bool, String)> {
    let mut rng = Rng::new(7);
    let spec = ModelSpec::mlp(4, [5, 3], 3);
    let params = init_params(&spec, &mut rng)?;
    let x = Matrix::from_vec(6, 4, (0..24).map(|_| rng.gaussian()).collect())?;
    let y = one_hot(&(0..6).map(|i| i % 3).collect::<Vec<_>>(), 3)?;
    let (_, grad) = backward(&spec, &params, &x, &y, Mode::Eval, &mut rng)?;
    let loss_at = |p: &ParamSet| -> Result<f64> {
        Ok(backward(&spec, p, &x, &y, Mode::Eval, &mut Rng::new(0))?.0)
    };
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus.values_mut()[i] += h;
        let mut minus = params.clone();
        minus.values_mut()[i] -= h;
        let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
        let an = grad.values()[i];
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-7));
    }
    Ok((worst < 1e-5, format!("max relative error {worst:.2e} over {} coordinates", params.len())))
}

fn adam_check() -> Result<(bool, String)> {
    let cfg = AdamConfig::default();
    let mut p = ParamSet::from_tensors(vec![("x".into(), Matrix::from_vec(1, 1, vec![1.0])?)]);
    let mut state = AdamState::new(&p);
    let g = Gradient::from_values(&p, vec![0.5])?;
    adam_step(&mut p, &g, &cfg, &mut state)?;
    let step = (1.0 - p.values()[0]).abs();
    let rel = (step - cfg.lr).abs() / cfg.lr;
    Ok((rel < 1e-6, format!("first step {step:.3e}, relative deviation {rel:.1e}")))
}

fn metrics_check() -> Result<(bool, String)> {
    let mut rng = Rng::new(11);
    let mut ok = true;
    for _ in 0..100 {
        let k = 2 + rng.below(4);
        let n = 1 + rng.below(60);
        let truth: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let cm = ConfusionMatrix::from_labels(&truth, &pred, k)?;
        let direct = truth.iter().zip(&pred).filter(|(t, p)| t == p).count() as f64 / n as f64;
        ok &= accuracy(&cm)? == direct;
        for s in per_class_scores(&cm) {
            let f1 = if s.precision + s.recall == 0.0 {
                0.0
            } else {
                2.0 * s.precision * s.recall / (s.precision + s.recall)
            };
            ok &= (s.f1 - f1).abs() <= 1e-12;
        }
        precision_recall_f1(&cm, Averaging::Macro)?;
    }
    Ok((ok, "100 random confusion matrices".into()))
}

fn dataset_check() -> Result<(bool, String)> {
    let mut rng = Rng::new(3);
    let pixels = Matrix::from_vec(5, 6, (0..30).map(|i| (i * 8) as f64 / 255.0).collect())?;
    let labels = vec![0, 1, 2, 9, 4];
    let ds = mnist_from_bytes(
        &write_idx_images(&pixels, 2, 3)?,
        &write_idx_labels(&labels)?,
        "selftest",
    )?;
    let round_trip = ds.features == pixels && ds.labels == labels;
    let synth = synth_binary(97, 3, 1.0, &mut rng)?;
    let split = split_train_test(&synth, 0.8, &mut Rng::new(5))?;
    let mut all: Vec<usize> = split.train_indices.iter().chain(&split.test_indices).copied().collect();
    all.sort_unstable();
    let exhaustive = all == (0..97).collect::<Vec<_>>() && split.train.len() == 77;
    Ok((round_trip && exhaustive, format!("idx round trip {round_trip}, split {exhaustive}")))
}

fn foxtsage_check() -> Result<(bool, String)> {
    let mut rng = Rng::new(21);
    let ds = synth_binary(120, 4, 3.0, &mut rng)?;
    let data = TrainSet::from_dataset(&ds)?;
    let spec = ModelSpec::logreg(4, 2);
    let params = init_params(&spec, &mut rng)?;
    let cfg = FoxtsageConfig {
        population_size: 4,
        iterations: 3,
        batch_size: 16,
        ..FoxtsageConfig::default()
    };
    let run = |parallel: bool| {
        let mut ctx = ModelContext {
            spec: spec.clone(),
            params: params.clone(),
        };
        crate::optimizers::foxtsage_run(&FoxtsageConfig { parallel, ..cfg.clone() }, &mut ctx, &data, 9)
    };
    let serial = run(false)?;
    let parallel = run(true)?;
    let monotone = serial.trace.windows(2).all(|w| w[1].best_loss <= w[0].best_loss);
    let same = serial.trace == parallel.trace && serial.params == parallel.params;
    Ok((monotone && same, format!("monotone {monotone}, parallel == serial {same}")))
}

/// Fast versions of the oracle and property checks, for `foxtsage selftest`.
pub fn selftest() -> Vec<SelfCheck> {
    vec![
        check("wilcoxon_exact_enumeration", wilcoxon_check),
        check("percentage_improvement", improvement_check),
        check("mlp_gradient_finite_difference", gradient_check),
        check("adam_first_step", adam_check),
        check("metrics_identities", metrics_check),
        check("idx_round_trip_and_split", dataset_check),
        check("foxtsage_determinism", foxtsage_check),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_selftest_passes() {
        for c in selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
