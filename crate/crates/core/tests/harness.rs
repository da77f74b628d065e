use std::path::PathBuf;
use std::slice;

use foxtsage::harness::{
    compare, compare_reports, emit_reports, load_cell, run_cell, DatasetId, ExperimentConfig,
    OptimizerId, Pairing, ReportFormat, RunRecord, RunStatus, CONFIG_FILE,
};
use foxtsage::models::Architecture;
use foxtsage::metrics::{Metric, MetricsReport, RunMetrics};
use foxtsage::numerics::Rng;
use foxtsage::Error;

fn synth_cfg(optimizer: OptimizerId) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetId::Synth,
        synth_n: 300,
        synth_d: 4,
        synth_separation: 2.0,
        optimizer,
        runs: 3,
        seed: 77,
        out: PathBuf::new(),
        ..ExperimentConfig::default()
    }
}

fn metric_bits(r: &RunRecord) -> Vec<u64> {
    let m = r.metrics.unwrap();
    let mut v: Vec<u64> = [m.loss, m.accuracy, m.precision, m.recall, m.f1]
        .iter()
        .map(|x| x.to_bits())
        .collect();
    v.extend(r.loss_curve.iter().map(|x| x.to_bits()));
    v.push(r.final_train_loss.unwrap().to_bits());
    v
}

#[test]
fn one_sgd_epoch_gives_one_record_with_one_point() {
    let cfg = ExperimentConfig {
        runs: 1,
        baseline_epochs: Some(1),
        ..synth_cfg(OptimizerId::Sgd)
    };
    let records = run_cell(&cfg).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].status, RunStatus::Ok);
    assert_eq!(records[0].loss_curve.len(), 1);
    assert_eq!(records[0].epochs_trained, 1);
    assert_eq!(records[0].fingerprint, cfg.fingerprint());
}

#[test]
fn reruns_reproduce_every_metric() {
    for optimizer in [OptimizerId::Sgd, OptimizerId::Adam, OptimizerId::Foxtsage] {
        let cfg = synth_cfg(optimizer);
        let a = run_cell(&cfg).unwrap();
        let b = run_cell(&cfg).unwrap();
        let parallel = run_cell(&ExperimentConfig {
            parallel_runs: true,
            ..cfg.clone()
        })
        .unwrap();
        for ((x, y), z) in a.iter().zip(&b).zip(&parallel) {
            assert_eq!(metric_bits(x), metric_bits(y), "{optimizer:?}");
            assert_eq!(metric_bits(x), metric_bits(z), "{optimizer:?} parallel");
        }
        let seeds: Vec<u64> = a.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![77, 77 ^ 1, 77 ^ 2]);
    }
}

#[test]
fn setting_one_trace_has_five_iterations_of_ten() {
    let cfg = ExperimentConfig {
        runs: 1,
        ..synth_cfg(OptimizerId::Foxtsage)
    };
    let r = &run_cell(&cfg).unwrap()[0];
    assert_eq!(r.trace.len(), 5);
    assert_eq!(r.evaluations.len(), 50);
    for it in 1..=5 {
        assert_eq!(r.evaluations.iter().filter(|e| e.iteration == it).count(), 10);
    }
    assert_eq!(r.loss_curve.len(), 50);
    assert_eq!(r.final_train_loss, Some(r.trace[4].best_loss));
}

#[test]
fn unloadable_dataset_yields_failed_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        dataset: DatasetId::Mnist,
        data_dir: dir.path().join("missing"),
        out: dir.path().join("cell"),
        ..synth_cfg(OptimizerId::Adam)
    };
    let records = run_cell(&cfg).unwrap();
    assert_eq!(records.len(), 3);
    assert!(records.iter().all(|r| r.status == RunStatus::Failed && r.error.is_some()));
    assert_eq!(load_cell(&cfg.out).unwrap(), records);
}

#[test]
fn diverging_baseline_is_recorded_and_the_cell_continues() {
    // huge steps overflow the hidden activations
    let cfg = ExperimentConfig {
        model: Architecture::Mlp,
        sgd_lr: 1e300,
        ..synth_cfg(OptimizerId::Sgd)
    };
    let records = run_cell(&cfg).unwrap();
    assert_eq!(records.len(), 3);
    for r in &records {
        assert_eq!(r.status, RunStatus::Failed);
        assert!(r.error.as_deref().unwrap().contains("diverged"));
    }
}

#[test]
fn persisted_cell_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        out: dir.path().join("fox"),
        runs: 2,
        ..synth_cfg(OptimizerId::Foxtsage)
    };
    let records = run_cell(&cfg).unwrap();
    let loaded = load_cell(&cfg.out).unwrap();
    assert_eq!(loaded, records);
    let text = std::fs::read_to_string(cfg.out.join(CONFIG_FILE)).unwrap();
    let reparsed = ExperimentConfig::from_kv_text(&text).unwrap();
    assert_eq!(reparsed.fingerprint(), cfg.fingerprint());
}

#[test]
fn identical_cells_compare_to_zero_and_degenerate() {
    let cell = run_cell(&synth_cfg(OptimizerId::Adam)).unwrap();
    let cmp = compare(slice::from_ref(&cell), slice::from_ref(&cell), Pairing::PerRun).unwrap();
    assert_eq!(cmp.improvements.len(), 12);
    assert!(cmp.improvements.iter().all(|r| r.improvement_pct == Some(0.0)));
    for s in &cmp.significance {
        assert!(s.degenerate);
        assert_eq!(s.p_value, Some(1.0));
    }
}

#[test]
fn summary_columns_reproduce_improvements() {
    let adam = MetricsReport::from_columns([
        (16.402, 36.085),
        (0.899, 0.087),
        (0.881, 0.088),
        (0.88, 0.089),
        (0.898, 0.087),
        (9.177, 5.578),
    ]);
    let fox = MetricsReport::from_columns([
        (9.508, 20.86),
        (0.906, 0.092),
        (0.889, 0.095),
        (0.889, 0.096),
        (0.906, 0.092),
        (39.541, 20.423),
    ]);
    let rows = compare_reports(&adam, &fox);
    let got: Vec<(String, f64)> = rows.iter().map(|r| (r.name(), r.improvement_pct.unwrap())).collect();
    let want = [
        ("Loss Mean", 42.03),
        ("Loss StdDev", 42.19),
        ("Accuracy Mean", 0.78),
        ("Accuracy StdDev", 5.75),
        ("Precision Mean", 0.91),
        ("Precision StdDev", 7.95),
        ("Recall Mean", 1.02),
        ("Recall StdDev", 7.87),
        ("F1-Score Mean", 0.89),
        ("F1-Score StdDev", 5.75),
        ("Time Mean", -330.87),
        ("Time StdDev", -266.13),
    ];
    for ((name, v), (wname, w)) in got.iter().zip(want) {
        assert_eq!(name, wname);
        assert!((v - w).abs() <= 0.01, "{name}: {v} vs {w}");
    }
}

fn fake_record(run_index: usize, m: RunMetrics) -> RunRecord {
    RunRecord {
        fingerprint: "test".into(),
        run_index,
        seed: run_index as u64,
        optimizer: OptimizerId::Adam,
        status: RunStatus::Ok,
        error: None,
        metrics: Some(m),
        final_train_loss: Some(m.loss),
        loss_curve: vec![m.loss * 2.0, m.loss],
        epoch_loss_sums: vec![0.0, 0.0],
        epochs_trained: 2,
        best_lr: None,
        trace: Vec::new(),
        evaluations: Vec::new(),
        started_unix_s: 0.0,
        finished_unix_s: 0.0,
    }
}

fn random_cell(rng: &mut Rng, n: usize) -> Vec<RunRecord> {
    (0..n)
        .map(|i| {
            let u = |rng: &mut Rng, lo, hi| rng.uniform(lo, hi).unwrap();
            fake_record(
                i,
                RunMetrics {
                    loss: u(rng, 0.1, 3.0),
                    accuracy: u(rng, 0.5, 1.0),
                    precision: u(rng, 0.5, 1.0),
                    recall: u(rng, 0.5, 1.0),
                    f1: u(rng, 0.5, 1.0),
                    time_s: u(rng, 1.0, 10.0),
                },
            )
        })
        .collect()
}

#[test]
fn improvements_match_hand_formula_on_random_cells() {
    let mut rng = Rng::new(31);
    for _ in 0..200 {
        let n = 2 + rng.below(6);
        let a = random_cell(&mut rng, n);
        let b = random_cell(&mut rng, n);
        let cmp = compare(slice::from_ref(&a), slice::from_ref(&b), Pairing::PerRun).unwrap();
        for row in &cmp.improvements {
            let column = |cell: &[RunRecord]| -> Vec<f64> {
                cell.iter().map(|r| row.metric.of(&r.metrics.unwrap())).collect()
            };
            let stat = |xs: Vec<f64>| -> f64 {
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                match row.statistic {
                    foxtsage::harness::Statistic::Mean => mean,
                    foxtsage::harness::Statistic::StdDev => {
                        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
                    }
                }
            };
            let (base, cand) = (stat(column(&a)), stat(column(&b)));
            let want = match row.metric {
                Metric::Loss | Metric::Time => (base - cand) / base * 100.0,
                _ => (cand - base) / base * 100.0,
            };
            let got = row.improvement_pct.unwrap();
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{}: {got} vs {want}", row.name());
        }
        // aggregates stay inside the range of their runs
        for m in Metric::ALL {
            let s = cmp.report_a.summary(m);
            assert!(s.min <= s.mean && s.mean <= s.max);
        }
    }
}

#[test]
fn pairing_lengths_must_match() {
    let mut rng = Rng::new(2);
    let a = random_cell(&mut rng, 3);
    let b = random_cell(&mut rng, 4);
    assert!(matches!(compare(slice::from_ref(&a), slice::from_ref(&b), Pairing::PerRun), Err(Error::Pairing(_))));
    // per-cell means pair one cell with one cell
    let cmp = compare(&[a.clone(), b.clone()], &[b, a], Pairing::CellMean).unwrap();
    assert_eq!(cmp.significance[0].n, 2);
}

#[test]
fn wilcoxon_runs_on_paired_values() {
    let mut rng = Rng::new(9);
    let a = random_cell(&mut rng, 10);
    let b: Vec<RunRecord> = a
        .iter()
        .map(|r| {
            let mut m = r.metrics.unwrap();
            m.loss -= 0.5; // every pair improves
            fake_record(r.run_index, m)
        })
        .collect();
    let cmp = compare(&[a], &[b], Pairing::PerRun).unwrap();
    let loss = &cmp.significance[0];
    assert_eq!(loss.n, 10);
    assert_eq!(loss.statistic, Some(0.0));
    assert_eq!(loss.p_value, Some(2.0 / 1024.0));
}

#[test]
fn reports_have_stable_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let base = synth_cfg(OptimizerId::Adam);
    let adam = run_cell(&base).unwrap();
    let fox = run_cell(&ExperimentConfig {
        optimizer: OptimizerId::Foxtsage,
        ..base
    })
    .unwrap();
    let cmp = compare(&[adam], slice::from_ref(&fox), Pairing::PerRun).unwrap();

    // csv summary re-parses to the same numbers
    let out = dir.path().join("csv");
    emit_reports(&cmp, ReportFormat::Csv, &out).unwrap();
    let mut reader = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["row", "a", "b", "improvement_pct"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 12);
    for (rec, row) in rows.iter().zip(&cmp.improvements) {
        assert_eq!(&rec[0], row.name());
        assert_eq!(rec[1].parse::<f64>().unwrap(), row.a);
        assert_eq!(rec[2].parse::<f64>().unwrap(), row.b);
        assert_eq!(rec[3].parse::<f64>().ok(), row.improvement_pct);
    }
    for file in ["significance.csv", "runs.csv", "loss_curves.csv", "accuracy.csv"] {
        assert!(out.join(file).exists(), "{file}");
    }
    let curves = csv::Reader::from_path(out.join("loss_curves.csv")).unwrap().records().count();
    let expected: usize = cmp.runs_a.iter().chain(&cmp.runs_b).map(|r| r.loss_curve.len()).sum();
    assert_eq!(curves, expected);

    // markdown summary table has one row per reported statistic
    let out = dir.path().join("md");
    emit_reports(&cmp, ReportFormat::Md, &out).unwrap();
    let md = std::fs::read_to_string(out.join("summary.md")).unwrap();
    let summary = md.split("## Significance").next().unwrap();
    let table_rows = summary.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Row")).count();
    assert_eq!(table_rows, 12);

    // json loss curves agree with the candidate trace
    let out = dir.path().join("json");
    emit_reports(&cmp, ReportFormat::Json, &out).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    for (run, record) in json["runs_b"].as_array().unwrap().iter().zip(&fox) {
        let curve = run["loss_curve"].as_array().unwrap().len();
        assert_eq!(curve, run["epochs_trained"].as_u64().unwrap() as usize);
        assert_eq!(curve, record.evaluations.len());
        let per_iteration: usize = (1..=record.trace.len())
            .map(|it| record.evaluations.iter().filter(|e| e.iteration == it).count())
            .sum();
        assert_eq!(curve, per_iteration);
    }
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let mut rng = Rng::new(1);
    let cmp = compare(&[random_cell(&mut rng, 2)], &[random_cell(&mut rng, 2)], Pairing::PerRun).unwrap();
    let err = emit_reports(&cmp, ReportFormat::Csv, &blocker.join("sub")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn foxtsage_costs_more_wall_time_than_a_shorter_baseline() {
    let base = ExperimentConfig {
        synth_n: 3000,
        synth_d: 20,
        runs: 2,
        ..synth_cfg(OptimizerId::Sgd)
    };
    let sgd = run_cell(&base).unwrap();
    let fox = run_cell(&ExperimentConfig {
        optimizer: OptimizerId::Foxtsage,
        ..base
    })
    .unwrap();
    let cmp = compare(&[sgd], &[fox], Pairing::PerRun).unwrap();
    // 50 candidate epochs against 5 baseline epochs
    assert!(cmp.time_ratio.unwrap() > 1.0, "ratio {:?}", cmp.time_ratio);
}
