use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetId, ExperimentConfig, MnistSplit, OptimizerId};
use crate::datasets::{
    load_csv, load_mnist_idx, split_train_test, synth_binary, LabeledDataset,
};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, precision_recall_f1, ConfusionMatrix, RunMetrics};
use crate::models::{evaluate, init_params};
use crate::numerics::{json_f64, Rng};
use crate::optimizers::{foxtsage_run, AdamState, CandidateRecord, IterationSummary};
use crate::training::{adam_epoch, sgd_epoch, ModelContext, TrainSet};

pub const RECORDS_FILE: &str = "records.json";
pub const CONFIG_FILE: &str = "config.txt";

/// Stream ids under the run seed.
const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Everything recorded about one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fingerprint: String,
    pub run_index: usize,
    pub seed: u64,
    pub optimizer: OptimizerId,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Test-set loss, accuracy, precision/recall/F1 and wall time.
    pub metrics: Option<RunMetrics>,
    /// Full-training-set loss of the returned parameters.
    #[serde(with = "json_f64::option")]
    pub final_train_loss: Option<f64>,
    /// One point per trained epoch (per candidate epoch for Foxtsage).
    #[serde(with = "json_f64::vec")]
    pub loss_curve: Vec<f64>,
    /// Sum of mini-batch losses of each epoch in `loss_curve`.
    #[serde(with = "json_f64::vec")]
    pub epoch_loss_sums: Vec<f64>,
    pub epochs_trained: usize,
    pub best_lr: Option<f64>,
    pub trace: Vec<IterationSummary>,
    pub evaluations: Vec<CandidateRecord>,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// Train and test partitions of an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn maybe_subsample(ds: LabeledDataset, n: usize, rng: &mut Rng) -> LabeledDataset {
    if n == 0 || n >= ds.len() {
        ds
    } else {
        ds.subsample(n, rng)
    }
}

/// Loads, splits and subsamples the configured dataset. Depends only on
/// the root seed, never on the run index.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let mut rng = Rng::stream(cfg.seed, 0);
    let (train, test) = match cfg.dataset {
        DatasetId::Mnist => {
            let dir = &cfg.data_dir;
            let train = load_mnist_idx(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
            )?;
            let test = load_mnist_idx(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
            )?;
            match cfg.mnist_split {
                MnistSplit::Canonical => (train, test),
                MnistSplit::Pooled => {
                    let split = split_train_test(&train.concat(&test)?, cfg.split_fraction, &mut rng)?;
                    (split.train, split.test)
                }
            }
        }
        DatasetId::Csv => {
            let path = cfg
                .csv_path
                .as_ref()
                .ok_or_else(|| Error::Config("dataset = csv needs csv_path".into()))?;
            let split = split_train_test(&load_csv(path)?, cfg.split_fraction, &mut rng)?;
            (split.train, split.test)
        }
        DatasetId::Synth => {
            let ds = synth_binary(cfg.synth_n, cfg.synth_d, cfg.synth_separation, &mut rng)?;
            let split = split_train_test(&ds, cfg.split_fraction, &mut rng)?;
            (split.train, split.test)
        }
    };
    let train = maybe_subsample(train, cfg.train_subsample, &mut rng);
    let test = maybe_subsample(test, cfg.test_subsample, &mut rng);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Degenerate(format!(
            "empty partition: {} train rows, {} test rows",
            train.len(),
            test.len()
        )));
    }
    Ok(ExperimentData { train, test })
}

struct Trained {
    ctx: ModelContext,
    final_train_loss: f64,
    loss_curve: Vec<f64>,
    epoch_loss_sums: Vec<f64>,
    best_lr: Option<f64>,
    trace: Vec<IterationSummary>,
    evaluations: Vec<CandidateRecord>,
}

fn train_run(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    train: &TrainSet,
    run_seed: u64,
) -> Result<Trained> {
    let num_classes = data.train.num_classes.max(data.test.num_classes);
    let spec = cfg.model_spec(data.train.dim(), num_classes);
    spec.validate()?;
    let params = init_params(&spec, &mut Rng::stream(run_seed, INIT_STREAM))?;
    let mut ctx = ModelContext { spec, params };
    let mut rng = Rng::stream(run_seed, TRAIN_STREAM);
    let batch = cfg.foxtsage.batch_size;

    let mut loss_curve = Vec::new();
    let mut epoch_loss_sums = Vec::new();
    match cfg.optimizer {
        OptimizerId::Foxtsage => {
            let outcome = foxtsage_run(&cfg.foxtsage, &mut ctx, train, run_seed)?;
            for e in &outcome.evaluations {
                loss_curve.push(e.epoch_loss);
                epoch_loss_sums.push(e.epoch_loss_sum);
            }
            return Ok(Trained {
                ctx,
                final_train_loss: outcome.best_loss,
                loss_curve,
                epoch_loss_sums,
                best_lr: Some(outcome.best_lr),
                trace: outcome.trace,
                evaluations: outcome.evaluations,
            });
        }
        OptimizerId::Sgd | OptimizerId::Adam => {
            let mut adam = AdamState::new(&ctx.params);
            for epoch in 0..cfg.effective_baseline_epochs() {
                let loss = match cfg.optimizer {
                    OptimizerId::Sgd => {
                        sgd_epoch(&ctx.spec, &mut ctx.params, train, cfg.sgd_lr, batch, &mut rng)?
                    }
                    _ => adam_epoch(
                        &ctx.spec,
                        &mut ctx.params,
                        train,
                        &cfg.adam,
                        &mut adam,
                        batch,
                        &mut rng,
                    )?,
                };
                loss_curve.push(loss.mean);
                epoch_loss_sums.push(loss.batch_sum);
                if !loss.is_finite() {
                    return Err(Error::Degenerate(format!(
                        "training diverged in epoch {}",
                        epoch + 1
                    )));
                }
            }
        }
    }
    let final_train_loss = *loss_curve.last().expect("at least one epoch");
    Ok(Trained {
        ctx,
        final_train_loss,
        loss_curve,
        epoch_loss_sums,
        best_lr: match cfg.optimizer {
            OptimizerId::Sgd => Some(cfg.sgd_lr),
            _ => None,
        },
        trace: Vec::new(),
        evaluations: Vec::new(),
    })
}

/// Trains and scores run `run_index`. Failures become failed records.
pub fn run_one(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    train: &TrainSet,
    run_index: usize,
) -> RunRecord {
    let seed = cfg.run_seed(run_index);
    let started_unix_s = unix_now();
    let clock = Instant::now();
    let mut record = RunRecord {
        fingerprint: cfg.fingerprint(),
        run_index,
        seed,
        optimizer: cfg.optimizer,
        status: RunStatus::Failed,
        error: None,
        metrics: None,
        final_train_loss: None,
        loss_curve: Vec::new(),
        epoch_loss_sums: Vec::new(),
        epochs_trained: 0,
        best_lr: None,
        trace: Vec::new(),
        evaluations: Vec::new(),
        started_unix_s,
        finished_unix_s: started_unix_s,
    };
    let result = train_run(cfg, data, train, seed).and_then(|t| {
        let time_s = clock.elapsed().as_secs_f64();
        let test = TrainSet::from_dataset(&data.test)?;
        let (loss, preds) = evaluate(&t.ctx.spec, &t.ctx.params, &test.features, &test.targets)?;
        let cm = ConfusionMatrix::from_labels(&data.test.labels, &preds, t.ctx.spec.num_classes)?;
        let (precision, recall, f1) = precision_recall_f1(&cm, cfg.averaging)?;
        let metrics = RunMetrics {
            loss,
            accuracy: accuracy(&cm)?,
            precision,
            recall,
            f1,
            time_s,
        };
        Ok((t, metrics))
    });
    match result {
        Ok((t, metrics)) => {
            record.status = RunStatus::Ok;
            record.metrics = Some(metrics);
            record.final_train_loss = Some(t.final_train_loss);
            record.epochs_trained = t.loss_curve.len();
            record.loss_curve = t.loss_curve;
            record.epoch_loss_sums = t.epoch_loss_sums;
            record.best_lr = t.best_lr;
            record.trace = t.trace;
            record.evaluations = t.evaluations;
        }
        Err(e) => {
            if let Error::AllCandidatesFailed { trace, .. } = &e {
                record.trace = trace.clone();
            }
            record.error = Some(e.to_string());
        }
    }
    record.finished_unix_s = unix_now();
    record
}

/// Runs every seeded run of a cell and, when `cfg.out` is non-empty,
/// writes `records.json` and `config.txt` there.
///
/// An unloadable dataset or a diverged run yields failed records; only
/// an invalid configuration or an unwritable output directory is an error.
pub fn run_cell(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let records: Vec<RunRecord> = match prepare_data(cfg).and_then(|d| {
        let train = TrainSet::from_dataset(&d.train)?;
        Ok((d, train))
    }) {
        Ok((data, train)) => {
            if cfg.parallel_runs {
                (0..cfg.runs)
                    .into_par_iter()
                    .map(|r| run_one(cfg, &data, &train, r))
                    .collect()
            } else {
                (0..cfg.runs).map(|r| run_one(cfg, &data, &train, r)).collect()
            }
        }
        Err(e) => {
            let now = unix_now();
            (0..cfg.runs)
                .map(|run_index| RunRecord {
                    fingerprint: cfg.fingerprint(),
                    run_index,
                    seed: cfg.run_seed(run_index),
                    optimizer: cfg.optimizer,
                    status: RunStatus::Failed,
                    error: Some(format!("dataset: {e}")),
                    metrics: None,
                    final_train_loss: None,
                    loss_curve: Vec::new(),
                    epoch_loss_sums: Vec::new(),
                    epochs_trained: 0,
                    best_lr: None,
                    trace: Vec::new(),
                    evaluations: Vec::new(),
                    started_unix_s: now,
                    finished_unix_s: now,
                })
                .collect()
        }
    };
    if !cfg.out.as_os_str().is_empty() {
        persist_cell(cfg, &records, &cfg.out)?;
    }
    Ok(records)
}

pub fn persist_cell(cfg: &ExperimentConfig, records: &[RunRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(RECORDS_FILE);
    fs::write(&path, serde_json::to_string_pretty(records)?).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(CONFIG_FILE);
    let text = format!(
        "# fingerprint {}\n{}out = {}\n",
        cfg.fingerprint(),
        cfg.resolved_text(),
        cfg.out.display()
    );
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn load_cell(dir: &Path) -> Result<Vec<RunRecord>> {
    let path = dir.join(RECORDS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
