use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::Averaging;
use crate::models::{Architecture, ModelSpec};
use crate::optimizers::{AdamConfig, CandidateStart, FoxtsageConfig};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "FOXTSAGE_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetId {
    Mnist,
    Csv,
    Synth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MnistSplit {
    /// The standard 60k/10k train/test files.
    Canonical,
    /// Both files pooled, then split with `split_fraction`.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerId {
    Sgd,
    Adam,
    Foxtsage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineBudget {
    /// Baselines train one epoch per Foxtsage iteration.
    Iterations,
    /// Baselines train iterations × population epochs.
    TotalEpochs,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, { $($text:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " '{}'"), other))),
                }
            }
        }

        impl $ty {
            pub fn as_str(&self) -> &'static str {
                $(if *self == $variant { return $text; })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(DatasetId, "dataset", {
    "mnist" => DatasetId::Mnist,
    "csv" => DatasetId::Csv,
    "synth" => DatasetId::Synth,
});
keyword_enum!(MnistSplit, "mnist split", {
    "canonical" => MnistSplit::Canonical,
    "pooled" => MnistSplit::Pooled,
});
keyword_enum!(OptimizerId, "optimizer", {
    "sgd" => OptimizerId::Sgd,
    "adam" => OptimizerId::Adam,
    "foxtsage" => OptimizerId::Foxtsage,
});
keyword_enum!(BaselineBudget, "baseline budget", {
    "iterations" => BaselineBudget::Iterations,
    "total_epochs" => BaselineBudget::TotalEpochs,
});

/// Everything needed to run one experiment cell.
///
/// Run `r` of a cell uses seed `seed ^ r`. The data split and the synthetic
/// dataset depend only on `seed`, so cells that share a seed see the same
/// data and the same per-run initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetId,
    pub data_dir: PathBuf,
    pub csv_path: Option<PathBuf>,
    pub mnist_split: MnistSplit,
    /// 0 keeps every training row.
    pub train_subsample: usize,
    /// 0 keeps every test row.
    pub test_subsample: usize,
    pub split_fraction: f64,
    pub synth_n: usize,
    pub synth_d: usize,
    pub synth_separation: f64,
    pub model: Architecture,
    pub hidden: [usize; 2],
    pub dropout_rate: f64,
    pub optimizer: OptimizerId,
    pub setting: u8,
    pub foxtsage: FoxtsageConfig,
    pub adam: AdamConfig,
    /// Fixed learning rate of the plain SGD baseline.
    pub sgd_lr: f64,
    /// Explicit baseline epoch count; overrides `baseline_budget`.
    pub baseline_epochs: Option<usize>,
    pub baseline_budget: BaselineBudget,
    pub averaging: Averaging,
    pub runs: usize,
    pub seed: u64,
    pub parallel_runs: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetId::Synth,
            data_dir: std::env::var_os(DATA_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("data/mnist")),
            csv_path: None,
            mnist_split: MnistSplit::Canonical,
            train_subsample: 0,
            test_subsample: 0,
            split_fraction: 0.8,
            synth_n: 1000,
            synth_d: 10,
            synth_separation: 2.0,
            model: Architecture::Logreg,
            hidden: [128, 128],
            dropout_rate: 0.5,
            optimizer: OptimizerId::Foxtsage,
            setting: 1,
            foxtsage: FoxtsageConfig::setting1(),
            adam: AdamConfig::default(),
            sgd_lr: 0.01,
            baseline_epochs: None,
            baseline_budget: BaselineBudget::Iterations,
            averaging: Averaging::Macro,
            runs: 5,
            seed: 0,
            parallel_runs: false,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse '{value}' for key '{key}' as a boolean"))),
    }
}

/// Keys applied before all others so that explicit sizes win over presets.
const PRIORITY_KEYS: [&str; 1] = ["setting"];

impl ExperimentConfig {
    /// Reads `key = value` lines; `#` starts a comment.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_pairs(&parse_kv_text(text)?)?;
        Ok(cfg)
    }

    /// Applies `(key, value)` pairs; a `setting` key is applied first.
    pub fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs.iter().filter(|(k, _)| PRIORITY_KEYS.contains(&k.as_str())) {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| !PRIORITY_KEYS.contains(&k.as_str())) {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_setting(&mut self, setting: u8) -> Result<()> {
        let preset = match setting {
            1 => FoxtsageConfig::setting1(),
            2 => FoxtsageConfig::setting2(),
            other => return Err(Error::Config(format!("setting must be 1 or 2, got {other}"))),
        };
        self.setting = setting;
        self.foxtsage.iterations = preset.iterations;
        self.foxtsage.population_size = preset.population_size;
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "dataset" => self.dataset = value.parse()?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "csv_path" => self.csv_path = Some(PathBuf::from(value)),
            "mnist_split" => self.mnist_split = value.parse()?,
            "train_subsample" => self.train_subsample = parse(key, value)?,
            "test_subsample" => self.test_subsample = parse(key, value)?,
            "split_fraction" => self.split_fraction = parse(key, value)?,
            "synth_n" => self.synth_n = parse(key, value)?,
            "synth_d" => self.synth_d = parse(key, value)?,
            "synth_separation" => self.synth_separation = parse(key, value)?,
            "model" => self.model = value.parse()?,
            "hidden" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(Error::Config(format!("hidden needs two widths, got '{value}'")));
                }
                self.hidden = [parse(key, parts[0])?, parse(key, parts[1])?];
            }
            "dropout_rate" => self.dropout_rate = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "setting" => self.apply_setting(parse(key, value)?)?,
            "iterations" => self.foxtsage.iterations = parse(key, value)?,
            "population" => self.foxtsage.population_size = parse(key, value)?,
            "lr_min" => self.foxtsage.lr_min = parse(key, value)?,
            "lr_max" => self.foxtsage.lr_max = parse(key, value)?,
            "lr_base" => self.foxtsage.lr_base = parse(key, value)?,
            "decay_alpha" => self.foxtsage.decay_alpha = parse(key, value)?,
            "apply_lr_decay" => self.foxtsage.apply_lr_decay = parse_bool(key, value)?,
            "gaussian_sigma" => self.foxtsage.gaussian_sigma = parse(key, value)?,
            "denom_floor" => self.foxtsage.denom_floor = parse(key, value)?,
            "candidate_start" => self.foxtsage.candidate_start = value.parse::<CandidateStart>()?,
            "parallel_candidates" => self.foxtsage.parallel = parse_bool(key, value)?,
            "batch_size" => self.foxtsage.batch_size = parse(key, value)?,
            "adam_lr" => self.adam.lr = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "eps" => self.adam.eps = parse(key, value)?,
            "sgd_lr" => self.sgd_lr = parse(key, value)?,
            "baseline_epochs" => {
                self.baseline_epochs = match value {
                    "" | "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "baseline_budget" => self.baseline_budget = value.parse()?,
            "averaging" => {
                self.averaging = match value {
                    "macro" => Averaging::Macro,
                    "weighted" => Averaging::Weighted,
                    other => return Err(Error::Config(format!("unknown averaging '{other}'"))),
                }
            }
            "runs" => self.runs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "parallel_runs" => self.parallel_runs = parse_bool(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    pub fn model_spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        match self.model {
            Architecture::Logreg => ModelSpec::logreg(input_dim, num_classes),
            Architecture::Mlp => ModelSpec::mlp(input_dim, self.hidden, num_classes),
            Architecture::LogregDropout => {
                ModelSpec::logreg_dropout(input_dim, num_classes, self.dropout_rate)
            }
        }
    }

    /// Epochs given to SGD/Adam runs.
    pub fn effective_baseline_epochs(&self) -> usize {
        self.baseline_epochs.unwrap_or(match self.baseline_budget {
            BaselineBudget::Iterations => self.foxtsage.iterations,
            BaselineBudget::TotalEpochs => {
                self.foxtsage.iterations * self.foxtsage.population_size
            }
        })
    }

    pub fn run_seed(&self, run_index: usize) -> u64 {
        self.seed ^ run_index as u64
    }

    pub fn validate(&self) -> Result<()> {
        self.foxtsage.validate()?;
        self.adam.validate()?;
        if !(self.sgd_lr.is_finite() && self.sgd_lr > 0.0) {
            return Err(Error::Config(format!("sgd_lr must be positive, got {}", self.sgd_lr)));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if self.dataset == DatasetId::Csv && self.csv_path.is_none() {
            return Err(Error::Config("dataset = csv needs csv_path".into()));
        }
        if self.effective_baseline_epochs() == 0 {
            return Err(Error::Config("baseline epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` listing of every setting except `out`.
    pub fn resolved_text(&self) -> String {
        let mut kv = BTreeMap::new();
        let f = &self.foxtsage;
        let a = &self.adam;
        let entries: [(&str, String); 38] = [
            ("dataset", self.dataset.as_str().into()),
            ("data_dir", self.data_dir.display().to_string()),
            (
                "csv_path",
                self.csv_path.as_ref().map_or(String::new(), |p| p.display().to_string()),
            ),
            ("mnist_split", self.mnist_split.as_str().into()),
            ("train_subsample", self.train_subsample.to_string()),
            ("test_subsample", self.test_subsample.to_string()),
            ("split_fraction", self.split_fraction.to_string()),
            ("synth_n", self.synth_n.to_string()),
            ("synth_d", self.synth_d.to_string()),
            ("synth_separation", self.synth_separation.to_string()),
            ("model", self.model.to_string()),
            ("hidden", format!("{},{}", self.hidden[0], self.hidden[1])),
            ("dropout_rate", self.dropout_rate.to_string()),
            ("optimizer", self.optimizer.as_str().into()),
            ("setting", self.setting.to_string()),
            ("iterations", f.iterations.to_string()),
            ("population", f.population_size.to_string()),
            ("lr_min", f.lr_min.to_string()),
            ("lr_max", f.lr_max.to_string()),
            ("lr_base", f.lr_base.to_string()),
            ("decay_alpha", f.decay_alpha.to_string()),
            ("apply_lr_decay", f.apply_lr_decay.to_string()),
            ("gaussian_sigma", f.gaussian_sigma.to_string()),
            ("denom_floor", f.denom_floor.to_string()),
            (
                "candidate_start",
                match f.candidate_start {
                    CandidateStart::Snapshot => "snapshot".into(),
                    CandidateStart::Sequential => "sequential".into(),
                },
            ),
            ("parallel_candidates", f.parallel.to_string()),
            ("batch_size", f.batch_size.to_string()),
            ("adam_lr", a.lr.to_string()),
            ("beta1", a.beta1.to_string()),
            ("beta2", a.beta2.to_string()),
            ("eps", a.eps.to_string()),
            ("sgd_lr", self.sgd_lr.to_string()),
            (
                "baseline_epochs",
                self.baseline_epochs.map_or("auto".into(), |e| e.to_string()),
            ),
            ("baseline_budget", self.baseline_budget.as_str().into()),
            (
                "averaging",
                match self.averaging {
                    Averaging::Macro => "macro".into(),
                    Averaging::Weighted => "weighted".into(),
                },
            ),
            ("runs", self.runs.to_string()),
            ("seed", self.seed.to_string()),
            ("parallel_runs", self.parallel_runs.to_string()),
        ];
        kv.extend(entries);
        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 of [`Self::resolved_text`], hex, first 16 characters.
    /// Scheduling flags do not change results and are left out.
    pub fn fingerprint(&self) -> String {
        let text: String = self
            .resolved_text()
            .lines()
            .filter(|l| !l.starts_with("parallel_") && !l.starts_with("runs ="))
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value', got '{line}'", n + 1))
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}
