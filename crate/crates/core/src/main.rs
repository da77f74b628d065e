use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use foxtsage::harness::{
    compare, emit_reports, load_cell, parse_kv_text, run_cell, selftest, ExperimentConfig,
    Pairing, ReportFormat, DATA_DIR_ENV,
};
use foxtsage::{Error, Result};

#[derive(Parser)]
#[command(name = "foxtsage", version, about = "Optimizer benchmarking harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment cell and write its records.
    Run {
        /// key = value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        optimizer: Option<String>,
        #[arg(long)]
        setting: Option<u8>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        /// Default directory holding the MNIST IDX files.
        #[arg(long, env = DATA_DIR_ENV)]
        data_dir: Option<PathBuf>,
        /// Any other configuration key, as key=value. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Compare cell directories of side A (baseline) with side B.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        a: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        b: Vec<PathBuf>,
        #[arg(long, default_value = "md")]
        format: String,
        #[arg(long, default_value = "per_run")]
        pairing: String,
        /// Output directory; defaults to the current directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the quick oracle and property checks.
    Selftest,
}

fn run_command(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            dataset,
            optimizer,
            setting,
            seed,
            out,
            runs,
            data_dir,
            set,
        } => {
            let mut pairs = match &config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    parse_kv_text(&text)?
                }
                None => Vec::new(),
            };
            // the environment only supplies a default; a file value wins
            let mut cfg = ExperimentConfig::default();
            if let Some(dir) = data_dir {
                cfg.data_dir = dir;
            }
            let flags = [
                ("dataset", dataset),
                ("optimizer", optimizer),
                ("setting", setting.map(|s| s.to_string())),
                ("seed", seed.map(|s| s.to_string())),
                ("runs", runs.map(|r| r.to_string())),
                ("out", out.map(|p| p.display().to_string())),
            ];
            let mut overrides: Vec<(String, String)> = flags
                .into_iter()
                .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
                .collect();
            for kv in set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{kv}'")))?;
                overrides.push((k.trim().to_string(), v.trim().to_string()));
            }
            // presets first, then file keys, then flags: later keys win
            pairs.extend(overrides);
            cfg.apply_pairs(&pairs)?;
            let records = run_cell(&cfg)?;
            let ok = records.iter().filter(|r| r.is_ok()).count();
            let summary = json!({
                "fingerprint": cfg.fingerprint(),
                "out": cfg.out,
                "runs": records.len(),
                "ok": ok,
                "failed": records.len() - ok,
                "errors": records.iter().filter_map(|r| r.error.clone()).collect::<Vec<_>>(),
            });
            println!("{summary}");
            if ok == 0 {
                return Err(Error::Degenerate("every run of the cell failed".into()));
            }
            Ok(())
        }
        Command::Compare {
            a,
            b,
            format,
            pairing,
            out,
        } => {
            let format: ReportFormat = format.parse()?;
            let pairing: Pairing = pairing.parse()?;
            let cells_a = a.iter().map(|d| load_cell(d)).collect::<Result<Vec<_>>>()?;
            let cells_b = b.iter().map(|d| load_cell(d)).collect::<Result<Vec<_>>>()?;
            let cmp = compare(&cells_a, &cells_b, pairing)?;
            let files = emit_reports(&cmp, format, &out)?;
            println!("{}", json!({ "written": files, "time_ratio": cmp.time_ratio }));
            Ok(())
        }
        Command::Selftest => {
            let checks = selftest();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(Error::Degenerate(format!("{failed} self-check(s) failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run_command(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
