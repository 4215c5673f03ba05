//! Command-line front end. Exit codes: 0 success, 1 check failure,
//! 2 invalid input or config, 3 numerical failure.

pub mod commands;
pub mod config;
pub mod io;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{load_csv, read_bins, CsvSchema, Dataset, Split};
use crate::error::{Error, Result};
use commands::*;
use config::{config_template, Metric, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NumericalFailure(_) | Error::InsufficientData { .. } | Error::UndefinedDistance => EXIT_NUMERICAL,
        _ => EXIT_INVALID,
    }
}

#[derive(Debug, Parser)]
#[command(name = "emdloss", version, about = "Train and evaluate classifiers with squared-EMD losses")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint and append an EvalReport to OUT/eval.jsonl.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Export D̄, B, D and SDD computed from a checkpoint's features.
    GdMatrix {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Norm order for centroid distances.
        #[arg(long, default_value_t = 2.0)]
        norm_order: f64,
        /// Compute SDD over off-diagonal entries only.
        #[arg(long)]
        off_diagonal: bool,
    },
    /// Cross-check the closed-form losses against the exact transport solver.
    OracleCheck {
        #[arg(long, default_value_t = 2)]
        min_classes: usize,
        #[arg(long, default_value_t = 8)]
        max_classes: usize,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb the closed forms by 1e-3 to exercise the failure path.
        #[arg(long)]
        inject_failure: bool,
        /// Where to write a failing instance (default: stderr only).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every *.toml in a directory and tabulate the results.
    Compare {
        /// Directory of run configs that differ only in loss settings.
        #[arg(long = "config", alias = "config-dir")]
        config_dir: PathBuf,
        #[arg(long, default_value = "compare")]
        out: PathBuf,
        /// Overrides every config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Reuse OUT/<name>/ checkpoints and histories when present.
        #[arg(long)]
        reuse: bool,
    },
    /// Print a run config with every default filled in.
    ConfigTemplate {
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Dataset selection for eval and gd-matrix: a run config's data, or a CSV.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long, conflicts_with = "data")]
    pub config: Option<PathBuf>,
    /// train or test split of the config's data.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// A CSV of feature columns followed by a label column.
    #[arg(long, requires = "num_classes")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// The CSV has no header row.
    #[arg(long)]
    pub no_header: bool,
    /// Bin sidecar with class centers (enables Spearman ρ).
    #[arg(long)]
    pub bins: Option<PathBuf>,
}

struct Selected {
    data: Dataset,
    centers: Option<Vec<f64>>,
    metrics: Vec<Metric>,
}

impl DataArgs {
    fn load(&self) -> Result<Selected> {
        let flag_bins = self.bins.as_deref().map(read_bins).transpose()?.map(|b| b.bin_centers);
        if let Some(path) = &self.data {
            let schema = CsvSchema {
                num_classes: self.num_classes.unwrap_or(0),
                has_header: !self.no_header,
            };
            return Ok(Selected {
                data: load_csv(path, schema, Split::Test)?,
                centers: flag_bins,
                metrics: vec![Metric::Spearman, Metric::Sdd],
            });
        }
        let Some(cfg_path) = &self.config else {
            return Err(Error::Config("pass --config or --data".into()));
        };
        let cfg = RunConfig::load(cfg_path)?;
        let loaded = cfg.load_data()?;
        let data = loaded.split(split_from_name(&self.split)?)?.clone();
        Ok(Selected {
            data,
            centers: flag_bins.or_else(|| loaded.bins.map(|b| b.bin_centers)),
            metrics: cfg.metrics,
        })
    }
}

/// Runs one command and returns its exit code; messages go to stdout/stderr.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train { config, out, seed } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let outcome = run_train(&cfg, &out)?;
            if let Some(last) = outcome.history.records.last() {
                println!(
                    "trained {} for {} epochs: train AEM {:.4}{}",
                    cfg.train.loss_kind,
                    last.epoch,
                    last.train_aem,
                    match (last.test_aem, last.test_aeo) {
                        (Some(a), Some(o)) => format!(", test AEM {a:.4}, test AEO {o:.4}"),
                        _ => String::new(),
                    }
                );
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            Ok(EXIT_OK)
        }
        Command::Eval { checkpoint, data, out } => {
            let sel = data.load()?;
            let report = run_eval(&checkpoint, &sel.data, sel.centers.as_deref(), &sel.metrics, &out)?;
            println!("{}", serde_json::to_string(&report)?);
            Ok(EXIT_OK)
        }
        Command::GdMatrix {
            checkpoint,
            data,
            out,
            norm_order,
            off_diagonal,
        } => {
            let sel = data.load()?;
            let outcome = run_gd_matrix(&checkpoint, &sel.data, norm_order, !off_diagonal, &out)?;
            println!("SDD = {}", sdd_display(outcome.sdd));
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            Ok(EXIT_OK)
        }
        Command::OracleCheck {
            min_classes,
            max_classes,
            trials,
            seed,
            inject_failure,
            out,
        } => {
            let report = run_oracle_check(&OracleCheckOptions {
                min_classes,
                max_classes,
                trials,
                seed,
                inject_failure,
                ..OracleCheckOptions::default()
            })?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", report.table());
            if report.passed() {
                return Ok(EXIT_OK);
            }
            let dump = serde_json::to_string_pretty(&report.failures)?;
            eprintln!("failing instances:\n{dump}");
            if let Some(dir) = out {
                write_failure_dump(&dir, &dump)?;
            }
            Ok(EXIT_CHECK_FAILED)
        }
        Command::Compare {
            config_dir,
            out,
            seed,
            reuse,
        } => {
            let outcome = run_compare(&config_dir, &out, seed, reuse)?;
            println!("{:<8} {:<20} {:>8} {:>8} {:>8}", "method", "config", "AEM", "AEO", "rho");
            for r in &outcome.summary {
                println!(
                    "{:<8} {:<20} {:>8.4} {:>8.4} {:>8}",
                    r.method,
                    r.config,
                    r.aem,
                    r.aeo,
                    r.spearman_rho.map_or("-".into(), |v| format!("{v:.4}"))
                );
            }
            println!("wrote {}", out.join(COMBINED_FILE).display());
            println!("wrote {}", out.join(SUMMARY_FILE).display());
            Ok(EXIT_OK)
        }
        Command::ConfigTemplate { out } => {
            let text = config_template()?;
            match out {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?,
                None => print!("{text}"),
            }
            Ok(EXIT_OK)
        }
    }
}

fn write_failure_dump(dir: &Path, dump: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("oracle_failures.json");
    std::fs::write(&path, dump).map_err(|e| Error::io(&path, e))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}
