//! `momo` command line. Usage errors exit 2, runtime failures exit 1.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::ablate::{ablation_csv, run_ablation};
use super::bench::{bench_attention, BenchConfig, BenchKind};
use super::config::{resolve_seed, RunConfig, SEED_ENV};
use super::hb_lab::run_hb_lab;
use super::model::AttentionKind;
use super::suites::{checks_csv, equivalence_suite, model_grad_suite, CheckResult};
use super::train::run_copy_task;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Parser)]
#[command(name = "momo", version, about = "Momentum attention toolkit: checks, optimizer lab, copy task, benchmarks")]
pub struct Cli {
    /// Seed for data, initialisation and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with [copy], [model], [train], [hb], [bench], [ablate] sections.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory for CSV and manifest outputs.
    #[arg(long, global = true, value_name = "DIR", default_value = "momo-out")]
    pub out: PathBuf,
    /// Floating-point precision; f32 is only available for `bench`.
    #[arg(long, global = true, value_enum, default_value = "f64")]
    pub precision: Precision,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recurrent/unrolled and momentum-off identities.
    EquivCheck(EquivArgs),
    /// Finite-difference check of model gradients for every attention kind.
    GradCheck,
    /// Gradient descent, heavy ball and adaptive heavy ball on a quadratic.
    HbLab,
    /// Train and evaluate on the copy task; writes manifest.json and metrics.csv.
    CopyTask(CopyArgs),
    /// Attention runtime scaling; writes bench.csv.
    Bench(BenchArgs),
    /// β and β̃ sweeps on the copy task; writes ablate.csv.
    Ablate,
}

#[derive(Debug, Args)]
pub struct EquivArgs {
    /// Random instances to draw.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
}

#[derive(Debug, Args)]
pub struct CopyArgs {
    /// Overrides model.attention_kind.
    #[arg(long)]
    pub kind: Option<String>,
    /// Overrides train.epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated kinds (default: all).
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
    /// Comma-separated ascending sequence lengths.
    #[arg(long, value_delimiter = ',')]
    pub lengths: Option<Vec<usize>>,
    #[arg(long)]
    pub reps: Option<usize>,
}

/// Parses `argv` (program name first) and runs; returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if cli.precision == Precision::F32 && !matches!(cli.command, Command::Bench(_)) {
        eprintln!("error: --precision f32 is only supported by `bench`\n\nFor more information, try '--help'.");
        return 2;
    }
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::TrainingAborted { manifest, .. } = &e {
                if let Ok(json) = manifest.to_json() {
                    let path = cli.out.join("manifest.aborted.json");
                    if write(&cli.out, "manifest.aborted.json", &json).is_ok() {
                        eprintln!("diagnostic manifest written to {}", path.display());
                    }
                }
            }
            1
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn print_checks(checks: &[CheckResult]) -> bool {
    for c in checks {
        println!(
            "{} {:<40} max_error={:.3e} tol={:.0e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.max_error,
            c.tol
        );
    }
    checks.iter().all(|c| c.passed)
}

/// Returns whether every check passed.
fn execute(cli: &Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(cli.seed, cfg.seed, env.as_deref())?;
    cfg.apply_seed(seed);
    let out = &cli.out;
    match &cli.command {
        Command::EquivCheck(a) => {
            let checks = equivalence_suite(seed, a.instances)?;
            let ok = print_checks(&checks);
            write(out, "equiv.csv", &checks_csv(&checks))?;
            Ok(ok)
        }
        Command::GradCheck => {
            let checks = model_grad_suite(seed, &AttentionKind::ALL, 1e-5, 1e-5)?;
            let ok = print_checks(&checks);
            write(out, "grad_check.csv", &checks_csv(&checks))?;
            Ok(ok)
        }
        Command::HbLab => {
            let r = run_hb_lab(&cfg.hb)?;
            println!("nu={} L={} gamma={}", r.nu, r.ell, r.gamma);
            print!("{}", r.table_csv());
            write(out, "hb_trace.csv", &r.trace_csv())?;
            write(out, "hb_table.csv", &r.table_csv())?;
            Ok(true)
        }
        Command::CopyTask(a) => {
            if let Some(k) = &a.kind {
                cfg.model.attention_kind = k.parse()?;
            }
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            let m = run_copy_task(&cfg.copy, &cfg.model, &cfg.train)?;
            write(out, "manifest.json", &m.to_json()?)?;
            let csv = write(out, "metrics.csv", &m.metrics_csv()?)?;
            println!(
                "{}: {} epochs, final loss {:.5}, best copy accuracy {:.4}, epochs to target {}",
                cfg.model.attention_kind,
                m.summary.epochs_run,
                m.summary.final_train_loss,
                m.summary.best_test_accuracy,
                m.summary.epochs_to_target.map(|e| e.to_string()).unwrap_or_else(|| "-".into())
            );
            println!("metrics written to {}", csv.display());
            Ok(true)
        }
        Command::Bench(a) => {
            let kinds = a.kinds.clone().unwrap_or_else(|| cfg.bench.kinds.clone());
            let bc = BenchConfig {
                kinds: kinds.iter().map(|k| k.parse::<BenchKind>()).collect::<Result<_>>()?,
                lengths: a.lengths.clone().unwrap_or_else(|| cfg.bench.lengths.clone()),
                reps: a.reps.unwrap_or(cfg.bench.reps),
                dim: cfg.bench.dim,
                seed,
                momentum: cfg.model.momentum,
            };
            let report = match cli.precision {
                Precision::F64 => bench_attention::<f64>(&bc)?,
                Precision::F32 => bench_attention::<f32>(&bc)?,
            };
            print!("{}", report.to_csv());
            for (k, s) in &report.slopes {
                println!("slope {k} {s:.3}");
            }
            write(out, "bench.csv", &report.to_csv())?;
            Ok(true)
        }
        Command::Ablate => {
            let rows = run_ablation(&cfg.copy, &cfg.model, &cfg.train, &cfg.ablate)?;
            let csv = ablation_csv(&rows);
            print!("{csv}");
            write(out, "ablate.csv", &csv)?;
            Ok(true)
        }
    }
}
