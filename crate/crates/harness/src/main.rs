use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use iso_harness::config::ExperimentConfig;
use iso_harness::{generate_systems, report_command, run_experiment};

#[derive(Parser)]
#[command(
    name = "iso-harness",
    about = "Sweep runner for interactive-system optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    /// 10 systems, 2000 trajectories, 30 iterations: minutes on a laptop.
    Desk,
    /// 40 systems, 15000 trajectories, 100 iterations.
    Paper,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML file mirroring the ExperimentConfig field names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Built-in scale preset; mutually exclusive with --config.
    #[arg(long, value_enum, conflicts_with = "config")]
    preset: Option<PresetArg>,
    /// Worker threads for cell execution (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl SweepArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), None) => ExperimentConfig::load(path)?,
            (None, Some(PresetArg::Desk)) => ExperimentConfig::desk(),
            (None, Some(PresetArg::Paper)) | (None, None) => ExperimentConfig::paper(),
            (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(threads) = self.threads {
            if threads == 0 {
                bail!("--threads must be positive");
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global()
                .context("configuring the worker pool")?;
        }
        cfg.check()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample the system population and persist the documents.
    Gen(SweepArgs),
    /// Execute the full sweep and write metrics CSVs.
    Run(SweepArgs),
    /// Expected start value of a persisted system under a persisted policy.
    Eval {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Aggregate run summaries in a directory into a median table.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Gen(args) => {
            let cfg = args.resolve()?;
            let paths = generate_systems(&cfg)?;
            println!(
                "wrote {} system documents under {}",
                paths.len(),
                cfg.out_dir.join("systems").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run(args) => {
            let cfg = args.resolve()?;
            let summary = run_experiment(&cfg)?;
            let failed = summary
                .cells
                .iter()
                .filter(|c| c.outcome.is_err())
                .count();
            println!(
                "ran {} cells ({failed} failed); metrics in {}",
                summary.cells.len(),
                summary.out_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Eval { system, policy } => {
            let doc = iso_core::SystemDocument::load(&system)
                .with_context(|| format!("loading {}", system.display()))?;
            let (mdp, rm_true) = doc.into_system()?;
            let pi = iso_core::PolicyDocument::load(&policy)
                .with_context(|| format!("loading {}", policy.display()))?
                .into_policy()?;
            let value = iso_core::expected_start_value(&mdp, &pi, &rm_true)?;
            println!("{value}");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Report { out } => {
            let report = report_command(&out)?;
            if report.is_empty() {
                eprintln!("no summary rows found in {}", out.display());
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
