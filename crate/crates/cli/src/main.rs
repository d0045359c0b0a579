//! `gaspipe-dse`: simulate pipeline-network dynamics, estimate states from
//! noisy measurements, and score the results.
//!
//! Exit codes: 0 on success (including `--help`/`--version`), 1 for usage or
//! configuration problems, 2 when the numerics fail (singular system,
//! non-convergence).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gaspipe_cli::commands::{self, RunManifest, VariantSel};
use gaspipe_core::error::CoreError;

/// Environment variable consulted for the output directory when `--out` is
/// not given.
const OUT_ENV: &str = "GASPIPE_DSE_OUT";

#[derive(Parser)]
#[command(
    name = "gaspipe-dse",
    version,
    about = "Dynamic state estimation for gas pipeline networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: CommonOpts,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate ground truth and synthesize noisy measurements
    Simulate,
    /// Run the estimator(s); simulates first if no measurement files exist
    Estimate,
    /// Score persisted estimates against the truth and write a report
    Evaluate,
    /// Run the bundled three-condition study with both estimators
    Demo,
}

#[derive(Args)]
struct CommonOpts {
    /// Network description file (default: the bundled 30-node benchmark)
    #[arg(long, global = true, value_name = "PATH")]
    network: Option<PathBuf>,

    /// Scenario file (default: the bundled normal-operation scenario)
    #[arg(long, global = true, value_name = "PATH")]
    scenario: Option<PathBuf>,

    /// Output directory (default: $GASPIPE_DSE_OUT, then ./out)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Estimator variant(s) to run
    #[arg(long, global = true, value_enum, default_value_t = VariantArg::Both)]
    variant: VariantArg,

    /// Override the scenario's measurement-noise seed
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Innovation window length for the robust variant
    #[arg(long, global = true, value_name = "STEPS")]
    mw: Option<usize>,

    /// Lower clamp for the robust noise-scale factors
    #[arg(long, global = true, value_name = "FLOAT")]
    mu_floor: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Kf,
    Rkf,
    Both,
}

impl From<VariantArg> for VariantSel {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Kf => VariantSel::Kf,
            VariantArg::Rkf => VariantSel::Rkf,
            VariantArg::Both => VariantSel::Both,
        }
    }
}

fn manifest(o: CommonOpts) -> Result<RunManifest> {
    let out_dir = match o.out {
        Some(dir) => dir,
        None => match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => PathBuf::from("out"),
        },
    };
    if o.mw == Some(0) {
        bail!("--mw must be at least 1");
    }
    if let Some(floor) = o.mu_floor {
        if !floor.is_finite() || floor < 0.0 {
            bail!("--mu-floor must be a finite non-negative number, got {floor}");
        }
    }
    Ok(RunManifest {
        network: o.network,
        scenario: o.scenario,
        out_dir,
        variant: o.variant.into(),
        seed: o.seed,
        m_w: o.mw,
        mu_floor: o.mu_floor,
    })
}

fn run(cli: Cli) -> Result<Vec<String>> {
    let man = manifest(cli.opts)?;
    match cli.command {
        Command::Simulate => commands::cmd_simulate(&man),
        Command::Estimate => commands::cmd_estimate(&man),
        Command::Evaluate => commands::cmd_evaluate(&man),
        Command::Demo => commands::cmd_demo(&man),
    }
}

/// Numerical breakdowns exit 2; everything else that fails is a usage or
/// configuration problem and exits 1.
fn classify(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<CoreError>(),
            Some(CoreError::Numerical(_) | CoreError::NonConvergence(_))
        )
    });
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(notes) => {
            for note in notes {
                println!("{note}");
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}
