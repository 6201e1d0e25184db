use std::path::PathBuf;
use std::process::ExitCode;

use accelcmp::mapper::Cache;
use accelcmp::MapspaceLimits;
use accelcmp_cli::{cmd_compare, cmd_run, cmd_sweep, resolve_arch, resolve_workload, CliError, CliResult, Options, SweepKind};
use clap::{Args, Parser, Subcommand};

/// Compare DNN layer latency and energy across accelerator paradigms.
#[derive(Parser)]
#[command(name = "accelcmp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize every layer of a workload on one architecture.
    Run {
        #[arg(long)]
        arch: String,
        #[command(flatten)]
        common: Common,
    },
    /// Re-optimize under one sensitivity grid.
    Sweep {
        /// batch, llm_bw, buffer_size, buffer_layout or max_mac
        kind: String,
        #[arg(long)]
        arch: String,
        /// Comma-separated subset of the grid settings.
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<String>>,
        #[command(flatten)]
        common: Common,
    },
    /// Every layer on cha, ndp and pim.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Workload CSV path or bundled name (mobilenet, resnet, bert, dlrm).
    #[arg(long)]
    workload: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Candidate mappings sampled per layer when not exhaustive.
    #[arg(long, default_value_t = MapspaceLimits::default().max_candidates)]
    budget: u64,
    #[arg(long, default_value_t = MapspaceLimits::default().exhaustive_threshold)]
    exhaustive_threshold: u64,
    #[arg(long)]
    word_bits: Option<u64>,
    #[arg(long)]
    no_plots: bool,
}

impl Common {
    fn options(&self) -> Options {
        Options {
            limits: MapspaceLimits {
                max_candidates: self.budget,
                random_seed: self.seed,
                exhaustive_threshold: self.exhaustive_threshold,
            },
            word_bits: self.word_bits,
            cache: Cache::from_env(Some(self.out.join("cache"))),
            plots: !self.no_plots,
        }
    }
}

fn execute(cli: Cli) -> CliResult<Vec<PathBuf>> {
    match cli.command {
        Command::Run { arch, common } => {
            let arch = resolve_arch(&arch)?;
            let layers = resolve_workload(&common.workload)?;
            let r = cmd_run(&arch, &layers, &common.options(), &common.out)?;
            Ok([vec![r.csv], r.plots].concat())
        }
        Command::Sweep { kind, arch, only, common } => {
            let kind = SweepKind::from_name(&kind).ok_or_else(|| {
                CliError::Usage(format!("unknown sweep `{kind}`: expected batch, llm_bw, buffer_size, buffer_layout or max_mac"))
            })?;
            let arch = resolve_arch(&arch)?;
            let layers = resolve_workload(&common.workload)?;
            let r = cmd_sweep(kind, &arch, &layers, only.as_deref(), &common.options(), &common.out)?;
            Ok([vec![r.csv], r.plots].concat())
        }
        Command::Compare { common } => {
            let layers = resolve_workload(&common.workload)?;
            let r = cmd_compare(&layers, &common.options(), &common.out)?;
            Ok([vec![r.csv], r.plots].concat())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
