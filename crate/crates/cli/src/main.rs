//! `ldpgap`: perturb, estimate and analyze group performance gaps under LDP.
//!
//! Data goes to stdout or `--output`, logs to stderr. Exit codes: 0 ok,
//! 2 input or usage error, 3 invalid parameters.

mod args;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use args::MechArgs;

#[derive(Debug, Parser)]
#[command(
    name = "ldpgap",
    version,
    about = "Private measurement of performance gaps across groups"
)]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Where to write the run manifest, instead of next to the output file.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// More logging on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Io {
    /// Input CSV, `-` for stdin.
    #[arg(long, short, default_value = "-")]
    input: String,
    /// Output file, `-` for stdout.
    #[arg(long, short, default_value = "-")]
    output: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Perturb `group,value` records.
    Perturb {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        mech: MechArgs,
        #[arg(long, env = "LDPGAP_SEED", default_value_t = 0)]
        seed: u64,
        /// Input values are in [0, 1]; map them to [-1, 1] first.
        #[arg(long)]
        rescale: bool,
    },
    /// Estimate the gap from perturbed records.
    Estimate {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        mech: MechArgs,
        /// True group sizes `nA,nB`.
        #[arg(long, required = true)]
        sizes: String,
        /// Group labels to compare.
        #[arg(long, default_value = "0,1")]
        pair: String,
        /// Per-group mean squared values `nu2A,nu2B` for the MSE.
        #[arg(long, conflicts_with = "nu2_worst")]
        nu2: Option<String>,
        /// Report the worst-case MSE over nu2.
        #[arg(long)]
        nu2_worst: bool,
        #[arg(long, default_value_t = 0.99)]
        prob: f64,
        /// Also report means and gap mapped back to [0, 1].
        #[arg(long)]
        rescale: bool,
    },
    /// Minimum total budgets for error targets (CSV).
    Budget {
        #[arg(long, default_value = "1e5,1e6,1e7,1e8,1e9")]
        totals: String,
        #[arg(long, default_value = "0.1,0.01,0.001")]
        alphas: String,
        #[arg(long, default_value_t = 0.99)]
        prob: f64,
        #[arg(long, default_value = "r,l-opt")]
        alloc: String,
        #[arg(long, short, default_value = "-")]
        output: String,
    },
    /// Gap-MSE bounds over total budgets (CSV).
    MseSweep {
        #[arg(long, default_value = "10000,10000")]
        sizes: String,
        /// `min:max:step` or a list.
        #[arg(long, default_value = "0.1:5:0.1")]
        eps: String,
        #[arg(long, default_value = "r,l-k2,l-opt")]
        alloc: String,
        #[arg(long, short, default_value = "-")]
        output: String,
    },
    /// Worst-case gap MSE over group ratios (CSV).
    RatioSweep {
        #[arg(long, default_value = "20000")]
        total: String,
        /// Ratios `n_group / n_other`.
        #[arg(long, default_value = "1,0.5,0.2,0.1,0.05,0.01,0.005")]
        ratios: String,
        #[arg(long, default_value = "0.1:5:0.1")]
        eps: String,
        #[arg(long, default_value = "r,l-opt")]
        alloc: String,
        #[arg(long, short, default_value = "-")]
        output: String,
    },
    /// Worst-case gap MSE of L over an (eps1, eps2) grid (CSV).
    AllocGrid {
        #[arg(long, default_value = "10000,10000")]
        sizes: String,
        #[arg(long, default_value = "0.1:5:0.1")]
        eps1: String,
        #[arg(long, default_value = "0.1:5:0.1")]
        eps2: String,
        #[arg(long, default_value_t = 2.0)]
        k: f64,
        #[arg(long, short, default_value = "-")]
        output: String,
    },
    /// Run a Monte-Carlo experiment from a JSON config.
    Simulate {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long, short, default_value = "-")]
        output: String,
        /// Write per-run estimates to this CSV.
        #[arg(long)]
        per_run: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Instead compare mean errors with Chebyshev bounds at these total
        /// budgets, using the optimal allocation of the configured mechanism.
        #[arg(long)]
        chebyshev: Option<String>,
        #[arg(long, default_value_t = 0.99)]
        prob: f64,
    },
    /// Largest privacy loss of a mechanism instance (JSON).
    Audit {
        #[command(flatten)]
        mech: MechArgs,
        /// Half-width of the output grid searched for L.
        #[arg(long, default_value_t = ldpgap::mechanisms::DEFAULT_AUDIT_RANGE)]
        out_range: f64,
        #[arg(long, default_value_t = ldpgap::mechanisms::DEFAULT_AUDIT_STEP)]
        grid_step: f64,
        #[arg(long, short, default_value = "-")]
        output: String,
    },
    /// Generate a synthetic population (CSV).
    Gen {
        /// `MODE:key=value,...`, one per group, e.g. `two_point:n=10,mean=0,nu2=1`,
        /// `constant:n=5,value=0.5`, `fixed:values=0.1;0.2`,
        /// `resample:n=100,file=seeds.csv,rescale=true`.
        #[arg(long = "group", required_unless_present = "spec")]
        groups: Vec<String>,
        /// Generator spec as JSON instead of `--group`.
        #[arg(long, conflicts_with = "groups")]
        spec: Option<PathBuf>,
        #[arg(long, env = "LDPGAP_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, short, default_value = "-")]
        output: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match commands::run(cli.command, cli.manifest.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
