use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod config;
mod error;
mod experiment;
mod fetch;
mod gendata;
mod report;
mod train;
mod verify;

use config::{Command, Config, Sources};
use error::{CliError, EXIT_OK, EXIT_VERIFY_FAILED};

const EXIT_CODES: &str = "\
Exit codes:
  0  success (verify: every selected check passed or was skipped)
  1  I/O error
  2  config or usage error
  3  numerical abort (non-finite weights)
  4  verify ran but at least one check failed

Config keys may also be set through ALIGNFLOW_<KEY> environment variables,
e.g. ALIGNFLOW_LR=0.01. Priority: defaults < preset < --config file <
environment < --set < --seed.";

/// Feedback-alignment training and verification.
#[derive(Debug, Parser)]
#[command(name = "alignflow", version, after_help = EXIT_CODES)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true, env = "ALIGNFLOW_CONFIG")]
    config: Option<PathBuf>,
    /// Base seed; replicate r uses seed + r.
    #[arg(long, global = true, env = "ALIGNFLOW_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "ALIGNFLOW_OUT", default_value = "runs")]
    out: PathBuf,
    /// Worker threads for independent runs.
    #[arg(long, global = true, env = "ALIGNFLOW_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Override one config key, e.g. `--set lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
    /// List the config keys this command accepts and exit.
    #[arg(long)]
    list_keys: bool,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Train every (width, rule, replicate) run and write metrics, resolved
    /// config and checkpoints under --out.
    Train(Overrides),
    /// Train the configured runs and check them; writes verify.json.
    Verify(Overrides),
    /// Aggregate a finished train directory into mean ± SE tables.
    Report {
        /// Directory written by `train` (defaults to --out).
        run_dir: Option<PathBuf>,
    },
    /// Generate one certified synthetic dataset.
    GenData(Overrides),
    /// Download the MNIST files and check their MD5 sums.
    FetchMnist {
        /// Destination directory.
        #[arg(long, default_value = "data/mnist")]
        dir: PathBuf,
        #[arg(long, default_value = fetch::DEFAULT_MIRROR)]
        mirror: String,
    },
}

fn resolve(cli: &Cli, cmd: Command, o: &Overrides) -> Result<Config, CliError> {
    Config::resolve(
        cmd,
        Sources {
            file: cli.config.as_deref(),
            env: std::env::vars().collect(),
            sets: &o.sets,
            seed: cli.seed,
        },
    )
}

fn workers(cli: &Cli) -> usize {
    cli.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let (cmd, o) = match &cli.command {
        Cmd::Train(o) => (Command::Train, o),
        Cmd::Verify(o) => (Command::Verify, o),
        Cmd::GenData(o) => (Command::GenData, o),
        Cmd::Report { run_dir } => {
            let dir = run_dir.as_ref().unwrap_or(&cli.out);
            report::run(dir)?;
            println!("wrote {}", dir.join(report::REPORT_MD).display());
            return Ok(EXIT_OK);
        }
        Cmd::FetchMnist { dir, mirror } => {
            fetch::run(dir, mirror)?;
            return Ok(EXIT_OK);
        }
    };
    if o.list_keys {
        for k in config::specs(cmd) {
            println!("{:<20} {:<12} {}", k.name, k.default.unwrap_or("-"), k.help);
        }
        return Ok(EXIT_OK);
    }
    let cfg = resolve(cli, cmd, o)?;
    if o.print_config {
        print!("{}", cfg.render());
        return Ok(EXIT_OK);
    }
    match cmd {
        Command::Train => {
            let runs = train::run(&cfg, &cli.out, workers(cli))?;
            println!("{} runs written to {}", runs.len(), cli.out.display());
            Ok(EXIT_OK)
        }
        Command::Verify => {
            let report = verify::run(&cfg, &cli.out, workers(cli))?;
            Ok(if report.passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }
        Command::GenData => {
            let ds = gendata::run(&cfg, &cli.out)?;
            println!("{} samples, dim {}, written to {}", ds.len(), ds.dim(), cli.out.display());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("alignflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
