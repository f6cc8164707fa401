use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use adaptive_pir::framework::FrameworkKind;

mod commands;

#[derive(Parser)]
#[command(name = "adaptive-pir", version, about = "Adaptive PIR over secure coded storage with stragglers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct SystemArgs {
    /// Number of servers
    #[arg(short = 'N', long = "servers")]
    n: usize,
    /// Storage code dimension
    #[arg(short = 'K', long = "code-dim")]
    k: usize,
    /// Number of colluding servers storage must be secure against
    #[arg(short = 'X', long = "secure")]
    x: usize,
    /// Number of colluding servers queries must stay private against
    #[arg(short = 'T', long = "private")]
    t: usize,
    /// Number of files
    #[arg(short = 'M', long = "files", default_value_t = 1)]
    m: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Framework {
    Lagrange,
    Csa,
}

impl From<Framework> for FrameworkKind {
    fn from(f: Framework) -> Self {
        match f {
            Framework::Lagrange => FrameworkKind::Lagrange,
            Framework::Csa => FrameworkKind::Csa,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum TextFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum ArrayFormat {
    Pretty,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum AuditMode {
    Secrecy,
    Privacy,
    Both,
}

#[derive(Args, Clone, Debug)]
struct SeedArg {
    /// Seed for every random choice
    #[arg(long, env = "ADAPTIVE_PIR_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Derive λ, P, layer widths, thresholds, field size and rates
    Params {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_enum, default_value_t = TextFormat::Text)]
        format: TextFormat,
    },
    /// Build and print the query array
    Qarray {
        /// Build directly from λ
        #[arg(long, conflicts_with_all = ["n", "k", "x", "t"])]
        lambda: Option<usize>,
        #[arg(short = 'N', long = "servers", requires_all = ["k", "x", "t"])]
        n: Option<usize>,
        #[arg(short = 'K', long = "code-dim")]
        k: Option<usize>,
        #[arg(short = 'X', long = "secure")]
        x: Option<usize>,
        #[arg(short = 'T', long = "private")]
        t: Option<usize>,
        /// Check the four structural conditions
        #[arg(long)]
        verify: bool,
        #[arg(long, value_enum, default_value_t = ArrayFormat::Pretty)]
        format: ArrayFormat,
    },
    /// Exhaustively certify a coding framework
    Certify {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_enum, default_value_t = Framework::Lagrange)]
        framework: Framework,
        /// Field size (defaults to the smallest admissible prime)
        #[arg(long)]
        q: Option<u64>,
        /// Random files per (row set, known rows) besides the zero file
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[command(flatten)]
        seed: SeedArg,
        /// Write the certificate as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one session described by a JSON config
    Simulate {
        /// Experiment config (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep straggler counts with fixed straggler sets
    Rates {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_enum, default_value_t = Framework::Lagrange)]
        framework: Framework,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[command(flatten)]
        seed: SeedArg,
        /// Write the CSV here as well
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Secrecy and privacy audits
    Audit {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, value_enum, default_value_t = Framework::Lagrange)]
        framework: Framework,
        #[arg(long, value_enum, default_value_t = AuditMode::Both)]
        mode: AuditMode,
        /// Empirical draws per test (0 skips them)
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        /// Check this many random subsets instead of all of them
        #[arg(long)]
        sample: Option<usize>,
        #[command(flatten)]
        seed: SeedArg,
        /// Write the reports as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
