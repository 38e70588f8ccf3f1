use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use turing_core::pinn::ParamSet;
use turing_workbench::commands::{self, CliError, Outcome, ParamOverrides};
use turing_workbench::config::{Overrides, WorkbenchConfig};
use turing_workbench::experiment::Matrix;

const DEFAULTS: &str = "\
Defaults (override with --config <file.json> or the flags below):
  grid        50 x 50 nodes on [-24.5, 24.5]^2 (unit spacing), zero-flux boundaries
  solver      explicit Euler, dt = 0.2 h^2 / (4 max D) capped at 1.0,
              steady when max |du/dt|, |dv/dt| < 1e-6, at most 2e6 steps,
              initial noise +-0.05
  network     4 hidden layers of 64 tanh units, linear output
  training    Adam lr 2.5e-4, batch 25, all 2500 nodes as data and
              collocation points, 200 boundary points, w_f 10,
              5000 epochs, 8 restarts (desk: 1000 epochs, 3 restarts)
  validation  relative L2 norm difference <= 0.10 and mode within one bin
Exit codes: 0 success or PASS, 1 validation or gate failure, 2 usage or
configuration error.";

#[derive(Parser)]
#[command(name = "turing", version, about = "Turing pattern generation and parameter inference", after_help = DEFAULTS)]
struct Cli {
    /// JSON configuration file; unknown keys are rejected.
    #[arg(long, global = true, env = "TURING_CONFIG")]
    config: Option<PathBuf>,
    /// Base seed for solver noise and training restarts [default: 0].
    #[arg(long, global = true, env = "TURING_SEED")]
    seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long, global = true, env = "TURING_OUT")]
    out: Option<PathBuf>,
    /// Training epochs per restart [default: 5000; desk 1000].
    #[arg(long, global = true, env = "TURING_EPOCHS")]
    epochs: Option<usize>,
    /// Independent restarts per parameter set [default: 8; desk 3].
    #[arg(long, global = true, env = "TURING_RESTARTS")]
    restarts: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for a steady-state pattern and write it as CSV with a provenance sidecar.
    Generate {
        /// Published parameter set: P, Q or R.
        #[arg(long, env = "TURING_PATTERN")]
        pattern: Option<String>,
        #[command(flatten)]
        params: ParamArgs,
        /// Output file [default: <out>/pattern_<name>.csv].
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Infer a parameter set from a pattern with several independent restarts.
    Infer {
        /// Pattern CSV file, or P, Q or R to solve one first.
        input: String,
        /// Parameter set to learn: A, B, C, D or E.
        #[arg(long, env = "TURING_SET")]
        set: ParamSet,
        /// Published pattern whose values fix the parameters outside the set
        /// [default: from the provenance sidecar].
        #[arg(long, env = "TURING_PATTERN")]
        pattern: Option<String>,
    },
    /// Regenerate a pattern from inferred parameters and compare it with a reference.
    Validate {
        /// Parameter, run or aggregate JSON file.
        params: PathBuf,
        /// Reference pattern CSV.
        reference: PathBuf,
    },
    /// Write u and v as greyscale PGM images.
    Render {
        /// Pattern CSV file.
        input: PathBuf,
    },
    /// Run an experiment matrix: baseline, tables or desk.
    Experiment {
        /// baseline (sets A and B on P), tables (C, D, E on P and Q, D on R) or desk (acceptance gates).
        matrix: Matrix,
    },
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long, allow_hyphen_values = true)]
    d1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    d2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    r1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    r2: Option<f64>,
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    let overrides = Overrides { seed: cli.seed, out_dir: cli.out, epochs: cli.epochs, restarts: cli.restarts };
    let cfg = WorkbenchConfig::resolve(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Generate { pattern, params, output } => {
            let o = ParamOverrides {
                d1: params.d1,
                d2: params.d2,
                alpha: params.alpha,
                beta: params.beta,
                r1: params.r1,
                r2: params.r2,
            };
            commands::generate(&cfg, pattern.as_deref(), &o, output.as_deref())
        }
        Command::Infer { input, set, pattern } => commands::infer(&cfg, &input, set, pattern.as_deref()),
        Command::Validate { params, reference } => commands::validate(&cfg, &params, &reference),
        Command::Render { input } => commands::render(&input, &cfg.out_dir),
        Command::Experiment { matrix } => commands::experiment(&cfg, matrix),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(o) => {
            println!("{}", o.summary);
            for f in &o.files {
                println!("  {}", f.display());
            }
            ExitCode::from(if o.pass { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
