use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rbsde_cli::acceptance::summary_text;
use rbsde_cli::{run_acceptance, run_experiment, Overrides, RunConfig};
use rbsde_core::Backend;

#[derive(Parser)]
#[command(name = "rbsde", version, about = "Penalization solver and checks for reflected quadratic BSDE systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the penalty schedule and write the metric table.
    Solve(RunArgs),
    /// Run the schedule plus every applicable check; exits 1 if a check fails.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Scenario whose solution should dominate this one.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Run the acceptance suite on the bundled scenarios.
    Acceptance {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Lattice,
    Mc,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    k0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    kfactor: Option<f64>,
    #[arg(long)]
    kcount: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    basis_degree: Option<usize>,
    #[arg(long)]
    node_budget: Option<usize>,
    #[arg(long)]
    grain: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    tol_limit: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    tol_skorokhod: Option<f64>,
    /// Write simulated Brownian increments (mc engine).
    #[arg(long)]
    dump_paths: Option<PathBuf>,
}

impl RunArgs {
    fn into_config(self, verify: bool, compare_with: Option<PathBuf>) -> RunConfig {
        RunConfig {
            scenario: self.scenario,
            out: self.out,
            engine: self.engine.map(|e| match e {
                EngineArg::Lattice => Backend::Lattice,
                EngineArg::Mc => Backend::Mc,
            }),
            overrides: Overrides {
                k0: self.k0,
                kfactor: self.kfactor,
                kcount: self.kcount,
                steps: self.steps,
                seed: self.seed,
                paths: self.paths,
                basis_degree: self.basis_degree,
                node_budget: self.node_budget,
                grain: self.grain,
                tol_limit: self.tol_limit,
                tol_skorokhod: self.tol_skorokhod,
            },
            verify,
            compare_with,
            dump_paths: self.dump_paths,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve(args) => experiment(args.into_config(false, None)),
        Command::Verify { run, compare } => experiment(run.into_config(true, compare)),
        Command::Acceptance { out } => match run_acceptance(&out) {
            Ok(summary) => {
                print!("{}", summary_text(&summary));
                if summary.passed {
                    0
                } else {
                    1
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    };
    ExitCode::from(code as u8)
}

fn experiment(cfg: RunConfig) -> i32 {
    match run_experiment(&cfg) {
        Ok(report) => {
            print!("{}", rbsde_cli::report::text_report(&report));
            report.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
