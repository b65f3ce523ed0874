use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kinetic::cli::{self, CliError};

#[derive(Parser)]
#[command(name = "kinetic", version, about = "Lattice quantum kinetic equation scenarios")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory; overrides KINETIC_OUT_DIR and the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    ListScenarios,
}

fn fail(err: CliError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match args.command {
        Command::ListScenarios => {
            for (name, what) in cli::list_scenarios() {
                println!("{name:<12} {what}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => {
            let config = match cli::load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let problems = cli::validate(&config);
            if problems.is_empty() {
                println!("ok");
                ExitCode::SUCCESS
            } else {
                for p in &problems {
                    println!("{p}");
                }
                ExitCode::from(2)
            }
        }
        Command::Run { config, threads, out } => {
            let config = match cli::load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(k) = threads {
                pool = pool.num_threads(k.max(1));
            }
            let pool = match pool.build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: thread pool: {e}");
                    return ExitCode::from(1);
                }
            };
            let dir = cli::resolve_output_dir(out.as_deref(), &config);
            match pool.install(|| cli::run_scenario(&config, &dir)) {
                Ok(report) => {
                    for p in &report.outputs {
                        println!("{}", p.display());
                    }
                    println!("{}", report.manifest.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
