use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtgp_curves::harness::{self, OutputKind, RunOptions};
use mtgp_curves::kernel::{InputDist, KernelKind};

/// Learning curves for multi-task Gaussian process regression.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file or a bundled config by name.
    Run {
        config: String,
        /// Output directory.
        #[arg(long, env = harness::OUT_DIR_ENV, default_value = "out")]
        out: PathBuf,
        /// Override every scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override every scenario's replica count.
        #[arg(long)]
        replicas: Option<usize>,
        /// Produce only this output kind.
        #[arg(long, value_enum)]
        only: Option<OutputKind>,
    },
    /// Check a config without computing anything.
    Validate { config: String },
    /// List the bundled configs and their scenarios.
    ListScenarios,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> mtgp_curves::Result<ExitCode> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            replicas,
            only,
        } => {
            let cfg = harness::resolve_config_source(&config)?;
            let opts = RunOptions {
                out_dir: out,
                seed,
                replicas,
                only,
            };
            let summary = harness::run(&cfg, &opts)?;
            for s in &summary.scenarios {
                match &s.error {
                    None => println!("{}: ok ({:.1} s) {}", s.name, s.seconds, s.files.join(" ")),
                    Some(e) => println!("{}: FAILED ({:.1} s) {e}", s.name, s.seconds),
                }
            }
            if let Some(m) = &summary.manifest {
                println!("manifest: {}", m.display());
            }
            Ok(if summary.all_ok() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Validate { config } => {
            let cfg = harness::resolve_config_source(&config)?;
            let violations = harness::validate(&cfg);
            if violations.is_empty() {
                println!("ok: {} scenario(s)", cfg.scenarios.len());
                return Ok(ExitCode::SUCCESS);
            }
            for v in &violations {
                println!("{v}");
            }
            Ok(ExitCode::FAILURE)
        }
        Command::ListScenarios => {
            for (name, text) in harness::BUNDLED {
                let cfg = harness::parse_config(text)?;
                println!("{name}");
                for s in &cfg.scenarios {
                    let kernel = match s.kernel.kind {
                        KernelKind::SquaredExponential => "SE",
                        KernelKind::OrnsteinUhlenbeck => "OU",
                    };
                    let inputs = match s.inputs {
                        InputDist::GaussianZeroMean { variance } => format!("gaussian(var {variance:.4})"),
                        InputDist::UniformInterval { lo, hi } => format!("uniform[{lo}, {hi}]"),
                    };
                    println!(
                        "  {}: {kernel} l = {}, {inputs} inputs, {} tasks",
                        s.name,
                        s.kernel.lengthscale,
                        s.tasks()
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
