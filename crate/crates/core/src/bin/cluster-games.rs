use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cluster_games::experiment::{run_experiment, run_gamma_ablation, Outcome, Overrides};

/// Distributed Nash equilibrium seeking for multi-cluster games.
///
/// Log verbosity is read from CLUSTER_GAMES_LOG (error, warn, info, debug).
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the equilibrium, run the solver and write metrics and plots.
    Run(Common),
    /// Repeat the run for gamma in {0.1, 0.5, 0.9, 1.0}.
    AblateGamma(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    config: PathBuf,
    /// Output directory; overrides [output].dir.
    #[arg(long)]
    outdir: Option<PathBuf>,
    /// Replaces every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_rounds: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            outdir: self.outdir.clone(),
            seed: self.seed,
            max_rounds: self.max_rounds,
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3e}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CLUSTER_GAMES_LOG", "warn"))
        .init();
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run(c) => match run_experiment(&c.config, &c.overrides()) {
            Ok(r) => {
                println!(
                    "{:?} after {} rounds; gap {} (relative {}); outputs in {}",
                    r.leg.outcome,
                    r.leg.rounds,
                    fmt_opt(r.leg.final_gap()),
                    fmt_opt(r.relative_gap),
                    r.outdir.display()
                );
                if let (Some(b), Some(t)) = (r.balance_residual, r.terminal_violation) {
                    println!("balance residual {b:.3e}; terminal band violation {t:.3e}");
                }
                r.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::AblateGamma(c) => match run_gamma_ablation(&c.config, &c.overrides()) {
            Ok(r) => {
                for l in &r.legs {
                    let outcome = match &l.leg.outcome {
                        Outcome::Diverged { round, .. } => format!("non-finite iterate in round {round}"),
                        o => format!("{o:?} after {} rounds", l.leg.rounds),
                    };
                    println!("gamma {}: {outcome}; gap {}", l.gamma, fmt_opt(l.leg.final_gap()));
                }
                println!("outputs in {}", r.outdir.display());
                r.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
    };
    ExitCode::from(code as u8)
}
