use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ltac::ltadmm::BridgeRule;
use ltac::runner::{cmd_eval, cmd_stepsize, cmd_train, cmd_verify, EvalOptions};

#[derive(Parser)]
#[command(name = "ltac", version, about = "Decentralized actor-critic with local-training ADMM consensus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write metrics.csv, history.json and config_echo.json.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config and LTAC_SEED.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `key=value`, e.g. `train.K=100`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Roll out the averaged policy of a finished run into trajectories.json.
    Eval {
        #[arg(long)]
        history: PathBuf,
        #[arg(long, default_value_t = 4)]
        episodes: usize,
        #[arg(long, default_value_t = 25)]
        max_steps: usize,
        /// Sample actions instead of acting greedily.
        #[arg(long)]
        stochastic: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Step-size bounds and the beta window; writes stepsize.json.
    Stepsize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Quadratic suite, compact-form and invariant checks.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Test hook: corrupt the bridge update to see the checks fail.
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<Fault>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    FlipBridgeSign,
}

fn run(cli: Cli) -> ltac::Result<bool> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            overrides,
        } => {
            let (dir, history) = cmd_train(config.as_deref(), &overrides, seed, out)?;
            println!(
                "{} rounds, {} communication rounds; wrote {}",
                history.metrics.len(),
                history.ledger.rounds,
                dir.display()
            );
        }
        Command::Eval {
            history,
            episodes,
            max_steps,
            stochastic,
            seed,
            out,
        } => {
            let opts = EvalOptions {
                episodes,
                max_steps,
                stochastic,
                seed,
                out,
            };
            let (path, report) = cmd_eval(&history, &opts)?;
            for (k, ep) in report.episodes.iter().enumerate() {
                let last = ep.total_distance.last().copied().unwrap_or(f64::NAN);
                println!(
                    "episode {k}: {}  steps {}  final distance {last:.4}",
                    if ep.success { "success" } else { "no success" },
                    ep.positions.len() - 1
                );
            }
            println!("success rate {:.2}; wrote {}", report.success_rate, path.display());
        }
        Command::Stepsize { config, out, overrides } => {
            let (path, r) = cmd_stepsize(config.as_deref(), &overrides, out)?;
            let bars = [r.alpha_bar_1, r.alpha_bar_2, r.alpha_bar_3, r.alpha_bar_4, r.alpha_bar_5, r.alpha_bar_6];
            for (k, a) in bars.iter().enumerate() {
                println!("alpha_bar_{} = {a:.6e}", k + 1);
            }
            println!("alpha_bar   = {:.6e}", r.alpha_bar);
            println!("beta window = [{:.6}, {:.6})", r.beta_window[0], r.beta_window[1]);
            println!("lambda_l = {:.6}, lambda_u = {:.6}, ||V^-1|| = {:.6}", r.lambda_l, r.lambda_u, r.vhat_inv_norm);
            println!("delta = {:.6}", r.delta);
            if let Some(w) = &r.warning {
                println!("warning: {w}");
            }
            println!("wrote {}", path.display());
        }
        Command::Verify {
            config,
            overrides,
            inject_fault,
        } => {
            let rule = match inject_fault {
                Some(Fault::FlipBridgeSign) => BridgeRule::FlippedSign,
                None => BridgeRule::Standard,
            };
            let report = cmd_verify(config.as_deref(), &overrides, rule)?;
            for c in &report.checks {
                println!(
                    "{} {:<42} value {:.3e}  threshold {:.3e}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.value,
                    c.threshold
                );
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
