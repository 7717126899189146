//! Command-line front end: `solve` (oracle LP on an env), `run` (experiment
//! per config file), `validate` (invariant sweep on a serialized CMDP).
//! Exit codes: 0 ok, 1 config error, 2 replication failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cmdp::envs::{build_queue, QueueConfig};
use cmdp::harness::{oracle_gain, run_experiment, ExperimentConfig};
use cmdp::model::{evaluate_policy, TabularCmdp};
use cmdp::occupancy::{extract_policy, slater_margin, solve_true_model};

#[derive(Parser)]
#[command(name = "cmdp", about = "Constrained average-reward MDP laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the exact occupancy LP on an environment and report the
    /// constrained and unconstrained optima in original units.
    Solve {
        /// Serialized CMDP file; the queue benchmark when absent.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Run a replicated experiment described by a key=value config file.
    Run { config: PathBuf },
    /// Re-check every model invariant on a serialized CMDP.
    Validate { file: PathBuf },
}

fn load_env(file: Option<&PathBuf>) -> Result<TabularCmdp, String> {
    match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
            TabularCmdp::from_text(&text).map_err(|e| e.to_string())
        }
        None => build_queue(&QueueConfig::default()).map_err(|e| e.to_string()),
    }
}

fn solve(file: Option<&PathBuf>) -> Result<(), String> {
    let env = load_env(file)?;
    let m = env.n_channels();
    let eps = vec![0.0; m];
    let (nu, j) = solve_true_model(&env, &eps).map_err(|e| e.to_string())?;
    let policy = extract_policy(&nu);
    let ev = evaluate_policy(&env, &policy).map_err(|e| e.to_string())?;
    println!("constrained optimum: {:.6}", env.reward_scale * j);
    for i in 0..m {
        println!(
            "  channel {} value: {:.6}",
            env.channel_names[i],
            -env.cost_scales[i] * ev.cost_gain(i)
        );
    }

    // unconstrained: same LP with the cost rows dropped
    let mut free = env.clone();
    free.costs.clear();
    free.channel_names.clear();
    free.cost_scales.clear();
    let (nu_free, j_free) = solve_true_model(&free, &[]).map_err(|e| e.to_string())?;
    let policy_free = extract_policy(&nu_free);
    let ev_free = evaluate_policy(&env, &policy_free).map_err(|e| e.to_string())?;
    println!("unconstrained optimum: {:.6}", env.reward_scale * j_free);
    for i in 0..m {
        println!(
            "  channel {} value: {:.6}",
            env.channel_names[i],
            -env.cost_scales[i] * ev_free.cost_gain(i)
        );
    }
    Ok(())
}

fn validate(file: &PathBuf) -> Result<(), String> {
    let env = load_env(Some(file))?;
    env.check_invariants().map_err(|e| e.to_string())?;
    println!(
        "ok: {} states, {} actions, {} channels",
        env.n_states,
        env.n_actions,
        env.n_channels()
    );
    match slater_margin(&env) {
        Ok(margin) => println!("slater margin: {margin:.6}"),
        Err(e) => println!("slater margin: unavailable ({e})"),
    }
    match oracle_gain(&env) {
        Ok(j) => println!("oracle gain: {:.6} (original units {:.6})", j, env.reward_scale * j),
        Err(e) => println!("oracle gain: unavailable ({e})"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit code conventions differ; everything argument-
            // shaped maps to the config-error code, help/version to ok
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Solve { file } => match solve(file.as_ref()) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Validate { file } => match validate(&file) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Run { config } => {
            let config = match ExperimentConfig::from_file(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            match run_experiment(&config) {
                Ok(summary) => {
                    println!(
                        "oracle gain {:.6}; {} of {} replications completed",
                        summary.oracle_gain,
                        summary.completed,
                        config.replications
                    );
                    for path in &summary.files {
                        println!("wrote {}", path.display());
                    }
                    if summary.failures.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        for (rep, msg) in &summary.failures {
                            eprintln!("replication {rep} failed: {msg}");
                        }
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
