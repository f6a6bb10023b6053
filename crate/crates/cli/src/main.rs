use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mgtraj::par::{init_thread_pool, Exec};
use mgtraj::sampling::Strategy;
use mgtraj_cli::{
    eval, exit_code, gen_data, grad_check, load_train_config, train, EvalArgs, GenDataArgs,
    NumericFailure, SceneArg, TrainOverrides, COMPOSITE_TOL, PRIMITIVE_TOL,
};

#[derive(Parser)]
#[command(name = "mgtraj", version, about = "Multi-generator trajectory GAN experiments")]
struct Cli {
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a dataset and write it to a directory.
    GenData {
        /// junction2, junction3, corridor or circle.
        #[arg(long, default_value = "junction3")]
        scene: String,
        #[arg(long, default_value_t = mgtraj::sim::DEFAULT_N_TRAJECTORIES)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_generators: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
    },
    /// Predict on held-out records and score the predictions.
    Eval {
        /// Run directory or checkpoint directory.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = mgtraj::metrics::DEFAULT_K)]
        k: usize,
        /// random or expectation.
        #[arg(long, default_value = "expectation")]
        strategy: String,
        /// Defaults to the radius stored with the dataset.
        #[arg(long)]
        r_max: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.9)]
        train_fraction: f64,
        #[arg(long)]
        limit: Option<usize>,
        /// Training config; its generator count must match the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: <ckpt>/eval).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every primitive and objective.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = match std::env::var("MGTRAJ_THREADS") {
        Ok(v) => Some(
            v.parse::<usize>()
                .map_err(|_| anyhow::anyhow!("MGTRAJ_THREADS must be a positive integer"))?,
        ),
        Err(_) => None,
    };
    init_thread_pool(threads);
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match cli.cmd {
        Cmd::GenData {
            scene,
            n,
            seed,
            out,
        } => {
            let m = gen_data(
                &GenDataArgs {
                    scene: SceneArg::parse(&scene)?,
                    n,
                    seed,
                    out,
                },
                exec,
            )?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Cmd::Train {
            config,
            data,
            out,
            epochs,
            seed,
            n_generators,
            q,
        } => {
            let cfg = load_train_config(
                &config,
                &TrainOverrides {
                    data,
                    out,
                    epochs,
                    seed,
                    n_generators,
                    q,
                },
            )?;
            let outcome = train(&cfg, exec)?;
            println!("{}", serde_json::to_string_pretty(&outcome.manifest)?);
        }
        Cmd::Eval {
            ckpt,
            data,
            k,
            strategy,
            r_max,
            seed,
            train_fraction,
            limit,
            config,
            out,
        } => {
            let n_generators = match config {
                Some(p) => Some(load_train_config(&p, &TrainOverrides::default())?.n_generators),
                None => None,
            };
            let args = EvalArgs {
                k,
                strategy: Strategy::parse(&strategy)?,
                r_max,
                seed,
                train_fraction,
                limit,
                n_generators,
                out,
                ..EvalArgs::new(ckpt, data)
            };
            let report = eval(&args, exec)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::GradCheck { seed } => {
            let report = grad_check(seed)?;
            for (name, e) in &report.primitives {
                println!("primitive {name:<24} {e:.3e} (< {PRIMITIVE_TOL:e})");
            }
            for (name, e) in &report.composites {
                println!("composite {name:<24} {e:.3e} (< {COMPOSITE_TOL:e})");
            }
            if !report.passed() {
                return Err(NumericFailure("gradient check above tolerance".into()).into());
            }
            println!("all gradient checks passed");
        }
    }
    Ok(())
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
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
