use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cqsm::config::{ConfigError, ExperimentConfig};
use cqsm::experiment::{
    martingale_command, run_experiment, sample_actions_command, solve_lq_command, ExperimentError,
};
use cqsm::format::fmt9;

#[derive(Parser)]
#[command(
    name = "cqsm",
    version,
    about = "Q-score matching experiments on linear-quadratic control problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on several seeds and write per-seed and summary CSVs.
    Run(Common),
    /// Print the closed-form Q-function and optimal score.
    SolveLq(Common),
    /// Test the martingale property of the analytic Q-function.
    CheckMartingale(Common),
    /// Draw actions from the optimal score and compare with the target law.
    SampleActions(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of worker threads.
    #[arg(long)]
    parallel: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(n) = self.seeds {
            cfg.n_seeds = n;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(p) = self.parallel {
            cfg.parallel = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &ExperimentError) -> u8 {
    match e {
        ExperimentError::Config(_) | ExperimentError::Io { .. } => 1,
        ExperimentError::Numerical(_) | ExperimentError::AllSeedsFailed => 2,
    }
}

fn create_out(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|source| ExperimentError::Io {
        path: cfg.output_dir.clone(),
        source,
    })
}

fn run(command: Command) -> Result<(), ExperimentError> {
    match command {
        Command::Run(c) => {
            let cfg = c.load()?;
            let summary = run_experiment(&cfg)?;
            println!("config_sha256 = {}", summary.config_hash);
            for s in &summary.seeds {
                match &s.outcome {
                    Ok(f) => println!(
                        "seed {}: theta = ({}) v = ({}) running_avg_reward = {}",
                        s.seed,
                        f.theta.0.map(fmt9).join(", "),
                        f.v.0.map(fmt9).join(", "),
                        fmt9(f.running_avg_reward)
                    ),
                    Err(e) => println!("seed {}: FAILED {e}", s.seed),
                }
            }
            println!("outputs written to {}", cfg.output_dir.display());
        }
        Command::SolveLq(c) => {
            let cfg = c.load()?;
            let report = solve_lq_command(&cfg)?;
            print!("{}", report.to_text());
            if c.out.is_some() {
                create_out(&cfg)?;
                report.write_csv(&cfg.output_dir.join("solve_lq.csv"))?;
            }
        }
        Command::CheckMartingale(c) => {
            let cfg = c.load()?;
            let check = martingale_command(&cfg)?;
            print!("{}", check.to_text());
            if c.out.is_some() {
                create_out(&cfg)?;
                check.write_csv(&cfg.output_dir.join("martingale.csv"))?;
            }
        }
        Command::SampleActions(c) => {
            let cfg = c.load()?;
            let check = sample_actions_command(&cfg)?;
            print!("{}", check.to_text());
            if c.out.is_some() {
                create_out(&cfg)?;
                check.write_csv(&cfg.output_dir.join("samples.csv"))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
