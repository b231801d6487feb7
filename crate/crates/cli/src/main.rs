use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stormac::diagnostics::Field;
use stormac::experiment::{cmd_gen_mdp, cmd_rate, cmd_run, ExperimentConfig};
use stormac::fmt::decimal;
use stormac::verify::{verification_suite, SuiteOptions};
use stormac::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_VERIFY: u8 = 3;
const EXIT_ALL_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "stormac", version, about = "Tabular actor-critic experiments with a momentum critic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random MDP file and print J* and the exploration estimate.
    GenMdp(ConfigArgs),
    /// Run STORM and/or the baseline over several seeds and write CSVs.
    Run(ConfigArgs),
    /// Run the numerical verification checks.
    Verify {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative control: evaluate the Bellman rewrite with a wrong discount.
        #[arg(long, hide = true)]
        inject_gamma_mismatch: bool,
    },
    /// Fit the log-log decay slope of a field from a per-seed results CSV.
    Rate {
        #[arg(long, default_value = "results.csv")]
        input: PathBuf,
        #[arg(long, default_value = "a")]
        field: String,
        #[arg(long, default_value_t = 0.5)]
        tail_fraction: f64,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "S")]
    num_states: Option<String>,
    #[arg(long = "A")]
    num_actions: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    mdp_seed: Option<String>,
    /// unit: rewards in [0, 1]; symmetric: rewards in [-1, 1].
    #[arg(long)]
    reward_range: Option<String>,
    /// Use this MDP file instead of generating one (run only).
    #[arg(long)]
    mdp: Option<String>,
    /// storm, baseline or both.
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    seed_base: Option<String>,
    #[arg(long)]
    cb: Option<String>,
    #[arg(long)]
    eta_scale: Option<String>,
    #[arg(long)]
    beta_scale: Option<String>,
    #[arg(long)]
    nu_rate: Option<String>,
    #[arg(long)]
    log_every: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut config = ExperimentConfig::default();
        if let Some(path) = &self.config {
            config.apply_text(&std::fs::read_to_string(path)?)?;
        }
        let overrides = [
            ("S", &self.num_states),
            ("A", &self.num_actions),
            ("gamma", &self.gamma),
            ("mdp_seed", &self.mdp_seed),
            ("reward_range", &self.reward_range),
            ("mdp", &self.mdp),
            ("algo", &self.algo),
            ("iterations", &self.iterations),
            ("seeds", &self.seeds),
            ("seed_base", &self.seed_base),
            ("cb", &self.cb),
            ("eta_scale", &self.eta_scale),
            ("beta_scale", &self.beta_scale),
            ("nu_rate", &self.nu_rate),
            ("log_every", &self.log_every),
            ("out", &self.out),
            ("workers", &self.workers),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                config.set(key, value)?;
            }
        }
        Ok(config)
    }
}

fn error_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Parse(_) => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn execute(command: Command) -> Result<u8, Error> {
    match command {
        Command::GenMdp(args) => {
            let mut config = args.resolve()?;
            if args.out.is_none() {
                config.output_path = PathBuf::from("mdp.txt");
            }
            let summary = cmd_gen_mdp(&config, &config.output_path)?;
            println!("wrote {}", config.output_path.display());
            println!("J* = {}", decimal(summary.j_star, 12));
            println!("exploration lambda estimate = {}", decimal(summary.exploration_lambda, 12));
            Ok(0)
        }
        Command::Run(args) => {
            let config = args.resolve()?;
            let summary = cmd_run(&config)?;
            println!(
                "wrote {} and {} ({} runs, {} diverged)",
                summary.per_seed_path.display(),
                summary.aggregate_path.display(),
                summary.runs,
                summary.diverged
            );
            Ok(if summary.all_diverged() { EXIT_ALL_DIVERGED } else { 0 })
        }
        Command::Verify {
            trials,
            seed,
            inject_gamma_mismatch,
        } => {
            let lines = verification_suite(trials, seed, SuiteOptions { inject_gamma_mismatch })?;
            for line in &lines {
                let status = if line.passed { "PASS" } else { "FAIL" };
                println!("{status} {} worst={:.3e}", line.name, line.worst);
            }
            Ok(if lines.iter().all(|l| l.passed) { 0 } else { EXIT_VERIFY })
        }
        Command::Rate {
            input,
            field,
            tail_fraction,
        } => {
            let field: Field = field.parse()?;
            let csv = std::fs::read_to_string(&input)?;
            for (algo, fit) in cmd_rate(&csv, field, tail_fraction)? {
                println!("{algo} slope={} intercept={}", decimal(fit.slope, 6), decimal(fit.intercept, 6));
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(error_code(&err))
        }
    }
}
