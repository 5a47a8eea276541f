use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ravi_ucb::harness::{self, Backend, Problem, RunOptions};
use ravi_ucb::instances;
use ravi_ucb::validation::{self, CheckReport};
use ravi_ucb::Result;

#[derive(Parser)]
#[command(
    name = "ravi-ucb",
    version,
    about = "Optimistic regularized value iteration for discounted MDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config and write artifacts.
    Run {
        config: PathBuf,
        /// Record wall-clock seconds in metrics.csv.
        #[arg(long)]
        timing: bool,
    },
    /// Mean regret over the config's seeds at several horizons.
    Sweep {
        config: PathBuf,
        /// Comma-separated horizons.
        #[arg(long = "T", value_delimiter = ',', required = true)]
        horizons: Vec<usize>,
    },
    /// Run the validation suite on a recorded run directory.
    Validate { run_dir: PathBuf },
    /// Emit an example MDP as JSON.
    GenMdp {
        #[arg(long, value_enum, default_value_t = Kind::Tabular)]
        kind: Kind,
        /// Random instance instead of the reference one.
        #[arg(long)]
        random: bool,
        #[arg(long, default_value_t = 5)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Tabular,
    Linmix,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Run { config, timing } => {
            let cfg = harness::load_config(&config)?;
            let rows = harness::run_experiment(&cfg, RunOptions { timing })?;
            for r in &rows {
                println!(
                    "seed {:>4}  T {}  regret {:.4}  K {}  validity_violations {}",
                    r.seed, r.horizon, r.regret, r.epochs, r.validity_violations
                );
            }
            println!("artifacts in {}", cfg.out_dir.display());
            Ok(true)
        }
        Command::Sweep { config, horizons } => {
            let cfg = harness::load_config(&config)?;
            let rows = harness::sweep(&cfg, &horizons)?;
            for r in &rows {
                println!(
                    "T {:>8}  mean_regret {:.4}  stderr {:?}",
                    r.horizon, r.mean_regret, r.stderr
                );
            }
            match rows.first().and_then(|r| r.slope) {
                Some(s) => println!("log-log slope {s:.4}"),
                None => println!("log-log slope undefined"),
            }
            Ok(true)
        }
        Command::Validate { run_dir } => validate(run_dir),
        Command::GenMdp {
            kind,
            random,
            states,
            actions,
            d,
            gamma,
            seed,
            out,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gamma = gamma.unwrap_or(instances::REFERENCE_GAMMA);
            let problem = match (kind, random) {
                (Kind::Tabular, false) => Problem::Tabular(instances::reference_tabular_with_gamma(gamma)),
                (Kind::Linmix, false) => Problem::Linmix(instances::reference_linmix_with_gamma(gamma)),
                (Kind::Tabular, true) => Problem::Tabular(instances::random_mdp(&mut rng, states, actions, gamma)),
                (Kind::Linmix, true) => {
                    Problem::Linmix(instances::random_convex_mixture(&mut rng, states, actions, d, gamma))
                }
            };
            let json = problem.to_json_string()?;
            match out {
                Some(path) => std::fs::write(&path, json + "\n").map_err(|e| ravi_ucb::Error::Io {
                    path: path.display().to_string(),
                    source: e,
                })?,
                None => println!("{json}"),
            }
            Ok(true)
        }
    }
}

fn validate(run_dir: PathBuf) -> Result<bool> {
    let rec = harness::load_run_dir(&run_dir)?;
    let problem = &rec.config.problem;
    let mdp = problem.mdp();
    let design = match (problem, rec.config.backend) {
        (Problem::Linmix(m), Backend::Linmix) => Some((m.bound(), rec.config.params.lambda)),
        _ => None,
    };
    let per_seed: Vec<(u64, Vec<CheckReport>)> = rec
        .runs
        .par_iter()
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0x5eed_cafe);
            Ok((run.seed, validation::validate_run(mdp, &run.log, design, &mut rng)?))
        })
        .collect::<Result<_>>()?;

    let mut reports = Vec::new();
    for (seed, rs) in per_seed {
        for mut r in rs {
            r.check = format!("seed_{seed}/{}", r.check);
            reports.push(r);
        }
    }
    let completed: Vec<usize> = rec.runs.iter().flat_map(|r| r.log.completed_epoch_lengths()).collect();
    if !completed.is_empty() {
        reports.push(validation::check_epoch_schedule(&completed, mdp.gamma())?);
    }
    let maxima: Vec<usize> = rec
        .runs
        .iter()
        .map(|r| r.log.epoch_lengths().into_iter().max().unwrap_or(0))
        .collect();
    reports.push(validation::check_max_epoch(&maxima, mdp.gamma(), rec.config.horizon)?);

    let path = run_dir.join("validation.json");
    std::fs::write(&path, validation::reports_to_json(&reports)?).map_err(|e| ravi_ucb::Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut all = true;
    for r in &reports {
        all &= r.pass;
        println!(
            "{:<4} {:<40} worst_slack {:.3e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.check,
            r.worst_slack
        );
    }
    println!("report written to {}", path.display());
    Ok(all)
}
