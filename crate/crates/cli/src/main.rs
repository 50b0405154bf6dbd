use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use bandit_compress::action_space::{
    build_epsilon_net, covering_log_bound, MetricActionSpace, Partition, DEFAULT_POOL_SIZE,
};
use bandit_compress::bandit::{Action, Environment};
use bandit_compress::bounds::{BoundInputs, BoundReport};
use bandit_compress::harness::{csv_string, experiment_partition, run_experiment, ExperimentConfig};
use bandit_compress::information::{disintegrated_mi_step, McOptions, MiMethod};
use bandit_compress::rng::{analysis_rng, net_rng, replication_rng};
use bandit_compress::thompson::{run_episode_observed, verify_compression_requirements, AnalysisOptions, Mode};
use bandit_compress::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bandit-compress", version, about = "Thompson Sampling with compressed optimal-action statistics")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON) for `simulate`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded replications and write regret curves and reports.
    Simulate,
    /// Evaluate the regret bounds.
    Bounds {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long = "T")]
        t: usize,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        entropy: Option<f64>,
        #[arg(long)]
        log_cov: Option<f64>,
        #[arg(long)]
        lipschitz: Option<f64>,
    },
    /// Build an ε-net by greedy farthest-point insertion.
    Net {
        #[arg(long, value_enum)]
        space: SpaceArg,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long)]
        scale: f64,
        #[arg(long, default_value_t = DEFAULT_POOL_SIZE)]
        pool_size: usize,
        /// Point list (JSON array of arrays) for `--space grid-file`.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Check the compression requirements exactly on a grid environment.
    CompressVerify {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long, default_value_t = 10)]
        rounds: usize,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 1e-9, allow_negative_numbers = true)]
        tolerance: f64,
        /// Exit with status 3 when a check fails.
        #[arg(long)]
        strict: bool,
    },
    /// Compare exact and Monte Carlo information along a TS episode.
    MiCheck {
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 10)]
        rounds: usize,
        /// Net scale of the statistic; one cell per action when absent.
        #[arg(long)]
        scale: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Ball,
    Sphere,
    Interval,
    GridFile,
}

enum Failure {
    Error(Error),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(3),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Simulate => simulate(g),
        Command::Bounds {
            d,
            t,
            eps,
            gamma,
            entropy,
            log_cov,
            lipschitz,
        } => {
            let report = BoundReport::evaluate(BoundInputs {
                gamma,
                t,
                entropy,
                eps,
                lipschitz,
                log_cov,
                d,
            })?;
            emit(g, "bounds.json", &to_json(&report)?)?;
            if !g.quiet {
                eprint!("{}", report.table());
            }
            Ok(())
        }
        Command::Net {
            space,
            dim,
            scale,
            pool_size,
            file,
        } => net(g, space, dim, scale, pool_size, file.as_deref()),
        Command::CompressVerify {
            env,
            scale,
            rounds,
            seeds,
            tolerance,
            strict,
        } => {
            let env = load_env(&env)?;
            let partition = experiment_partition(&env, scale, rounds, DEFAULT_POOL_SIZE, g.seed.unwrap_or(0))?;
            let report = verify_compression_requirements(&env, &partition, rounds, seeds, g.seed.unwrap_or(0), tolerance)?;
            emit(g, "verify.json", &to_json(&report)?)?;
            if !g.quiet {
                eprintln!(
                    "epsilon {}  item1 worst gap {:e}  item2 worst gap {:e}  entropy worst gap {:e}  {}",
                    report.epsilon,
                    report.item1_worst_gap,
                    report.item2_worst_gap,
                    report.entropy_check.worst_gap,
                    if report.passed { "PASS" } else { "FAIL" }
                );
            }
            if strict && !report.passed {
                return Err(Failure::Verification);
            }
            Ok(())
        }
        Command::MiCheck {
            env,
            samples,
            rounds,
            scale,
        } => mi_check(g, &env, samples, rounds, scale),
    }
}

fn simulate(g: &Global) -> Result<(), Failure> {
    let path = g
        .config
        .as_deref()
        .ok_or_else(|| Error::Config(config_error("config", "simulate needs --config <file>")))?;
    let mut config = ExperimentConfig::from_file(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(config_error("config", format!("cannot read {}: {io}", path.display()))),
        other => other,
    })?;
    if let Some(s) = g.seed {
        config.base_seed = s;
    }
    if let Some(o) = &g.out {
        config.out = Some(o.clone());
    }
    let report = run_experiment(&config)?;
    if config.out.is_none() {
        print!("{}", csv_string(&report, report.primary()));
    }
    if !g.quiet {
        for m in &report.modes {
            let t = m.mean.len() - 1;
            eprintln!(
                "{:?}: regret {:.4} ± {:.4} after {} rounds, clip rate {:.5}, mean compressed ratio {}",
                m.mode,
                m.mean[t],
                m.std_error[t],
                t + 1,
                m.clip_rate(),
                m.compressed_ratio.mean.map_or("n/a".to_string(), |r| format!("{r:.4}"))
            );
        }
        for (k, v) in &report.bounds.values {
            eprintln!("{k}: {v:.4}");
        }
    }
    Ok(())
}

fn net(g: &Global, space: SpaceArg, dim: usize, scale: f64, pool_size: usize, file: Option<&Path>) -> Result<(), Failure> {
    let (space, seed) = match space {
        SpaceArg::Ball => (MetricActionSpace::unit_ball(dim)?, vec![0.0; dim]),
        SpaceArg::Sphere => {
            let mut e1 = vec![0.0; dim];
            if dim > 0 {
                e1[0] = 1.0;
            }
            (MetricActionSpace::unit_sphere(dim)?, e1)
        }
        SpaceArg::Interval => (MetricActionSpace::unit_interval(), vec![0.0]),
        SpaceArg::GridFile => {
            let file = file.ok_or_else(|| Error::Config(config_error("file", "grid-file needs --file <points.json>")))?;
            let text = std::fs::read_to_string(file).map_err(Error::from)?;
            let points: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| {
                Error::Config(bandit_compress::error::ConfigError {
                    path: file.display().to_string(),
                    line: Some(e.line()),
                    column: Some(e.column()),
                    message: e.to_string(),
                })
            })?;
            let seed = points.first().cloned().unwrap_or_default();
            (MetricActionSpace::finite(points)?, seed)
        }
    };
    let space = Arc::new(space);
    let mut rng = net_rng(g.seed.unwrap_or(0));
    let net = build_epsilon_net(&space, scale, &seed, pool_size, &mut rng)?;
    let k = net.len();
    let doc = serde_json::json!({ "centers": net.centers(), "scale": scale, "K": k });
    emit(g, "net.json", &format!("{}\n", serde_json::to_string_pretty(&doc).expect("plain numbers")))?;
    if !g.quiet {
        let d = space.dimension();
        eprintln!("K = {k}");
        eprintln!("log K = {:.6}, d·log(1+2/ε) = {:.6}", (k as f64).ln(), covering_log_bound(d, scale)?);
    }
    Ok(())
}

fn mi_check(g: &Global, path: &Path, samples: usize, rounds: usize, scale: Option<f64>) -> Result<(), Failure> {
    let env = load_env(path)?;
    if !env.is_grid() {
        return Err(Error::Config(config_error("env", "mi-check needs a grid environment")).into());
    }
    let seed = g.seed.unwrap_or(0);
    let options = McOptions {
        samples,
        ..McOptions::default()
    };
    options.validate()?;
    let partition: Partition = experiment_partition(&env, scale, rounds, DEFAULT_POOL_SIZE, seed)?;
    let mut rng = replication_rng(seed, 0);
    let mut mc_rng = analysis_rng(seed, 0);
    let mut out = String::from("round,exact_nats,mc_nats,mc_se\n");
    run_episode_observed(
        &env,
        rounds,
        Mode::Plain,
        Some(&partition),
        &AnalysisOptions::default(),
        &mut rng,
        None,
        |view| {
            let policy: Vec<(Action, f64)> = view
                .state
                .optimal_action_dist(&env)?
                .into_iter()
                .enumerate()
                .filter(|(_, p)| *p > 0.0)
                .map(|(a, p)| (Action::Index(a), p))
                .collect();
            let exact = disintegrated_mi_step(view.state, &env, &partition, &policy, MiMethod::Exact)?;
            let mc = disintegrated_mi_step(
                view.state,
                &env,
                &partition,
                &policy,
                MiMethod::MonteCarlo {
                    options,
                    rng: &mut mc_rng,
                },
            )?;
            out.push_str(&format!("{},{},{},{}\n", view.t, exact.value, mc.value, mc.std_error));
            Ok(())
        },
    )?;
    emit(g, "mi_check.csv", &out)?;
    Ok(())
}

fn load_env(path: &Path) -> Result<Environment, Error> {
    Environment::from_json_file(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(config_error("env", format!("cannot read {}: {io}", path.display()))),
        other => other,
    })
}

fn config_error(path: &str, message: impl Into<String>) -> bandit_compress::error::ConfigError {
    bandit_compress::error::ConfigError {
        path: path.to_string(),
        line: None,
        column: None,
        message: message.into(),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Error> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Internal(e.to_string()))
}

/// Write `text` to `<out>/<name>` when an output directory is set, else to stdout.
fn emit(g: &Global, name: &str, text: &str) -> Result<(), Error> {
    match &g.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}
