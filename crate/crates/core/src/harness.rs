//! Seeded experiments: replications, aggregation, bounds and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_space::{
    build_epsilon_net, build_epsilon_net_on_pool, max_cell_spread, Partition, DEFAULT_POOL_SIZE,
};
use crate::bandit::Environment;
use crate::bounds::{
    final_corollary_bound, linear_bandit_bound, optimal_epsilon, russo_bound, theorem1_bound,
};
use crate::error::{Error, Result};
use crate::information::{episode_info_accounting_with, EpisodeInfo, RATIO_TOL};
use crate::rng::{analysis_rng, net_rng, replication_rng};
use crate::thompson::{analyze_round, run_episode_observed, AnalysisOptions, Mode, RoundAnalysis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    Plain,
    Compressed,
    Both,
}

impl ModeSelection {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeSelection::Plain => vec![Mode::Plain],
            ModeSelection::Compressed => vec![Mode::Compressed],
            ModeSelection::Both => vec![Mode::Plain, Mode::Compressed],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Csv,
    Json,
    Svg,
}

fn default_emit() -> Vec<Emit> {
    vec![Emit::Csv, Emit::Json, Emit::Svg]
}

fn default_mode() -> ModeSelection {
    ModeSelection::Plain
}

fn default_seeds() -> usize {
    1
}

fn default_mc_samples() -> usize {
    AnalysisOptions::default().mc.samples
}

fn default_ratio_seeds() -> usize {
    20
}

fn default_max_states() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Environment file, relative to the config file when loaded from one.
    pub env: PathBuf,
    #[serde(alias = "T")]
    pub rounds: usize,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_mode")]
    pub mode: ModeSelection,
    /// Net scale of the partition. Finite action sets without a scale use
    /// one cell per action and cannot run compressed; the unit ball defaults
    /// to `d/(2√T)`.
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Replications that also measure information ratios each round.
    #[serde(default = "default_ratio_seeds")]
    pub ratio_seeds: usize,
    #[serde(default)]
    pub pool_size: Option<usize>,
    /// Further analysis tuning; `mc_samples` overrides `analysis.mc.samples`.
    #[serde(default)]
    pub analysis: AnalysisOptions,
    /// Grid episodes with more histories than this skip the chain accounting.
    #[serde(default = "default_max_states")]
    pub max_states: usize,
    /// Not echoed into reports, so moving the output leaves them unchanged.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_emit")]
    pub emit: Vec<Emit>,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        Ok(serde_path_to_error::deserialize(de)?)
    }

    /// Load a config file, resolving `env` and `out` against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        if cfg.env.is_relative() {
            cfg.env = dir.join(&cfg.env);
        }
        if let Some(out) = &cfg.out {
            if out.is_relative() {
                cfg.out = Some(dir.join(out));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds", "must be at least 1"));
        }
        if self.seeds == 0 {
            return Err(Error::config("seeds", "must be at least 1"));
        }
        if let Some(s) = self.scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::config("scale", format!("must be positive, got {s}")));
            }
        }
        if self.mc_samples < crate::information::MIN_MC_SAMPLES {
            return Err(Error::config(
                "mc_samples",
                format!("must be at least {}", crate::information::MIN_MC_SAMPLES),
            ));
        }
        if self.pool_size == Some(0) {
            return Err(Error::config("pool_size", "must be positive"));
        }
        Ok(())
    }

    fn analysis_options(&self) -> AnalysisOptions {
        let mut a = self.analysis;
        a.mc.samples = self.mc_samples;
        a
    }
}

/// Partition used for compression and for the statistic `A*_ε`.
pub fn experiment_partition(env: &Environment, scale: Option<f64>, rounds: usize, pool_size: usize, base_seed: u64) -> Result<Partition> {
    let support = env.optimal_support();
    match (support.points(), scale) {
        (Some(_), None) => Partition::singletons(Arc::clone(support)),
        (Some(points), Some(s)) => {
            let seed = points[0].clone();
            Ok(Partition::new(build_epsilon_net_on_pool(support, s, &seed, points)?))
        }
        (None, s) => {
            let s = s.unwrap_or_else(|| optimal_epsilon(env.dimension(), rounds));
            let mut seed = vec![0.0; env.dimension()];
            seed[0] = 1.0;
            let mut rng = net_rng(base_seed);
            Ok(Partition::new(build_epsilon_net(support, s, &seed, pool_size, &mut rng)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioSummary {
    /// Rounds that contributed to the mean.
    pub samples: usize,
    pub mean: Option<f64>,
    /// Standard error of the mean over all measured rounds and seeds.
    pub std_error: Option<f64>,
    pub max: Option<f64>,
    /// Mean ratio at each round over the measured seeds.
    pub by_round: Vec<f64>,
    /// Mean Monte Carlo standard error of the information estimates.
    pub mean_info_std_error: f64,
    pub inconsistencies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub episodes: usize,
    pub skipped: usize,
    /// Largest violation of `Σ_t I_t ≤ I(A*_ε; H^T) ≤ H(A*_ε)`.
    pub worst_gap: Option<f64>,
    pub per_episode: Vec<EpisodeInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionSummary {
    /// Largest `E[regret of TS] − (ε + compressed regret)` seen.
    pub item1_worst_gap: Option<f64>,
    /// Largest `compressed information − TS information` seen.
    pub item2_worst_gap: Option<f64>,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sublinearity {
    pub early_rate: f64,
    pub late_rate: f64,
    pub learns: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeReport {
    pub mode: Mode,
    pub per_seed: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub clip_events: usize,
    pub steps: usize,
    pub compressed_ratio: RatioSummary,
    pub ts_ratio: RatioSummary,
    pub compression: CompressionSummary,
    pub chain: Option<ChainSummary>,
    pub sublinearity: Option<Sublinearity>,
}

impl ModeReport {
    pub fn clip_rate(&self) -> f64 {
        self.clip_events as f64 / self.steps as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSummary {
    pub epsilon: f64,
    /// `H(A*_ε)`: exact for grids, `log K` otherwise.
    pub entropy: f64,
    pub cells: usize,
    pub gamma_measured: Option<f64>,
    pub gamma_analytic: Option<f64>,
    /// The ratio used for the `bound_thm1` column.
    pub gamma_used: Option<f64>,
    pub dimension: usize,
    /// Values at the horizon.
    pub values: BTreeMap<String, f64>,
    pub thm1_curve: Option<Vec<f64>>,
    pub final_curve: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub environment: String,
    pub modes: Vec<ModeReport>,
    pub bounds: BoundSummary,
}

impl ExperimentReport {
    pub fn mode(&self, mode: Mode) -> Option<&ModeReport> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    /// The report behind `regret.csv`: plain TS when it ran.
    pub fn primary(&self) -> &ModeReport {
        &self.modes[0]
    }
}

struct Replication {
    curve: Vec<f64>,
    clip_events: usize,
    compressed: Vec<(f64, f64)>,
    ts: Vec<(f64, f64)>,
    inconsistencies: usize,
    item1: Option<f64>,
    item2: Option<f64>,
    chain: Option<Result<EpisodeInfo>>,
}

fn measure(
    a: &RoundAnalysis,
    epsilon: f64,
    rep: &mut Replication,
) {
    match a.compressed_ratio(RATIO_TOL) {
        Ok(r) => rep.compressed.push((r, a.compressed_info.std_error)),
        Err(Error::EstimatorInconsistency { .. }) => rep.inconsistencies += 1,
        Err(_) => unreachable!("squared regrets are nonnegative"),
    }
    match a.ts_ratio(RATIO_TOL) {
        Ok(Some(r)) => rep.ts.push((r, a.ts_info.map_or(0.0, |i| i.std_error))),
        Ok(None) => {}
        Err(Error::EstimatorInconsistency { .. }) => rep.inconsistencies += 1,
        Err(_) => unreachable!("squared regrets are nonnegative"),
    }
    let g1 = a.ts_regret - (epsilon + a.compressed_regret);
    let g2 = a.compressed_info.value - a.ts_cell_info.value;
    rep.item1 = Some(rep.item1.map_or(g1, |x| x.max(g1)));
    rep.item2 = Some(rep.item2.map_or(g2, |x| x.max(g2)));
}

fn reproducer(e: Error, config: &ExperimentConfig, replication: usize, round: usize) -> Error {
    match e {
        Error::Internal(m) => Error::Internal(format!(
            "{m}\nreproduce with: replication {replication}, base_seed {}, round {round}, config {}",
            config.base_seed,
            serde_json::to_string(config).unwrap_or_default()
        )),
        other => other,
    }
}

fn summarize(values: &[(f64, f64)], by_round: Vec<f64>, inconsistencies: usize) -> RatioSummary {
    let n = values.len();
    if n == 0 {
        return RatioSummary {
            samples: 0,
            mean: None,
            std_error: None,
            max: None,
            by_round,
            mean_info_std_error: 0.0,
            inconsistencies,
        };
    }
    let xs: Vec<f64> = values.iter().map(|v| v.0).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    RatioSummary {
        samples: n,
        mean: Some(mean),
        std_error: Some(crate::information::std_error(&xs)),
        max: Some(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        by_round,
        mean_info_std_error: values.iter().map(|v| v.1).sum::<f64>() / n as f64,
        inconsistencies,
    }
}

/// Run every replication, aggregate, evaluate bounds and write the requested
/// outputs when `config.out` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let env = Environment::from_json_file(&config.env).map_err(|e| match e {
        Error::Io(io) => Error::config("env", format!("cannot read {}: {io}", config.env.display())),
        other => other,
    })?;
    let report = run_experiment_with_env(config, &env)?;
    if let Some(out) = &config.out {
        write_outputs(&report, out, &config.emit)?;
    }
    Ok(report)
}

/// [`run_experiment`] on an already parsed environment; writes nothing.
pub fn run_experiment_with_env(config: &ExperimentConfig, env: &Environment) -> Result<ExperimentReport> {
    config.validate()?;
    if config.scale.is_none() && config.mode != ModeSelection::Plain && env.finite_points().is_some() {
        return Err(Error::config("scale", "compressed runs on finite action sets need a positive net scale"));
    }
    let rounds = config.rounds;
    let pool_size = config.pool_size.unwrap_or(DEFAULT_POOL_SIZE);
    let partition = experiment_partition(env, config.scale, rounds, pool_size, config.base_seed)
        .map_err(|e| match e {
            Error::InvalidArgument(m) => Error::config("scale", m),
            other => other,
        })?;
    let options = config.analysis_options();
    let epsilon = if env.is_grid() {
        max_cell_spread(&partition, env)?
    } else {
        env.lipschitz().unwrap_or(1.0) * partition.net().scale()
    };

    let mut modes = Vec::new();
    for mode in config.mode.modes() {
        modes.push(run_mode(config, env, &partition, &options, mode, epsilon)?);
    }

    let d = env.dimension();
    let cells = partition.num_cells();
    let entropy = if env.is_grid() {
        crate::thompson::analyze_round_exact(&env.prior_state(), env, &partition)?.statistic_entropy
    } else {
        (cells as f64).ln()
    };
    let gamma_measured = modes[0].compressed_ratio.mean;
    let gamma_analytic = (!env.is_grid()).then_some(2.0 * d as f64);
    let gamma_used = gamma_measured.or(gamma_analytic);
    let mut values = BTreeMap::new();
    if let Some(g) = gamma_measured {
        values.insert("theorem1_measured".into(), theorem1_bound(g, rounds, entropy, epsilon)?);
        values.insert("russo_measured".into(), russo_bound(g, rounds, entropy)?);
    }
    if let Some(g) = gamma_analytic {
        values.insert("theorem1_analytic".into(), theorem1_bound(g, rounds, entropy, epsilon)?);
        let lc = crate::action_space::covering_log_bound(d, epsilon)?;
        values.insert("linear_bandit".into(), linear_bandit_bound(d, rounds, lc, epsilon)?);
        values.insert("final_corollary".into(), final_corollary_bound(d, rounds)?);
    }
    let thm1_curve = gamma_used
        .map(|g| (1..=rounds).map(|t| theorem1_bound(g, t, entropy, epsilon)).collect::<Result<Vec<_>>>())
        .transpose()?;
    let final_curve = (!env.is_grid())
        .then(|| (1..=rounds).map(|t| final_corollary_bound(d, t)).collect::<Result<Vec<_>>>())
        .transpose()?;
    Ok(ExperimentReport {
        config: config.clone(),
        environment: if env.is_grid() { "grid" } else { "linear_gaussian" }.to_string(),
        modes,
        bounds: BoundSummary {
            epsilon,
            entropy,
            cells,
            gamma_measured,
            gamma_analytic,
            gamma_used,
            dimension: d,
            values,
            thm1_curve,
            final_curve,
        },
    })
}

fn run_mode(
    config: &ExperimentConfig,
    env: &Environment,
    partition: &Partition,
    options: &AnalysisOptions,
    mode: Mode,
    epsilon: f64,
) -> Result<ModeReport> {
    let rounds = config.rounds;
    let reps: Vec<Replication> = (0..config.seeds)
        .into_par_iter()
        .map(|i| {
            let mut rng = replication_rng(config.base_seed, i as u64);
            let mut arng = analysis_rng(config.base_seed, i as u64);
            let measured = i < config.ratio_seeds;
            let mut rep = Replication {
                curve: Vec::new(),
                clip_events: 0,
                compressed: Vec::new(),
                ts: Vec::new(),
                inconsistencies: 0,
                item1: None,
                item2: None,
                chain: None,
            };
            let round = std::cell::Cell::new(0);
            let episode = match mode {
                Mode::Plain => {
                    let mut observe_rng = analysis_rng(config.base_seed, i as u64);
                    run_episode_observed(env, rounds, mode, Some(partition), options, &mut rng, None, |view| {
                        round.set(view.t);
                        if measured {
                            let a = analyze_round(view.state, env, partition, options, &mut observe_rng)?;
                            measure(&a, epsilon, &mut rep);
                        }
                        Ok(())
                    })
                }
                Mode::Compressed => run_episode_observed(
                    env,
                    rounds,
                    mode,
                    Some(partition),
                    options,
                    &mut rng,
                    Some(&mut arng),
                    |view| {
                        round.set(view.t);
                        if measured {
                            measure(view.analysis.expect("compressed rounds carry their analysis"), epsilon, &mut rep);
                        }
                        Ok(())
                    },
                ),
            }
            .map_err(|e| reproducer(e, config, i, round.get()))?;
            rep.curve = episode.cumulative_regret();
            rep.clip_events = episode.clip_events();
            if i == 0 && env.is_grid() && !matches!(env.reward_kind(), crate::bandit::RewardKind::Gaussian { sigma } if sigma > 0.0) {
                rep.chain = Some(episode_info_accounting_with(&episode.records, env, partition, config.max_states));
            }
            Ok(rep)
        })
        .collect::<Result<_>>()?;

    let n = reps.len() as f64;
    let mut mean = vec![0.0; rounds];
    let mut std_error = vec![0.0; rounds];
    for t in 0..rounds {
        let xs: Vec<f64> = reps.iter().map(|r| r.curve[t]).collect();
        mean[t] = xs.iter().sum::<f64>() / n;
        std_error[t] = crate::information::std_error(&xs);
    }
    let measured: Vec<&Replication> = reps.iter().filter(|r| !r.compressed.is_empty() || r.inconsistencies > 0).collect();
    let by_round = |pick: fn(&Replication) -> &Vec<(f64, f64)>| -> Vec<f64> {
        let lists: Vec<&Vec<(f64, f64)>> = measured.iter().map(|r| pick(r)).filter(|l| l.len() == rounds).collect();
        if lists.is_empty() {
            return Vec::new();
        }
        (0..rounds)
            .map(|t| lists.iter().map(|l| l[t].0).sum::<f64>() / lists.len() as f64)
            .collect()
    };
    let inconsistencies = reps.iter().map(|r| r.inconsistencies).sum();
    let all_c: Vec<(f64, f64)> = reps.iter().flat_map(|r| r.compressed.iter().copied()).collect();
    let all_t: Vec<(f64, f64)> = reps.iter().flat_map(|r| r.ts.iter().copied()).collect();
    let compressed_ratio = summarize(&all_c, by_round(|r| &r.compressed), inconsistencies);
    let ts_ratio = summarize(&all_t, by_round(|r| &r.ts), 0);
    let worst = |xs: Vec<Option<f64>>| xs.into_iter().flatten().reduce(f64::max);
    let compression = CompressionSummary {
        item1_worst_gap: worst(reps.iter().map(|r| r.item1).collect()),
        item2_worst_gap: worst(reps.iter().map(|r| r.item2).collect()),
        exact: env.is_grid(),
    };
    let chain = if env.is_grid() {
        let mut per_episode = Vec::new();
        let mut skipped = 0;
        for r in &reps {
            match &r.chain {
                Some(Ok(info)) => per_episode.push(info.clone()),
                Some(Err(Error::InvalidArgument(_))) => skipped += 1,
                Some(Err(e)) => return Err(Error::Internal(format!("chain accounting failed: {e}"))),
                None => {}
            }
        }
        Some(ChainSummary {
            episodes: per_episode.len(),
            skipped,
            worst_gap: per_episode.iter().map(EpisodeInfo::chain_gap).reduce(f64::max),
            per_episode,
        })
    } else {
        None
    };
    let sublinearity = (rounds >= 4).then(|| {
        let q = rounds / 4;
        let early = mean[q - 1] / q as f64;
        let late = (mean[rounds - 1] - mean[rounds - 1 - q]) / q as f64;
        Sublinearity {
            early_rate: early,
            late_rate: late,
            learns: late < early,
        }
    });
    Ok(ModeReport {
        mode,
        clip_events: reps.iter().map(|r| r.clip_events).sum(),
        steps: reps.len() * rounds,
        per_seed: reps.into_iter().map(|r| r.curve).collect(),
        mean,
        std_error,
        compressed_ratio,
        ts_ratio,
        compression,
        chain,
        sublinearity,
    })
}

/// `regret.csv` contents for one mode.
pub fn csv_string(report: &ExperimentReport, mode: &ModeReport) -> String {
    let mut s = String::from("t,mean_regret,stderr,bound_thm1,bound_final\n");
    for t in 0..mode.mean.len() {
        let cell = |c: &Option<Vec<f64>>| c.as_ref().map(|v| v[t].to_string()).unwrap_or_default();
        writeln!(
            s,
            "{},{},{},{},{}",
            t + 1,
            mode.mean[t],
            mode.std_error[t],
            cell(&report.bounds.thm1_curve),
            cell(&report.bounds.final_curve)
        )
        .unwrap();
    }
    s
}

pub fn emit_csv(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (i, m) in report.modes.iter().enumerate() {
        let name = if i == 0 { "regret.csv".to_string() } else { format!("regret_{}.csv", mode_name(m.mode)) };
        let path = dir.join(name);
        std::fs::write(&path, csv_string(report, m))?;
        written.push(path);
    }
    Ok(written)
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Plain => "plain",
        Mode::Compressed => "compressed",
    }
}

pub fn json_string(report: &ExperimentReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn emit_json(report: &ExperimentReport, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("report.json");
    std::fs::write(&path, json_string(report)?)?;
    Ok(path)
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const SVG_PAD: f64 = 48.0;

/// Standalone line chart of the primary mode: mean, ±1 stderr band and each
/// bound curve.
pub fn svg_string(report: &ExperimentReport) -> String {
    let m = report.primary();
    let n = m.mean.len();
    let upper: Vec<f64> = m.mean.iter().zip(&m.std_error).map(|(a, b)| a + b).collect();
    let lower: Vec<f64> = m.mean.iter().zip(&m.std_error).map(|(a, b)| a - b).collect();
    let mut bounds: Vec<(&str, &Vec<f64>)> = Vec::new();
    if let Some(c) = &report.bounds.thm1_curve {
        bounds.push(("bound_thm1", c));
    }
    if let Some(c) = &report.bounds.final_curve {
        bounds.push(("bound_final", c));
    }
    let ymax = upper
        .iter()
        .chain(bounds.iter().flat_map(|(_, c)| c.iter()))
        .copied()
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    let ymin = lower.iter().copied().fold(0.0_f64, f64::min);
    let x = |t: usize| SVG_PAD + if n > 1 { t as f64 / (n - 1) as f64 } else { 0.0 } * (SVG_W - 2.0 * SVG_PAD);
    let y = |v: f64| SVG_H - SVG_PAD - (v - ymin) / (ymax - ymin) * (SVG_H - 2.0 * SVG_PAD);
    let points = |v: &[f64]| -> String {
        v.iter()
            .enumerate()
            .map(|(t, &val)| format!("{:.2},{:.2}", x(t), y(val)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let colors = ["#d62728", "#2ca02c", "#9467bd"];
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    )
    .unwrap();
    writeln!(s, r#"  <rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let (x0, x1, y0, y1) = (SVG_PAD, SVG_W - SVG_PAD, SVG_H - SVG_PAD, SVG_PAD);
    writeln!(s, r#"  <g class="axes" stroke="black" fill="none"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#).unwrap();
    writeln!(
        s,
        r#"  <g class="labels" font-family="sans-serif" font-size="12"><text x="{}" y="{}" text-anchor="middle">round</text><text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">cumulative regret</text><text x="{x0}" y="{}" text-anchor="middle">1</text><text x="{x1}" y="{}" text-anchor="middle">{n}</text><text x="{}" y="{y1}" text-anchor="end">{}</text></g>"#,
        (x0 + x1) / 2.0,
        SVG_H - 12.0,
        SVG_H / 2.0,
        SVG_H / 2.0,
        y0 + 16.0,
        y0 + 16.0,
        x0 - 4.0,
        fmt_tick(ymax)
    )
    .unwrap();
    writeln!(
        s,
        r##"  <g class="series" data-name="mean"><polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{}"/></g>"##,
        points(&m.mean)
    )
    .unwrap();
    writeln!(
        s,
        r##"  <g class="series" data-name="stderr_band" stroke="#1f77b4" stroke-dasharray="2,2" fill="none"><polyline points="{}"/><polyline points="{}"/></g>"##,
        points(&upper),
        points(&lower)
    )
    .unwrap();
    for (i, (name, c)) in bounds.iter().enumerate() {
        writeln!(
            s,
            r#"  <g class="series" data-name="{name}"><polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/></g>"#,
            colors[i % colors.len()],
            points(c)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v >= 100.0 {
        format!("{v:.0}")
    } else if v >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

pub fn emit_svg(report: &ExperimentReport, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("regret.svg");
    std::fs::write(&path, svg_string(report))?;
    Ok(path)
}

pub fn write_outputs(report: &ExperimentReport, dir: &Path, emit: &[Emit]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if emit.contains(&Emit::Csv) {
        written.extend(emit_csv(report, dir)?);
    }
    if emit.contains(&Emit::Json) {
        written.push(emit_json(report, dir)?);
    }
    if emit.contains(&Emit::Svg) {
        written.push(emit_svg(report, dir)?);
    }
    Ok(written)
}
