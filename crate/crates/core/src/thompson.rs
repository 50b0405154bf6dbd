//! Thompson Sampling and one-step compressed Thompson Sampling.
//!
//! Each round the compressed agent quantizes the optimal action into the
//! cell `V = A*_ε` of a partition and replaces the sampled cell with a cheap
//! two-point mixture inside it. With `Q_k` the posterior law of `A*` given
//! `V = k` and `u_k(a) = E[R(a) | V = k] − E[R(a)]`, the mixture for cell `k`
//! is chosen so that
//!
//! * `E_φ[u_k] ≥ E_Q[u_k]`, which keeps the compressed regret within `ε` of
//!   plain TS, and
//! * `E_φ[g] ≤ E_Q[g]` with `g(a) = I_t(V; R(a))`, so the compressed action
//!   is no more informative about `V` than the TS action.
//!
//! Both are linear constraints over mixtures, so a two-point mixture always
//! satisfies them; [`pair_mix_search`] finds one.

use std::fmt::Debug;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_space::{max_cell_spread, Partition};
use crate::bandit::{Action, Environment, Parameter, PosteriorState};
use crate::error::{Error, Result};
use crate::information::{
    entropy, exact_label_information, grid_statistic_labels, info_ratio, label_law, std_error, InfoEstimate,
    McOptions, PosteriorDraws, RewardMixture,
};
use crate::rng::replication_rng;

const SEARCH_SLACK: f64 = 1e-13;
const CHECK_TOL: f64 = 1e-12;

/// Play `a1` with probability `q`, otherwise `a2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairMix<A> {
    pub a1: A,
    pub a2: A,
    pub q: f64,
}

impl<A: Clone> PairMix<A> {
    pub fn single(a: A) -> Self {
        PairMix { a1: a.clone(), a2: a, q: 1.0 }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> A {
        if rng.random::<f64>() < self.q {
            self.a1.clone()
        } else {
            self.a2.clone()
        }
    }
}

/// Find `(a1, a2, q)` whose mixture does not exceed the `weights`-average of
/// either `f` or `g`.
///
/// Any feasible pair has one point with `f` at most its mean and one with `g`
/// at most its mean, so scanning those two sets is exhaustive.
pub fn pair_mix_search<A: Clone + Debug>(support: &[A], weights: &[f64], f: &[f64], g: &[f64]) -> Result<PairMix<A>> {
    let n = support.len();
    if n == 0 || weights.len() != n || f.len() != n || g.len() != n {
        return Err(Error::invalid("support, weights, f and g must be nonempty and of equal length"));
    }
    if weights.iter().any(|&w| !w.is_finite() || w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("weights must form a probability vector"));
    }
    if f.iter().chain(g).any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::invalid("f and g must be finite and nonnegative"));
    }
    let fbar: f64 = weights.iter().zip(f).map(|(w, x)| w * x).sum();
    let gbar: f64 = weights.iter().zip(g).map(|(w, x)| w * x).sum();
    let af: Vec<usize> = (0..n).filter(|&i| f[i] <= fbar + SEARCH_SLACK).collect();
    let ag: Vec<usize> = (0..n).filter(|&i| g[i] <= gbar + SEARCH_SLACK).collect();
    if let Some(&i) = af.iter().find(|i| ag.contains(i)) {
        return Ok(PairMix::single(support[i].clone()));
    }
    for &i in &af {
        for &j in &ag {
            let lo = (f[j] - fbar) / (f[j] - f[i]);
            let hi = (gbar - g[j]) / (g[i] - g[j]);
            let (lo, hi) = (lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0));
            // The endpoints lose precision when f or g nearly tie, so the
            // value check below decides, not the interval.
            for q in [0.5 * (lo + hi), lo, hi] {
                let fm = q * f[i] + (1.0 - q) * f[j];
                let gm = q * g[i] + (1.0 - q) * g[j];
                if fm <= fbar + CHECK_TOL && gm <= gbar + CHECK_TOL {
                    return Ok(PairMix {
                        a1: support[i].clone(),
                        a2: support[j].clone(),
                        q,
                    });
                }
            }
        }
    }
    Err(Error::Internal(format!(
        "no feasible pair mixture: support={support:?} weights={weights:?} f={f:?} g={g:?}"
    )))
}

/// The mixture of one cell together with the data it was built from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellCompression {
    pub cell: usize,
    /// Posterior probability of the cell.
    pub mass: f64,
    pub support: Vec<Action>,
    /// Law of the optimal action within the cell.
    pub weights: Vec<f64>,
    /// `−u_k` shifted by `offset` to be nonnegative.
    pub f: Vec<f64>,
    pub offset: f64,
    pub g: Vec<f64>,
    pub mix: PairMix<Action>,
}

/// A round's compression: one mixture per cell with posterior mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionMap {
    pub round: usize,
    cells: Vec<Option<CellCompression>>,
}

impl CompressionMap {
    pub fn cell(&self, k: usize) -> Option<&CellCompression> {
        self.cells.get(k).and_then(Option::as_ref)
    }

    pub fn cells(&self) -> impl Iterator<Item = &CellCompression> {
        self.cells.iter().flatten()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// φ_t applied to cell `k`.
    pub fn apply<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Action> {
        self.cell(k)
            .map(|c| c.mix.sample(rng))
            .ok_or_else(|| Error::Internal(format!("compression map queried at cell {k}, which has no posterior mass")))
    }

    /// Law of the compressed action `φ_t(V)`.
    pub fn policy(&self) -> Vec<(Action, f64)> {
        let mut out: Vec<(Action, f64)> = Vec::new();
        let mut add = |a: &Action, p: f64| {
            if p <= 0.0 {
                return;
            }
            match out.iter_mut().find(|(b, _)| b == a) {
                Some((_, q)) => *q += p,
                None => out.push((a.clone(), p)),
            }
        };
        for c in self.cells() {
            add(&c.mix.a1, c.mass * c.mix.q);
            add(&c.mix.a2, c.mass * (1.0 - c.mix.q));
        }
        out
    }
}

fn compress_cell(
    cell: usize,
    mass: f64,
    support: Vec<Action>,
    weights: Vec<f64>,
    u: &[f64],
    g: Vec<f64>,
) -> Result<(CellCompression, f64)> {
    let neg: Vec<f64> = u.iter().map(|x| -x).collect();
    let offset = (-neg.iter().copied().fold(f64::INFINITY, f64::min)).max(0.0);
    let f: Vec<f64> = neg.iter().map(|x| x + offset).collect();
    let g: Vec<f64> = g.into_iter().map(|x| x.max(0.0)).collect();
    let mix = pair_mix_search(&support, &weights, &f, &g)?;
    let pos = |a: &Action| support.iter().position(|b| b == a).expect("mixture stays on the support");
    let (i, j) = (pos(&mix.a1), pos(&mix.a2));
    let gain = mix.q * u[i] + (1.0 - mix.q) * u[j];
    Ok((
        CellCompression {
            cell,
            mass,
            support,
            weights,
            f,
            offset,
            g,
            mix,
        },
        gain,
    ))
}

/// Options for [`analyze_round`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    pub mc: McOptions,
    /// Representative optimal actions per cell when actions are continuous.
    pub support_per_cell: usize,
    /// Also estimate `I_t(A*; A_t, R_t)` for the plain TS ratio.
    pub ts_ratio: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            mc: McOptions::default(),
            support_per_cell: 8,
            ts_ratio: false,
        }
    }
}

/// Everything one round contributes to the information-ratio analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundAnalysis {
    pub round: usize,
    pub map: CompressionMap,
    /// `E_t[R(A*) − R(A_t)]` for the TS action.
    pub ts_regret: f64,
    /// `I_t(A*; A_t, R_t)`; not computed for continuous actions.
    pub ts_info: Option<InfoEstimate>,
    /// `I_t(A*_ε; A_t, R_t)`.
    pub ts_cell_info: InfoEstimate,
    /// `E_t[R(φ_t(A*_ε)) − R(φ_t(Â_ε))]`.
    pub compressed_regret: f64,
    /// `I_t(A*_ε; Ã_ε, R(Ã_ε))`.
    pub compressed_info: InfoEstimate,
    pub statistic_entropy: f64,
    pub optimal_entropy: Option<f64>,
    /// `H(A*) − H(A*_ε)`, computed as a sum of nonnegative terms.
    pub entropy_slack: Option<f64>,
}

impl RoundAnalysis {
    /// Γ̃_t.
    pub fn compressed_ratio(&self, tol: f64) -> Result<f64> {
        info_ratio(self.compressed_regret.powi(2), &self.compressed_info, tol)
    }

    /// Γ_t, when `ts_info` is available.
    pub fn ts_ratio(&self, tol: f64) -> Result<Option<f64>> {
        self.ts_info
            .as_ref()
            .map(|i| info_ratio(self.ts_regret.powi(2), i, tol))
            .transpose()
    }
}

/// Exact compression map for a grid posterior.
pub fn build_compression_map(state: &PosteriorState, env: &Environment, partition: &Partition) -> Result<CompressionMap> {
    analyze_round_exact(state, env, partition).map(|a| a.map)
}

/// Round analysis: exact on grids, Monte Carlo with `rng` otherwise.
pub fn analyze_round<R: Rng + ?Sized>(
    state: &PosteriorState,
    env: &Environment,
    partition: &Partition,
    options: &AnalysisOptions,
    rng: &mut R,
) -> Result<RoundAnalysis> {
    if env.is_grid() {
        analyze_round_exact(state, env, partition)
    } else {
        analyze_round_mc(state, env, partition, options, rng)
    }
}

pub fn analyze_round_exact(state: &PosteriorState, env: &Environment, partition: &Partition) -> Result<RoundAnalysis> {
    let g = env
        .grid_model()
        .ok_or_else(|| Error::invalid("exact compression needs a grid environment"))?;
    let w = state
        .weights()
        .ok_or_else(|| Error::invalid("posterior does not match the environment"))?;
    let points = env.finite_points().expect("grid actions are finite");
    let n_actions = g.num_actions();
    let k = partition.num_cells();
    let labels_v = grid_statistic_labels(env, partition)?;
    let labels_a: Vec<usize> = (0..g.num_params()).map(|t| g.optimal_map().forward(t)).collect();
    let action_cell = partition.cells_of(points);
    let p_v = label_law(w, &labels_v, k);
    let p_a = state.optimal_action_dist(env)?;

    let mean_all: Vec<f64> = (0..n_actions)
        .map(|a| w.iter().enumerate().map(|(t, wt)| wt * g.mean(a, t)).sum())
        .collect();
    let mut g_v = vec![0.0; n_actions];
    for a in (0..n_actions).filter(|&a| p_a[a] > 0.0) {
        g_v[a] = exact_label_information(g, w, &labels_v, a)?;
    }

    let mut cells = vec![None; k];
    let mut compressed_regret = 0.0;
    let mut entropy_slack = 0.0;
    for (cell, &mass) in p_v.iter().enumerate() {
        if mass <= 0.0 {
            continue;
        }
        let members: Vec<usize> = (0..n_actions).filter(|&a| p_a[a] > 0.0 && action_cell[a] == cell).collect();
        let weights: Vec<f64> = members.iter().map(|&a| p_a[a] / mass).collect();
        let u: Vec<f64> = members
            .iter()
            .map(|&a| {
                let cond: f64 = w
                    .iter()
                    .enumerate()
                    .filter(|(t, _)| labels_v[*t] == cell)
                    .map(|(t, wt)| wt * g.mean(a, t))
                    .sum::<f64>()
                    / mass;
                cond - mean_all[a]
            })
            .collect();
        let gs = members.iter().map(|&a| g_v[a]).collect();
        entropy_slack += mass * entropy_of_weights(&weights);
        let support = members.iter().map(|&a| Action::Index(a)).collect();
        let (c, gain) = compress_cell(cell, mass, support, weights, &u, gs)?;
        compressed_regret += mass * gain;
        cells[cell] = Some(c);
    }
    let map = CompressionMap { round: state.round, cells };

    let best: f64 = w
        .iter()
        .enumerate()
        .map(|(t, wt)| wt * g.mean(labels_a[t], t))
        .sum();
    let played: f64 = (0..n_actions).map(|a| p_a[a] * mean_all[a]).sum();
    let mut ts_info = 0.0;
    for a in (0..n_actions).filter(|&a| p_a[a] > 0.0) {
        ts_info += p_a[a] * exact_label_information(g, w, &labels_a, a)?;
    }
    let ts_cell_info: f64 = (0..n_actions).map(|a| p_a[a] * g_v[a]).sum();
    let compressed_info: f64 = map
        .policy()
        .iter()
        .map(|(a, p)| p * g_v[a.index().expect("grid actions are indices")])
        .sum();
    Ok(RoundAnalysis {
        round: state.round,
        map,
        ts_regret: best - played,
        ts_info: Some(InfoEstimate::exact(ts_info)),
        ts_cell_info: InfoEstimate::exact(ts_cell_info),
        compressed_regret,
        compressed_info: InfoEstimate::exact(compressed_info),
        statistic_entropy: entropy(&p_v)?,
        optimal_entropy: Some(entropy(&p_a)?),
        entropy_slack: Some(entropy_slack),
    })
}

fn entropy_of_weights(w: &[f64]) -> f64 {
    -w.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

fn vector(p: &Parameter) -> &DVector<f64> {
    match p {
        Parameter::Vector(v) => v,
        Parameter::Grid(_) => panic!("expected a parameter vector"),
    }
}

/// Monte Carlo round analysis for linear-Gaussian environments.
pub fn analyze_round_mc<R: Rng + ?Sized>(
    state: &PosteriorState,
    env: &Environment,
    partition: &Partition,
    options: &AnalysisOptions,
    rng: &mut R,
) -> Result<RoundAnalysis> {
    if env.is_grid() {
        return Err(Error::invalid("Monte Carlo round analysis is for linear-Gaussian environments"));
    }
    options.mc.validate()?;
    if options.support_per_cell == 0 {
        return Err(Error::invalid("support_per_cell must be positive"));
    }
    let draws = PosteriorDraws::sample(state, env, partition, options.mc.samples, rng)?;
    let n = draws.len();
    let nf = n as f64;
    let d = env.dimension();
    let k = partition.num_cells();
    let reward = env.reward_kind();

    let mut count = vec![0usize; k];
    let mut theta_k = vec![DVector::<f64>::zeros(d); k];
    let mut theta_all = DVector::<f64>::zeros(d);
    let mut best = 0.0;
    let mut astar_mean = DVector::<f64>::zeros(d);
    for j in 0..n {
        let v = vector(&draws.params[j]);
        count[draws.cells[j]] += 1;
        theta_k[draws.cells[j]] += v;
        theta_all += v;
        let a = env.action_point(&draws.optimal[j]);
        best += v.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
        astar_mean += DVector::from_column_slice(a);
    }
    theta_all /= nf;
    astar_mean /= nf;
    let ts_regret = best / nf - astar_mean.dot(&theta_all);
    let p_v: Vec<f64> = count.iter().map(|&c| c as f64 / nf).collect();

    // per-cell supports with weights
    let finite = env.num_actions();
    let mut supports: Vec<Vec<(Action, f64)>> = vec![Vec::new(); k];
    let mut action_counts = finite.map(|m| vec![0usize; m]).unwrap_or_default();
    match finite {
        Some(_) => {
            let mut per_cell: Vec<Vec<usize>> = vec![Vec::new(); k];
            for j in 0..n {
                let a = draws.optimal[j].index().expect("finite actions are indices");
                if action_counts[a] == 0 {
                    per_cell[draws.cells[j]].push(a);
                }
                action_counts[a] += 1;
            }
            for (cell, members) in per_cell.iter_mut().enumerate() {
                members.sort_unstable();
                supports[cell] = members
                    .iter()
                    .map(|&a| (Action::Index(a), action_counts[a] as f64 / count[cell] as f64))
                    .collect();
            }
        }
        None => {
            for j in 0..n {
                let cell = draws.cells[j];
                if supports[cell].len() < options.support_per_cell {
                    supports[cell].push((draws.optimal[j].clone(), 0.0));
                }
            }
            for s in supports.iter_mut() {
                let m = s.len() as f64;
                s.iter_mut().for_each(|(_, w)| *w = 1.0 / m);
            }
        }
    }

    // g = I(V; R(a)) for every support action, keeping the mixtures for the
    // standard error of the compressed information.
    let mut mixtures: Vec<(Action, Vec<f64>, RewardMixture)> = Vec::new();
    let mut g_of = |a: &Action| -> f64 {
        if let Some((_, _, m)) = mixtures.iter().find(|(b, _, _)| b == a) {
            return m.information();
        }
        let means = draws.means(env, a);
        let mix = RewardMixture::new(&draws.cells, k, &means, reward, &options.mc);
        let info = mix.information();
        mixtures.push((a.clone(), means, mix));
        info
    };

    let mut cells = vec![None; k];
    let mut compressed_regret = 0.0;
    let mut ts_cell_info = 0.0;
    for cell in 0..k {
        if count[cell] == 0 {
            continue;
        }
        let mass = p_v[cell];
        let shift = &theta_k[cell] / count[cell] as f64 - &theta_all;
        let (support, weights): (Vec<Action>, Vec<f64>) = supports[cell].iter().cloned().unzip();
        let u: Vec<f64> = support
            .iter()
            .map(|a| env.action_point(a).iter().zip(shift.iter()).map(|(x, y)| x * y).sum())
            .collect();
        let gs: Vec<f64> = support.iter().map(&mut g_of).collect();
        ts_cell_info += mass * weights.iter().zip(&gs).map(|(w, g)| w * g).sum::<f64>();
        let (c, gain) = compress_cell(cell, mass, support, weights, &u, gs)?;
        compressed_regret += mass * gain;
        cells[cell] = Some(c);
    }
    let map = CompressionMap { round: state.round, cells };

    let policy = map.policy();
    let mut value = 0.0;
    let mut per_draw = vec![0.0; n];
    for (a, p) in &policy {
        let (_, means, mix) = mixtures.iter().find(|(b, _, _)| b == a).expect("policy stays on cell supports");
        value += p * mix.information();
        for j in 0..n {
            per_draw[j] += p * mix.contribution(draws.cells[j], means[j]);
        }
    }
    let compressed_info = InfoEstimate::monte_carlo(value, std_error(&per_draw));

    let (ts_info, optimal_entropy) = match finite {
        Some(m) if options.ts_ratio => {
            let labels: Vec<usize> = draws.optimal.iter().map(|a| a.index().unwrap()).collect();
            let mut v = 0.0;
            let mut per = vec![0.0; n];
            for a in (0..m).filter(|&a| action_counts[a] > 0) {
                let act = Action::Index(a);
                let means = draws.means(env, &act);
                let mix = RewardMixture::new(&labels, m, &means, reward, &options.mc);
                let p = action_counts[a] as f64 / nf;
                v += p * mix.information();
                for j in 0..n {
                    per[j] += p * mix.contribution(labels[j], means[j]);
                }
            }
            let p_a: Vec<f64> = action_counts.iter().map(|&c| c as f64 / nf).collect();
            (Some(InfoEstimate::monte_carlo(v, std_error(&per))), Some(entropy(&p_a)?))
        }
        Some(_) => {
            let p_a: Vec<f64> = action_counts.iter().map(|&c| c as f64 / nf).collect();
            (None, Some(entropy(&p_a)?))
        }
        None => (None, None),
    };
    let entropy_slack = optimal_entropy.map(|_| {
        supports
            .iter()
            .zip(&p_v)
            .map(|(s, m)| m * entropy_of_weights(&s.iter().map(|(_, w)| *w).collect::<Vec<_>>()))
            .sum()
    });
    Ok(RoundAnalysis {
        round: state.round,
        map,
        ts_regret,
        ts_info,
        ts_cell_info: InfoEstimate::monte_carlo(ts_cell_info, 0.0),
        compressed_regret,
        compressed_info,
        statistic_entropy: entropy(&p_v)?,
        optimal_entropy,
        entropy_slack,
    })
}

/// One round of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub sampled: Parameter,
    /// `π*(θ̂_t)`.
    pub action: Action,
    /// Cell of `action`, when a partition is in use.
    pub cell: Option<usize>,
    /// The action actually played by the compressed agent.
    pub compressed: Option<Action>,
    pub reward: f64,
    pub clipped: bool,
    /// `E[R(A*, Θ) − R(played, Θ)]` under the episode's true parameter.
    pub regret: f64,
}

impl StepRecord {
    pub fn played(&self) -> &Action {
        self.compressed.as_ref().unwrap_or(&self.action)
    }
}

fn expected_regret(env: &Environment, truth: &Parameter, played: &Action) -> f64 {
    let best = env.optimal_action(truth);
    env.mean_reward(&best, truth) - env.mean_reward(played, truth)
}

/// One plain TS round.
pub fn ts_step<R: Rng + ?Sized>(
    state: &PosteriorState,
    env: &Environment,
    truth: &Parameter,
    rng: &mut R,
) -> Result<(Action, StepRecord, PosteriorState)> {
    let sampled = state.sample(rng);
    let action = env.optimal_action(&sampled);
    let draw = env.sample_reward(&action, truth, rng);
    let next = state.update(env, &action, draw.value)?;
    let record = StepRecord {
        t: state.round + 1,
        regret: expected_regret(env, truth, &action),
        sampled,
        action: action.clone(),
        cell: None,
        compressed: None,
        reward: draw.value,
        clipped: draw.clipped,
    };
    Ok((action, record, next))
}

/// One compressed TS round using a map built from `state`.
///
/// On continuous actions a cell the map has no estimate for plays the TS
/// action itself.
pub fn compressed_step<R: Rng + ?Sized>(
    state: &PosteriorState,
    env: &Environment,
    partition: &Partition,
    map: &CompressionMap,
    truth: &Parameter,
    rng: &mut R,
) -> Result<(StepRecord, PosteriorState)> {
    let sampled = state.sample(rng);
    let action = env.optimal_action(&sampled);
    let cell = partition.assign(env.action_point(&action));
    // A Monte Carlo map only knows cells its draws reached; the TS draw is
    // then the sole sample of A* in its cell, so it is played as is.
    let played = if map.cell(cell).is_none() && !env.is_grid() {
        action.clone()
    } else {
        map.apply(cell, rng)?
    };
    let draw = env.sample_reward(&played, truth, rng);
    let next = state.update(env, &played, draw.value)?;
    Ok((
        StepRecord {
            t: state.round + 1,
            regret: expected_regret(env, truth, &played),
            sampled,
            action,
            cell: Some(cell),
            compressed: Some(played),
            reward: draw.value,
            clipped: draw.clipped,
        },
        next,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Plain,
    Compressed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub truth: Parameter,
    pub records: Vec<StepRecord>,
}

impl Episode {
    pub fn cumulative_regret(&self) -> Vec<f64> {
        self.records
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r.regret;
                Some(*acc)
            })
            .collect()
    }

    pub fn clip_events(&self) -> usize {
        self.records.iter().filter(|r| r.clipped).count()
    }
}

/// What an episode observer sees before each round is played.
pub struct RoundView<'a> {
    pub t: usize,
    pub state: &'a PosteriorState,
    /// The analysis behind the compression map, in compressed mode.
    pub analysis: Option<&'a RoundAnalysis>,
}

/// Run `rounds` steps against a parameter drawn from the prior.
pub fn run_episode<R: Rng + ?Sized>(
    env: &Environment,
    rounds: usize,
    mode: Mode,
    partition: Option<&Partition>,
    rng: &mut R,
) -> Result<Episode> {
    run_episode_observed(env, rounds, mode, partition, &AnalysisOptions::default(), rng, None, |_| Ok(()))
}

/// [`run_episode`] with an observer. Monte Carlo compression draws come from
/// `analysis_rng` when given, otherwise from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn run_episode_observed<R: Rng + ?Sized>(
    env: &Environment,
    rounds: usize,
    mode: Mode,
    partition: Option<&Partition>,
    options: &AnalysisOptions,
    rng: &mut R,
    mut analysis_rng: Option<&mut dyn RngCore>,
    mut observer: impl FnMut(&RoundView<'_>) -> Result<()>,
) -> Result<Episode> {
    if rounds == 0 {
        return Err(Error::invalid("an episode needs at least one round"));
    }
    if mode == Mode::Compressed && partition.is_none() {
        return Err(Error::invalid("compressed mode needs a partition"));
    }
    let truth = env.sample_parameter(rng);
    let mut state = env.prior_state();
    let mut records = Vec::with_capacity(rounds);
    for t in 1..=rounds {
        let (record, next) = match mode {
            Mode::Plain => {
                observer(&RoundView {
                    t,
                    state: &state,
                    analysis: None,
                })?;
                let (_, mut record, next) = ts_step(&state, env, &truth, rng)?;
                record.cell = partition.map(|p| p.assign(env.action_point(&record.action)));
                (record, next)
            }
            Mode::Compressed => {
                let partition = partition.expect("checked above");
                let analysis = match analysis_rng.as_deref_mut() {
                    Some(a) => analyze_round(&state, env, partition, options, a)?,
                    None => analyze_round(&state, env, partition, options, &mut *rng)?,
                };
                observer(&RoundView {
                    t,
                    state: &state,
                    analysis: Some(&analysis),
                })?;
                compressed_step(&state, env, partition, &analysis.map, &truth, rng)?
            }
        };
        records.push(record);
        state = next;
    }
    Ok(Episode { truth, records })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationRow {
    pub seed: usize,
    pub t: usize,
    pub ts_regret: f64,
    pub compressed_regret: f64,
    /// `ts_regret − (ε + compressed_regret)`; nonpositive when item 1 holds.
    pub item1_gap: f64,
    pub ts_info: f64,
    pub compressed_info: f64,
    /// `compressed_info − ts_info`; nonpositive when item 2 holds.
    pub item2_gap: f64,
    pub statistic_entropy: f64,
    pub optimal_entropy: f64,
    /// `H(A*_ε) − H(A*)`, with exact sign.
    pub entropy_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyCheck {
    /// `H(A*_ε)` under the prior.
    pub statistic_entropy: f64,
    /// `H(A*)` under the prior.
    pub optimal_entropy: f64,
    /// Largest `H(A*_ε) − H(A*)` over the prior and every checked round.
    pub worst_gap: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub rounds: usize,
    pub seeds: usize,
    pub item1_worst_gap: f64,
    pub item2_worst_gap: f64,
    pub entropy_check: EntropyCheck,
    pub passed: bool,
    pub per_round: Vec<VerificationRow>,
}

/// Check the two compression requirements exactly along plain TS histories.
///
/// `ε` is the largest within-cell reward spread of the partition.
pub fn verify_compression_requirements(
    env: &Environment,
    partition: &Partition,
    rounds: usize,
    seeds: usize,
    base_seed: u64,
    tolerance: f64,
) -> Result<VerificationReport> {
    if !env.is_grid() {
        return Err(Error::invalid("exact verification needs a grid environment"));
    }
    if seeds == 0 {
        return Err(Error::invalid("need at least one seed"));
    }
    if !tolerance.is_finite() {
        return Err(Error::invalid(format!("tolerance must be finite, got {tolerance}")));
    }
    let epsilon = max_cell_spread(partition, env)?;
    let prior = analyze_round_exact(&env.prior_state(), env, partition)?;
    let per_seed: Vec<Vec<VerificationRow>> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let mut rng = replication_rng(base_seed, seed as u64);
            let mut rows = Vec::with_capacity(rounds);
            run_episode_observed(
                env,
                rounds,
                Mode::Plain,
                Some(partition),
                &AnalysisOptions::default(),
                &mut rng,
                None,
                |view| {
                    let a = analyze_round_exact(view.state, env, partition)?;
                    rows.push(VerificationRow {
                        seed,
                        t: view.t,
                        ts_regret: a.ts_regret,
                        compressed_regret: a.compressed_regret,
                        item1_gap: a.ts_regret - (epsilon + a.compressed_regret),
                        ts_info: a.ts_cell_info.value,
                        compressed_info: a.compressed_info.value,
                        item2_gap: a.compressed_info.value - a.ts_cell_info.value,
                        statistic_entropy: a.statistic_entropy,
                        optimal_entropy: a.optimal_entropy.unwrap_or(f64::NAN),
                        entropy_gap: -a.entropy_slack.unwrap_or(0.0),
                    });
                    Ok(())
                },
            )?;
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let per_round: Vec<VerificationRow> = per_seed.into_iter().flatten().collect();
    let worst = |f: fn(&VerificationRow) -> f64| per_round.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let item1_worst_gap = worst(|r| r.item1_gap);
    let item2_worst_gap = worst(|r| r.item2_gap);
    // H(A*) − H(A*_ε) is the mass-weighted entropy inside cells, a sum of
    // nonnegative terms, so the sign of the gap is exact.
    let entropy_worst = per_round
        .iter()
        .map(|r| r.entropy_gap)
        .fold(-prior.entropy_slack.unwrap_or(0.0), f64::max);
    let entropy_check = EntropyCheck {
        statistic_entropy: prior.statistic_entropy,
        optimal_entropy: prior.optimal_entropy.unwrap_or(f64::NAN),
        worst_gap: entropy_worst,
        holds: entropy_worst <= 0.0,
    };
    let passed = item1_worst_gap <= tolerance && item2_worst_gap <= tolerance && entropy_check.holds;
    Ok(VerificationReport {
        epsilon,
        tolerance,
        rounds,
        seeds,
        item1_worst_gap,
        item2_worst_gap,
        entropy_check,
        passed,
        per_round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_space::{build_epsilon_net_on_pool, MetricActionSpace};
    use crate::bandit::{Belief, GridMeans, GridSpec, OneToOne, RewardKind};
    use std::sync::Arc;

    fn grid(table: Vec<Vec<f64>>, prior: Option<Vec<f64>>, reward: RewardKind) -> Environment {
        let n = table.len();
        Environment::grid(GridSpec {
            actions: (0..n).map(|i| vec![i as f64 / (n - 1).max(1) as f64]).collect(),
            params: vec![],
            prior,
            means: GridMeans::Table(table),
            reward,
            clip: false,
            lipschitz: None,
            one_to_one: OneToOne::Reject,
        })
        .unwrap()
    }

    fn random_grid(rng: &mut impl Rng) -> Environment {
        let table = (0..4)
            .map(|a| {
                (0..4)
                    .map(|t| if a == t { rng.random_range(0.65..0.95) } else { rng.random_range(0.05..0.6) })
                    .collect()
            })
            .collect();
        let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
        let z: f64 = raw.iter().sum();
        let mut prior: Vec<f64> = raw.iter().map(|x| x / z).collect();
        prior[3] = 1.0 - prior[..3].iter().sum::<f64>();
        grid(table, Some(prior), RewardKind::Bernoulli)
    }

    fn two_cells(env: &Environment) -> Partition {
        let space = env.action_space();
        let net = build_epsilon_net_on_pool(space, 0.5, &[0.0], space.points().unwrap()).unwrap();
        Partition::new(net)
    }

    fn point_state(n: usize, at: usize) -> PosteriorState {
        let mut weights = vec![0.0; n];
        weights[at] = 1.0;
        PosteriorState {
            belief: Belief::Grid { weights },
            round: 0,
        }
    }

    #[test]
    fn pair_mix_near_ties() {
        let f = [0.0, 2.1590681153552116e-6];
        let g = [0.017092176658318803, 0.017091036555735826];
        let m = pair_mix_search(&[0, 1], &[0.5, 0.5], &f, &g).unwrap();
        assert!((m.q - 0.5).abs() < 1e-9);
    }

    #[test]
    fn pair_mix_examples() {
        let f = [0.3, 0.1, 0.7];
        let m = pair_mix_search(&["a", "b", "c"], &[0.2, 0.5, 0.3], &f, &f).unwrap();
        assert_eq!(m, PairMix::single("a"));

        let m = pair_mix_search(&["a", "b"], &[0.5, 0.5], &[0.0, 2.0], &[2.0, 0.0]).unwrap();
        assert_eq!(m, PairMix { a1: "a", a2: "b", q: 0.5 });

        assert!(pair_mix_search(&["a"], &[0.5], &[0.0], &[0.0]).is_err());
        assert!(pair_mix_search(&["a"], &[1.0], &[-1.0], &[0.0]).is_err());
    }

    #[test]
    fn pair_mix_small_fuzz() {
        let mut rng = replication_rng(21, 0);
        for _ in 0..1000 {
            let n = rng.random_range(1..=20);
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let z: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / z).collect();
            let f: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            let support: Vec<usize> = (0..n).collect();
            let m = pair_mix_search(&support, &w, &f, &g).unwrap();
            let fbar: f64 = w.iter().zip(&f).map(|(a, b)| a * b).sum();
            let gbar: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!(m.q * f[m.a1] + (1.0 - m.q) * f[m.a2] <= fbar + 1e-12);
            assert!(m.q * g[m.a1] + (1.0 - m.q) * g[m.a2] <= gbar + 1e-12);
            assert!((0.0..=1.0).contains(&m.q));
        }
    }

    #[test]
    fn point_mass_posterior_plays_its_optimum() {
        let env = grid(vec![vec![0.9, 0.1], vec![0.2, 0.8]], None, RewardKind::Bernoulli);
        let s = point_state(2, 1);
        let mut rng = replication_rng(0, 0);
        for _ in 0..100 {
            let (a, rec, _) = ts_step(&s, &env, &Parameter::Grid(1), &mut rng).unwrap();
            assert_eq!(a, Action::Index(1));
            assert_eq!(rec.regret, 0.0);
        }
    }

    #[test]
    fn ts_matches_posterior_optimal_law() {
        let env = grid(
            vec![vec![0.7, 0.2, 0.3], vec![0.1, 0.6, 0.2], vec![0.3, 0.4, 0.8]],
            None,
            RewardKind::Bernoulli,
        );
        let a = Action::Index(0);
        let s = env.prior_state().update(&env, &a, 1.0).unwrap().update(&env, &Action::Index(2), 0.0).unwrap();
        let law = s.optimal_action_dist(&env).unwrap();
        let mut rng = replication_rng(1, 0);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let (a, _, _) = ts_step(&s, &env, &Parameter::Grid(0), &mut rng).unwrap();
            counts[a.index().unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip(&law) {
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 3.0 * sd, "{counts:?} {law:?}");
        }
    }

    #[test]
    fn noiseless_collapse_gives_zero_regret() {
        let env = grid(vec![vec![0.9, 0.1], vec![0.2, 0.8]], None, RewardKind::Gaussian { sigma: 0.0 });
        for seed in 0..20 {
            let mut rng = replication_rng(2, seed);
            let ep = run_episode(&env, 10, Mode::Plain, None, &mut rng).unwrap();
            assert!(ep.records[1..].iter().all(|r| r.regret == 0.0));
        }
    }

    #[test]
    fn episodes() {
        let env = grid(vec![vec![0.9, 0.1], vec![0.2, 0.8]], Some(vec![1.0, 0.0]), RewardKind::Bernoulli);
        let mut rng = replication_rng(3, 0);
        let ep = run_episode(&env, 1, Mode::Plain, None, &mut rng).unwrap();
        assert_eq!(ep.cumulative_regret(), vec![0.0]);
        assert!(run_episode(&env, 0, Mode::Plain, None, &mut rng).is_err());
        assert!(run_episode(&env, 3, Mode::Compressed, None, &mut rng).is_err());

        let env = grid(vec![vec![0.8, 0.2], vec![0.2, 0.8]], None, RewardKind::Bernoulli);
        let mut ts_total = 0.0;
        let mut uniform_total = 0.0;
        for seed in 0..200 {
            let mut rng = replication_rng(4, seed);
            let ep = run_episode(&env, 100, Mode::Plain, None, &mut rng).unwrap();
            let curve = ep.cumulative_regret();
            assert!(curve.windows(2).all(|w| w[1] >= w[0]));
            ts_total += curve[99];
            let truth = ep.truth.clone();
            uniform_total += (0..100)
                .map(|_| {
                    let a = Action::Index(rng.random_range(0..2));
                    expected_regret(&env, &truth, &a)
                })
                .sum::<f64>();
        }
        assert!(ts_total < uniform_total, "{ts_total} vs {uniform_total}");
    }

    #[test]
    fn compression_map_cases() {
        let mut rng = replication_rng(5, 0);
        let env = random_grid(&mut rng);
        let part = two_cells(&env);

        let map = build_compression_map(&point_state(4, 2), &env, &part).unwrap();
        let c = map.cell(1).unwrap();
        assert_eq!(c.mix, PairMix::single(Action::Index(2)));
        assert!(map.cell(0).is_none());
        assert!(map.apply(0, &mut rng).is_err());

        let whole = Partition::whole(Arc::clone(env.action_space()), vec![0.0]);
        let a = analyze_round_exact(&env.prior_state(), &env, &whole).unwrap();
        assert!(a.compressed_regret.abs() <= 1e-15 && a.compressed_regret <= a.ts_regret);
        assert_eq!(a.compressed_info.value, 0.0);
        assert_eq!(a.statistic_entropy, 0.0);

        // per-cell mixtures never exceed the cell averages
        for _ in 0..20 {
            let env = random_grid(&mut rng);
            let part = two_cells(&env);
            let map = build_compression_map(&env.prior_state(), &env, &part).unwrap();
            for c in map.cells() {
                let at = |v: &[f64], a: &Action| v[c.support.iter().position(|b| b == a).unwrap()];
                let avg = |v: &[f64]| c.weights.iter().zip(v).map(|(w, x)| w * x).sum::<f64>();
                let mixed = |v: &[f64]| c.mix.q * at(v, &c.mix.a1) + (1.0 - c.mix.q) * at(v, &c.mix.a2);
                assert!(mixed(&c.f) <= avg(&c.f) + 1e-12);
                assert!(mixed(&c.g) <= avg(&c.g) + 1e-12);
            }
        }
    }

    #[test]
    fn compressed_steps() {
        let mut rng = replication_rng(6, 0);
        let env = random_grid(&mut rng);
        let whole = Partition::whole(Arc::clone(env.action_space()), vec![0.0]);
        let map = build_compression_map(&env.prior_state(), &env, &whole).unwrap();
        let only = map.cell(0).unwrap().mix.clone();
        assert_eq!(only.a1, only.a2);
        for _ in 0..100 {
            let (rec, _) = compressed_step(&env.prior_state(), &env, &whole, &map, &Parameter::Grid(0), &mut rng).unwrap();
            assert_eq!(rec.compressed.as_ref(), Some(&only.a1));
        }

        let mix = PairMix { a1: 0, a2: 1, q: 0.3 };
        let n = 100_000;
        let hits = (0..n).filter(|_| mix.sample(&mut rng) == 0).count();
        let sd = (0.21 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.3).abs() < 3.0 * sd);

        let part = two_cells(&env);
        let s = point_state(4, 3);
        let map = build_compression_map(&s, &env, &part).unwrap();
        let (rec, _) = compressed_step(&s, &env, &part, &map, &Parameter::Grid(3), &mut rng).unwrap();
        assert_eq!(rec.compressed, Some(Action::Index(3)));
        assert_eq!(rec.regret, 0.0);
    }

    #[test]
    fn sampled_cell_matches_statistic_law() {
        let mut rng = replication_rng(7, 0);
        let env = random_grid(&mut rng);
        let part = two_cells(&env);
        let s = env.prior_state().update(&env, &Action::Index(1), 1.0).unwrap();
        let a = analyze_round_exact(&s, &env, &part).unwrap();
        let p_v: Vec<f64> = (0..2).map(|k| a.map.cell(k).map_or(0.0, |c| c.mass)).collect();
        let n = 50_000;
        let mut hits = 0;
        for _ in 0..n {
            let (rec, _) = compressed_step(&s, &env, &part, &a.map, &Parameter::Grid(0), &mut rng).unwrap();
            hits += usize::from(rec.cell == Some(0));
        }
        let sd = (p_v[0] * p_v[1] / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p_v[0]).abs() < 3.0 * sd);
    }

    #[test]
    fn verification_edge_partitions() {
        let mut rng = replication_rng(8, 0);
        let env = random_grid(&mut rng);
        let singles = Partition::singletons(Arc::clone(env.action_space())).unwrap();
        let r = verify_compression_requirements(&env, &singles, 6, 3, 1, 1e-9).unwrap();
        assert_eq!(r.epsilon, 0.0);
        assert!(r.passed);
        for row in &r.per_round {
            assert!((row.ts_regret - row.compressed_regret).abs() < 1e-12);
            assert!((row.ts_info - row.compressed_info).abs() < 1e-12);
        }
        let whole = Partition::whole(Arc::clone(env.action_space()), vec![0.0]);
        let r = verify_compression_requirements(&env, &whole, 4, 2, 1, 1e-9).unwrap();
        assert_eq!(r.entropy_check.statistic_entropy, 0.0);
        assert!(r.passed, "{:?}", (r.item1_worst_gap, r.item2_worst_gap));
    }

    #[test]
    fn two_cell_verification() {
        let mut rng = replication_rng(9, 0);
        for i in 0..5 {
            let env = random_grid(&mut rng);
            let part = two_cells(&env);
            let r = verify_compression_requirements(&env, &part, 10, 2, i, 1e-9).unwrap();
            assert!(r.passed, "{:?}", (r.epsilon, r.item1_worst_gap, r.item2_worst_gap));
        }
    }

    #[test]
    fn monte_carlo_round_on_circle() {
        let env = Environment::from_json_str(
            r#"{"type":"linear_gaussian","actions":{"circle":16},"prior":{"mean":[0,0],"std":0.2},
                "reward":{"kind":"gaussian","sigma":0.1}}"#,
        )
        .unwrap();
        let space = Arc::new(MetricActionSpace::circle(16).unwrap());
        let net = build_epsilon_net_on_pool(&space, 0.5, &space.points().unwrap()[0], space.points().unwrap()).unwrap();
        let part = Partition::new(net);
        let mut rng = replication_rng(10, 0);
        let opts = AnalysisOptions {
            ts_ratio: true,
            ..AnalysisOptions::default()
        };
        let a = analyze_round_mc(&env.prior_state(), &env, &part, &opts, &mut rng).unwrap();
        assert!(a.ts_regret > 0.0 && a.compressed_regret > 0.0);
        assert!(a.compressed_info.value <= a.ts_cell_info.value + 1e-12);
        let ratio = a.compressed_ratio(1e-12).unwrap();
        assert!(ratio.is_finite() && ratio > 0.0);
        assert!(a.ts_ratio(1e-12).unwrap().is_some());

        let opts = AnalysisOptions::default();
        let ball = Environment::from_json_str(
            r#"{"type":"linear_gaussian","actions":"ball","prior":{"mean":[0,0],"std":0.2},
                "reward":{"kind":"gaussian","sigma":0.1}}"#,
        )
        .unwrap();
        let sphere = Arc::clone(ball.optimal_support());
        let pool = crate::action_space::candidate_pool(&sphere, &[1.0, 0.0], 512, &mut rng);
        let part = Partition::new(build_epsilon_net_on_pool(&sphere, 0.3, &[1.0, 0.0], &pool).unwrap());
        let a = analyze_round_mc(&ball.prior_state(), &ball, &part, &opts, &mut rng).unwrap();
        assert!(a.compressed_ratio(1e-12).unwrap().is_finite());
        assert!(a.ts_info.is_none());
    }

    #[test]
    fn compressed_ball_episode_survives_unseen_cells() {
        let ball = Environment::from_json_str(
            r#"{"type":"linear_gaussian","actions":"ball","prior":{"mean":[0,0],"std":0.2},
                "reward":{"kind":"gaussian","sigma":0.1}}"#,
        )
        .unwrap();
        let sphere = Arc::clone(ball.optimal_support());
        let mut rng = replication_rng(12, 0);
        let pool = crate::action_space::candidate_pool(&sphere, &[1.0, 0.0], 512, &mut rng);
        // many more cells than analysis draws
        let part = Partition::new(build_epsilon_net_on_pool(&sphere, 0.02, &[1.0, 0.0], &pool).unwrap());
        assert!(part.num_cells() > 100);
        let opts = AnalysisOptions {
            mc: McOptions {
                samples: 100,
                ..McOptions::default()
            },
            ..AnalysisOptions::default()
        };
        let ep = run_episode_observed(&ball, 20, Mode::Compressed, Some(&part), &opts, &mut rng, None, |_| Ok(())).unwrap();
        assert_eq!(ep.records.len(), 20);
    }
}
