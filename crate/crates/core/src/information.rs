//! Entropy, mutual information and information ratios, in nats.
//!
//! Everything here is computed under a fixed posterior. On grid environments
//! the quantities are exact. On linear-Gaussian environments they are Monte
//! Carlo estimates over posterior draws: the reward law of each draw is known
//! in closed form, so only the mixture over draws is estimated, and the same
//! draws are shared by every action and every conditional mixture.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use serde::Serialize;

use crate::action_space::Partition;
use crate::bandit::{Action, Environment, GridModel, Parameter, PosteriorState, RewardKind};
use crate::error::{Error, Result};
use crate::thompson::{build_compression_map, StepRecord};

/// Numerators and denominators below this are treated as zero.
pub const RATIO_TOL: f64 = 1e-12;
/// Smallest Monte Carlo budget accepted by the estimators.
pub const MIN_MC_SAMPLES: usize = 100;
const PROB_TOL: f64 = 1e-9;
const JOINT_SUM_TOL: f64 = 1e-12;
const NOISELESS_GROUP_TOL: f64 = 1e-9;

/// Shannon entropy of a probability vector.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_probabilities(p, PROB_TOL)?;
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

fn check_probabilities(p: &[f64], tol: f64) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid("empty probability vector"));
    }
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::invalid("probabilities must be finite and nonnegative"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::invalid(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// Plug-in mutual information of a joint probability table.
pub fn exact_mi(joint: &DMatrix<f64>) -> Result<f64> {
    check_probabilities(joint.as_slice(), JOINT_SUM_TOL)?;
    Ok(mi_unchecked(joint))
}

fn mi_unchecked(joint: &DMatrix<f64>) -> f64 {
    let rows: Vec<f64> = joint.row_iter().map(|r| r.sum()).collect();
    let cols: Vec<f64> = joint.column_iter().map(|c| c.sum()).collect();
    let mut mi = 0.0;
    for i in 0..joint.nrows() {
        for j in 0..joint.ncols() {
            let p = joint[(i, j)];
            if p > 0.0 {
                mi += p * (p / (rows[i] * cols[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfoEstimate {
    pub value: f64,
    pub std_error: f64,
    pub method: EstimateMethod,
}

impl InfoEstimate {
    pub fn exact(value: f64) -> Self {
        InfoEstimate {
            value: clip_small_negative(value),
            std_error: 0.0,
            method: EstimateMethod::Exact,
        }
    }

    pub fn monte_carlo(value: f64, std_error: f64) -> Self {
        InfoEstimate {
            value: clip_small_negative(value),
            std_error,
            method: EstimateMethod::MonteCarlo,
        }
    }
}

fn clip_small_negative(x: f64) -> f64 {
    if (-RATIO_TOL..0.0).contains(&x) {
        0.0
    } else {
        x
    }
}

/// Squared regret over information gain, with `0/0 := 0`.
pub fn info_ratio(num_sq_regret: f64, info: &InfoEstimate, tol: f64) -> Result<f64> {
    if !(num_sq_regret >= 0.0) {
        return Err(Error::invalid(format!("squared regret must be nonnegative, got {num_sq_regret}")));
    }
    let den = info.value;
    match (num_sq_regret < tol, den < tol) {
        (true, true) => Ok(0.0),
        (false, true) => Err(Error::EstimatorInconsistency {
            numerator: num_sq_regret,
            denominator: den,
        }),
        _ => Ok(num_sq_regret / den),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfoRatioRow {
    pub t: usize,
    pub squared_regret: f64,
    pub information: f64,
    pub ratio: f64,
}

/// Per-round information ratios of one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InfoRatioTrace {
    pub rows: Vec<InfoRatioRow>,
}

impl InfoRatioTrace {
    pub fn push(&mut self, t: usize, regret: f64, info: &InfoEstimate, tol: f64) -> Result<f64> {
        let squared_regret = regret * regret;
        let ratio = info_ratio(squared_regret, info, tol)?;
        self.rows.push(InfoRatioRow {
            t,
            squared_regret,
            information: info.value,
            ratio,
        });
        Ok(ratio)
    }

    pub fn mean_ratio(&self) -> Option<f64> {
        if self.rows.is_empty() {
            None
        } else {
            Some(self.rows.iter().map(|r| r.ratio).sum::<f64>() / self.rows.len() as f64)
        }
    }
}

/// Cell of the optimal action of every grid parameter.
pub fn grid_statistic_labels(env: &Environment, partition: &Partition) -> Result<Vec<usize>> {
    let g = env
        .grid_model()
        .ok_or_else(|| Error::invalid("statistic labels need a grid environment"))?;
    let points = env.finite_points().expect("grid actions are finite");
    Ok((0..g.num_params())
        .map(|t| partition.assign(&points[g.optimal_map().forward(t)]))
        .collect())
}

/// `I(L; R(a))` under grid weights `w`, where `L = labels[θ]`.
pub fn exact_label_information(g: &GridModel, w: &[f64], labels: &[usize], a: usize) -> Result<f64> {
    match g.reward() {
        RewardKind::Gaussian { sigma } if sigma > 0.0 => Ok(gaussian_label_information(g, w, labels, a, sigma)),
        _ => {
            let (_, probs) = g.outcomes(a)?;
            let n_labels = labels.iter().max().map_or(0, |m| m + 1);
            let n_out = probs.first().map_or(0, Vec::len);
            let mut joint = DMatrix::zeros(n_labels, n_out);
            for (t, &wt) in w.iter().enumerate() {
                if wt > 0.0 {
                    for (o, &p) in probs[t].iter().enumerate() {
                        joint[(labels[t], o)] += wt * p;
                    }
                }
            }
            Ok(mi_unchecked(&joint))
        }
    }
}

/// Composite Simpson integration of the label-conditional Gaussian mixtures.
fn gaussian_label_information(g: &GridModel, w: &[f64], labels: &[usize], a: usize, sigma: f64) -> f64 {
    const STEPS_PER_SIGMA: f64 = 16.0;
    const TAIL_SIGMAS: f64 = 10.0;
    let active: Vec<usize> = (0..w.len()).filter(|&t| w[t] > 0.0).collect();
    let first = labels[active[0]];
    if active.iter().all(|&t| labels[t] == first) {
        return 0.0;
    }
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut mass = vec![0.0; n_labels];
    for &t in &active {
        mass[labels[t]] += w[t];
    }
    let (lo, hi) = active.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
        (lo.min(g.mean(a, t)), hi.max(g.mean(a, t)))
    });
    let (lo, hi) = (lo - TAIL_SIGMAS * sigma, hi + TAIL_SIGMAS * sigma);
    let mut steps = ((hi - lo) / sigma * STEPS_PER_SIGMA).ceil() as usize;
    steps += steps % 2;
    let h = (hi - lo) / steps as f64;
    let mut dens = vec![0.0; n_labels];
    let mut total = 0.0;
    for i in 0..=steps {
        let r = lo + i as f64 * h;
        dens.iter_mut().for_each(|d| *d = 0.0);
        for &t in &active {
            let z = (r - g.mean(a, t)) / sigma;
            dens[labels[t]] += w[t] * (-0.5 * z * z).exp();
        }
        let all: f64 = dens.iter().sum();
        let mut val = 0.0;
        for (k, &d) in dens.iter().enumerate() {
            if d > 0.0 {
                val += d * ((d / mass[k]) / all).ln();
            }
        }
        let coef = if i == 0 || i == steps {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        total += coef * val;
    }
    let norm = (2.0 * std::f64::consts::PI).sqrt() * sigma;
    (total * h / 3.0 / norm).max(0.0)
}

/// Tuning of the Monte Carlo estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McOptions {
    pub samples: usize,
    /// Bins per noise standard deviation in Gaussian mixtures.
    pub bins_per_sigma: f64,
    /// Half-width of the noise kernel, in standard deviations.
    pub window_sigmas: f64,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            samples: 2000,
            bins_per_sigma: 6.0,
            window_sigmas: 6.0,
        }
    }
}

impl McOptions {
    pub fn validate(&self) -> Result<()> {
        if self.samples < MIN_MC_SAMPLES {
            return Err(Error::invalid(format!(
                "Monte Carlo needs at least {MIN_MC_SAMPLES} samples, got {}",
                self.samples
            )));
        }
        if !(self.bins_per_sigma >= 1.0 && self.bins_per_sigma.is_finite()) {
            return Err(Error::invalid("bins_per_sigma must be at least 1"));
        }
        if !(self.window_sigmas >= 3.0 && self.window_sigmas.is_finite()) {
            return Err(Error::invalid("window_sigmas must be at least 3"));
        }
        Ok(())
    }
}

/// Posterior draws with their optimal actions and statistic cells.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub params: Vec<Parameter>,
    pub optimal: Vec<Action>,
    pub cells: Vec<usize>,
    pub num_cells: usize,
}

impl PosteriorDraws {
    pub fn sample<R: Rng + ?Sized>(
        state: &PosteriorState,
        env: &Environment,
        partition: &Partition,
        n: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n < MIN_MC_SAMPLES {
            return Err(Error::invalid(format!(
                "Monte Carlo needs at least {MIN_MC_SAMPLES} samples, got {n}"
            )));
        }
        let params = state.sample_many(n, rng);
        let optimal: Vec<Action> = params.iter().map(|p| env.optimal_action(p)).collect();
        let cells = optimal.iter().map(|a| partition.assign(env.action_point(a))).collect();
        Ok(PosteriorDraws {
            params,
            optimal,
            cells,
            num_cells: partition.num_cells(),
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Expected reward of `a` under every draw.
    pub fn means(&self, env: &Environment, a: &Action) -> Vec<f64> {
        self.params.iter().map(|p| env.mean_reward(a, p)).collect()
    }
}

/// Label-conditional reward mixtures of one action, built from shared draws.
///
/// `information()` is `I(L; R(a))` for the empirical label law; the mean of
/// `contribution` over the draws reproduces it exactly, which is what the
/// standard errors are computed from.
#[derive(Debug, Clone)]
pub struct RewardMixture {
    inner: MixtureKind,
    n: f64,
}

#[derive(Debug, Clone)]
enum MixtureKind {
    Constant,
    Bernoulli {
        p1: Vec<f64>,
        counts: Vec<f64>,
        p1_all: f64,
    },
    Discrete {
        values: Vec<f64>,
        /// `log_ratio[k][g]` for outcome group `g`.
        log_ratio: Vec<Vec<f64>>,
        info: f64,
    },
    Binned {
        lo: f64,
        h: f64,
        window: usize,
        kernel: Vec<f64>,
        log_ratio: Vec<Option<Vec<f64>>>,
        info: f64,
    },
}

impl RewardMixture {
    pub fn new(labels: &[usize], num_labels: usize, means: &[f64], reward: RewardKind, opts: &McOptions) -> Self {
        let n = labels.len() as f64;
        let first = labels[0];
        if labels.iter().all(|&k| k == first) {
            return RewardMixture { inner: MixtureKind::Constant, n };
        }
        let inner = match reward {
            RewardKind::Bernoulli => {
                let mut p1 = vec![0.0; num_labels];
                let mut counts = vec![0.0; num_labels];
                for (&k, &m) in labels.iter().zip(means) {
                    p1[k] += m;
                    counts[k] += 1.0;
                }
                let p1_all = p1.iter().sum::<f64>() / n;
                for (p, c) in p1.iter_mut().zip(&counts) {
                    if *c > 0.0 {
                        *p /= c;
                    }
                }
                MixtureKind::Bernoulli { p1, counts, p1_all }
            }
            RewardKind::Gaussian { sigma: 0.0 } => discrete_mixture(labels, num_labels, means),
            RewardKind::Gaussian { sigma } => binned_mixture(labels, num_labels, means, sigma, opts),
        };
        RewardMixture { inner, n }
    }

    pub fn information(&self) -> f64 {
        match &self.inner {
            MixtureKind::Constant => 0.0,
            MixtureKind::Bernoulli { p1, counts, p1_all } => {
                let mut info = 0.0;
                for (p, c) in p1.iter().zip(counts) {
                    if *c > 0.0 {
                        info += c / self.n * bernoulli_kl(*p, *p, *p1_all);
                    }
                }
                info.max(0.0)
            }
            MixtureKind::Discrete { info, .. } | MixtureKind::Binned { info, .. } => *info,
        }
    }

    /// Contribution of a draw with label `k` and reward mean `m`.
    pub fn contribution(&self, k: usize, m: f64) -> f64 {
        match &self.inner {
            MixtureKind::Constant => 0.0,
            MixtureKind::Bernoulli { p1, p1_all, .. } => bernoulli_kl(m, p1[k], *p1_all),
            MixtureKind::Discrete { values, log_ratio, .. } => {
                let g = group_of(values, m);
                log_ratio[k][g]
            }
            MixtureKind::Binned {
                lo,
                h,
                window,
                kernel,
                log_ratio,
                ..
            } => {
                let l = log_ratio[k].as_ref().expect("contribution of a label without draws");
                let x = (m - lo) / h;
                let b = (x.floor().max(0.0)) as usize;
                let frac = x - b as f64;
                let at = |b: usize| -> f64 { kernel.iter().zip(&l[b..b + 2 * window + 1]).map(|(k, l)| k * l).sum() };
                let mut d = (1.0 - frac) * at(b);
                if frac > 0.0 {
                    d += frac * at(b + 1);
                }
                d
            }
        }
    }
}

/// `Σ_r p(r) ln(q(r)/s(r))` for Bernoulli laws with success rates `p`, `q`, `s`.
fn bernoulli_kl(p: f64, q: f64, s: f64) -> f64 {
    xlog(p, q, s) + xlog(1.0 - p, 1.0 - q, 1.0 - s)
}

fn xlog(x: f64, a: f64, b: f64) -> f64 {
    if x > 0.0 {
        x * (a / b).ln()
    } else {
        0.0
    }
}

fn group_of(values: &[f64], m: f64) -> usize {
    let i = values.partition_point(|&v| v < m - NOISELESS_GROUP_TOL);
    i.min(values.len() - 1)
}

fn discrete_mixture(labels: &[usize], num_labels: usize, means: &[f64]) -> MixtureKind {
    let mut values = means.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup_by(|x, y| (*x - *y).abs() <= NOISELESS_GROUP_TOL);
    let mut counts = vec![vec![0.0; values.len()]; num_labels];
    let mut all = vec![0.0; values.len()];
    for (&k, &m) in labels.iter().zip(means) {
        let g = group_of(&values, m);
        counts[k][g] += 1.0;
        all[g] += 1.0;
    }
    let n = labels.len() as f64;
    let mut info = 0.0;
    let log_ratio = counts
        .iter()
        .map(|row| {
            let nk: f64 = row.iter().sum();
            row.iter()
                .zip(&all)
                .map(|(&c, &a)| {
                    if c > 0.0 {
                        let l = (c / nk / (a / n)).ln();
                        info += c / n * l;
                        l
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    MixtureKind::Discrete {
        values,
        log_ratio,
        info: info.max(0.0),
    }
}

fn binned_mixture(labels: &[usize], num_labels: usize, means: &[f64], sigma: f64, opts: &McOptions) -> MixtureKind {
    let h = sigma / opts.bins_per_sigma;
    let window = (opts.window_sigmas * opts.bins_per_sigma).ceil() as usize;
    let mut kernel: Vec<f64> = (0..=2 * window)
        .map(|i| {
            let z = (i as f64 - window as f64) * h / sigma;
            (-0.5 * z * z).exp()
        })
        .collect();
    let ksum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= ksum);

    let (lo, hi) = means
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| (lo.min(m), hi.max(m)));
    let bins = ((hi - lo) / h).floor() as usize + 2;
    let mut hist = vec![Vec::new(); num_labels];
    for (&k, &m) in labels.iter().zip(means) {
        if hist[k].is_empty() {
            hist[k] = vec![0.0; bins];
        }
        let x = (m - lo) / h;
        let b = x.floor() as usize;
        let frac = x - b as f64;
        hist[k][b] += 1.0 - frac;
        hist[k][b + 1] += frac;
    }
    let width = bins + 2 * window;
    let mut dens: Vec<Option<Vec<f64>>> = vec![None; num_labels];
    let mut all = vec![0.0; width];
    for (k, hk) in hist.iter().enumerate() {
        if hk.is_empty() {
            continue;
        }
        let mut d = vec![0.0; width];
        for (b, &c) in hk.iter().enumerate() {
            if c > 0.0 {
                for (slot, kv) in d[b..b + 2 * window + 1].iter_mut().zip(&kernel) {
                    *slot += c * kv;
                }
            }
        }
        all.iter_mut().zip(&d).for_each(|(a, x)| *a += x);
        dens[k] = Some(d);
    }
    let n = labels.len() as f64;
    let mut info = 0.0;
    let log_ratio = dens
        .into_iter()
        .map(|d| {
            d.map(|d| {
                let nk: f64 = d.iter().sum();
                d.iter()
                    .zip(&all)
                    .map(|(&x, &a)| {
                        if x > 0.0 {
                            let l = (x / nk / (a / n)).ln();
                            info += x / n * l;
                            l
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
        })
        .collect();
    MixtureKind::Binned {
        lo,
        h,
        window,
        kernel,
        log_ratio,
        info: info.max(0.0),
    }
}

/// Monte Carlo `I(L; A, R(A))` for a policy over actions, with `L` the draw
/// labels.
pub fn mc_policy_information(
    draws_params: &[Parameter],
    labels: &[usize],
    num_labels: usize,
    env: &Environment,
    policy: &[(Action, f64)],
    opts: &McOptions,
) -> InfoEstimate {
    let n = labels.len();
    let mut per_draw = vec![0.0; n];
    let mut value = 0.0;
    for (a, p) in policy.iter().filter(|(_, p)| *p > 0.0) {
        let means: Vec<f64> = draws_params.iter().map(|t| env.mean_reward(a, t)).collect();
        let mix = RewardMixture::new(labels, num_labels, &means, env.reward_kind(), opts);
        value += p * mix.information();
        for j in 0..n {
            per_draw[j] += p * mix.contribution(labels[j], means[j]);
        }
    }
    InfoEstimate::monte_carlo(value, std_error(&per_draw))
}

pub(crate) fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

/// How [`disintegrated_mi_step`] evaluates the information.
pub enum MiMethod<'a> {
    Exact,
    MonteCarlo {
        options: McOptions,
        rng: &'a mut dyn RngCore,
    },
}

/// `I_t(A*_ε; A, R(A))` when `A` is drawn from `policy` independently of the
/// parameter given the history.
pub fn disintegrated_mi_step(
    state: &PosteriorState,
    env: &Environment,
    statistic: &Partition,
    policy: &[(Action, f64)],
    method: MiMethod<'_>,
) -> Result<InfoEstimate> {
    let probs: Vec<f64> = policy.iter().map(|(_, p)| *p).collect();
    check_probabilities(&probs, PROB_TOL)?;
    match method {
        MiMethod::Exact => {
            let g = env
                .grid_model()
                .ok_or_else(|| Error::invalid("exact information needs a grid environment"))?;
            let w = state
                .weights()
                .ok_or_else(|| Error::invalid("posterior does not match the environment"))?;
            let labels = grid_statistic_labels(env, statistic)?;
            exact_policy_information(g, w, &labels, statistic.num_cells(), policy).map(InfoEstimate::exact)
        }
        MiMethod::MonteCarlo { options, rng } => {
            options.validate()?;
            let draws = PosteriorDraws::sample(state, env, statistic, options.samples, rng)?;
            Ok(mc_policy_information(
                &draws.params,
                &draws.cells,
                draws.num_cells,
                env,
                policy,
                &options,
            ))
        }
    }
}

/// Exact `I(L; A, R(A))` on a grid: the joint over (label, action, outcome).
pub(crate) fn exact_policy_information(
    g: &GridModel,
    w: &[f64],
    labels: &[usize],
    num_labels: usize,
    policy: &[(Action, f64)],
) -> Result<f64> {
    if let RewardKind::Gaussian { sigma } = g.reward() {
        if sigma > 0.0 {
            let mut total = 0.0;
            for (a, p) in policy.iter().filter(|(_, p)| *p > 0.0) {
                total += p * gaussian_label_information(g, w, labels, grid_index(a)?, sigma);
            }
            return Ok(total);
        }
    }
    let mut columns: Vec<(f64, Vec<Vec<f64>>)> = Vec::new();
    for (a, p) in policy.iter().filter(|(_, p)| *p > 0.0) {
        columns.push((*p, g.outcomes(grid_index(a)?)?.1));
    }
    let width: usize = columns.iter().map(|(_, probs)| probs[0].len()).sum();
    let mut joint = DMatrix::zeros(num_labels, width);
    let mut col = 0;
    for (p, probs) in &columns {
        for (t, &wt) in w.iter().enumerate() {
            if wt > 0.0 {
                for (o, &po) in probs[t].iter().enumerate() {
                    joint[(labels[t], col + o)] += p * wt * po;
                }
            }
        }
        col += probs[0].len();
    }
    Ok(mi_unchecked(&joint))
}

fn grid_index(a: &Action) -> Result<usize> {
    a.index().ok_or_else(|| Error::invalid("grid actions are indices"))
}

/// Exact chain-rule accounting for one grid episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeInfo {
    pub rounds: usize,
    /// `Σ_t E[I_t(A*_ε; A_t, R_t)]` over all histories of the played policy.
    pub expected_info_sum: f64,
    /// `Σ_t I_t(A*_ε; A_t, R_t)` along the recorded history.
    pub realized_info_sum: f64,
    /// `I(A*_ε; H^T)`.
    pub history_information: f64,
    /// `H(A*_ε)` under the prior.
    pub statistic_entropy: f64,
    pub states: usize,
}

impl EpisodeInfo {
    /// Largest violation of `Σ ≤ I(A*_ε; H^T) ≤ H(A*_ε)`; nonpositive when the chain holds.
    pub fn chain_gap(&self) -> f64 {
        (self.expected_info_sum - self.history_information).max(self.history_information - self.statistic_entropy)
    }
}

pub const DEFAULT_MAX_STATES: usize = 2_000_000;

pub fn episode_info_accounting(trace: &[StepRecord], env: &Environment, partition: &Partition) -> Result<EpisodeInfo> {
    episode_info_accounting_with(trace, env, partition, DEFAULT_MAX_STATES)
}

/// As [`episode_info_accounting`], refusing to enumerate more than
/// `max_states` histories per round. Histories are summarized by their
/// (action, outcome) counts, which determine the posterior.
pub fn episode_info_accounting_with(
    trace: &[StepRecord],
    env: &Environment,
    partition: &Partition,
    max_states: usize,
) -> Result<EpisodeInfo> {
    let g = env
        .grid_model()
        .ok_or_else(|| Error::invalid("episode accounting needs a grid environment"))?;
    let labels = grid_statistic_labels(env, partition)?;
    let k = partition.num_cells();
    let prior_v = label_law(g.prior(), &labels, k);
    let statistic_entropy = entropy_unchecked(&prior_v);
    let compressed = trace.iter().any(|r| r.compressed.is_some());
    let policy_at = |state: &PosteriorState| -> Result<Vec<(Action, f64)>> {
        if compressed {
            Ok(build_compression_map(state, env, partition)?.policy())
        } else {
            Ok(state
                .optimal_action_dist(env)?
                .into_iter()
                .enumerate()
                .filter(|(_, p)| *p > 0.0)
                .map(|(a, p)| (Action::Index(a), p))
                .collect())
        }
    };

    let mut realized_info_sum = 0.0;
    let mut state = env.prior_state();
    for r in trace {
        let policy = policy_at(&state)?;
        realized_info_sum += exact_policy_information(g, state.weights().unwrap(), &labels, k, &policy)?;
        let played = r.compressed.clone().unwrap_or_else(|| r.action.clone());
        state = state.update(env, &played, r.reward)?;
    }

    let outcome_tables: Vec<(Vec<f64>, Vec<Vec<f64>>)> =
        (0..g.num_actions()).map(|a| g.outcomes(a)).collect::<Result<_>>()?;
    let mut offsets = Vec::with_capacity(g.num_actions());
    let mut pairs = 0;
    for (values, _) in &outcome_tables {
        offsets.push(pairs);
        pairs += values.len();
    }
    let log_lik: Vec<Vec<f64>> = (0..g.num_params())
        .map(|t| {
            outcome_tables
                .iter()
                .flat_map(|(_, probs)| probs[t].iter().map(|p| p.ln()))
                .collect()
        })
        .collect();
    let weights_of = |counts: &[u32]| -> Vec<f64> {
        let logs: Vec<f64> = (0..g.num_params())
            .map(|t| {
                let mut l = g.prior()[t].ln();
                for (i, &c) in counts.iter().enumerate() {
                    if c > 0 {
                        l += f64::from(c) * log_lik[t][i];
                    }
                }
                l
            })
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / z).collect()
    };

    let mut frontier: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    frontier.insert(vec![0; pairs], 1.0);
    let mut expected_info_sum = 0.0;
    let mut states = 1;
    for round in 0..trace.len() {
        let mut next: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for (counts, &p_state) in &frontier {
            let w = weights_of(counts);
            let s = PosteriorState {
                belief: crate::bandit::Belief::Grid { weights: w.clone() },
                round,
            };
            let policy = policy_at(&s)?;
            expected_info_sum += p_state * exact_policy_information(g, &w, &labels, k, &policy)?;
            for (a, pa) in &policy {
                let ai = grid_index(a)?;
                let probs = &outcome_tables[ai].1;
                for o in 0..outcome_tables[ai].0.len() {
                    let po: f64 = w.iter().enumerate().map(|(t, wt)| wt * probs[t][o]).sum();
                    let mass = p_state * pa * po;
                    if mass > 0.0 {
                        let mut c = counts.clone();
                        c[offsets[ai] + o] += 1;
                        *next.entry(c).or_insert(0.0) += mass;
                    }
                }
            }
        }
        if next.len() > max_states {
            return Err(Error::invalid(format!(
                "history enumeration exceeds {max_states} states at round {}",
                round + 1
            )));
        }
        states += next.len();
        frontier = next;
    }

    let mut history_information = 0.0;
    if !trace.is_empty() {
        for (counts, &p_state) in &frontier {
            let post_v = label_law(&weights_of(counts), &labels, k);
            let kl: f64 = post_v
                .iter()
                .zip(&prior_v)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, q)| p * (p / q).ln())
                .sum();
            history_information += p_state * kl;
        }
    }
    Ok(EpisodeInfo {
        rounds: trace.len(),
        expected_info_sum,
        realized_info_sum,
        history_information: history_information.max(0.0),
        statistic_entropy,
        states,
    })
}

pub(crate) fn label_law(w: &[f64], labels: &[usize], k: usize) -> Vec<f64> {
    let mut p = vec![0.0; k];
    for (wt, &l) in w.iter().zip(labels) {
        p[l] += wt;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_space::MetricActionSpace;
    use crate::bandit::{GridMeans, GridSpec, OneToOne};
    use crate::rng::replication_rng;
    use std::sync::Arc;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn entropy_values() {
        assert!(close(entropy(&[0.25; 4]).unwrap(), 4f64.ln(), 1e-15));
        assert_eq!(entropy(&[1.0, 0.0]).unwrap(), 0.0);
        assert!(close(entropy(&[0.8, 0.2]).unwrap(), 0.5004, 5e-5));
        assert!(entropy(&[0.5, 0.6]).is_err());
        assert!(entropy(&[-0.1, 1.1]).is_err());
    }

    #[test]
    fn exact_mi_values() {
        let product = DMatrix::from_row_slice(2, 2, &[0.06, 0.14, 0.24, 0.56]);
        assert!(close(exact_mi(&product).unwrap(), 0.0, 1e-15));
        let diag = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        assert!(close(exact_mi(&diag).unwrap(), 2f64.ln(), 1e-15));
        let j = DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.4]);
        assert!(close(exact_mi(&j).unwrap(), 0.1927, 5e-5));
        assert!(close(exact_mi(&j.transpose()).unwrap(), exact_mi(&j).unwrap(), 1e-15));
        assert!(exact_mi(&DMatrix::from_row_slice(1, 2, &[0.5, 0.6])).is_err());
    }

    #[test]
    fn ratio_conventions() {
        let zero = InfoEstimate::exact(0.0);
        assert_eq!(info_ratio(0.0, &zero, RATIO_TOL).unwrap(), 0.0);
        assert_eq!(info_ratio(0.25, &InfoEstimate::exact(0.5), RATIO_TOL).unwrap(), 0.5);
        assert!(matches!(
            info_ratio(0.25, &zero, RATIO_TOL),
            Err(Error::EstimatorInconsistency { .. })
        ));
        assert!(info_ratio(-1.0, &zero, RATIO_TOL).is_err());
        assert_eq!(InfoEstimate::exact(-1e-14).value, 0.0);
    }

    fn three_by_three() -> Environment {
        Environment::grid(GridSpec {
            actions: vec![vec![0.0], vec![0.5], vec![1.0]],
            params: vec![],
            prior: Some(vec![0.5, 0.3, 0.2]),
            means: GridMeans::Table(vec![vec![0.8, 0.3, 0.2], vec![0.4, 0.7, 0.3], vec![0.1, 0.3, 0.6]]),
            reward: RewardKind::Bernoulli,
            clip: false,
            lipschitz: None,
            one_to_one: OneToOne::Reject,
        })
        .unwrap()
    }

    fn ts_policy(state: &PosteriorState, env: &Environment) -> Vec<(Action, f64)> {
        state
            .optimal_action_dist(env)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(a, p)| (Action::Index(a), p))
            .collect()
    }

    #[test]
    fn exact_step_matches_hand_joint() {
        let env = three_by_three();
        let part = Partition::singletons(Arc::clone(env.action_space())).unwrap();
        let s = env.prior_state();
        let policy = vec![(Action::Index(1), 1.0)];
        let got = disintegrated_mi_step(&s, &env, &part, &policy, MiMethod::Exact).unwrap().value;
        let w = [0.5, 0.3, 0.2];
        let m = [0.4, 0.7, 0.3];
        let mut joint = DMatrix::zeros(3, 2);
        for t in 0..3 {
            joint[(t, 0)] = w[t] * (1.0 - m[t]);
            joint[(t, 1)] = w[t] * m[t];
        }
        assert!(close(got, exact_mi(&joint).unwrap(), 1e-15));
        let h = entropy(&s.optimal_action_dist(&env).unwrap()).unwrap();
        let ts = disintegrated_mi_step(&s, &env, &part, &ts_policy(&s, &env), MiMethod::Exact).unwrap();
        assert!(ts.value <= h);
    }

    #[test]
    fn degenerate_posterior_carries_no_information() {
        let env = three_by_three();
        let part = Partition::singletons(Arc::clone(env.action_space())).unwrap();
        let s = PosteriorState {
            belief: crate::bandit::Belief::Grid { weights: vec![0.0, 1.0, 0.0] },
            round: 4,
        };
        let v = disintegrated_mi_step(&s, &env, &part, &ts_policy(&s, &env), MiMethod::Exact).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn noiseless_identification_reaches_statistic_entropy() {
        let env = Environment::grid(GridSpec {
            actions: vec![vec![0.0], vec![1.0]],
            params: vec![],
            prior: Some(vec![0.7, 0.3]),
            means: GridMeans::Table(vec![vec![0.9, 0.1], vec![0.2, 0.8]]),
            reward: RewardKind::Gaussian { sigma: 0.0 },
            clip: false,
            lipschitz: None,
            one_to_one: OneToOne::Reject,
        })
        .unwrap();
        let part = Partition::singletons(Arc::clone(env.action_space())).unwrap();
        let s = env.prior_state();
        let v = disintegrated_mi_step(&s, &env, &part, &ts_policy(&s, &env), MiMethod::Exact).unwrap();
        assert!(close(v.value, entropy(&[0.7, 0.3]).unwrap(), 1e-15));
    }

    #[test]
    fn gaussian_quadrature_limits() {
        let spec = |sigma: f64| GridSpec {
            actions: vec![vec![0.0], vec![1.0]],
            params: vec![],
            prior: Some(vec![0.6, 0.4]),
            means: GridMeans::Table(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            reward: RewardKind::Gaussian { sigma },
            clip: false,
            lipschitz: None,
            one_to_one: OneToOne::Reject,
        };
        let labels = [0, 1];
        let sharp = Environment::grid(spec(0.01)).unwrap();
        let v = exact_label_information(sharp.grid_model().unwrap(), &[0.6, 0.4], &labels, 0).unwrap();
        assert!(close(v, entropy(&[0.6, 0.4]).unwrap(), 1e-9));
        let blurry = Environment::grid(spec(100.0)).unwrap();
        let v = exact_label_information(blurry.grid_model().unwrap(), &[0.6, 0.4], &labels, 0).unwrap();
        // small-signal limit: p(1-p)·Δ²/(2σ²)
        assert!(close(v, 0.24 / 2e4, 1e-7), "{v}");
    }

    #[test]
    fn monte_carlo_agrees_with_exact_on_bernoulli_grid() {
        let env = three_by_three();
        let part = Partition::singletons(Arc::clone(env.action_space())).unwrap();
        let s = env.prior_state();
        let policy = ts_policy(&s, &env);
        let exact = disintegrated_mi_step(&s, &env, &part, &policy, MiMethod::Exact).unwrap();
        let mut rng = replication_rng(11, 0);
        let mc = disintegrated_mi_step(
            &s,
            &env,
            &part,
            &policy,
            MiMethod::MonteCarlo {
                options: McOptions { samples: 100_000, ..McOptions::default() },
                rng: &mut rng,
            },
        )
        .unwrap();
        assert!(close(exact.value, mc.value, 0.01), "{exact:?} {mc:?}");
        assert!(mc.std_error > 0.0);
    }

    #[test]
    fn too_few_samples() {
        let env = three_by_three();
        let part = Partition::singletons(Arc::clone(env.action_space())).unwrap();
        let s = env.prior_state();
        let mut rng = replication_rng(0, 0);
        let r = disintegrated_mi_step(
            &s,
            &env,
            &part,
            &ts_policy(&s, &env),
            MiMethod::MonteCarlo {
                options: McOptions { samples: 99, ..McOptions::default() },
                rng: &mut rng,
            },
        );
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn binned_mixture_matches_quadrature() {
        // Two well-separated labels with Gaussian noise: compare against the
        // grid quadrature for the same finite mixture.
        let sigma = 0.3;
        let mut means = Vec::new();
        let mut labels = Vec::new();
        for j in 0..2000 {
            let k = usize::from(j % 5 < 2);
            labels.push(k);
            means.push(if k == 1 { 0.5 } else { 0.0 });
        }
        let mix = RewardMixture::new(&labels, 2, &means, RewardKind::Gaussian { sigma }, &McOptions::default());
        let env = Environment::grid(GridSpec {
            actions: vec![vec![0.0], vec![1.0]],
            params: vec![],
            prior: Some(vec![0.6, 0.4]),
            means: GridMeans::Table(vec![vec![0.0, 0.5], vec![0.5, 0.0]]),
            reward: RewardKind::Gaussian { sigma },
            clip: false,
            lipschitz: None,
            one_to_one: OneToOne::Reject,
        })
        .unwrap();
        let exact = exact_label_information(env.grid_model().unwrap(), &[0.6, 0.4], &[0, 1], 0).unwrap();
        assert!(close(mix.information(), exact, 2e-3), "{} vs {exact}", mix.information());
        let mean_contrib: f64 =
            labels.iter().zip(&means).map(|(&k, &m)| mix.contribution(k, m)).sum::<f64>() / labels.len() as f64;
        assert!(close(mean_contrib, mix.information(), 1e-12));
    }

    #[test]
    fn mc_std_error_shrinks_with_samples() {
        let env = Environment::from_json_str(
            r#"{"type":"linear_gaussian","actions":{"circle":16},"prior":{"mean":[0,0],"std":0.2},
                "reward":{"kind":"gaussian","sigma":0.1}}"#,
        )
        .unwrap();
        let space = Arc::new(MetricActionSpace::circle(16).unwrap());
        let part = Partition::singletons(space).unwrap();
        let s = env.prior_state();
        let policy = vec![(Action::Index(3), 1.0)];
        let se = |n: usize| {
            let mut rng = replication_rng(5, n as u64);
            disintegrated_mi_step(
                &s,
                &env,
                &part,
                &policy,
                MiMethod::MonteCarlo {
                    options: McOptions { samples: n, ..McOptions::default() },
                    rng: &mut rng,
                },
            )
            .unwrap()
            .std_error
        };
        let (a, b, c) = (se(1_000), se(10_000), se(100_000));
        for (x, y) in [(a, b), (b, c)] {
            let ratio = x / y;
            assert!(ratio > 10f64.sqrt() / 2.0 && ratio < 10f64.sqrt() * 2.0, "{a} {b} {c}");
        }
    }

    #[test]
    fn empty_trace_accounting() {
        let env = three_by_three();
        let part = Partition::singletons(Arc::clone(env.action_space())).unwrap();
        let info = episode_info_accounting(&[], &env, &part).unwrap();
        assert_eq!((info.expected_info_sum, info.history_information), (0.0, 0.0));
        assert!(close(info.statistic_entropy, entropy(&[0.5, 0.3, 0.2]).unwrap(), 1e-15));
    }
}
