//! Bandit environments, exact posteriors and history bookkeeping.
//!
//! Two families are supported. Grid environments have a finite parameter set
//! with a prior weight vector and a reward-mean table, so every posterior and
//! every information quantity can be computed exactly. Linear-Gaussian
//! environments have a Gaussian prior over a parameter vector and rewards
//! `⟨a, θ⟩ + σ·z`, updated in closed form.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::action_space::{MetricActionSpace, Point};
use crate::error::{Error, Result};

/// An action of an environment: an index into a finite action set, or a
/// point of the continuous unit ball.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Action {
    Index(usize),
    Point(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match self {
            Action::Index(i) => Some(*i),
            Action::Point(_) => None,
        }
    }
}

/// A parameter: an index into a grid, or a vector for linear-Gaussian models.
#[derive(Debug, Clone, PartialEq)]
pub enum Parameter {
    Grid(usize),
    Vector(DVector<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardKind {
    Bernoulli,
    Gaussian { sigma: f64 },
}

/// What to do when two grid parameters share an optimal action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneToOne {
    #[default]
    Reject,
    /// Append a copy of the shared action for every extra parameter.
    Duplicate,
    /// Keep the shared action; the inverse map is undefined there.
    Allow,
}

/// π* and, on grids, its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalActionMap {
    forward: Vec<usize>,
    inverse: Vec<Option<usize>>,
}

impl OptimalActionMap {
    /// Optimal action index of grid parameter `theta`.
    pub fn forward(&self, theta: usize) -> usize {
        self.forward[theta]
    }

    /// The unique parameter whose optimal action is `a`, if any.
    pub fn inverse(&self, a: usize) -> Option<usize> {
        self.inverse.get(a).copied().flatten()
    }

    pub fn is_one_to_one(&self) -> bool {
        let hit = self.inverse.iter().filter(|x| x.is_some()).count();
        hit == self.forward.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridMeans {
    /// `table[action][param]`.
    Table(Vec<Vec<f64>>),
    /// Mean is the inner product of the action and parameter vectors.
    InnerProduct,
}

/// Input to [`Environment::grid`].
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub actions: Vec<Point>,
    /// Parameter labels or vectors; may be empty with a mean table, in which
    /// case parameter `i` is labelled `[i]`.
    pub params: Vec<Point>,
    /// Uniform when `None`.
    pub prior: Option<Vec<f64>>,
    pub means: GridMeans,
    pub reward: RewardKind,
    pub clip: bool,
    pub lipschitz: Option<f64>,
    pub one_to_one: OneToOne,
}

#[derive(Debug, Clone)]
pub struct GridModel {
    params: Vec<Point>,
    prior: Vec<f64>,
    means: Vec<Vec<f64>>,
    reward: RewardKind,
    optimal: OptimalActionMap,
}

impl GridModel {
    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_actions(&self) -> usize {
        self.means.len()
    }

    pub fn params(&self) -> &[Point] {
        &self.params
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    /// Expected reward of action `a` under parameter `theta`.
    pub fn mean(&self, a: usize, theta: usize) -> f64 {
        self.means[a][theta]
    }

    pub fn reward(&self) -> RewardKind {
        self.reward
    }

    pub fn optimal_map(&self) -> &OptimalActionMap {
        &self.optimal
    }

    /// Log-likelihood of reward `r` after playing `a`, up to a constant shared
    /// by all parameters. `-inf` marks an impossible observation.
    pub fn log_likelihood(&self, a: usize, theta: usize, r: f64) -> f64 {
        let mu = self.means[a][theta];
        match self.reward {
            RewardKind::Bernoulli => {
                if r == 1.0 {
                    mu.ln()
                } else if r == 0.0 {
                    (1.0 - mu).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            RewardKind::Gaussian { sigma } if sigma > 0.0 => {
                let z = (r - mu) / sigma;
                -0.5 * z * z
            }
            RewardKind::Gaussian { .. } => {
                if (r - mu).abs() <= NOISELESS_MATCH_TOL {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// Finite outcome set of action `a` and each parameter's outcome
    /// probabilities, `probs[theta][o]`. Only available for Bernoulli and
    /// noiseless rewards.
    pub fn outcomes(&self, a: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        match self.reward {
            RewardKind::Bernoulli => {
                let probs = (0..self.num_params())
                    .map(|t| vec![1.0 - self.means[a][t], self.means[a][t]])
                    .collect();
                Ok((vec![0.0, 1.0], probs))
            }
            RewardKind::Gaussian { sigma: 0.0 } => {
                let mut values: Vec<f64> = self.means[a].clone();
                values.sort_by(f64::total_cmp);
                values.dedup_by(|x, y| (*x - *y).abs() <= NOISELESS_MATCH_TOL);
                let probs = (0..self.num_params())
                    .map(|t| {
                        values
                            .iter()
                            .map(|&v| f64::from((v - self.means[a][t]).abs() <= NOISELESS_MATCH_TOL))
                            .collect()
                    })
                    .collect();
                Ok((values, probs))
            }
            RewardKind::Gaussian { .. } => Err(Error::invalid(
                "exact information needs discrete rewards (Bernoulli or noiseless)",
            )),
        }
    }
}

const NOISELESS_MATCH_TOL: f64 = 1e-9;
const PRIOR_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    prior_mean: DVector<f64>,
    prior_cov: DMatrix<f64>,
    sigma: f64,
}

impl LinearGaussianModel {
    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }

    pub fn prior_cov(&self) -> &DMatrix<f64> {
        &self.prior_cov
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Input to [`Environment::linear_gaussian`].
#[derive(Debug, Clone)]
pub struct LinearGaussianSpec {
    pub prior_mean: Vec<f64>,
    pub prior_cov: Vec<Vec<f64>>,
    pub sigma: f64,
    pub actions: LinearActions,
    pub clip: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinearActions {
    /// The closed unit ball; optimal actions are `θ/‖θ‖`.
    Ball,
    Finite(Vec<Point>),
}

#[derive(Debug, Clone)]
pub enum Model {
    Grid(GridModel),
    LinearGaussian(LinearGaussianModel),
}

#[derive(Debug, Clone)]
pub struct Environment {
    model: Model,
    actions: Arc<MetricActionSpace>,
    optimal_support: Arc<MetricActionSpace>,
    clip: bool,
    lipschitz: Option<f64>,
}

/// One sampled reward and whether clipping to `[-1, 1]` changed it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardDraw {
    pub value: f64,
    pub clipped: bool,
}

impl Environment {
    pub fn grid(spec: GridSpec) -> Result<Self> {
        let GridSpec {
            mut actions,
            mut params,
            prior,
            means,
            reward,
            clip,
            lipschitz,
            one_to_one,
        } = spec;
        if actions.is_empty() {
            return Err(Error::invalid("grid environment needs at least one action"));
        }
        let mut table = match means {
            GridMeans::Table(t) => {
                if t.len() != actions.len() {
                    return Err(Error::invalid(format!(
                        "mean table has {} rows for {} actions",
                        t.len(),
                        actions.len()
                    )));
                }
                let width = t[0].len();
                if t.iter().any(|row| row.len() != width) {
                    return Err(Error::invalid("mean table rows differ in length"));
                }
                if params.is_empty() {
                    params = (0..width).map(|i| vec![i as f64]).collect();
                } else if params.len() != width {
                    return Err(Error::invalid(format!(
                        "mean table has {width} columns for {} parameters",
                        params.len()
                    )));
                }
                t
            }
            GridMeans::InnerProduct => {
                let dim = actions[0].len();
                if params.iter().chain(&actions).any(|p| p.len() != dim) {
                    return Err(Error::invalid("inner-product rewards need equal action and parameter dimensions"));
                }
                actions
                    .iter()
                    .map(|a| params.iter().map(|t| dot(a, t)).collect())
                    .collect()
            }
        };
        if params.is_empty() {
            return Err(Error::invalid("grid environment needs at least one parameter"));
        }
        let prior = match prior {
            Some(w) => validate_weights(&w, params.len())?,
            None => vec![1.0 / params.len() as f64; params.len()],
        };
        for (a, row) in table.iter().enumerate() {
            for (t, &mu) in row.iter().enumerate() {
                if !mu.is_finite() {
                    return Err(Error::invalid(format!("mean of action {a} under parameter {t} is not finite")));
                }
                if matches!(reward, RewardKind::Bernoulli) && !(0.0..=1.0).contains(&mu) {
                    return Err(Error::invalid(format!(
                        "Bernoulli mean {mu} of action {a} under parameter {t} is outside [0, 1]"
                    )));
                }
                if clip && !(-1.0..=1.0).contains(&mu) {
                    return Err(Error::invalid(format!(
                        "mean {mu} of action {a} under parameter {t} is outside [-1, 1] with clipping on"
                    )));
                }
            }
        }
        if let RewardKind::Gaussian { sigma } = reward {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(Error::invalid(format!("reward noise must be finite and nonnegative, got {sigma}")));
            }
        }

        let mut forward: Vec<usize> = (0..params.len()).map(|t| argmax_column(&table, t)).collect();
        let mut owner: Vec<Option<usize>> = vec![None; actions.len()];
        let mut shared = vec![false; actions.len()];
        for (t, &a) in forward.clone().iter().enumerate() {
            match owner[a] {
                None => owner[a] = Some(t),
                Some(first) => match one_to_one {
                    OneToOne::Reject => {
                        return Err(Error::invalid(format!(
                            "parameters {first} and {t} share optimal action {a}; \
                             set one_to_one to \"duplicate\" or \"allow\""
                        )))
                    }
                    OneToOne::Allow => shared[a] = true,
                    OneToOne::Duplicate => {
                        actions.push(actions[a].clone());
                        table.push(table[a].clone());
                        owner.push(Some(t));
                        shared.push(false);
                        forward[t] = actions.len() - 1;
                    }
                },
            }
        }
        let inverse = owner
            .into_iter()
            .zip(&shared)
            .map(|(o, &s)| if s { None } else { o })
            .collect();
        let space = Arc::new(MetricActionSpace::finite(actions)?);
        Ok(Environment {
            model: Model::Grid(GridModel {
                params,
                prior,
                means: table,
                reward,
                optimal: OptimalActionMap { forward, inverse },
            }),
            actions: Arc::clone(&space),
            optimal_support: space,
            clip,
            lipschitz,
        })
    }

    pub fn linear_gaussian(spec: LinearGaussianSpec) -> Result<Self> {
        let d = spec.prior_mean.len();
        if d == 0 {
            return Err(Error::invalid("prior mean must have at least one coordinate"));
        }
        if spec.prior_cov.len() != d || spec.prior_cov.iter().any(|r| r.len() != d) {
            return Err(Error::invalid(format!("prior covariance must be {d}x{d}")));
        }
        if !spec.sigma.is_finite() || spec.sigma <= 0.0 {
            return Err(Error::invalid(format!(
                "linear-Gaussian reward noise must be positive, got {}",
                spec.sigma
            )));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| spec.prior_cov[i][j]);
        if (&cov - cov.transpose()).abs().max() > 1e-12 {
            return Err(Error::invalid("prior covariance is not symmetric"));
        }
        if cov.clone().cholesky().is_none() {
            return Err(Error::invalid("prior covariance is not positive definite"));
        }
        let (actions, optimal_support) = match spec.actions {
            LinearActions::Ball => (
                Arc::new(MetricActionSpace::unit_ball(d)?),
                Arc::new(MetricActionSpace::unit_sphere(d)?),
            ),
            LinearActions::Finite(points) => {
                if points.iter().any(|p| p.len() != d) {
                    return Err(Error::invalid(format!("actions must have dimension {d}")));
                }
                let s = Arc::new(MetricActionSpace::finite(points)?);
                (Arc::clone(&s), s)
            }
        };
        Ok(Environment {
            model: Model::LinearGaussian(LinearGaussianModel {
                prior_mean: DVector::from_vec(spec.prior_mean),
                prior_cov: cov,
                sigma: spec.sigma,
            }),
            actions,
            optimal_support,
            clip: spec.clip,
            lipschitz: Some(1.0),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn grid_model(&self) -> Option<&GridModel> {
        match &self.model {
            Model::Grid(g) => Some(g),
            Model::LinearGaussian(_) => None,
        }
    }

    pub fn linear(&self) -> Option<&LinearGaussianModel> {
        match &self.model {
            Model::LinearGaussian(l) => Some(l),
            Model::Grid(_) => None,
        }
    }

    pub fn is_grid(&self) -> bool {
        matches!(self.model, Model::Grid(_))
    }

    pub fn action_space(&self) -> &Arc<MetricActionSpace> {
        &self.actions
    }

    /// Space containing every optimal action: the action set itself, or the
    /// unit sphere when actions form the unit ball.
    pub fn optimal_support(&self) -> &Arc<MetricActionSpace> {
        &self.optimal_support
    }

    pub fn finite_points(&self) -> Option<&[Point]> {
        self.actions.points()
    }

    pub fn num_actions(&self) -> Option<usize> {
        self.finite_points().map(|p| p.len())
    }

    pub fn dimension(&self) -> usize {
        self.actions.dimension()
    }

    pub fn clip(&self) -> bool {
        self.clip
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn reward_kind(&self) -> RewardKind {
        match &self.model {
            Model::Grid(g) => g.reward,
            Model::LinearGaussian(l) => RewardKind::Gaussian { sigma: l.sigma },
        }
    }

    pub fn optimal_map(&self) -> Option<&OptimalActionMap> {
        self.grid_model().map(|g| &g.optimal)
    }

    pub fn action_point<'a>(&'a self, a: &'a Action) -> &'a [f64] {
        match a {
            Action::Index(i) => &self.finite_points().expect("index actions need a finite action set")[*i],
            Action::Point(p) => p,
        }
    }

    /// All finite actions as [`Action`] values.
    pub fn finite_actions(&self) -> Option<Vec<Action>> {
        self.num_actions().map(|n| (0..n).map(Action::Index).collect())
    }

    pub fn sample_parameter<R: Rng + ?Sized>(&self, rng: &mut R) -> Parameter {
        self.prior_state().sample(rng)
    }

    /// π*(θ). Ties go to the lowest action index; on the unit ball the zero
    /// vector maps to the first basis vector.
    pub fn optimal_action(&self, theta: &Parameter) -> Action {
        match (&self.model, theta) {
            (Model::Grid(g), Parameter::Grid(t)) => Action::Index(g.optimal.forward[*t]),
            (Model::LinearGaussian(_), Parameter::Vector(v)) => match self.finite_points() {
                Some(points) => {
                    let mut best = (0, f64::NEG_INFINITY);
                    for (i, p) in points.iter().enumerate() {
                        let r = dot(p, v.as_slice());
                        if r > best.1 {
                            best = (i, r);
                        }
                    }
                    Action::Index(best.0)
                }
                None => {
                    let norm = v.norm();
                    if norm == 0.0 {
                        let mut e = vec![0.0; v.len()];
                        e[0] = 1.0;
                        Action::Point(e)
                    } else {
                        Action::Point(v.iter().map(|x| x / norm).collect())
                    }
                }
            },
            _ => panic!("parameter kind does not match the environment"),
        }
    }

    /// E[R(a, θ)].
    pub fn mean_reward(&self, a: &Action, theta: &Parameter) -> f64 {
        match (&self.model, theta) {
            (Model::Grid(g), Parameter::Grid(t)) => {
                g.means[a.index().expect("grid actions are indices")][*t]
            }
            (Model::LinearGaussian(_), Parameter::Vector(v)) => dot(self.action_point(a), v.as_slice()),
            _ => panic!("parameter kind does not match the environment"),
        }
    }

    pub fn sample_reward<R: Rng + ?Sized>(&self, a: &Action, theta: &Parameter, rng: &mut R) -> RewardDraw {
        let mu = self.mean_reward(a, theta);
        let raw = match self.reward_kind() {
            RewardKind::Bernoulli => f64::from(rng.random::<f64>() < mu),
            RewardKind::Gaussian { sigma } => {
                if sigma == 0.0 {
                    mu
                } else {
                    mu + sigma * rng.sample::<f64, _>(StandardNormal)
                }
            }
        };
        if self.clip {
            let value = raw.clamp(-1.0, 1.0);
            RewardDraw { value, clipped: value != raw }
        } else {
            RewardDraw { value: raw, clipped: false }
        }
    }

    pub fn prior_state(&self) -> PosteriorState {
        let belief = match &self.model {
            Model::Grid(g) => Belief::Grid { weights: g.prior.clone() },
            Model::LinearGaussian(l) => Belief::Gaussian {
                mean: l.prior_mean.clone(),
                cov: l.prior_cov.clone(),
            },
        };
        PosteriorState { belief, round: 0 }
    }

    /// Parse an environment file.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: EnvFile = serde_path_to_error::deserialize(de)?;
        file.into_environment()
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }
}

fn argmax_column(table: &[Vec<f64>], t: usize) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (a, row) in table.iter().enumerate() {
        if row[t] > best.1 {
            best = (a, row[t]);
        }
    }
    best.0
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn validate_weights(w: &[f64], n: usize) -> Result<Vec<f64>> {
    if w.len() != n {
        return Err(Error::invalid(format!("prior has {} weights for {n} parameters", w.len())));
    }
    if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::invalid("prior weights must be finite and nonnegative"));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > PRIOR_SUM_TOL {
        return Err(Error::invalid(format!("prior weights sum to {total}, not 1")));
    }
    Ok(w.to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Belief {
    Grid { weights: Vec<f64> },
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
}

/// The posterior after `round` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub belief: Belief,
    pub round: usize,
}

impl PosteriorState {
    pub fn weights(&self) -> Option<&[f64]> {
        match &self.belief {
            Belief::Grid { weights } => Some(weights),
            Belief::Gaussian { .. } => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Parameter {
        self.sampler().draw(rng)
    }

    /// Draw `n` parameters, factoring the covariance once.
    pub fn sample_many<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Parameter> {
        let sampler = self.sampler();
        (0..n).map(|_| sampler.draw(rng)).collect()
    }

    fn sampler(&self) -> Sampler<'_> {
        match &self.belief {
            Belief::Grid { weights } => Sampler::Grid(weights),
            Belief::Gaussian { mean, cov } => {
                let chol = cov
                    .clone()
                    .cholesky()
                    .expect("posterior covariance stays positive definite");
                Sampler::Gaussian { mean, factor: chol.l() }
            }
        }
    }

    /// Bayes update after observing reward `r` for action `a`.
    pub fn update(&self, env: &Environment, a: &Action, r: f64) -> Result<PosteriorState> {
        let belief = match (&self.belief, env.model()) {
            (Belief::Grid { weights }, Model::Grid(g)) => {
                let ai = a.index().expect("grid actions are indices");
                let ll: Vec<f64> = (0..weights.len()).map(|t| g.log_likelihood(ai, t, r)).collect();
                let top = weights
                    .iter()
                    .zip(&ll)
                    .filter(|(w, _)| **w > 0.0)
                    .map(|(_, l)| *l)
                    .fold(f64::NEG_INFINITY, f64::max);
                if top == f64::NEG_INFINITY {
                    return Err(Error::DegeneratePosterior {
                        action: format!("{a:?}"),
                        reward: r,
                    });
                }
                let mut next: Vec<f64> = weights
                    .iter()
                    .zip(&ll)
                    .map(|(w, l)| if *w > 0.0 { w * (l - top).exp() } else { 0.0 })
                    .collect();
                let total: f64 = next.iter().sum();
                next.iter_mut().for_each(|w| *w /= total);
                Belief::Grid { weights: next }
            }
            (Belief::Gaussian { mean, cov }, Model::LinearGaussian(l)) => {
                let x = DVector::from_column_slice(env.action_point(a));
                let cx = cov * &x;
                let denom = l.sigma * l.sigma + x.dot(&cx);
                let gain = &cx / denom;
                let mean = mean + &gain * (r - x.dot(mean));
                let cov = cov - &gain * cx.transpose();
                let cov = (&cov + cov.transpose()) * 0.5;
                Belief::Gaussian { mean, cov }
            }
            _ => return Err(Error::invalid("posterior does not match the environment")),
        };
        Ok(PosteriorState {
            belief,
            round: self.round + 1,
        })
    }

    /// Law of the optimal action under this posterior, one entry per action.
    pub fn optimal_action_dist(&self, env: &Environment) -> Result<Vec<f64>> {
        let (Belief::Grid { weights }, Some(g)) = (&self.belief, env.grid_model()) else {
            return Err(Error::invalid("the optimal-action law is exact only on grid environments"));
        };
        let mut p = vec![0.0; g.num_actions()];
        for (t, w) in weights.iter().enumerate() {
            p[g.optimal.forward[t]] += w;
        }
        Ok(p)
    }
}

enum Sampler<'a> {
    Grid(&'a [f64]),
    Gaussian {
        mean: &'a DVector<f64>,
        factor: DMatrix<f64>,
    },
}

impl Sampler<'_> {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Parameter {
        match self {
            Sampler::Grid(weights) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut last = 0;
                for (t, &w) in weights.iter().enumerate() {
                    if w > 0.0 {
                        last = t;
                        acc += w;
                        if u < acc {
                            return Parameter::Grid(t);
                        }
                    }
                }
                Parameter::Grid(last)
            }
            Sampler::Gaussian { mean, factor } => {
                let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                Parameter::Vector(*mean + factor * z)
            }
        }
    }
}

pub fn sample_parameter<R: Rng + ?Sized>(env: &Environment, rng: &mut R) -> Parameter {
    env.sample_parameter(rng)
}

pub fn optimal_action(env: &Environment, theta: &Parameter) -> Action {
    env.optimal_action(theta)
}

pub fn sample_reward<R: Rng + ?Sized>(env: &Environment, a: &Action, theta: &Parameter, rng: &mut R) -> RewardDraw {
    env.sample_reward(a, theta, rng)
}

pub fn posterior_update(state: &PosteriorState, env: &Environment, a: &Action, r: f64) -> Result<PosteriorState> {
    state.update(env, a, r)
}

pub fn posterior_optimal_action_dist(state: &PosteriorState, env: &Environment) -> Result<Vec<f64>> {
    state.optimal_action_dist(env)
}

/// Ordered `(round, action, reward)` records, rounds numbered from 1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    records: Vec<(usize, Action, f64)>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, round: usize, action: Action, reward: f64) -> Result<()> {
        let expected = self.records.len() + 1;
        if round != expected {
            return Err(Error::invalid(format!("expected round {expected}, got {round}")));
        }
        self.records.push((round, action, reward));
        Ok(())
    }

    pub fn records(&self) -> &[(usize, Action, f64)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Replay the history through Bayes' rule from the prior.
    pub fn posterior(&self, env: &Environment) -> Result<PosteriorState> {
        self.records
            .iter()
            .try_fold(env.prior_state(), |s, (_, a, r)| s.update(env, a, *r))
    }
}

// --- environment files ----------------------------------------------------
//
// Flat structs rather than internally tagged enums: serde buffers tagged
// content, which would drop line and column information from errors.

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EnvType {
    Grid,
    LinearGaussian,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RewardName {
    Bernoulli,
    Gaussian,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvFile {
    #[serde(rename = "type")]
    kind: EnvType,
    actions: ActionsFile,
    #[serde(default)]
    params: Option<Vec<Point>>,
    #[serde(default)]
    prior: Option<PriorFile>,
    reward: RewardFile,
    #[serde(default)]
    clip: bool,
    #[serde(default)]
    lipschitz: Option<f64>,
    #[serde(default)]
    one_to_one: OneToOne,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RewardFile {
    kind: RewardName,
    #[serde(default)]
    sigma: Option<f64>,
    #[serde(default)]
    table: Option<Vec<Vec<f64>>>,
}

#[derive(Debug)]
enum ActionsFile {
    Ball,
    Circle(usize),
    Points(Vec<Point>),
}

impl<'de> Deserialize<'de> for ActionsFile {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::{self, MapAccess, SeqAccess, Visitor};

        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = ActionsFile;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("\"ball\", {\"circle\": n} or a list of points")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<ActionsFile, E> {
                match v {
                    "ball" => Ok(ActionsFile::Ball),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<ActionsFile, A::Error> {
                let mut points = Vec::new();
                while let Some(p) = seq.next_element::<Point>()? {
                    points.push(p);
                }
                Ok(ActionsFile::Points(points))
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<ActionsFile, A::Error> {
                let mut n = None;
                while let Some(key) = map.next_key::<String>()? {
                    if key != "circle" || n.is_some() {
                        return Err(de::Error::unknown_field(&key, &["circle"]));
                    }
                    n = Some(map.next_value::<usize>()?);
                }
                n.map(ActionsFile::Circle).ok_or_else(|| de::Error::missing_field("circle"))
            }
        }

        de.deserialize_any(V)
    }
}

#[derive(Debug)]
enum PriorFile {
    Weights(Vec<f64>),
    Gaussian(GaussianPriorFile),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianPriorFile {
    mean: Vec<f64>,
    #[serde(default)]
    cov: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    std: Option<f64>,
}

impl<'de> Deserialize<'de> for PriorFile {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::{self, MapAccess, SeqAccess, Visitor};

        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = PriorFile;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a weight list or {\"mean\": [..], \"cov\" | \"std\": ..}")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<PriorFile, A::Error> {
                let mut w = Vec::new();
                while let Some(x) = seq.next_element::<f64>()? {
                    w.push(x);
                }
                Ok(PriorFile::Weights(w))
            }

            fn visit_map<A: MapAccess<'de>>(self, map: A) -> std::result::Result<PriorFile, A::Error> {
                GaussianPriorFile::deserialize(de::value::MapAccessDeserializer::new(map)).map(PriorFile::Gaussian)
            }
        }

        de.deserialize_any(V)
    }
}

fn at(path: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::InvalidArgument(m) => Error::config(path, m),
        other => other,
    }
}

impl EnvFile {
    fn into_environment(self) -> Result<Environment> {
        if let Some(l) = self.lipschitz {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::config("lipschitz", "must be finite and nonnegative"));
            }
        }
        match self.kind {
            EnvType::Grid => self.into_grid(),
            EnvType::LinearGaussian => self.into_linear(),
        }
    }

    fn into_grid(self) -> Result<Environment> {
        let actions = match self.actions {
            ActionsFile::Points(p) => p,
            ActionsFile::Circle(n) => crate::action_space::circle_points(n),
            ActionsFile::Ball => return Err(Error::config("actions", "grid environments need finite actions")),
        };
        let prior = match self.prior {
            None => None,
            Some(PriorFile::Weights(w)) => Some(w),
            Some(PriorFile::Gaussian(_)) => return Err(Error::config("prior", "grid priors are weight lists")),
        };
        let (reward, means) = match (self.reward.kind, self.reward.sigma, self.reward.table) {
            (RewardName::Bernoulli, None, Some(t)) => (RewardKind::Bernoulli, GridMeans::Table(t)),
            (RewardName::Bernoulli, None, None) => {
                return Err(Error::config("reward.table", "Bernoulli rewards need a mean table"))
            }
            (RewardName::Bernoulli, Some(_), _) => {
                return Err(Error::config("reward.sigma", "Bernoulli rewards take no sigma"))
            }
            (RewardName::Gaussian, Some(sigma), t) => (
                RewardKind::Gaussian { sigma },
                t.map_or(GridMeans::InnerProduct, GridMeans::Table),
            ),
            (RewardName::Gaussian, None, _) => return Err(Error::config("reward.sigma", "missing field `sigma`")),
        };
        if matches!(means, GridMeans::InnerProduct) && self.params.is_none() {
            return Err(Error::config("params", "inner-product rewards need parameter vectors"));
        }
        Environment::grid(GridSpec {
            actions,
            params: self.params.unwrap_or_default(),
            prior,
            means,
            reward,
            clip: self.clip,
            lipschitz: self.lipschitz,
            one_to_one: self.one_to_one,
        })
        .map_err(at("<grid>"))
    }

    fn into_linear(self) -> Result<Environment> {
        let prior = match self.prior {
            Some(PriorFile::Gaussian(p)) => p,
            _ => return Err(Error::config("prior", "linear-Gaussian environments need {\"mean\", \"cov\" | \"std\"}")),
        };
        if self.params.is_some() || self.reward.table.is_some() {
            return Err(Error::config("<linear_gaussian>", "`params` and `reward.table` belong to grid environments"));
        }
        let sigma = match (self.reward.kind, self.reward.sigma) {
            (RewardName::Gaussian, Some(s)) => s,
            (RewardName::Gaussian, None) => return Err(Error::config("reward.sigma", "missing field `sigma`")),
            (RewardName::Bernoulli, _) => {
                return Err(Error::config("reward.kind", "linear-Gaussian environments have Gaussian rewards"))
            }
        };
        let d = prior.mean.len();
        let cov = match (prior.cov, prior.std) {
            (Some(c), None) => c,
            (None, Some(s)) => {
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::config("prior.std", "must be positive"));
                }
                (0..d)
                    .map(|i| (0..d).map(|j| if i == j { s * s } else { 0.0 }).collect())
                    .collect()
            }
            _ => return Err(Error::config("prior", "give exactly one of `cov` or `std`")),
        };
        let actions = match self.actions {
            ActionsFile::Ball => LinearActions::Ball,
            ActionsFile::Circle(n) => {
                if d != 2 {
                    return Err(Error::config("actions.circle", "circle actions need a 2-dimensional prior"));
                }
                if n == 0 {
                    return Err(Error::config("actions.circle", "need at least one action"));
                }
                LinearActions::Finite(crate::action_space::circle_points(n))
            }
            ActionsFile::Points(p) => LinearActions::Finite(p),
        };
        if self.lipschitz.is_some_and(|l| l != 1.0) {
            return Err(Error::config("lipschitz", "linear rewards over unit-norm actions are 1-Lipschitz"));
        }
        if self.one_to_one != OneToOne::Reject {
            return Err(Error::config("one_to_one", "only applies to grid environments"));
        }
        Environment::linear_gaussian(LinearGaussianSpec {
            prior_mean: prior.mean,
            prior_cov: cov,
            sigma,
            actions,
            clip: self.clip,
        })
        .map_err(at("<linear_gaussian>"))
    }
}
