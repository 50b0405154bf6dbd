//! Metric action spaces, greedy ε-nets and the Voronoi partitions built on
//! them.
//!
//! A [`Partition`] turns an action into a cell index; applied to the optimal
//! action it yields the quantized statistic whose entropy drives the
//! compressed regret bounds.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bandit::{Action, Environment};
use crate::error::{Error, Result};

pub type Point = Vec<f64>;

/// Default number of sampled candidates used to net a continuous space.
pub const DEFAULT_POOL_SIZE: usize = 4096;

const MEMBERSHIP_TOL: f64 = 1e-9;

/// Distance function on points of an action space.
#[derive(Clone, Default)]
pub enum Metric {
    #[default]
    Euclidean,
    Custom(Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>),
}

impl fmt::Debug for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Euclidean => f.write_str("Euclidean"),
            Metric::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Metric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => euclidean(a, b),
            Metric::Custom(d) => d(a, b),
        }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpaceKind {
    /// Closed Euclidean unit ball.
    Ball,
    /// Euclidean unit sphere (boundary of the ball).
    Sphere,
    /// Unit cube `[0, 1]^d`; the unit interval when `d = 1`.
    Cube,
    Finite(Vec<Point>),
}

/// An action set with a metric and a sampler.
#[derive(Debug, Clone)]
pub struct MetricActionSpace {
    dimension: usize,
    kind: SpaceKind,
    metric: Metric,
}

impl MetricActionSpace {
    pub fn unit_ball(dimension: usize) -> Result<Self> {
        Self::continuous(dimension, SpaceKind::Ball)
    }

    pub fn unit_sphere(dimension: usize) -> Result<Self> {
        Self::continuous(dimension, SpaceKind::Sphere)
    }

    pub fn unit_cube(dimension: usize) -> Result<Self> {
        Self::continuous(dimension, SpaceKind::Cube)
    }

    pub fn unit_interval() -> Self {
        Self::continuous(1, SpaceKind::Cube).expect("dimension 1 is valid")
    }

    fn continuous(dimension: usize, kind: SpaceKind) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("space dimension must be at least 1"));
        }
        Ok(MetricActionSpace {
            dimension,
            kind,
            metric: Metric::Euclidean,
        })
    }

    /// A finite space. All points must share one dimension and be finite.
    pub fn finite(points: Vec<Point>) -> Result<Self> {
        let dimension = match points.first() {
            Some(p) => p.len(),
            None => return Err(Error::invalid("finite action space has no points")),
        };
        if dimension == 0 {
            return Err(Error::invalid("points must have at least one coordinate"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dimension {
                return Err(Error::invalid(format!(
                    "point {i} has dimension {} but point 0 has {dimension}",
                    p.len()
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
            }
        }
        Ok(MetricActionSpace {
            dimension,
            kind: SpaceKind::Finite(points),
            metric: Metric::Euclidean,
        })
    }

    /// `n` equally spaced points on the unit circle, starting at `(1, 0)`.
    pub fn circle(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("circle needs at least one point"));
        }
        Self::finite(circle_points(n))
    }

    /// Replace the Euclidean metric by a caller-supplied distance.
    pub fn with_metric(mut self, distance: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.metric = Metric::Custom(Arc::new(distance));
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kind(&self) -> &SpaceKind {
        &self.kind
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.metric.distance(a, b)
    }

    /// The points of a finite space, `None` for continuous ones.
    pub fn points(&self) -> Option<&[Point]> {
        match &self.kind {
            SpaceKind::Finite(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.kind, SpaceKind::Finite(_))
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        if a.len() != self.dimension || a.iter().any(|x| !x.is_finite()) {
            return false;
        }
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        match &self.kind {
            SpaceKind::Ball => norm <= 1.0 + MEMBERSHIP_TOL,
            SpaceKind::Sphere => (norm - 1.0).abs() <= MEMBERSHIP_TOL,
            SpaceKind::Cube => a.iter().all(|&x| (-MEMBERSHIP_TOL..=1.0 + MEMBERSHIP_TOL).contains(&x)),
            SpaceKind::Finite(points) => points.iter().any(|p| euclidean(p, a) <= MEMBERSHIP_TOL),
        }
    }

    /// Draw one point. Ball and sphere samples are uniform; finite spaces
    /// return a uniformly chosen member.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match &self.kind {
            SpaceKind::Finite(points) => points[rng.random_range(0..points.len())].clone(),
            SpaceKind::Cube => (0..self.dimension).map(|_| rng.random::<f64>()).collect(),
            SpaceKind::Sphere => random_direction(self.dimension, rng),
            SpaceKind::Ball => {
                let dir = random_direction(self.dimension, rng);
                let radius = rng.random::<f64>().powf(1.0 / self.dimension as f64);
                dir.into_iter().map(|x| x * radius).collect()
            }
        }
    }
}

pub(crate) fn circle_points(n: usize) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let angle = std::f64::consts::TAU * i as f64 / n as f64;
            vec![angle.cos(), angle.sin()]
        })
        .collect()
}

fn random_direction<R: Rng + ?Sized>(dimension: usize, rng: &mut R) -> Point {
    loop {
        let v: Vec<f64> = (0..dimension).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// A set of centers such that every candidate point lies within `scale` of
/// one of them.
#[derive(Debug, Clone)]
pub struct EpsilonNet {
    centers: Vec<Point>,
    scale: f64,
    space: Arc<MetricActionSpace>,
}

impl EpsilonNet {
    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Number of centers, `K`.
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn space(&self) -> &Arc<MetricActionSpace> {
        &self.space
    }

    /// Largest distance from any of `points` to its nearest center.
    pub fn covering_radius(&self, points: &[Point]) -> f64 {
        points
            .iter()
            .map(|p| self.nearest(p).1)
            .fold(0.0, f64::max)
    }

    fn nearest(&self, a: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centers.iter().enumerate() {
            let d = self.space.distance(c, a);
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }
}

/// Build an ε-net by greedy farthest-point insertion over a candidate pool.
///
/// Finite spaces use all of their points as the pool; continuous spaces use
/// `seed_point` plus `pool_size` draws from the sampler.
pub fn build_epsilon_net<R: Rng + ?Sized>(
    space: &Arc<MetricActionSpace>,
    scale: f64,
    seed_point: &[f64],
    pool_size: usize,
    rng: &mut R,
) -> Result<EpsilonNet> {
    let pool = candidate_pool(space, seed_point, pool_size, rng);
    build_epsilon_net_on_pool(space, scale, seed_point, &pool)
}

/// The pool [`build_epsilon_net`] would use for the given inputs.
pub fn candidate_pool<R: Rng + ?Sized>(
    space: &MetricActionSpace,
    seed_point: &[f64],
    pool_size: usize,
    rng: &mut R,
) -> Vec<Point> {
    match space.points() {
        Some(points) => points.to_vec(),
        None => std::iter::once(seed_point.to_vec())
            .chain((0..pool_size).map(|_| space.sample(rng)))
            .collect(),
    }
}

/// Greedy farthest-point net over an explicit pool.
pub fn build_epsilon_net_on_pool(
    space: &Arc<MetricActionSpace>,
    scale: f64,
    seed_point: &[f64],
    pool: &[Point],
) -> Result<EpsilonNet> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::invalid(format!("net scale must be finite and positive, got {scale}")));
    }
    if let Some(points) = space.points() {
        if points.is_empty() {
            return Err(Error::invalid("cannot build a net on an empty space"));
        }
    }
    if !space.contains(seed_point) {
        return Err(Error::invalid(format!("seed point {seed_point:?} is not in the space")));
    }
    let mut centers = vec![seed_point.to_vec()];
    let mut gap: Vec<f64> = pool.iter().map(|p| space.distance(p, seed_point)).collect();
    loop {
        let mut far = None;
        let mut far_dist = scale;
        for (i, &d) in gap.iter().enumerate() {
            if d > far_dist {
                far_dist = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        let center = pool[i].clone();
        for (g, p) in gap.iter_mut().zip(pool) {
            *g = g.min(space.distance(p, &center));
        }
        centers.push(center);
    }
    Ok(EpsilonNet {
        centers,
        scale,
        space: Arc::clone(space),
    })
}

/// Voronoi cells of an ε-net's centers.
#[derive(Debug, Clone)]
pub struct Partition {
    net: EpsilonNet,
}

impl Partition {
    pub fn new(net: EpsilonNet) -> Self {
        Partition { net }
    }

    /// One cell per point of a finite space.
    pub fn singletons(space: Arc<MetricActionSpace>) -> Result<Self> {
        let points = space
            .points()
            .ok_or_else(|| Error::invalid("singleton partition needs a finite space"))?
            .to_vec();
        let mut centers: Vec<Point> = Vec::with_capacity(points.len());
        for p in points {
            if !centers.iter().any(|c| space.distance(c, &p) == 0.0) {
                centers.push(p);
            }
        }
        Ok(Partition {
            net: EpsilonNet {
                centers,
                scale: f64::MIN_POSITIVE,
                space,
            },
        })
    }

    /// A single cell covering the whole space, centered at `center`.
    pub fn whole(space: Arc<MetricActionSpace>, center: Point) -> Self {
        Partition {
            net: EpsilonNet {
                centers: vec![center],
                scale: f64::INFINITY,
                space,
            },
        }
    }

    pub fn net(&self) -> &EpsilonNet {
        &self.net
    }

    pub fn num_cells(&self) -> usize {
        self.net.len()
    }

    /// Index of the nearest center, ties to the lowest index.
    pub fn assign(&self, a: &[f64]) -> usize {
        self.net.nearest(a).0
    }

    /// Cell of every point of a finite space, in point order.
    pub fn cells_of(&self, points: &[Point]) -> Vec<usize> {
        points.iter().map(|p| self.assign(p)).collect()
    }
}

pub fn assign_cell(partition: &Partition, a: &[f64]) -> usize {
    partition.assign(a)
}

/// `d · ln(1 + 2/ε)`, the log-covering-number bound of the unit ball in nats.
pub fn covering_log_bound(d: usize, eps: f64) -> Result<f64> {
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid(format!("covering scale must be positive, got {eps}")));
    }
    Ok(d as f64 * (2.0 / eps).ln_1p())
}

/// Reward spread inside one cell of a grid environment.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpread {
    /// max over θ with π*(θ) in the cell and a′ in the cell of
    /// R(π*(θ), θ) − R(a′, θ).
    pub pairwise: f64,
    /// The same with a′ fixed to the center `c`,
    /// when the center is itself an action.
    pub representative: Option<f64>,
    pub members: Vec<usize>,
    /// Members that are optimal for no parameter.
    pub skipped: Vec<usize>,
}

pub fn cell_reward_spread(partition: &Partition, env: &Environment, cell: usize) -> Result<CellSpread> {
    if cell >= partition.num_cells() {
        return Err(Error::invalid(format!(
            "cell {cell} out of range for a partition with {} cells",
            partition.num_cells()
        )));
    }
    let grid = env
        .grid_model()
        .ok_or_else(|| Error::invalid("cell reward spread needs a grid environment"))?;
    let points = env.finite_points().expect("grid environments have finite actions");
    let members: Vec<usize> = (0..points.len())
        .filter(|&a| partition.assign(&points[a]) == cell)
        .collect();
    let center = &partition.net().centers()[cell];
    let center_action = (0..points.len()).find(|&a| partition.net().space().distance(&points[a], center) == 0.0);

    let mut pairwise: f64 = 0.0;
    let mut representative: f64 = 0.0;
    let mut skipped = Vec::new();
    for &a in &members {
        let thetas: Vec<usize> = (0..grid.num_params())
            .filter(|&t| grid.optimal_map().forward(t) == a)
            .collect();
        if thetas.is_empty() {
            skipped.push(a);
        }
        for theta in thetas {
            let own = grid.mean(a, theta);
            for &other in &members {
                pairwise = pairwise.max(own - grid.mean(other, theta));
            }
            if let Some(c) = center_action {
                representative = representative.max(own - grid.mean(c, theta));
            }
        }
    }
    Ok(CellSpread {
        pairwise,
        representative: center_action.map(|_| representative),
        members,
        skipped,
    })
}

/// Largest pairwise spread over all cells: the ε a partition certifies.
pub fn max_cell_spread(partition: &Partition, env: &Environment) -> Result<f64> {
    (0..partition.num_cells()).try_fold(0.0_f64, |acc, k| {
        Ok(acc.max(cell_reward_spread(partition, env, k)?.pairwise))
    })
}

/// Cell index of an environment action.
pub fn cell_of_action(partition: &Partition, env: &Environment, a: &Action) -> usize {
    partition.assign(env.action_point(a))
}
