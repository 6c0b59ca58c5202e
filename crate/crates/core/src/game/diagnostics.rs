//! Sampled estimates of the monotonicity and Lipschitz constants, and a
//! finite-difference check of the gradient oracles. These diagnose
//! misconfigured experiments; they certify nothing.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_len, ClusterGame, GameError};

pub trait PointSampler {
    fn sample(&mut self) -> DVector<f64>;
}

/// Uniform samples from a box.
#[derive(Debug, Clone)]
pub struct BoxSampler {
    lower: DVector<f64>,
    upper: DVector<f64>,
    rng: ChaCha8Rng,
}

impl BoxSampler {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>, seed: u64) -> Result<Self, GameError> {
        check_len(lower.len(), upper.len())?;
        Ok(Self {
            lower,
            upper,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// `[-half_width, half_width]^dim`.
    pub fn symmetric(dim: usize, half_width: f64, seed: u64) -> Self {
        Self {
            lower: DVector::from_element(dim, -half_width),
            upper: DVector::from_element(dim, half_width),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The default diagnostic domain `[-10, 10]^p`.
    pub fn default_for(game: &ClusterGame, seed: u64) -> Self {
        Self::symmetric(game.layout().dim(), 10.0, seed)
    }
}

impl PointSampler for BoxSampler {
    fn sample(&mut self) -> DVector<f64> {
        let rng = &mut self.rng;
        self.lower
            .zip_map(&self.upper, |lo, hi| lo + (hi - lo) * rng.random::<f64>())
    }
}

/// Box samples projected onto the joint action set. Useful when the game is
/// only monotone on its feasible set.
pub struct ProjectedSampler<'a> {
    inner: BoxSampler,
    game: &'a ClusterGame,
}

impl<'a> ProjectedSampler<'a> {
    pub fn new(inner: BoxSampler, game: &'a ClusterGame) -> Self {
        Self { inner, game }
    }
}

impl PointSampler for ProjectedSampler<'_> {
    fn sample(&mut self) -> DVector<f64> {
        let x = self.inner.sample();
        // sets were validated against the layout, so only an empty
        // intersection can fail here; fall back to the raw sample
        self.game.project_joint(&x).unwrap_or(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameDiagnostics {
    pub mu_hat: f64,
    pub l_hat: f64,
}

fn draw(sampler: &mut dyn PointSampler, n: usize, dim: usize) -> Result<Vec<DVector<f64>>, GameError> {
    let points: Vec<_> = (0..n).map(|_| sampler.sample()).collect();
    for p in &points {
        check_len(dim, p.len())?;
    }
    Ok(points)
}

fn distinct_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |a| (a + 1..n).map(move |b| (a, b)))
}

/// `min <M(x) - M(y), x - y> / ||x - y||^2` over all pairs of `n_samples`
/// sampled points. A negative value flags a non-monotone mapping.
pub fn estimate_monotonicity(
    game: &ClusterGame,
    sampler: &mut dyn PointSampler,
    n_samples: usize,
) -> Result<f64, GameError> {
    let points = draw(sampler, n_samples.max(2), game.layout().dim())?;
    let images = points
        .iter()
        .map(|x| game.game_mapping(x))
        .collect::<Result<Vec<_>, _>>()?;
    let mut mu = f64::INFINITY;
    for (a, b) in distinct_pairs(points.len()) {
        let dx = &points[a] - &points[b];
        let d2 = dx.norm_squared();
        if d2 > 0.0 {
            mu = mu.min((&images[a] - &images[b]).dot(&dx) / d2);
        }
    }
    Ok(if mu.is_finite() { mu } else { 0.0 })
}

/// `max ||grad_h f^i(x) - grad_h f^i(y)|| / ||x - y||` over sampled pairs and agents.
pub fn estimate_lipschitz(
    game: &ClusterGame,
    sampler: &mut dyn PointSampler,
    n_samples: usize,
) -> Result<f64, GameError> {
    let points = draw(sampler, n_samples.max(2), game.layout().dim())?;
    let n_agents = game.layout().agent_count();
    let grads: Vec<Vec<DVector<f64>>> = points
        .iter()
        .map(|x| (0..n_agents).map(|i| game.agent(i).own_gradient(x)).collect())
        .collect();
    let mut lip = 0.0f64;
    for (a, b) in distinct_pairs(points.len()) {
        let d = (&points[a] - &points[b]).norm();
        if d == 0.0 {
            continue;
        }
        for i in 0..n_agents {
            lip = lip.max((&grads[a][i] - &grads[b][i]).norm() / d);
        }
    }
    Ok(lip)
}

pub fn diagnose(
    game: &ClusterGame,
    sampler: &mut dyn PointSampler,
    n_samples: usize,
) -> Result<GameDiagnostics, GameError> {
    Ok(GameDiagnostics {
        mu_hat: estimate_monotonicity(game, sampler, n_samples)?,
        l_hat: estimate_lipschitz(game, sampler, n_samples)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Largest ratio of finite-difference error to its allowance; `<= 1` passes.
    pub worst_ratio: f64,
    pub worst_agent: usize,
}

impl GradientCheck {
    pub fn passed(&self) -> bool {
        self.worst_ratio <= 1.0
    }
}

/// Central finite differences of every agent cost in its own block, compared
/// to the gradient oracle with allowance `max(1e-5, 1e-4 ||grad||)`.
pub fn check_gradients(
    game: &ClusterGame,
    sampler: &mut dyn PointSampler,
    n_points: usize,
) -> Result<GradientCheck, GameError> {
    let layout = game.layout();
    let mut report = GradientCheck {
        worst_ratio: 0.0,
        worst_agent: 0,
    };
    for x in draw(sampler, n_points, layout.dim())? {
        for i in 0..layout.agent_count() {
            let agent = game.agent(i);
            let block = layout.block(layout.cluster_of(i));
            let grad = agent.own_gradient(&x);
            let mut fd = DVector::zeros(block.len());
            for (k, coord) in block.clone().enumerate() {
                let step = 1e-6 * x[coord].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[coord] += step;
                xm[coord] -= step;
                fd[k] = (agent.value(&xp) - agent.value(&xm)) / (2.0 * step);
            }
            let allowance = (1e-4 * grad.norm()).max(1e-5);
            let ratio = (&fd - &grad).norm() / allowance;
            if ratio > report.worst_ratio {
                report = GradientCheck {
                    worst_ratio: ratio,
                    worst_agent: i,
                };
            }
        }
    }
    Ok(report)
}
