//! Full-information equilibrium computation: the projected fixed-point
//! iteration `x = P_X[x - alpha M(x)]`, and a best-response verifier that
//! minimizes each cluster cost with the other blocks frozen.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::game::{ClusterGame, GameError};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;
const MAX_HALVINGS: usize = 20;
/// A residual this many times above the best one seen counts as divergence.
const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("no convergence after {iterations} iterations (residual {residual:e}, alpha {alpha:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        alpha: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Game(#[from] GameError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub x: DVector<f64>,
    /// Step size actually used, after any halvings.
    pub alpha: f64,
    pub iterations: usize,
    /// `||x - P_X[x - alpha M(x)]||` at the returned point.
    pub residual: f64,
}

/// `P_X[x - alpha M(x)]`.
pub fn fixed_point_map(
    game: &ClusterGame,
    x: &DVector<f64>,
    alpha: f64,
) -> Result<DVector<f64>, GameError> {
    let m = game.game_mapping(x)?;
    game.project_joint(&(x - m * alpha))
}

pub fn fixed_point_residual(
    game: &ClusterGame,
    x: &DVector<f64>,
    alpha: f64,
) -> Result<f64, GameError> {
    Ok((fixed_point_map(game, x, alpha)? - x).norm())
}

enum Attempt {
    Converged(FixedPoint),
    Diverged,
    Exhausted(f64),
}

fn attempt(
    game: &ClusterGame,
    start: &DVector<f64>,
    alpha: f64,
    tol: f64,
    max_iters: usize,
) -> Result<Attempt, GameError> {
    let mut x = start.clone();
    let mut best = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for k in 0..max_iters {
        let next = fixed_point_map(game, &x, alpha)?;
        residual = (&next - &x).norm();
        if !residual.is_finite() || residual > DIVERGENCE_FACTOR * best {
            return Ok(Attempt::Diverged);
        }
        // step-normalized, so the accuracy of x does not depend on alpha
        if residual <= tol * alpha.min(1.0) {
            return Ok(Attempt::Converged(FixedPoint {
                x,
                alpha,
                iterations: k,
                residual,
            }));
        }
        best = best.min(residual);
        x = next;
    }
    Ok(Attempt::Exhausted(residual))
}

/// Projected fixed-point iteration from `P_X[x0]`, stopped once
/// `||x - P_X[x - alpha M(x)]|| <= tol * min(1, alpha)`. On detected divergence
/// the step is halved and the iteration restarted, at most 20 times.
pub fn fixed_point_ne(
    game: &ClusterGame,
    alpha: f64,
    tol: f64,
    max_iters: usize,
    x0: &DVector<f64>,
) -> Result<FixedPoint, OracleError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(OracleError::InvalidArgument("alpha must be positive".into()));
    }
    if !(tol >= 0.0) {
        return Err(OracleError::InvalidArgument("tol must be nonnegative".into()));
    }
    let start = game.project_joint(x0)?;
    let mut alpha = alpha;
    for halvings in 0..=MAX_HALVINGS {
        match attempt(game, &start, alpha, tol, max_iters)? {
            Attempt::Converged(fp) => {
                log::debug!(
                    "fixed point after {} iterations, alpha {:e}, residual {:e}",
                    fp.iterations,
                    fp.alpha,
                    fp.residual
                );
                return Ok(fp);
            }
            Attempt::Exhausted(residual) => {
                return Err(OracleError::NoConvergence {
                    iterations: max_iters,
                    residual,
                    alpha,
                })
            }
            Attempt::Diverged if halvings < MAX_HALVINGS => {
                log::info!("fixed-point iteration diverged at alpha {alpha:e}; halving");
                alpha /= 2.0;
            }
            Attempt::Diverged => break,
        }
    }
    Err(OracleError::NoConvergence {
        iterations: max_iters,
        residual: f64::INFINITY,
        alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterImprovement {
    pub cluster: usize,
    pub current_cost: f64,
    pub best_cost: f64,
    /// `current_cost - best_cost`; positive means a profitable deviation exists.
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponseReport {
    pub clusters: Vec<ClusterImprovement>,
    pub passed: bool,
}

impl BestResponseReport {
    pub fn max_improvement(&self) -> f64 {
        self.clusters
            .iter()
            .map(|c| c.improvement)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestResponseSettings {
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop a descent once a step moves less than this.
    pub step_tolerance: f64,
}

impl Default for BestResponseSettings {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iters: 20_000,
            step_tolerance: 1e-12,
        }
    }
}

fn with_block(x: &DVector<f64>, start: usize, block: &DVector<f64>) -> DVector<f64> {
    let mut out = x.clone();
    out.rows_mut(start, block.len()).copy_from(block);
    out
}

/// Projected gradient with backtracking on `F_h(., x_{-h})` from `u0`.
fn descend(
    game: &ClusterGame,
    h: usize,
    x: &DVector<f64>,
    u0: DVector<f64>,
    settings: &BestResponseSettings,
) -> Result<f64, GameError> {
    let layout = game.layout();
    let start = layout.block(h).start;
    let set = game.action_set(h);
    let mut u = set.project(&u0)?;
    let mut point = with_block(x, start, &u);
    let mut value = game.cluster_cost(h, &point)?;
    let mut step = 1.0;
    for _ in 0..settings.max_iters {
        let grad = game.cluster_gradient(h, &point)?;
        step *= 2.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = set.project(&(&u - &grad * step))?;
            let d = &cand - &u;
            let cand_point = with_block(x, start, &cand);
            let cand_value = game.cluster_cost(h, &cand_point)?;
            if cand_value <= value + grad.dot(&d) + d.norm_squared() / (2.0 * step) {
                accepted = Some((cand, cand_point, cand_value, d.norm()));
                break;
            }
            step /= 2.0;
        }
        let Some((cand, cand_point, cand_value, moved)) = accepted else {
            break;
        };
        u = cand;
        point = cand_point;
        value = cand_value.min(value);
        if moved <= settings.step_tolerance * (1.0 + u.norm()) {
            break;
        }
    }
    Ok(value)
}

/// For each cluster, minimize its cost over its action set with the other
/// blocks of `x` frozen, from `x_h` and from seeded random restarts. Passes
/// iff no cluster improves by more than `tol`.
pub fn best_response_check(
    game: &ClusterGame,
    x: &DVector<f64>,
    tol: f64,
    seed: u64,
) -> Result<BestResponseReport, OracleError> {
    best_response_check_with(game, x, tol, seed, &BestResponseSettings::default())
}

pub fn best_response_check_with(
    game: &ClusterGame,
    x: &DVector<f64>,
    tol: f64,
    seed: u64,
    settings: &BestResponseSettings,
) -> Result<BestResponseReport, OracleError> {
    let layout = game.layout();
    if x.len() != layout.dim() {
        return Err(GameError::DimensionMismatch {
            expected: layout.dim(),
            found: x.len(),
        }
        .into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clusters = Vec::with_capacity(layout.cluster_count());
    for h in 0..layout.cluster_count() {
        let current = game.cluster_cost(h, x)?;
        let own = layout.slice(h, x);
        let scale = own.norm().max(1.0);
        let mut best = current;
        for r in 0..settings.restarts.max(1) {
            let u0 = if r == 0 {
                own.clone()
            } else {
                own.map(|v| v + scale * rng.random_range(-1.0..1.0))
            };
            best = best.min(descend(game, h, x, u0, settings)?);
        }
        clusters.push(ClusterImprovement {
            cluster: h,
            current_cost: current,
            best_cost: best,
            improvement: current - best,
        });
    }
    let passed = clusters.iter().all(|c| c.improvement <= tol);
    Ok(BestResponseReport { clusters, passed })
}

/// `index,value` CSV of an equilibrium.
pub fn write_vector_csv<W: Write>(writer: W, x: &DVector<f64>) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "value"])?;
    for (i, v) in x.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}
