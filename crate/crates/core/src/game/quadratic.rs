use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentCost, ClusterGame, GameError, GameLayout};
use crate::sets::{ConvexSet, ConvexSetSpec};

/// `f(x) = 1/2 x^T Q x + c^T x + k` with symmetric `Q`, differentiated in `block`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticAgent {
    q: DMatrix<f64>,
    c: DVector<f64>,
    constant: f64,
    block: Range<usize>,
}

impl QuadraticAgent {
    /// `q` is symmetrized; only `(q + q^T) / 2` affects the cost.
    pub fn new(q: DMatrix<f64>, c: DVector<f64>, constant: f64, block: Range<usize>) -> Self {
        let q = (&q + q.transpose()) * 0.5;
        Self {
            q,
            c,
            constant,
            block,
        }
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.c
    }
}

impl AgentCost for QuadraticAgent {
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x) + self.constant
    }

    fn own_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = &self.block;
        self.q.rows(r.start, r.len()) * x + self.c.rows(r.start, r.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticAgentSpec {
    pub q: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
}

/// Random fixture family. Each agent draws a symmetric coupling matrix with
/// entries in `[-coupling, coupling]` and a linear term in
/// `[-linear_scale, linear_scale]`; own blocks are then shifted until every
/// agent is convex in its block and the game Jacobian has symmetric part
/// `>= mu_min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomQuadraticSpec {
    pub seed: u64,
    pub mu_min: f64,
    pub coupling: f64,
    pub linear_scale: f64,
}

impl Default for RandomQuadraticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            mu_min: 0.5,
            coupling: 0.5,
            linear_scale: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticGameSpec {
    pub cluster_sizes: Vec<usize>,
    pub block_dims: Vec<usize>,
    /// Explicit agents in global order; takes precedence over `random`.
    #[serde(default)]
    pub agents: Option<Vec<QuadraticAgentSpec>>,
    #[serde(default)]
    pub random: Option<RandomQuadraticSpec>,
    /// One set per cluster; omitted means unconstrained.
    #[serde(default)]
    pub action_sets: Option<Vec<ConvexSetSpec>>,
}

/// A quadratic game together with its affine game mapping `M(x) = J x + r`.
#[derive(Debug, Clone)]
pub struct QuadraticGame {
    pub game: ClusterGame,
    pub jacobian: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl QuadraticGame {
    /// Solution of `J x = -r`, the equilibrium when no constraint is active.
    pub fn unconstrained_ne(&self) -> Result<DVector<f64>, GameError> {
        self.jacobian
            .clone()
            .lu()
            .solve(&(-&self.offset))
            .ok_or_else(|| GameError::InvalidSpec("singular game Jacobian".into()))
    }

    /// Smallest eigenvalue of the symmetric part of `J`: the exact
    /// strong-monotonicity constant.
    pub fn monotonicity(&self) -> f64 {
        min_eigenvalue(&((&self.jacobian + self.jacobian.transpose()) * 0.5))
    }
}

fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym.clone()).eigenvalues.min()
}

fn game_jacobian(layout: &GameLayout, agents: &[QuadraticAgent]) -> (DMatrix<f64>, DVector<f64>) {
    let p = layout.dim();
    let mut jac = DMatrix::zeros(p, p);
    let mut offset = DVector::zeros(p);
    for h in 0..layout.cluster_count() {
        let r = layout.block(h);
        let n = layout.cluster_size(h) as f64;
        for i in layout.agents(h) {
            let a = &agents[i];
            let mut rows = jac.rows_mut(r.start, r.len());
            rows += a.q.rows(r.start, r.len()) / n;
            let mut off = offset.rows_mut(r.start, r.len());
            off += a.c.rows(r.start, r.len()) / n;
        }
    }
    (jac, offset)
}

fn random_agents(layout: &GameLayout, spec: &RandomQuadraticSpec) -> Vec<QuadraticAgent> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = layout.dim();
    let mut agents = Vec::with_capacity(layout.agent_count());
    for i in 0..layout.agent_count() {
        let block = layout.block(layout.cluster_of(i));
        let raw = DMatrix::from_fn(p, p, |_, _| rng.random_range(-spec.coupling..=spec.coupling));
        let c = DVector::from_fn(p, |_, _| {
            rng.random_range(-spec.linear_scale..=spec.linear_scale)
        });
        let mut agent = QuadraticAgent::new(raw, c, 0.0, block.clone());
        // convex in the own block, with a little margin
        let own = agent
            .q
            .view((block.start, block.start), (block.len(), block.len()))
            .into_owned();
        let lam = min_eigenvalue(&own);
        if lam < 0.1 {
            shift_own_block(&mut agent, 0.1 - lam);
        }
        agents.push(agent);
    }
    agents
}

fn shift_own_block(agent: &mut QuadraticAgent, amount: f64) {
    for k in agent.block.clone() {
        agent.q[(k, k)] += amount;
    }
}

/// Builds a quadratic game from explicit agent data or from the seeded random
/// family. Random games are shifted to satisfy `mu_min`.
pub fn build_quadratic_game(spec: &QuadraticGameSpec) -> Result<QuadraticGame, GameError> {
    let layout = GameLayout::new(spec.cluster_sizes.clone(), spec.block_dims.clone())?;
    let p = layout.dim();
    let mut agents = match (&spec.agents, &spec.random) {
        (Some(list), _) => {
            super::check_len(layout.agent_count(), list.len())?;
            list.iter()
                .enumerate()
                .map(|(i, a)| {
                    if a.q.len() != p || a.q.iter().any(|row| row.len() != p) || a.c.len() != p {
                        return Err(GameError::InvalidSpec(format!(
                            "agent {i}: q must be {p}x{p} and c of length {p}"
                        )));
                    }
                    let q = DMatrix::from_fn(p, p, |r, s| a.q[r][s]);
                    let block = layout.block(layout.cluster_of(i));
                    Ok(QuadraticAgent::new(q, DVector::from_column_slice(&a.c), a.constant, block))
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        (None, Some(random)) => random_agents(&layout, random),
        (None, None) => {
            return Err(GameError::InvalidSpec(
                "either `agents` or `random` must be given".into(),
            ))
        }
    };
    if let (None, Some(random)) = (&spec.agents, &spec.random) {
        let (jac, _) = game_jacobian(&layout, &agents);
        let lam = min_eigenvalue(&((&jac + jac.transpose()) * 0.5));
        if lam < random.mu_min {
            // every cluster average picks up the same diagonal shift
            let shift = random.mu_min - lam;
            agents.iter_mut().for_each(|a| shift_own_block(a, shift));
        }
    }
    let action_sets = match &spec.action_sets {
        Some(sets) => {
            super::check_len(layout.cluster_count(), sets.len())?;
            sets.iter()
                .map(ConvexSetSpec::build)
                .collect::<Result<Vec<_>, _>>()?
        }
        None => (0..layout.cluster_count())
            .map(|h| ConvexSet::full(layout.block_dim(h)))
            .collect(),
    };
    let (jacobian, offset) = game_jacobian(&layout, &agents);
    let erased: Vec<Arc<dyn AgentCost>> = agents
        .into_iter()
        .map(|a| Arc::new(a) as Arc<dyn AgentCost>)
        .collect();
    let game = ClusterGame::new(layout, erased, action_sets)?;
    Ok(QuadraticGame {
        game,
        jacobian,
        offset,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nalgebra::dvector;

    /// f1 = (x1-1)^2 + 0.5 x1 x2, f2 = (x2-2)^2 + 0.5 x1 x2, one agent per cluster.
    pub(crate) fn two_cluster_spec() -> QuadraticGameSpec {
        QuadraticGameSpec {
            cluster_sizes: vec![1, 1],
            block_dims: vec![1, 1],
            agents: Some(vec![
                QuadraticAgentSpec {
                    q: vec![vec![2.0, 0.5], vec![0.5, 0.0]],
                    c: vec![-2.0, 0.0],
                    constant: 1.0,
                },
                QuadraticAgentSpec {
                    q: vec![vec![0.0, 0.5], vec![0.5, 2.0]],
                    c: vec![0.0, -4.0],
                    constant: 4.0,
                },
            ]),
            random: None,
            action_sets: None,
        }
    }

    #[test]
    fn two_cluster_game_matches_hand_derivation() {
        let qg = build_quadratic_game(&two_cluster_spec()).unwrap();
        let g = &qg.game;
        assert_eq!(g.game_mapping(&dvector![0.0, 0.0]).unwrap(), dvector![-2.0, -4.0]);
        // hand gradients: d/dx1 f1 = 2x1 - 2 + 0.5x2, d/dx2 f2 = 2x2 - 4 + 0.5x1
        let x = dvector![0.3, -1.7];
        let m = g.game_mapping(&x).unwrap();
        assert!((m[0] - (2.0 * 0.3 - 2.0 + 0.5 * -1.7)).abs() < 1e-14);
        assert!((m[1] - (2.0 * -1.7 - 4.0 + 0.5 * 0.3)).abs() < 1e-14);
        let value = (0.3f64 - 1.0).powi(2) + 0.5 * 0.3 * -1.7;
        assert!((g.cluster_cost(0, &x).unwrap() - value).abs() < 1e-14);

        let ne = qg.unconstrained_ne().unwrap();
        assert!((ne[0] - 2.0 / 3.75).abs() < 1e-12);
        assert!((ne[1] - 7.0 / 3.75).abs() < 1e-12);
        assert!(g.game_mapping(&ne).unwrap().amax() < 1e-9);
        assert!((qg.monotonicity() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn identity_agents_without_coupling() {
        let spec = QuadraticGameSpec {
            cluster_sizes: vec![1, 1],
            block_dims: vec![1, 1],
            agents: Some(vec![
                QuadraticAgentSpec {
                    q: vec![vec![1.0, 0.0], vec![0.0, 0.0]],
                    c: vec![-3.0, 0.0],
                    constant: 0.0,
                },
                QuadraticAgentSpec {
                    q: vec![vec![0.0, 0.0], vec![0.0, 1.0]],
                    c: vec![0.0, 2.0],
                    constant: 0.0,
                },
            ]),
            random: None,
            action_sets: None,
        };
        let ne = build_quadratic_game(&spec).unwrap().unconstrained_ne().unwrap();
        assert_eq!(ne, dvector![3.0, -2.0]);
    }

    #[test]
    fn random_games_are_deterministic_and_monotone() {
        let spec = QuadraticGameSpec {
            cluster_sizes: vec![4, 4, 4],
            block_dims: vec![2, 2, 2],
            agents: None,
            random: Some(RandomQuadraticSpec {
                seed: 11,
                mu_min: 0.8,
                ..Default::default()
            }),
            action_sets: None,
        };
        let a = build_quadratic_game(&spec).unwrap();
        let b = build_quadratic_game(&spec).unwrap();
        assert_eq!(a.jacobian, b.jacobian);
        assert_eq!(a.offset, b.offset);
        assert!(a.monotonicity() >= 0.8 - 1e-12);
        let x = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        let direct = &a.jacobian * &x + &a.offset;
        assert!((a.game.game_mapping(&x).unwrap() - direct).amax() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = two_cluster_spec();
        spec.agents.as_mut().unwrap()[0].c = vec![1.0];
        assert!(matches!(build_quadratic_game(&spec), Err(GameError::InvalidSpec(_))));
        let mut spec = two_cluster_spec();
        spec.agents = None;
        assert!(matches!(build_quadratic_game(&spec), Err(GameError::InvalidSpec(_))));
        let mut spec = two_cluster_spec();
        spec.action_sets = Some(vec![ConvexSetSpec::Full { dim: 1 }]);
        assert!(matches!(
            build_quadratic_game(&spec),
            Err(GameError::DimensionMismatch { .. })
        ));
    }
}
