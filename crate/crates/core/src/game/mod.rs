//! Multi-cluster games: clusters of agents sharing a decision block, each agent
//! holding a private cost over the joint action.

mod diagnostics;
pub(crate) mod quadratic;

pub use diagnostics::{
    check_gradients, diagnose, estimate_lipschitz, estimate_monotonicity, BoxSampler,
    GameDiagnostics, GradientCheck, PointSampler, ProjectedSampler,
};
pub use quadratic::{
    build_quadratic_game, QuadraticAgent, QuadraticAgentSpec, QuadraticGame, QuadraticGameSpec,
    RandomQuadraticSpec,
};

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

use crate::sets::{ConvexSet, SetError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid game spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Set(#[from] SetError),
}

pub fn check_len(expected: usize, found: usize) -> Result<(), GameError> {
    if expected == found {
        Ok(())
    } else {
        Err(GameError::DimensionMismatch { expected, found })
    }
}

/// Cluster sizes and decision-block dimensions. Agents are numbered
/// contiguously by cluster, and cluster `h` owns coordinates
/// `[p_<h, p_<h + p_h)` of the joint action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameLayout {
    cluster_sizes: Vec<usize>,
    block_dims: Vec<usize>,
    agent_offsets: Vec<usize>,
    block_offsets: Vec<usize>,
}

fn prefix_sums(counts: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(counts.len() + 1);
    out.push(0);
    for c in counts {
        out.push(out.last().unwrap() + c);
    }
    out
}

impl GameLayout {
    pub fn new(cluster_sizes: Vec<usize>, block_dims: Vec<usize>) -> Result<Self, GameError> {
        if cluster_sizes.is_empty() {
            return Err(GameError::InvalidLayout("no clusters".into()));
        }
        if cluster_sizes.len() != block_dims.len() {
            return Err(GameError::InvalidLayout(format!(
                "{} cluster sizes but {} block dimensions",
                cluster_sizes.len(),
                block_dims.len()
            )));
        }
        if cluster_sizes.iter().chain(&block_dims).any(|&c| c == 0) {
            return Err(GameError::InvalidLayout("counts must be >= 1".into()));
        }
        Ok(Self {
            agent_offsets: prefix_sums(&cluster_sizes),
            block_offsets: prefix_sums(&block_dims),
            cluster_sizes,
            block_dims,
        })
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_sizes.len()
    }

    pub fn agent_count(&self) -> usize {
        *self.agent_offsets.last().unwrap()
    }

    /// Joint action dimension `p`.
    pub fn dim(&self) -> usize {
        *self.block_offsets.last().unwrap()
    }

    pub fn cluster_size(&self, h: usize) -> usize {
        self.cluster_sizes[h]
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.cluster_sizes
    }

    pub fn block_dim(&self, h: usize) -> usize {
        self.block_dims[h]
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.block_dims
    }

    /// Coordinate range of cluster `h` inside the joint action.
    pub fn block(&self, h: usize) -> Range<usize> {
        self.block_offsets[h]..self.block_offsets[h + 1]
    }

    /// Global indices of the agents of cluster `h`.
    pub fn agents(&self, h: usize) -> Range<usize> {
        self.agent_offsets[h]..self.agent_offsets[h + 1]
    }

    pub fn cluster_of(&self, agent: usize) -> usize {
        self.agent_offsets.partition_point(|&o| o <= agent) - 1
    }

    /// Selects the block `x_h` from a joint vector.
    pub fn slice(&self, h: usize, x: &DVector<f64>) -> DVector<f64> {
        let r = self.block(h);
        x.rows(r.start, r.len()).into_owned()
    }
}

/// A private agent cost: value on the joint action and gradient with respect
/// to the agent's own cluster block. Implementations must be pure.
pub trait AgentCost: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn own_gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

#[derive(Clone)]
pub struct ClusterGame {
    layout: GameLayout,
    agents: Vec<Arc<dyn AgentCost>>,
    action_sets: Vec<ConvexSet>,
}

impl fmt::Debug for ClusterGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClusterGame")
            .field("layout", &self.layout)
            .field("agents", &self.agents.len())
            .field("action_sets", &self.action_sets)
            .finish()
    }
}

impl ClusterGame {
    /// `agents` are listed in global agent order (cluster by cluster).
    pub fn new(
        layout: GameLayout,
        agents: Vec<Arc<dyn AgentCost>>,
        action_sets: Vec<ConvexSet>,
    ) -> Result<Self, GameError> {
        check_len(layout.agent_count(), agents.len())?;
        check_len(layout.cluster_count(), action_sets.len())?;
        for (h, set) in action_sets.iter().enumerate() {
            check_len(layout.block_dim(h), set.dim())?;
        }
        let origin = DVector::zeros(layout.dim());
        for (i, agent) in agents.iter().enumerate() {
            let h = layout.cluster_of(i);
            check_len(layout.block_dim(h), agent.own_gradient(&origin).len())?;
        }
        Ok(Self {
            layout,
            agents,
            action_sets,
        })
    }

    /// Same game with every action set replaced by all of `R^{p_h}`.
    pub fn unconstrained(&self) -> Self {
        let action_sets = (0..self.layout.cluster_count())
            .map(|h| ConvexSet::full(self.layout.block_dim(h)))
            .collect();
        Self {
            action_sets,
            ..self.clone()
        }
    }

    pub fn with_action_sets(&self, action_sets: Vec<ConvexSet>) -> Result<Self, GameError> {
        Self::new(self.layout.clone(), self.agents.clone(), action_sets)
    }

    pub fn layout(&self) -> &GameLayout {
        &self.layout
    }

    pub fn action_set(&self, h: usize) -> &ConvexSet {
        &self.action_sets[h]
    }

    pub fn action_sets(&self) -> &[ConvexSet] {
        &self.action_sets
    }

    pub fn agent(&self, i: usize) -> &dyn AgentCost {
        self.agents[i].as_ref()
    }

    fn check_joint(&self, x: &DVector<f64>) -> Result<(), GameError> {
        check_len(self.layout.dim(), x.len())
    }

    pub fn agent_cost(&self, i: usize, x: &DVector<f64>) -> Result<f64, GameError> {
        self.check_joint(x)?;
        Ok(self.agents[i].value(x))
    }

    /// `grad_h f^i(x)` for agent `i` in cluster `h`.
    pub fn agent_gradient(&self, i: usize, x: &DVector<f64>) -> Result<DVector<f64>, GameError> {
        self.check_joint(x)?;
        Ok(self.agents[i].own_gradient(x))
    }

    /// `F_h(x) = (1/N_h) sum_{i in V_h} f^i(x)`.
    pub fn cluster_cost(&self, h: usize, x: &DVector<f64>) -> Result<f64, GameError> {
        self.check_joint(x)?;
        let agents = self.layout.agents(h);
        let n = agents.len() as f64;
        Ok(agents.map(|i| self.agents[i].value(x)).sum::<f64>() / n)
    }

    /// `grad_h F_h(x)`.
    pub fn cluster_gradient(&self, h: usize, x: &DVector<f64>) -> Result<DVector<f64>, GameError> {
        self.check_joint(x)?;
        let agents = self.layout.agents(h);
        let n = agents.len() as f64;
        let mut g = DVector::zeros(self.layout.block_dim(h));
        for i in agents {
            g += self.agents[i].own_gradient(x);
        }
        Ok(g / n)
    }

    /// The game mapping `M(x)`: cluster gradients stacked in block order.
    pub fn game_mapping(&self, x: &DVector<f64>) -> Result<DVector<f64>, GameError> {
        let mut m = DVector::zeros(self.layout.dim());
        for h in 0..self.layout.cluster_count() {
            let r = self.layout.block(h);
            m.rows_mut(r.start, r.len())
                .copy_from(&self.cluster_gradient(h, x)?);
        }
        Ok(m)
    }

    /// Blockwise projection onto `X = X_1 x ... x X_H`.
    pub fn project_joint(&self, x: &DVector<f64>) -> Result<DVector<f64>, GameError> {
        self.check_joint(x)?;
        let mut out = x.clone();
        for h in 0..self.layout.cluster_count() {
            let r = self.layout.block(h);
            let projected = self.action_sets[h].project(&self.layout.slice(h, x))?;
            out.rows_mut(r.start, r.len()).copy_from(&projected);
        }
        Ok(out)
    }

    pub fn contains_joint(&self, x: &DVector<f64>, tol: f64) -> Result<bool, GameError> {
        self.check_joint(x)?;
        for h in 0..self.layout.cluster_count() {
            if !self.action_sets[h].contains(&self.layout.slice(h, x), tol)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
