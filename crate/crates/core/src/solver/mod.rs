//! Distributed equilibrium seeking: row-stochastic consensus on the joint
//! estimates, column-stochastic gradient tracking inside each cluster and a
//! projected, averaged step on the agent's own block.

mod metrics;

pub use metrics::{
    consensus_error, optimality_gap, tracking_error, write_matrix_csv, write_metrics_csv,
    RoundMetrics, METRICS_HEADER,
};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{ClusterGame, GameError, GameLayout};
use crate::graph::{
    perron_left, perron_right, sigma_c, sigma_r, weighted_norm, DirectedGraph, GraphError,
    RowContraction, StochasticKind, WeightMatrix,
};
use crate::sets::SetError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{graph} graph is not strongly connected")]
    NotStronglyConnected { graph: String },
    #[error("{graph} graph has no self-loop at node {node}")]
    MissingSelfLoop { graph: String, node: usize },
    #[error("non-finite iterate at round {round}: {detail}")]
    NonFiniteIterate { round: usize, detail: String },
    #[error("invalid solver config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Set(#[from] SetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub max_rounds: usize,
    /// Stop once `||z(k) - z(k-1)||_phi` falls to this value.
    pub gap_tolerance: f64,
    pub seed: u64,
    pub record_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            gamma: 0.5,
            max_rounds: 10_000,
            gap_tolerance: 1e-10,
            seed: 0,
            record_every: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be positive");
        }
        if !(self.gap_tolerance >= 0.0) {
            return bad("gap_tolerance must be nonnegative");
        }
        if self.record_every == 0 {
            return bad("record_every must be positive");
        }
        Ok(())
    }
}

/// Communication structure: the inter-cluster graph over all agents with its
/// row-stochastic `R`, and one intra-cluster graph per cluster with its
/// column-stochastic `C_h`. Perron vectors are computed once.
#[derive(Debug, Clone)]
pub struct Network {
    graph: DirectedGraph,
    r: WeightMatrix,
    phi: DVector<f64>,
    cluster_graphs: Vec<DirectedGraph>,
    c: Vec<WeightMatrix>,
    pis: Vec<DVector<f64>>,
}

fn check_graph(graph: &DirectedGraph, name: &str) -> Result<(), SolverError> {
    if let Some(node) = (0..graph.node_count()).find(|&i| !graph.has_edge(i, i)) {
        return Err(SolverError::MissingSelfLoop {
            graph: name.to_string(),
            node,
        });
    }
    if !graph.is_strongly_connected() {
        return Err(SolverError::NotStronglyConnected {
            graph: name.to_string(),
        });
    }
    Ok(())
}

fn check_dim(expected: usize, found: usize) -> Result<(), SolverError> {
    if expected == found {
        Ok(())
    } else {
        Err(SolverError::DimensionMismatch { expected, found })
    }
}

impl Network {
    pub fn new(
        graph: DirectedGraph,
        r: WeightMatrix,
        cluster_graphs: Vec<DirectedGraph>,
        c: Vec<WeightMatrix>,
    ) -> Result<Self, SolverError> {
        check_graph(&graph, "inter-cluster")?;
        check_dim(graph.node_count(), r.size())?;
        if r.kind() != StochasticKind::RowStochastic {
            return Err(GraphError::WrongKind {
                expected: StochasticKind::RowStochastic,
            }
            .into());
        }
        check_dim(cluster_graphs.len(), c.len())?;
        for (h, (g, ch)) in cluster_graphs.iter().zip(&c).enumerate() {
            check_graph(g, &format!("cluster {h}"))?;
            check_dim(g.node_count(), ch.size())?;
        }
        let phi = perron_left(&r)?;
        let pis = c.iter().map(perron_right).collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            graph,
            r,
            phi,
            cluster_graphs,
            c,
            pis,
        })
    }

    /// Uniform weights on the given graphs.
    pub fn uniform(
        graph: DirectedGraph,
        cluster_graphs: Vec<DirectedGraph>,
    ) -> Result<Self, SolverError> {
        check_graph(&graph, "inter-cluster")?;
        for (h, g) in cluster_graphs.iter().enumerate() {
            check_graph(g, &format!("cluster {h}"))?;
        }
        let r = WeightMatrix::uniform_row_stochastic(&graph)?;
        let c = cluster_graphs
            .iter()
            .map(WeightMatrix::uniform_column_stochastic)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(graph, r, cluster_graphs, c)
    }

    /// Directed cycles with self-loops: one through all agents, one through
    /// each cluster; uniform weights.
    pub fn cycles(layout: &GameLayout) -> Result<Self, SolverError> {
        let graph = DirectedGraph::cycle(layout.agent_count(), true)?;
        let clusters = layout
            .cluster_sizes()
            .iter()
            .map(|&n| DirectedGraph::cycle(n, true))
            .collect::<Result<Vec<_>, _>>()?;
        Self::uniform(graph, clusters)
    }

    /// Checks that agent and cluster counts agree with `layout`.
    pub fn check_layout(&self, layout: &GameLayout) -> Result<(), SolverError> {
        check_dim(layout.agent_count(), self.r.size())?;
        check_dim(layout.cluster_count(), self.c.len())?;
        for (h, ch) in self.c.iter().enumerate() {
            check_dim(layout.cluster_size(h), ch.size())?;
        }
        Ok(())
    }

    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn r(&self) -> &WeightMatrix {
        &self.r
    }

    pub fn phi(&self) -> &DVector<f64> {
        &self.phi
    }

    pub fn cluster_graphs(&self) -> &[DirectedGraph] {
        &self.cluster_graphs
    }

    pub fn c(&self) -> &[WeightMatrix] {
        &self.c
    }

    pub fn pis(&self) -> &[DVector<f64>] {
        &self.pis
    }

    pub fn sigma_r(&self) -> Result<RowContraction, SolverError> {
        Ok(sigma_r(&self.r, &self.phi, &self.graph)?)
    }

    pub fn sigma_c(&self) -> Result<f64, SolverError> {
        Ok(sigma_c(
            self.c
                .iter()
                .zip(&self.pis)
                .zip(&self.cluster_graphs)
                .map(|((c, pi), g)| (c, pi, g)),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Initialization {
    Zero,
    /// Entries uniform in `[-half_width, half_width]`, seeded from the solver config.
    Random { half_width: f64 },
    Given(DMatrix<f64>),
}

impl Default for Initialization {
    fn default() -> Self {
        Self::Zero
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// Row `i` is agent `i`'s estimate of the joint action.
    pub z: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// `y[h]` has one row per agent of cluster `h`.
    pub y: Vec<DMatrix<f64>>,
    pub round: usize,
}

fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// Own-block gradients `grad_h f^i(v^i)` stacked per cluster.
pub fn gradients(game: &ClusterGame, v: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>, SolverError> {
    let layout = game.layout();
    check_dim(layout.agent_count(), v.nrows())?;
    check_dim(layout.dim(), v.ncols())?;
    (0..layout.cluster_count())
        .map(|h| {
            let agents = layout.agents(h);
            let mut g = DMatrix::zeros(agents.len(), layout.block_dim(h));
            for (r, i) in agents.enumerate() {
                let grad = game.agent_gradient(i, &row(v, i))?;
                g.row_mut(r).copy_from(&grad.transpose());
            }
            Ok(g)
        })
        .collect()
}

/// Builds the round-0 state: own blocks projected onto their action sets,
/// `v = z` and `y` equal to the own-block gradients.
pub fn init_state(
    game: &ClusterGame,
    init: &Initialization,
    seed: u64,
) -> Result<SolverState, SolverError> {
    let layout = game.layout();
    let (n, p) = (layout.agent_count(), layout.dim());
    let mut z = match init {
        Initialization::Zero => DMatrix::zeros(n, p),
        Initialization::Random { half_width } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            DMatrix::from_fn(n, p, |_, _| rng.random_range(-half_width..=*half_width))
        }
        Initialization::Given(m) => {
            check_dim(n, m.nrows())?;
            check_dim(p, m.ncols())?;
            m.clone()
        }
    };
    for h in 0..layout.cluster_count() {
        let block = layout.block(h);
        for i in layout.agents(h) {
            let own = layout.slice(h, &row(&z, i));
            let projected = game.action_set(h).project(&own)?;
            z.view_mut((i, block.start), (1, block.len()))
                .copy_from(&projected.transpose());
        }
    }
    let y = gradients(game, &z)?;
    Ok(SolverState {
        v: z.clone(),
        z,
        y,
        round: 0,
    })
}

/// `v(k+1) = R z(k)`.
pub fn consensus_step(z: &DMatrix<f64>, r: &WeightMatrix) -> Result<DMatrix<f64>, SolverError> {
    check_dim(r.size(), z.nrows())?;
    Ok(r.entries() * z)
}

/// `y_h(k+1) = C_h y_h(k) + G_h(v(k+1)) - G_h(v(k))` for every cluster.
pub fn tracking_step(
    y: &[DMatrix<f64>],
    c: &[WeightMatrix],
    grads_new: &[DMatrix<f64>],
    grads_old: &[DMatrix<f64>],
) -> Result<Vec<DMatrix<f64>>, SolverError> {
    check_dim(y.len(), c.len())?;
    check_dim(y.len(), grads_new.len())?;
    check_dim(y.len(), grads_old.len())?;
    y.iter()
        .zip(c)
        .zip(grads_new.iter().zip(grads_old))
        .map(|((yh, ch), (gn, go))| {
            check_dim(ch.size(), yh.nrows())?;
            check_dim(yh.shape().0, gn.nrows())?;
            check_dim(yh.shape().0, go.nrows())?;
            check_dim(yh.ncols(), gn.ncols())?;
            check_dim(yh.ncols(), go.ncols())?;
            Ok(ch.entries() * yh + gn - go)
        })
        .collect()
}

/// Own block `(1 - gamma) P[v_h] + gamma P[v_h - alpha y_h]`; every other
/// block is copied from `v` unchanged.
pub fn decision_step(
    game: &ClusterGame,
    v: &DMatrix<f64>,
    y: &[DMatrix<f64>],
    alpha: f64,
    gamma: f64,
) -> Result<DMatrix<f64>, SolverError> {
    let layout = game.layout();
    check_dim(layout.agent_count(), v.nrows())?;
    check_dim(layout.dim(), v.ncols())?;
    check_dim(layout.cluster_count(), y.len())?;
    let mut z = v.clone();
    for h in 0..layout.cluster_count() {
        let block = layout.block(h);
        let set = game.action_set(h);
        check_dim(layout.cluster_size(h), y[h].nrows())?;
        check_dim(block.len(), y[h].ncols())?;
        for (r, i) in layout.agents(h).enumerate() {
            let own = layout.slice(h, &row(v, i));
            let step = &own - row(&y[h], r) * alpha;
            let kept = set.project(&own)?;
            let moved = set.project(&step)?;
            let new = kept * (1.0 - gamma) + moved * gamma;
            z.view_mut((i, block.start), (1, block.len()))
                .copy_from(&new.transpose());
        }
    }
    Ok(z)
}

/// Largest `||sum_i y_h^i - sum_i g_h^i|| / (1 + ||sum_i g_h^i||)` over clusters.
pub fn conservation_residual(y: &[DMatrix<f64>], grads: &[DMatrix<f64>]) -> f64 {
    y.iter()
        .zip(grads)
        .map(|(yh, gh)| {
            let total = gh.row_sum();
            (yh.row_sum() - &total).norm() / (1.0 + total.norm())
        })
        .fold(0.0, f64::max)
}

fn first_non_finite(name: &str, m: &DMatrix<f64>) -> Option<String> {
    m.iter()
        .position(|v| !v.is_finite())
        .map(|k| format!("{name} entry ({}, {})", k % m.nrows(), k / m.nrows()))
}

/// Round-by-round driver owning the state and the cached gradients at `v(k)`.
pub struct Solver<'a> {
    game: &'a ClusterGame,
    network: &'a Network,
    config: SolverConfig,
    state: SolverState,
    grads: Vec<DMatrix<f64>>,
    last_change: f64,
}

impl<'a> Solver<'a> {
    pub fn new(
        game: &'a ClusterGame,
        network: &'a Network,
        config: SolverConfig,
        init: &Initialization,
    ) -> Result<Self, SolverError> {
        config.validate()?;
        network.check_layout(game.layout())?;
        let state = init_state(game, init, config.seed)?;
        let grads = state.y.clone();
        Ok(Self {
            game,
            network,
            config,
            state,
            grads,
            last_change: 0.0,
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Gradients at the current `v`.
    pub fn cached_gradients(&self) -> &[DMatrix<f64>] {
        &self.grads
    }

    /// One synchronous round; returns `||z(k+1) - z(k)||_phi`.
    pub fn step(&mut self) -> Result<f64, SolverError> {
        let round = self.state.round + 1;
        let v = consensus_step(&self.state.z, self.network.r())?;
        let grads = gradients(self.game, &v)?;
        let y = tracking_step(&self.state.y, self.network.c(), &grads, &self.grads)?;
        let z = decision_step(self.game, &v, &y, self.config.alpha, self.config.gamma)?;
        let bad = first_non_finite("z", &z)
            .or_else(|| y.iter().find_map(|yh| first_non_finite("y", yh)));
        if let Some(detail) = bad {
            return Err(SolverError::NonFiniteIterate { round, detail });
        }
        let change = weighted_norm(&(&z - &self.state.z), self.network.phi())?;
        if !change.is_finite() {
            return Err(SolverError::NonFiniteIterate {
                round,
                detail: format!("iterate change {change}"),
            });
        }
        self.state = SolverState { z, v, y, round };
        self.grads = grads;
        self.last_change = change;
        Ok(change)
    }

    pub fn metrics(&self, x_star: Option<&DVector<f64>>) -> Result<RoundMetrics, SolverError> {
        let phi = self.network.phi();
        Ok(RoundMetrics {
            round: self.state.round,
            optimality_gap: x_star
                .map(|x| optimality_gap(&self.state.z, x, phi))
                .transpose()?,
            consensus_error: consensus_error(&self.state.v, phi)?,
            tracking_error: tracking_error(&self.state.y, self.network.pis())?,
            iterate_change: self.last_change,
            conservation_residual: conservation_residual(&self.state.y, &self.grads),
        })
    }

    /// Runs until `max_rounds` or until the iterate change reaches
    /// `gap_tolerance`. Round 0 and the final round are always recorded.
    pub fn run(mut self, x_star: Option<&DVector<f64>>) -> Result<SolverRun, SolverError> {
        let mut metrics = vec![self.metrics(x_star)?];
        let mut converged = false;
        while self.state.round < self.config.max_rounds {
            let change = self.step()?;
            converged = change <= self.config.gap_tolerance;
            let last = converged || self.state.round == self.config.max_rounds;
            if last || self.state.round % self.config.record_every == 0 {
                metrics.push(self.metrics(x_star)?);
            }
            if converged {
                break;
            }
        }
        log::debug!(
            "solver stopped at round {} (converged: {converged})",
            self.state.round
        );
        Ok(SolverRun {
            state: self.state,
            metrics,
            converged,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SolverRun {
    pub state: SolverState,
    pub metrics: Vec<RoundMetrics>,
    pub converged: bool,
}

/// Convenience wrapper: build a solver and run it.
pub fn run(
    game: &ClusterGame,
    network: &Network,
    config: &SolverConfig,
    init: &Initialization,
    x_star: Option<&DVector<f64>>,
) -> Result<SolverRun, SolverError> {
    Solver::new(game, network, config.clone(), init)?.run(x_star)
}
