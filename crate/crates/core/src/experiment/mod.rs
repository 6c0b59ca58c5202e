//! Experiment runner behind the command-line tool. One TOML file describes
//! the communication graphs, either a quadratic game or a microgrid scenario,
//! the solver and oracle settings, and where outputs go.

pub mod plot;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{build_quadratic_game, ClusterGame, GameError, GameLayout, QuadraticGameSpec};
use crate::graph::{DirectedGraph, GraphError};
use crate::microgrid::{
    compile_game_with, generate_scenario, write_schedule_csv, ConstraintProjection,
    MicrogridError, MicrogridScenario, ScenarioParams,
};
use crate::oracle::{
    best_response_check, fixed_point_ne, write_vector_csv, FixedPoint, OracleError,
    DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE,
};
use crate::solver::{
    write_metrics_csv, Initialization, Network, RoundMetrics, Solver, SolverConfig, SolverError,
    SolverState, METRICS_HEADER,
};
use plot::{Chart, Series};

/// Averaging parameters compared by [`run_gamma_ablation`].
pub const ABLATION_GAMMAS: [f64; 4] = [0.1, 0.5, 0.9, 1.0];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl ExperimentError {
    /// 1 for configuration problems, 2 when an iteration failed to converge.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Oracle(OracleError::NoConvergence { .. })
            | Self::Solver(SolverError::NonFiniteIterate { .. }) => 2,
            _ => 1,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(e.to_string())
}

impl From<GameError> for ExperimentError {
    fn from(e: GameError) -> Self {
        config_err(e)
    }
}

impl From<GraphError> for ExperimentError {
    fn from(e: GraphError) -> Self {
        config_err(e)
    }
}

impl From<MicrogridError> for ExperimentError {
    fn from(e: MicrogridError) -> Self {
        config_err(e)
    }
}

/// Shape of one communication graph. Self-loops are always added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Topology {
    Cycle,
    Complete,
    /// A random Hamiltonian cycle plus every other ordered pair with the
    /// given probability.
    Random { extra_edge_probability: f64 },
    /// Explicit `[from, to]` pairs; for `intra` one list per cluster.
    Edges { edges: Vec<Vec<[usize; 2]>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    /// Graph over all agents, weighted row-stochastically.
    pub inter: Topology,
    /// Graph inside every cluster, weighted column-stochastically.
    pub intra: Topology,
    /// Seed for random topologies.
    pub seed: u64,
}

impl Default for GraphSection {
    fn default() -> Self {
        Self {
            inter: Topology::Cycle,
            intra: Topology::Cycle,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Seed of the generated scenario.
    pub seed: u64,
    /// Generate a scenario from parameters...
    pub generate: Option<ScenarioParams>,
    /// ...or give it in full.
    pub inline: Option<MicrogridScenario>,
    pub projection: ConstraintProjection,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            seed: 0,
            generate: None,
            inline: None,
            projection: ConstraintProjection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSection {
    Zero,
    /// Uniform in `[-half_width, half_width]`, seeded by the solver seed.
    Random { half_width: f64 },
}

impl Default for InitSection {
    fn default() -> Self {
        Self::Zero
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    /// Step of the fixed-point iteration; defaults to the solver step.
    pub alpha: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Also confirm the equilibrium by per-cluster best responses.
    pub best_response: bool,
    pub best_response_tolerance: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            alpha: None,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            best_response: false,
            best_response_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub plot: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            plot: true,
        }
    }
}

/// Whole experiment file. Exactly one of `game` and `scenario` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub graph: GraphSection,
    #[serde(default)]
    pub game: Option<QuadraticGameSpec>,
    #[serde(default)]
    pub scenario: Option<ScenarioSection>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Command-line overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub outdir: Option<PathBuf>,
    /// Replaces every seed in the file.
    pub seed: Option<u64>,
    pub max_rounds: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ExperimentError::Config(m) => {
                ExperimentError::Config(format!("{}: {m}", path.display()))
            }
            e => e,
        })
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        match (&self.game, &self.scenario) {
            (Some(_), None) => {}
            (None, Some(s)) => {
                if s.generate.is_some() == s.inline.is_some() {
                    return Err(config_err(
                        "[scenario] needs exactly one of `generate` and `inline`",
                    ));
                }
            }
            _ => {
                return Err(config_err(
                    "exactly one of the [game] and [scenario] sections is required",
                ))
            }
        }
        self.solver.validate().map_err(config_err)?;
        if let Some(a) = self.oracle.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(config_err("oracle.alpha must be positive"));
            }
        }
        if let InitSection::Random { half_width } = self.init {
            if !(half_width >= 0.0 && half_width.is_finite()) {
                return Err(config_err("init.half_width must be nonnegative"));
            }
        }
        if let Topology::Random {
            extra_edge_probability: p,
        } = self.graph.inter.clone()
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err("graph edge probability must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.outdir {
            self.output.dir = dir.clone();
        }
        if let Some(r) = o.max_rounds {
            self.solver.max_rounds = r;
        }
        if let Some(seed) = o.seed {
            self.solver.seed = seed;
            self.graph.seed = seed;
            if let Some(g) = &mut self.game {
                if let Some(r) = &mut g.random {
                    r.seed = seed;
                }
            }
            if let Some(s) = &mut self.scenario {
                s.seed = seed;
            }
        }
    }
}

/// The game of an experiment, plus the scenario when it is a microgrid run.
pub struct Problem {
    pub game: ClusterGame,
    pub scenario: Option<MicrogridScenario>,
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, ExperimentError> {
        if let Some(spec) = &cfg.game {
            return Ok(Self {
                game: build_quadratic_game(spec)?.game,
                scenario: None,
            });
        }
        let s = cfg
            .scenario
            .as_ref()
            .ok_or_else(|| config_err("no game or scenario"))?;
        let scenario = match (&s.generate, &s.inline) {
            (Some(p), _) => generate_scenario(p, s.seed)?,
            (None, Some(sc)) => {
                sc.validate()?;
                sc.clone()
            }
            (None, None) => return Err(config_err("[scenario] is empty")),
        };
        let game = compile_game_with(&scenario, s.projection)?;
        Ok(Self {
            game,
            scenario: Some(scenario),
        })
    }

    /// Objective of every cluster: the microgrid cost `F_h` for scenarios,
    /// the cluster cost otherwise.
    pub fn cluster_costs(&self, x: &DVector<f64>) -> Result<Vec<f64>, ExperimentError> {
        let h_count = self.game.layout().cluster_count();
        (0..h_count)
            .map(|h| match &self.scenario {
                Some(s) => Ok(s.microgrid_objective(h, x)?),
                None => Ok(self.game.cluster_cost(h, x)?),
            })
            .collect()
    }
}

fn topology_graph(
    t: &Topology,
    n: usize,
    cluster: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<DirectedGraph, ExperimentError> {
    let mut g = match t {
        Topology::Cycle => DirectedGraph::cycle(n, true)?,
        Topology::Complete => DirectedGraph::complete(n)?,
        Topology::Random {
            extra_edge_probability,
        } => DirectedGraph::random_strongly_connected(n, *extra_edge_probability, rng)?,
        Topology::Edges { edges } => {
            let k = cluster.unwrap_or(0);
            let list = edges.get(k).ok_or_else(|| {
                config_err(format!("no edge list for graph {k} (found {})", edges.len()))
            })?;
            DirectedGraph::new(n, list.iter().filter(|[a, b]| a != b).map(|&[a, b]| (a, b)))?
        }
    };
    g.add_self_loops();
    Ok(g)
}

/// Uniformly weighted network for `layout`.
pub fn build_network(
    graph: &GraphSection,
    layout: &GameLayout,
) -> Result<Network, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(graph.seed);
    let inter = topology_graph(&graph.inter, layout.agent_count(), None, &mut rng)?;
    let intra = layout
        .cluster_sizes()
        .iter()
        .enumerate()
        .map(|(h, &n)| topology_graph(&graph.intra, n, Some(h), &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    Network::uniform(inter, intra).map_err(|e| match e {
        SolverError::NotStronglyConnected { .. } | SolverError::MissingSelfLoop { .. } => {
            config_err(e)
        }
        e => e.into(),
    })
}

/// Fixed-point equilibrium from the projected origin.
pub fn compute_equilibrium(
    cfg: &ExperimentConfig,
    game: &ClusterGame,
) -> Result<FixedPoint, ExperimentError> {
    let alpha = cfg.oracle.alpha.unwrap_or(cfg.solver.alpha);
    let x0 = DVector::zeros(game.layout().dim());
    let fp = fixed_point_ne(
        game,
        alpha,
        cfg.oracle.tolerance,
        cfg.oracle.max_iterations,
        &x0,
    )?;
    log::info!(
        "equilibrium: {} iterations, residual {:e}",
        fp.iterations,
        fp.residual
    );
    if cfg.oracle.best_response {
        let report = best_response_check(game, &fp.x, cfg.oracle.best_response_tolerance, cfg.solver.seed)?;
        if report.passed {
            log::info!("best-response check passed (max gain {:e})", report.max_improvement());
        } else {
            log::warn!("best-response check failed (max gain {:e})", report.max_improvement());
        }
    }
    Ok(fp)
}

/// Each cluster's own block, averaged over the cluster's agents. Every own
/// block of `z` lies in the action set, so the result is feasible.
pub fn own_block_estimate(game: &ClusterGame, state: &SolverState) -> DVector<f64> {
    let layout = game.layout();
    let mut x = DVector::zeros(layout.dim());
    for h in 0..layout.cluster_count() {
        let b = layout.block(h);
        let n = layout.cluster_size(h) as f64;
        for i in layout.agents(h) {
            let mut dst = x.rows_mut(b.start, b.len());
            dst += state.z.view((i, b.start), (1, b.len())).transpose() / n;
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// Iterate change reached the tolerance.
    Converged,
    MaxRounds,
    /// A non-finite value appeared in this round.
    Diverged { round: usize, detail: String },
}

#[derive(Debug, Clone)]
pub struct Leg {
    pub outcome: Outcome,
    pub metrics: Vec<RoundMetrics>,
    /// Round and cluster objectives at every recorded round.
    pub costs: Vec<(usize, Vec<f64>)>,
    /// Own-block estimate at the last finite round.
    pub estimate: DVector<f64>,
    pub rounds: usize,
}

impl Leg {
    pub fn final_gap(&self) -> Option<f64> {
        self.metrics.last().and_then(|m| m.optimality_gap)
    }
}

/// Runs the solver on a freshly built problem, keeping metrics gathered
/// before a divergence.
pub fn run_leg(
    cfg: &ExperimentConfig,
    solver_cfg: &SolverConfig,
    x_star: &DVector<f64>,
) -> Result<Leg, ExperimentError> {
    let problem = Problem::build(cfg)?;
    let network = build_network(&cfg.graph, problem.game.layout())?;
    let init = match cfg.init {
        InitSection::Zero => Initialization::Zero,
        InitSection::Random { half_width } => Initialization::Random { half_width },
    };
    let mut solver = Solver::new(&problem.game, &network, solver_cfg.clone(), &init)?;
    let record = |solver: &Solver, metrics: &mut Vec<RoundMetrics>, costs: &mut Vec<_>| {
        let x = own_block_estimate(&problem.game, solver.state());
        metrics.push(solver.metrics(Some(x_star))?);
        costs.push((solver.state().round, problem.cluster_costs(&x)?));
        Ok::<_, ExperimentError>(())
    };
    let (mut metrics, mut costs) = (Vec::new(), Vec::new());
    record(&solver, &mut metrics, &mut costs)?;
    let outcome = loop {
        if solver.state().round >= solver_cfg.max_rounds {
            break Outcome::MaxRounds;
        }
        match solver.step() {
            Ok(change) => {
                let done = change <= solver_cfg.gap_tolerance;
                let round = solver.state().round;
                if done || round == solver_cfg.max_rounds || round % solver_cfg.record_every == 0 {
                    record(&solver, &mut metrics, &mut costs)?;
                }
                if done {
                    break Outcome::Converged;
                }
            }
            Err(SolverError::NonFiniteIterate { round, detail }) => {
                log::warn!("non-finite iterate in round {round}: {detail}");
                break Outcome::Diverged { round, detail };
            }
            Err(e) => return Err(e.into()),
        }
    };
    Ok(Leg {
        outcome,
        metrics,
        costs,
        estimate: own_block_estimate(&problem.game, solver.state()),
        rounds: solver.state().round,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })
}

fn make_dir(path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_costs_csv(path: &Path, costs: &[(usize, Vec<f64>)]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let h = costs.first().map_or(0, |c| c.1.len());
    let mut header = vec!["round".to_string()];
    header.extend((0..h).map(|k| format!("cluster{k}")));
    w.write_record(&header)?;
    for (round, c) in costs {
        let mut rec = vec![round.to_string()];
        rec.extend(c.iter().map(|v| format!("{v:e}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn gap_series(label: String, metrics: &[RoundMetrics]) -> Series {
    Series {
        label,
        points: metrics
            .iter()
            .filter_map(|m| m.optimality_gap.map(|g| (m.round as f64, g)))
            .collect(),
    }
}

fn convergence_chart(leg: &Leg, is_microgrid: bool) -> String {
    let h = leg.costs.first().map_or(0, |c| c.1.len());
    let unit = if is_microgrid { "MG" } else { "cluster" };
    let costs = (0..h)
        .map(|k| Series {
            label: format!("{unit} {}", k + 1),
            points: leg.costs.iter().map(|(r, c)| (*r as f64, c[k])).collect(),
        })
        .collect();
    plot::render(&[
        Chart {
            title: "Optimality gap".into(),
            x_label: "round".into(),
            y_label: "||z - 1 x*||_phi".into(),
            log_y: true,
            series: vec![gap_series("gap".into(), &leg.metrics)],
        },
        Chart {
            title: format!("Total cost per {unit}"),
            x_label: "round".into(),
            y_label: "cost".into(),
            log_y: false,
            series: costs,
        },
    ])
}

fn write_leg(dir: &Path, leg: &Leg, cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    make_dir(dir)?;
    write_metrics_csv(create(&dir.join("metrics.csv"))?, &leg.metrics)?;
    write_costs_csv(&dir.join("costs.csv"), &leg.costs)?;
    if cfg.output.plot {
        let svg = convergence_chart(leg, cfg.scenario.is_some());
        write_text(&dir.join("convergence.svg"), &svg)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub outdir: PathBuf,
    pub equilibrium: FixedPoint,
    pub leg: Leg,
    /// Final gap divided by `||x*||`.
    pub relative_gap: Option<f64>,
    /// Largest per-slot balance violation of the final schedule.
    pub balance_residual: Option<f64>,
    /// Largest terminal-band violation of the final schedule; `<= 0` inside.
    pub terminal_violation: Option<f64>,
}

impl ExperimentReport {
    pub fn converged(&self) -> bool {
        self.leg.outcome == Outcome::Converged
    }

    pub fn exit_code(&self) -> i32 {
        if self.converged() {
            0
        } else {
            2
        }
    }
}

fn relative(gap: Option<f64>, x_star: &DVector<f64>) -> Option<f64> {
    gap.map(|g| g / x_star.norm().max(f64::MIN_POSITIVE))
}

/// Runs oracle and solver for a loaded config and writes `metrics.csv`,
/// `ne.csv`, `costs.csv`, `convergence.svg` and, for microgrids,
/// `schedule.csv` into the output directory.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let dir = cfg.output.dir.clone();
    make_dir(&dir)?;
    let problem = Problem::build(cfg)?;
    let eq = compute_equilibrium(cfg, &problem.game)?;
    write_vector_csv(create(&dir.join("ne.csv"))?, &eq.x)?;
    let leg = run_leg(cfg, &cfg.solver, &eq.x)?;
    write_leg(&dir, &leg, cfg)?;
    let (mut balance, mut terminal) = (None, None);
    if let Some(s) = &problem.scenario {
        write_schedule_csv(create(&dir.join("schedule.csv"))?, s, &leg.estimate)?;
        balance = Some(s.balance_residual(&leg.estimate)?);
        terminal = Some(s.terminal_violation(&leg.estimate)?);
    }
    let relative_gap = relative(leg.final_gap(), &eq.x);
    log::info!(
        "solver {:?} after {} rounds, gap {:?}, relative {:?}",
        leg.outcome,
        leg.rounds,
        leg.final_gap(),
        relative_gap
    );
    Ok(ExperimentReport {
        outdir: dir,
        equilibrium: eq,
        leg,
        relative_gap,
        balance_residual: balance,
        terminal_violation: terminal,
    })
}

/// Loads `path`, applies overrides and runs the experiment.
pub fn run_experiment(
    path: &Path,
    overrides: &Overrides,
) -> Result<ExperimentReport, ExperimentError> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(overrides);
    cfg.validate()?;
    execute(&cfg)
}

#[derive(Debug, Clone)]
pub struct AblationLeg {
    pub gamma: f64,
    pub leg: Leg,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub outdir: PathBuf,
    pub equilibrium: FixedPoint,
    pub legs: Vec<AblationLeg>,
}

impl AblationReport {
    /// 0 when every leg with `gamma < 1` converged, 2 otherwise. The
    /// `gamma = 1` leg is only recorded.
    pub fn exit_code(&self) -> i32 {
        let ok = self
            .legs
            .iter()
            .filter(|l| l.gamma < 1.0)
            .all(|l| l.leg.outcome == Outcome::Converged);
        if ok {
            0
        } else {
            2
        }
    }
}

pub fn leg_dir_name(gamma: f64) -> String {
    format!("gamma_{gamma}")
}

/// Runs the experiment once per entry of [`ABLATION_GAMMAS`] against one
/// shared equilibrium. Writes a subdirectory per leg, `ablation_metrics.csv`
/// (all legs, with a `gamma` column), `ablation_summary.csv` and
/// `ablation.svg`.
pub fn execute_ablation(cfg: &ExperimentConfig) -> Result<AblationReport, ExperimentError> {
    let dir = cfg.output.dir.clone();
    make_dir(&dir)?;
    let problem = Problem::build(cfg)?;
    let eq = compute_equilibrium(cfg, &problem.game)?;
    write_vector_csv(create(&dir.join("ne.csv"))?, &eq.x)?;
    let mut legs = Vec::new();
    for gamma in ABLATION_GAMMAS {
        let solver_cfg = SolverConfig {
            gamma,
            ..cfg.solver.clone()
        };
        let leg = run_leg(cfg, &solver_cfg, &eq.x)?;
        log::info!("gamma {gamma}: {:?} after {} rounds", leg.outcome, leg.rounds);
        write_leg(&dir.join(leg_dir_name(gamma)), &leg, cfg)?;
        legs.push(AblationLeg { gamma, leg });
    }

    let mut w = csv::Writer::from_writer(create(&dir.join("ablation_metrics.csv"))?);
    let mut header = vec!["gamma"];
    header.extend(METRICS_HEADER);
    w.write_record(&header)?;
    for l in &legs {
        for m in &l.leg.metrics {
            let gap = m.optimality_gap.map(|g| format!("{g:e}")).unwrap_or_default();
            w.write_record([
                l.gamma.to_string(),
                m.round.to_string(),
                gap,
                format!("{:e}", m.consensus_error),
                format!("{:e}", m.tracking_error),
                format!("{:e}", m.iterate_change),
            ])?;
        }
    }
    w.flush().map_err(|source| ExperimentError::Io {
        path: dir.join("ablation_metrics.csv"),
        source,
    })?;

    let mut w = csv::Writer::from_writer(create(&dir.join("ablation_summary.csv"))?);
    w.write_record(["gamma", "outcome", "rounds", "final_gap", "diverged_round"])?;
    for l in &legs {
        let (outcome, diverged) = match &l.leg.outcome {
            Outcome::Converged => ("converged", String::new()),
            Outcome::MaxRounds => ("max_rounds", String::new()),
            Outcome::Diverged { round, .. } => ("non_finite_iterate", round.to_string()),
        };
        let gap = l.leg.final_gap().map(|g| format!("{g:e}")).unwrap_or_default();
        w.write_record([
            l.gamma.to_string(),
            outcome.to_string(),
            l.leg.rounds.to_string(),
            gap,
            diverged,
        ])?;
    }
    w.flush().map_err(|source| ExperimentError::Io {
        path: dir.join("ablation_summary.csv"),
        source,
    })?;

    if cfg.output.plot {
        let series = legs
            .iter()
            .map(|l| {
                let mut label = format!("gamma = {}", l.gamma);
                if let Outcome::Diverged { round, .. } = l.leg.outcome {
                    label.push_str(&format!(" (diverged at {round})"));
                }
                gap_series(label, &l.leg.metrics)
            })
            .collect();
        let svg = plot::render(&[Chart {
            title: "Optimality gap by averaging parameter".into(),
            x_label: "round".into(),
            y_label: "||z - 1 x*||_phi".into(),
            log_y: true,
            series,
        }]);
        write_text(&dir.join("ablation.svg"), &svg)?;
    }
    Ok(AblationReport {
        outdir: dir,
        equilibrium: eq,
        legs,
    })
}

pub fn run_gamma_ablation(
    path: &Path,
    overrides: &Overrides,
) -> Result<AblationReport, ExperimentError> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(overrides);
    cfg.validate()?;
    execute_ablation(&cfg)
}
