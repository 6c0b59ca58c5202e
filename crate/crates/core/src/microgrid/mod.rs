//! Day-ahead energy management among interconnected microgrids. Each
//! microgrid is a cluster, each generator or battery an agent, and the
//! clusters interact through a common purchase price.

mod scenario;

pub use scenario::{generate_scenario, default_generator_table, ScenarioParams, UnitMix};

use std::io::Write;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{AgentCost, ClusterGame, GameError, GameLayout};
use crate::sets::{ConvexSet, DykstraSettings, SetError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MicrogridError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid scenario parameters: {0}")]
    InvalidParams(String),
    #[error("infeasible scenario: microgrid {microgrid}: {reason}")]
    InfeasibleScenario { microgrid: usize, reason: String },
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Game(#[from] GameError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub pr_min: f64,
    pub pr_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Battery {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Flow bounds; negative flow charges the battery.
    pub pb_min: f64,
    pub pb_max: f64,
    pub pc_max: f64,
    /// Fraction of charge kept over one idle slot.
    pub eta: f64,
    pub pc_init: f64,
    pub pc_des: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Microgrid {
    #[serde(default)]
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub batteries: Vec<Battery>,
    /// Demand per slot.
    pub demand: Vec<f64>,
    pub pg_max: f64,
}

impl Microgrid {
    pub fn unit_count(&self) -> usize {
        self.generators.len() + self.batteries.len()
    }

    /// Decision-block dimension `T (N_g + N_b + 2)`.
    pub fn block_dim(&self, horizon: usize) -> usize {
        horizon * (self.unit_count() + 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrogridScenario {
    pub horizon: usize,
    pub zeta: f64,
    pub varrho: f64,
    pub smoothing_eps: f64,
    pub microgrids: Vec<Microgrid>,
}

pub fn generator_cost(gen: &Generator, pr: f64) -> f64 {
    gen.a * pr * pr + gen.b * pr + gen.c
}

fn generator_cost_derivative(gen: &Generator, pr: f64) -> f64 {
    2.0 * gen.a * pr + gen.b
}

/// `a pb^2 + b (sqrt(pb^2 + eps^2) - eps) + c`, a smooth stand-in for
/// `a pb^2 + b |pb| + c` that is exact at zero.
pub fn battery_penalty_smooth(bat: &Battery, pb: f64, eps: f64) -> f64 {
    bat.a * pb * pb + bat.b * ((pb * pb + eps * eps).sqrt() - eps) + bat.c
}

fn battery_penalty_derivative(bat: &Battery, pb: f64, eps: f64) -> f64 {
    2.0 * bat.a * pb + bat.b * pb / (pb * pb + eps * eps).sqrt()
}

/// `zeta (sum_l pg_l) (pg_h - varrho ps_h)`.
pub fn electricity_cost(pg_all: &[f64], ps_h: f64, h: usize, zeta: f64, varrho: f64) -> f64 {
    let total: f64 = pg_all.iter().sum();
    zeta * total * (pg_all[h] - varrho * ps_h)
}

/// Charges of `bat` at the start of slots `1..=T` given flows `pb`:
/// `PC(t) = eta^(t-1) PC(1) - sum_{s<t} eta^(t-s) PB(s)`.
pub fn charge_trajectory(bat: &Battery, pb: &[f64]) -> Vec<f64> {
    let mut pc = Vec::with_capacity(pb.len());
    let mut charge = bat.pc_init;
    for (t, &flow) in pb.iter().enumerate() {
        pc.push(charge);
        if t + 1 < pb.len() {
            charge = bat.eta * (charge - flow);
        }
    }
    pc
}

/// Where each quantity lives inside a microgrid's decision block:
/// `[PR (generator-major), PB (battery-major), PG, PS]`, each slot-indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIndex {
    pub horizon: usize,
    pub generators: usize,
    pub batteries: usize,
}

impl BlockIndex {
    pub fn new(mg: &Microgrid, horizon: usize) -> Self {
        Self {
            horizon,
            generators: mg.generators.len(),
            batteries: mg.batteries.len(),
        }
    }

    pub fn dim(&self) -> usize {
        self.horizon * (self.generators + self.batteries + 2)
    }

    pub fn pr(&self, gen: usize, t: usize) -> usize {
        gen * self.horizon + t
    }

    pub fn pb(&self, bat: usize, t: usize) -> usize {
        (self.generators + bat) * self.horizon + t
    }

    pub fn pg(&self, t: usize) -> usize {
        (self.generators + self.batteries) * self.horizon + t
    }

    pub fn ps(&self, t: usize) -> usize {
        (self.generators + self.batteries + 1) * self.horizon + t
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl MicrogridScenario {
    pub fn validate(&self) -> Result<(), MicrogridError> {
        let bad = |m: String| Err(MicrogridError::InvalidScenario(m));
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if self.microgrids.is_empty() {
            return bad("no microgrids".into());
        }
        if !positive(self.zeta) {
            return bad("zeta must be positive".into());
        }
        if !(self.varrho > 0.0 && self.varrho < 1.0) {
            return bad("varrho must lie in (0, 1)".into());
        }
        if !positive(self.smoothing_eps) {
            return bad("smoothing_eps must be positive".into());
        }
        for (h, mg) in self.microgrids.iter().enumerate() {
            if mg.unit_count() == 0 {
                return bad(format!("microgrid {h} has no units"));
            }
            if mg.demand.len() != self.horizon {
                return bad(format!(
                    "microgrid {h} has {} demand values for horizon {}",
                    mg.demand.len(),
                    self.horizon
                ));
            }
            if mg.demand.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
                return bad(format!("microgrid {h} has a negative demand"));
            }
            if !(mg.pg_max >= 0.0) {
                return bad(format!("microgrid {h} has a negative purchase cap"));
            }
            for (i, g) in mg.generators.iter().enumerate() {
                if !positive(g.a) || !(0.0 <= g.pr_min && g.pr_min <= g.pr_max) {
                    return bad(format!("microgrid {h} generator {i} is invalid"));
                }
            }
            for (i, b) in mg.batteries.iter().enumerate() {
                let ok = positive(b.a)
                    && b.pb_min <= b.pb_max
                    && b.pc_max >= 0.0
                    && b.eta > 0.0
                    && b.eta < 1.0
                    && (0.0..=b.pc_max).contains(&b.pc_init)
                    && (0.0..=b.pc_max).contains(&b.pc_des)
                    && positive(b.eps);
                if !ok {
                    return bad(format!("microgrid {h} battery {i} is invalid"));
                }
            }
        }
        Ok(())
    }

    pub fn cluster_count(&self) -> usize {
        self.microgrids.len()
    }

    pub fn unit_count(&self) -> usize {
        self.microgrids.iter().map(Microgrid::unit_count).sum()
    }

    pub fn layout(&self) -> Result<GameLayout, MicrogridError> {
        Ok(GameLayout::new(
            self.microgrids.iter().map(Microgrid::unit_count).collect(),
            self.microgrids
                .iter()
                .map(|m| m.block_dim(self.horizon))
                .collect(),
        )?)
    }

    pub fn block_index(&self, h: usize) -> BlockIndex {
        BlockIndex::new(&self.microgrids[h], self.horizon)
    }

    /// Purchases of every microgrid at slot `t`.
    fn purchases(&self, layout: &GameLayout, x: &DVector<f64>, t: usize) -> Vec<f64> {
        (0..self.cluster_count())
            .map(|h| x[layout.block(h).start + self.block_index(h).pg(t)])
            .collect()
    }

    /// The full objective of microgrid `h` at joint action `x`.
    pub fn microgrid_objective(&self, h: usize, x: &DVector<f64>) -> Result<f64, MicrogridError> {
        let layout = self.layout()?;
        crate::game::check_len(layout.dim(), x.len())?;
        let mg = &self.microgrids[h];
        let idx = self.block_index(h);
        let o = layout.block(h).start;
        let mut total = 0.0;
        for t in 0..self.horizon {
            for (g, gen) in mg.generators.iter().enumerate() {
                total += generator_cost(gen, x[o + idx.pr(g, t)]);
            }
            for (b, bat) in mg.batteries.iter().enumerate() {
                total += battery_penalty_smooth(bat, x[o + idx.pb(b, t)], self.smoothing_eps);
            }
            let pg = self.purchases(&layout, x, t);
            total += electricity_cost(&pg, x[o + idx.ps(t)], h, self.zeta, self.varrho);
        }
        Ok(total)
    }

    /// Largest `|sum PR + sum PB + PG - PD - PS|` over microgrids and slots.
    pub fn balance_residual(&self, x: &DVector<f64>) -> Result<f64, MicrogridError> {
        let layout = self.layout()?;
        crate::game::check_len(layout.dim(), x.len())?;
        let mut worst = 0.0f64;
        for (h, mg) in self.microgrids.iter().enumerate() {
            let (idx, o) = (self.block_index(h), layout.block(h).start);
            for t in 0..self.horizon {
                let mut r = x[o + idx.pg(t)] - x[o + idx.ps(t)] - mg.demand[t];
                r += (0..idx.generators).map(|g| x[o + idx.pr(g, t)]).sum::<f64>();
                r += (0..idx.batteries).map(|b| x[o + idx.pb(b, t)]).sum::<f64>();
                worst = worst.max(r.abs());
            }
        }
        Ok(worst)
    }

    /// Largest `|PC(T) - PC_des| - eps` over batteries; nonpositive when every
    /// terminal band holds.
    pub fn terminal_violation(&self, x: &DVector<f64>) -> Result<f64, MicrogridError> {
        let layout = self.layout()?;
        crate::game::check_len(layout.dim(), x.len())?;
        let mut worst = f64::NEG_INFINITY;
        for (h, mg) in self.microgrids.iter().enumerate() {
            let (idx, o) = (self.block_index(h), layout.block(h).start);
            for (b, bat) in mg.batteries.iter().enumerate() {
                let pb: Vec<f64> = (0..self.horizon).map(|t| x[o + idx.pb(b, t)]).collect();
                let end = *charge_trajectory(bat, &pb).last().expect("nonzero horizon");
                worst = worst.max((end - bat.pc_des).abs() - bat.eps);
            }
        }
        Ok(worst)
    }
}

/// How the constraint intersection is projected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintProjection {
    /// Dual active-set method; exact up to roundoff.
    Exact,
    Dykstra {
        #[serde(flatten)]
        settings: DykstraSettings,
    },
}

impl Default for ConstraintProjection {
    fn default() -> Self {
        Self::Exact
    }
}

/// Constraint set of microgrid `h`'s decision block: box bounds, cumulative
/// charge limits, the terminal charge band and per-slot power balance.
pub fn build_constraints(
    scenario: &MicrogridScenario,
    h: usize,
) -> Result<ConvexSet, MicrogridError> {
    build_constraints_with(scenario, h, ConstraintProjection::default())
}

pub fn build_constraints_with(
    scenario: &MicrogridScenario,
    h: usize,
    projection: ConstraintProjection,
) -> Result<ConvexSet, MicrogridError> {
    scenario.validate()?;
    let mg = scenario
        .microgrids
        .get(h)
        .ok_or_else(|| MicrogridError::InvalidScenario(format!("no microgrid {h}")))?;
    let horizon = scenario.horizon;
    let idx = BlockIndex::new(mg, horizon);
    let dim = idx.dim();
    let infeasible = |reason: String| MicrogridError::InfeasibleScenario { microgrid: h, reason };

    let mut lower = DVector::zeros(dim);
    let mut upper = DVector::from_element(dim, f64::INFINITY);
    for t in 0..horizon {
        for (g, gen) in mg.generators.iter().enumerate() {
            lower[idx.pr(g, t)] = gen.pr_min;
            upper[idx.pr(g, t)] = gen.pr_max;
        }
        for (b, bat) in mg.batteries.iter().enumerate() {
            lower[idx.pb(b, t)] = bat.pb_min;
            upper[idx.pb(b, t)] = bat.pb_max;
        }
        upper[idx.pg(t)] = mg.pg_max;
    }
    let mut members = vec![ConvexSet::boxed(lower, upper)?];

    for (b, bat) in mg.batteries.iter().enumerate() {
        // sum_{s<=t} eta^(t-s) PB(s) in [eta^(t-1) PC(1) - PC_max, eta^(t-1) PC(1)]
        for t in 0..horizon {
            let mut normal = DVector::zeros(dim);
            for s in 0..=t {
                normal[idx.pb(b, s)] = bat.eta.powi((t - s) as i32);
            }
            let decayed = bat.eta.powi(t as i32) * bat.pc_init;
            members.push(ConvexSet::halfspace(normal.clone(), decayed)?);
            members.push(ConvexSet::halfspace(-normal, bat.pc_max - decayed)?);
        }
        // PC(T) = eta^(T-1) PC(1) - sum_{s<T} eta^(T-s) PB(s)
        let end_decayed = bat.eta.powi(horizon as i32 - 1) * bat.pc_init;
        if horizon == 1 {
            if (end_decayed - bat.pc_des).abs() > bat.eps {
                return Err(infeasible(format!(
                    "battery {b}: initial charge is outside the terminal band"
                )));
            }
        } else {
            let mut normal = DVector::zeros(dim);
            for s in 0..horizon - 1 {
                normal[idx.pb(b, s)] = bat.eta.powi((horizon - 1 - s) as i32);
            }
            // PC(T) <= des + eps  <=>  -normal.x <= des + eps - decayed
            members.push(ConvexSet::halfspace(
                -normal.clone(),
                bat.pc_des + bat.eps - end_decayed,
            )?);
            members.push(ConvexSet::halfspace(
                normal,
                end_decayed - bat.pc_des + bat.eps,
            )?);
        }
    }

    let mut balance = DMatrix::zeros(horizon, dim);
    for t in 0..horizon {
        for g in 0..idx.generators {
            balance[(t, idx.pr(g, t))] = 1.0;
        }
        for b in 0..idx.batteries {
            balance[(t, idx.pb(b, t))] = 1.0;
        }
        balance[(t, idx.pg(t))] = 1.0;
        balance[(t, idx.ps(t))] = -1.0;
    }
    let demand = DVector::from_column_slice(&mg.demand);
    members.push(ConvexSet::affine(balance, demand)?);

    let set = match projection {
        ConstraintProjection::Exact => ConvexSet::polyhedron(members)?,
        ConstraintProjection::Dykstra { settings } => {
            ConvexSet::intersection_with(members, settings)?
        }
    };
    // probe feasibility once so a contradictory scenario fails here, not mid-run
    let probe = set
        .project(&DVector::zeros(dim))
        .map_err(|e| infeasible(e.to_string()))?;
    if !set.contains(&probe, 1e-6)? {
        return Err(infeasible("constraint projection did not reach the set".into()));
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq)]
enum Unit {
    Generator(Generator),
    Battery(Battery),
}

/// One physical unit's cost: its own generation or battery term over the
/// horizon plus an equal share of its microgrid's electricity bill.
#[derive(Debug, Clone)]
struct UnitAgent {
    unit: Unit,
    /// Position of the unit's first slot inside its block.
    unit_offset: usize,
    block: Range<usize>,
    index: BlockIndex,
    /// Start of every microgrid's block, for reading all purchases.
    pg_offsets: Vec<usize>,
    share: f64,
    zeta: f64,
    varrho: f64,
    smoothing_eps: f64,
}

impl UnitAgent {
    fn total_purchase(&self, x: &DVector<f64>, t: usize) -> f64 {
        self.pg_offsets.iter().map(|&o| x[o + t]).sum()
    }
}

impl AgentCost for UnitAgent {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let (o, idx) = (self.block.start, &self.index);
        let mut total = 0.0;
        for t in 0..idx.horizon {
            let u = x[o + self.unit_offset + t];
            total += match &self.unit {
                Unit::Generator(g) => generator_cost(g, u),
                Unit::Battery(b) => battery_penalty_smooth(b, u, self.smoothing_eps),
            };
            let price = self.zeta * self.total_purchase(x, t);
            total += self.share * price * (x[o + idx.pg(t)] - self.varrho * x[o + idx.ps(t)]);
        }
        total
    }

    fn own_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let (o, idx) = (self.block.start, &self.index);
        let mut g = DVector::zeros(idx.dim());
        for t in 0..idx.horizon {
            let k = self.unit_offset + t;
            g[k] = match &self.unit {
                Unit::Generator(gen) => generator_cost_derivative(gen, x[o + k]),
                Unit::Battery(b) => battery_penalty_derivative(b, x[o + k], self.smoothing_eps),
            };
            let total = self.total_purchase(x, t);
            let (pg, ps) = (x[o + idx.pg(t)], x[o + idx.ps(t)]);
            g[idx.pg(t)] = self.share * self.zeta * (total + pg - self.varrho * ps);
            g[idx.ps(t)] = -self.share * self.zeta * self.varrho * total;
        }
        g
    }
}

/// One cluster per microgrid and one agent per unit (generators first, then
/// batteries), with the constraint sets as action sets.
pub fn compile_game(scenario: &MicrogridScenario) -> Result<ClusterGame, MicrogridError> {
    compile_game_with(scenario, ConstraintProjection::default())
}

pub fn compile_game_with(
    scenario: &MicrogridScenario,
    projection: ConstraintProjection,
) -> Result<ClusterGame, MicrogridError> {
    scenario.validate()?;
    let layout = scenario.layout()?;
    let pg_offsets: Vec<usize> = (0..scenario.cluster_count())
        .map(|h| layout.block(h).start + scenario.block_index(h).pg(0))
        .collect();
    let mut agents: Vec<Arc<dyn AgentCost>> = Vec::with_capacity(layout.agent_count());
    let mut sets = Vec::with_capacity(scenario.cluster_count());
    for (h, mg) in scenario.microgrids.iter().enumerate() {
        let idx = scenario.block_index(h);
        let units = mg
            .generators
            .iter()
            .cloned()
            .map(Unit::Generator)
            .chain(mg.batteries.iter().cloned().map(Unit::Battery));
        for (u, unit) in units.enumerate() {
            agents.push(Arc::new(UnitAgent {
                unit,
                unit_offset: u * scenario.horizon,
                block: layout.block(h),
                index: idx,
                pg_offsets: pg_offsets.clone(),
                share: 1.0 / mg.unit_count() as f64,
                zeta: scenario.zeta,
                varrho: scenario.varrho,
                smoothing_eps: scenario.smoothing_eps,
            }));
        }
        sets.push(build_constraints_with(scenario, h, projection)?);
    }
    Ok(ClusterGame::new(layout, agents, sets)?)
}

/// Schedule CSV with columns `t,unit,PR,PB,PG,PS`: one row per unit per slot
/// plus a `grid` row per microgrid carrying its purchases and sales.
pub fn write_schedule_csv<W: Write>(
    writer: W,
    scenario: &MicrogridScenario,
    x: &DVector<f64>,
) -> Result<(), MicrogridError> {
    let layout = scenario.layout()?;
    crate::game::check_len(layout.dim(), x.len())?;
    let io = |e: csv::Error| MicrogridError::InvalidScenario(format!("writing schedule: {e}"));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "unit", "PR", "PB", "PG", "PS"]).map_err(io)?;
    let fmt = |v: f64| format!("{v:e}");
    for t in 0..scenario.horizon {
        for h in 0..scenario.cluster_count() {
            let (idx, o) = (scenario.block_index(h), layout.block(h).start);
            let slot = (t + 1).to_string();
            for g in 0..idx.generators {
                let v = fmt(x[o + idx.pr(g, t)]);
                w.write_record([slot.as_str(), &format!("mg{h}/gen{g}"), &v, "", "", ""])
                    .map_err(io)?;
            }
            for b in 0..idx.batteries {
                let v = fmt(x[o + idx.pb(b, t)]);
                w.write_record([slot.as_str(), &format!("mg{h}/bat{b}"), "", &v, "", ""])
                    .map_err(io)?;
            }
            let (pg, ps) = (fmt(x[o + idx.pg(t)]), fmt(x[o + idx.ps(t)]));
            w.write_record([slot.as_str(), &format!("mg{h}/grid"), "", "", &pg, &ps])
                .map_err(io)?;
        }
    }
    w.flush()
        .map_err(|e| MicrogridError::InvalidScenario(format!("writing schedule: {e}")))?;
    Ok(())
}
