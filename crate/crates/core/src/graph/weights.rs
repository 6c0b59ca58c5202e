use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DirectedGraph, GraphError};

/// Row and column sums must hit 1 within this tolerance.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;
/// Successive power-iteration iterates must agree within this in the max-norm.
pub const PERRON_TOLERANCE: f64 = 1e-14;
pub const PERRON_MAX_ITERATIONS: usize = 1_000_000;
const PERRON_RESIDUAL_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StochasticKind {
    RowStochastic,
    ColumnStochastic,
}

/// A nonnegative mixing matrix compliant with a graph: `entries[(i, j)] > 0`
/// exactly when edge `(j, i)` exists.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    kind: StochasticKind,
}

impl WeightMatrix {
    /// Validates compliance with `graph` and the stochasticity of `kind`.
    pub fn from_entries(
        entries: DMatrix<f64>,
        kind: StochasticKind,
        graph: &DirectedGraph,
    ) -> Result<Self, GraphError> {
        let n = graph.node_count();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(GraphError::DimensionMismatch {
                expected: n,
                found: entries.nrows().max(entries.ncols()),
            });
        }
        for i in 0..n {
            for j in 0..n {
                let w = entries[(i, j)];
                let ok = if graph.has_edge(j, i) {
                    w > 0.0 && w.is_finite()
                } else {
                    w == 0.0
                };
                if !ok {
                    return Err(GraphError::NotCompliant { row: i, col: j });
                }
            }
        }
        let m = Self { entries, kind };
        m.check_stochastic()?;
        Ok(m)
    }

    fn check_stochastic(&self) -> Result<(), GraphError> {
        let n = self.entries.nrows();
        for index in 0..n {
            let sum = match self.kind {
                StochasticKind::RowStochastic => self.entries.row(index).sum(),
                StochasticKind::ColumnStochastic => self.entries.column(index).sum(),
            };
            if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
                return Err(GraphError::NotStochastic {
                    kind: self.kind,
                    index,
                    sum,
                });
            }
        }
        Ok(())
    }

    /// `entries[(i, j)] = 1 / indegree(i)` for every in-edge `(j, i)`.
    pub fn uniform_row_stochastic(graph: &DirectedGraph) -> Result<Self, GraphError> {
        graph.check_self_loops()?;
        let n = graph.node_count();
        let mut entries = DMatrix::zeros(n, n);
        for i in 0..n {
            let w = 1.0 / graph.in_degree(i) as f64;
            for j in (0..n).filter(|&j| graph.has_edge(j, i)) {
                entries[(i, j)] = w;
            }
        }
        Self::from_entries(entries, StochasticKind::RowStochastic, graph)
    }

    /// `entries[(i, j)] = 1 / outdegree(j)` for every edge `(j, i)`.
    pub fn uniform_column_stochastic(graph: &DirectedGraph) -> Result<Self, GraphError> {
        graph.check_self_loops()?;
        let n = graph.node_count();
        let mut entries = DMatrix::zeros(n, n);
        for j in 0..n {
            let w = 1.0 / graph.out_degree(j) as f64;
            for i in graph.out_neighbors(j) {
                entries[(i, j)] = w;
            }
        }
        Self::from_entries(entries, StochasticKind::ColumnStochastic, graph)
    }

    /// Random positive weights in `[0.1, 1)` on the edge pattern, normalized
    /// to the requested kind.
    pub fn random<R: Rng + ?Sized>(
        graph: &DirectedGraph,
        kind: StochasticKind,
        rng: &mut R,
    ) -> Result<Self, GraphError> {
        graph.check_self_loops()?;
        let n = graph.node_count();
        let mut entries = DMatrix::zeros(n, n);
        for (from, to) in graph.edges() {
            entries[(to, from)] = rng.random_range(0.1..1.0);
        }
        for k in 0..n {
            match kind {
                StochasticKind::RowStochastic => {
                    let s = entries.row(k).sum();
                    entries.row_mut(k).iter_mut().for_each(|w| *w /= s);
                }
                StochasticKind::ColumnStochastic => {
                    let s = entries.column(k).sum();
                    entries.column_mut(k).iter_mut().for_each(|w| *w /= s);
                }
            }
        }
        Self::from_entries(entries, kind, graph)
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn kind(&self) -> StochasticKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    /// Smallest strictly positive entry.
    pub fn min_positive(&self) -> f64 {
        self.entries
            .iter()
            .copied()
            .filter(|&w| w > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// One CSV record per matrix row, no header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for row in self.entries.row_iter() {
            w.write_record(row.iter().map(|x| format!("{x:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(
        reader: R,
        kind: StochasticKind,
        graph: &DirectedGraph,
    ) -> Result<Self, GraphError> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (line, record) in r.records().enumerate() {
            let parse = |message: String| GraphError::Parse {
                line: line + 1,
                message,
            };
            let record = record.map_err(|e| parse(e.to_string()))?;
            let row = record
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| parse(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(GraphError::DimensionMismatch {
                expected: n,
                found: rows.iter().map(Vec::len).find(|&l| l != n).unwrap_or(0),
            });
        }
        let entries = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::from_entries(entries, kind, graph)
    }
}

fn power_iteration(op: &DMatrix<f64>) -> Result<DVector<f64>, GraphError> {
    let n = op.nrows();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..PERRON_MAX_ITERATIONS {
        let next = op * &x;
        let change = (&next - &x).amax();
        x = next;
        if change <= PERRON_TOLERANCE {
            let total = x.sum();
            x /= total;
            return Ok(x);
        }
    }
    Err(GraphError::NoConvergence {
        iterations: PERRON_MAX_ITERATIONS,
    })
}

fn check_perron(x: &DVector<f64>, residual: f64) -> Result<(), GraphError> {
    if x.iter().any(|&v| v <= 0.0) {
        return Err(GraphError::InvalidPerron("non-positive entry".into()));
    }
    if residual > PERRON_RESIDUAL_TOLERANCE {
        return Err(GraphError::InvalidPerron(format!("residual {residual:e}")));
    }
    Ok(())
}

/// Stochastic left eigenvector `phi` of a row-stochastic matrix,
/// `phi^T R = phi^T`, by power iteration on `R^T`.
pub fn perron_left(r: &WeightMatrix) -> Result<DVector<f64>, GraphError> {
    if r.kind != StochasticKind::RowStochastic {
        return Err(GraphError::WrongKind {
            expected: StochasticKind::RowStochastic,
        });
    }
    let rt = r.entries.transpose();
    let phi = power_iteration(&rt)?;
    check_perron(&phi, (&rt * &phi - &phi).amax())?;
    Ok(phi)
}

/// Stochastic right eigenvector `pi` of a column-stochastic matrix, `C pi = pi`.
pub fn perron_right(c: &WeightMatrix) -> Result<DVector<f64>, GraphError> {
    if c.kind != StochasticKind::ColumnStochastic {
        return Err(GraphError::WrongKind {
            expected: StochasticKind::ColumnStochastic,
        });
    }
    let pi = power_iteration(&c.entries)?;
    check_perron(&pi, (&c.entries * &pi - &pi).amax())?;
    Ok(pi)
}

fn graph_size_constant(graph: &DirectedGraph) -> Result<f64, GraphError> {
    // singletons have D = K = 0; treat them as 1 so the bound stays finite
    let d = graph.diameter()?.max(1);
    let k = graph.max_edge_utility()?.max(1);
    Ok((d * k) as f64)
}

/// Intra-cluster contraction constant: the max over clusters of
/// `sqrt(1 - min(pi)^2 min+(C)^2 / (max(pi)^3 D K))`.
pub fn sigma_c<'a, I>(clusters: I) -> Result<f64, GraphError>
where
    I: IntoIterator<Item = (&'a WeightMatrix, &'a DVector<f64>, &'a DirectedGraph)>,
{
    let mut sigma = 0.0f64;
    for (c, pi, graph) in clusters {
        if pi.len() != c.size() {
            return Err(GraphError::DimensionMismatch {
                expected: c.size(),
                found: pi.len(),
            });
        }
        let ratio = pi.min().powi(2) * c.min_positive().powi(2)
            / (pi.max().powi(3) * graph_size_constant(graph)?);
        sigma = sigma.max((1.0 - ratio).max(0.0).sqrt());
    }
    Ok(sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowContraction {
    pub c: f64,
    pub sigma: f64,
}

/// Inter-cluster contraction: `c^2 = min(phi) min+(R)^2 / (max(phi)^2 D K)` and
/// `sigma_R = sqrt(1 - c^2)`.
pub fn sigma_r(
    r: &WeightMatrix,
    phi: &DVector<f64>,
    graph: &DirectedGraph,
) -> Result<RowContraction, GraphError> {
    if phi.len() != r.size() {
        return Err(GraphError::DimensionMismatch {
            expected: r.size(),
            found: phi.len(),
        });
    }
    let c2 = phi.min() * r.min_positive().powi(2) / (phi.max().powi(2) * graph_size_constant(graph)?);
    Ok(RowContraction {
        c: c2.sqrt(),
        sigma: (1.0 - c2).max(0.0).sqrt(),
    })
}

/// `sqrt(sum_i w_i ||row_i(u)||^2)`; pass `1/pi` entrywise for the inverse-weighted norm.
pub fn weighted_norm(u: &DMatrix<f64>, w: &DVector<f64>) -> Result<f64, GraphError> {
    if u.nrows() != w.len() {
        return Err(GraphError::DimensionMismatch {
            expected: u.nrows(),
            found: w.len(),
        });
    }
    Ok(u
        .row_iter()
        .zip(w.iter())
        .map(|(row, wi)| wi * row.norm_squared())
        .sum::<f64>()
        .sqrt())
}
