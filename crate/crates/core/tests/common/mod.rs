//! Helpers shared by the integration tests: random fixtures and an
//! independent brute-force projection oracle.
#![allow(dead_code)]

use std::path::PathBuf;

use cluster_games::game::{
    build_quadratic_game, QuadraticGame, QuadraticGameSpec, RandomQuadraticSpec,
};
use cluster_games::graph::{DirectedGraph, StochasticKind, WeightMatrix};
use cluster_games::sets::{ConvexSet, ConvexSetSpec};
use cluster_games::solver::Network;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

/// Random quadratic game with `clusters` clusters of random size and block
/// dimension. `box_half_width` adds a box `[-w, w]` per cluster.
pub fn random_game<R: Rng>(
    rng: &mut R,
    max_clusters: usize,
    max_agents: usize,
    max_block: usize,
    box_half_width: Option<f64>,
) -> QuadraticGame {
    let h = rng.random_range(1..=max_clusters);
    let mut sizes: Vec<usize> = (0..h).map(|_| 1).collect();
    for _ in h..rng.random_range(h..=max_agents.max(h)) {
        let k = rng.random_range(0..h);
        sizes[k] += 1;
    }
    let dims: Vec<usize> = (0..h).map(|_| rng.random_range(1..=max_block)).collect();
    let action_sets = box_half_width.map(|w| {
        dims.iter()
            .map(|&d| ConvexSetSpec::Box {
                lower: vec![-w; d],
                upper: vec![w; d],
            })
            .collect()
    });
    build_quadratic_game(&QuadraticGameSpec {
        cluster_sizes: sizes,
        block_dims: dims,
        agents: None,
        random: Some(RandomQuadraticSpec {
            seed: rng.random(),
            ..RandomQuadraticSpec::default()
        }),
        action_sets,
    })
    .unwrap()
}

/// Random strongly connected graphs with random positive weights.
pub fn random_network<R: Rng>(rng: &mut R, cluster_sizes: &[usize]) -> Network {
    let n: usize = cluster_sizes.iter().sum();
    let graph = DirectedGraph::random_strongly_connected(n, 0.2, rng).unwrap();
    let r = WeightMatrix::random(&graph, StochasticKind::RowStochastic, rng).unwrap();
    let clusters: Vec<DirectedGraph> = cluster_sizes
        .iter()
        .map(|&m| DirectedGraph::random_strongly_connected(m, 0.3, rng).unwrap())
        .collect();
    let c = clusters
        .iter()
        .map(|g| WeightMatrix::random(g, StochasticKind::ColumnStochastic, rng).unwrap())
        .collect();
    Network::new(graph, r, clusters, c).unwrap()
}

/// A small polyhedron `{x : E x = e, G x <= g}` kept as raw rows, so the
/// brute-force oracle does not depend on the library's set types.
#[derive(Debug, Clone)]
pub struct Instance {
    pub dim: usize,
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
    pub halfspaces: Vec<(Vec<f64>, f64)>,
    pub equalities: Vec<(Vec<f64>, f64)>,
}

impl Instance {
    /// Random instance of dimension `1..=4` that contains a random anchor
    /// point, so it is never empty. Members: an optional box, up to three
    /// halfspaces and, in dimension at least 2, an optional hyperplane.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let dim = rng.random_range(1..=4);
        let anchor: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bounds = rng.random_bool(0.7).then(|| {
            let lo = anchor.iter().map(|a| a - rng.random_range(0.0..1.5)).collect();
            let hi = anchor.iter().map(|a| a + rng.random_range(0.0..1.5)).collect();
            (lo, hi)
        });
        let mut halfspaces = Vec::new();
        for _ in 0..rng.random_range(1..=3) {
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if a.iter().map(|v| v * v).sum::<f64>() < 1e-2 {
                continue;
            }
            let at: f64 = a.iter().zip(&anchor).map(|(p, q)| p * q).sum();
            halfspaces.push((a, at + rng.random_range(0.0..0.5)));
        }
        let mut equalities = Vec::new();
        if dim >= 2 && rng.random_bool(0.3) {
            let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if a.iter().map(|v| v * v).sum::<f64>() > 1e-2 {
                let at = a.iter().zip(&anchor).map(|(p, q)| p * q).sum();
                equalities.push((a, at));
            }
        }
        Self {
            dim,
            bounds,
            halfspaces,
            equalities,
        }
    }

    pub fn members(&self) -> Vec<ConvexSet> {
        let mut m = Vec::new();
        if let Some((lo, hi)) = &self.bounds {
            m.push(
                ConvexSet::boxed(DVector::from_column_slice(lo), DVector::from_column_slice(hi))
                    .unwrap(),
            );
        }
        for (a, b) in &self.halfspaces {
            m.push(ConvexSet::halfspace(DVector::from_column_slice(a), *b).unwrap());
        }
        if !self.equalities.is_empty() {
            let rows = DMatrix::from_fn(self.equalities.len(), self.dim, |r, c| {
                self.equalities[r].0[c]
            });
            let rhs = DVector::from_iterator(
                self.equalities.len(),
                self.equalities.iter().map(|e| e.1),
            );
            m.push(ConvexSet::affine(rows, rhs).unwrap());
        }
        if m.is_empty() {
            m.push(ConvexSet::full(self.dim));
        }
        m
    }

    /// Inequality rows `(g, h)` meaning `g^T x <= h`.
    pub fn inequality_rows(&self) -> Vec<(DVector<f64>, f64)> {
        let mut rows = Vec::new();
        if let Some((lo, hi)) = &self.bounds {
            for i in 0..self.dim {
                let mut e = DVector::zeros(self.dim);
                e[i] = 1.0;
                rows.push((e.clone(), hi[i]));
                rows.push((-e, -lo[i]));
            }
        }
        for (a, b) in &self.halfspaces {
            rows.push((DVector::from_column_slice(a), *b));
        }
        rows
    }
}

/// Projection by enumerating every subset of inequality rows as the active
/// set, solving the KKT system and keeping the feasible, dual-feasible point
/// nearest to `y`. Exponential; only for tiny instances.
pub fn brute_force_projection(inst: &Instance, y: &DVector<f64>) -> Option<DVector<f64>> {
    let ineq = inst.inequality_rows();
    let eq: Vec<(DVector<f64>, f64)> = inst
        .equalities
        .iter()
        .map(|(a, b)| (DVector::from_column_slice(a), *b))
        .collect();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << ineq.len()) {
        let active: Vec<&(DVector<f64>, f64)> = eq
            .iter()
            .chain((0..ineq.len()).filter(|k| mask >> k & 1 == 1).map(|k| &ineq[k]))
            .collect();
        if active.len() > inst.dim {
            continue;
        }
        let m = active.len();
        let n = DMatrix::from_fn(m, inst.dim, |r, c| active[r].0[c]);
        let rhs = DVector::from_iterator(m, active.iter().map(|a| a.1));
        // x = y - N^T u with N x = rhs
        let gram = &n * n.transpose();
        let u = if m == 0 {
            DVector::zeros(0)
        } else {
            match gram.clone().cholesky() {
                Some(ch) => ch.solve(&(&n * y - &rhs)),
                None => continue,
            }
        };
        let x = y - n.transpose() * &u;
        let primal = ineq.iter().all(|(g, h)| g.dot(&x) <= h + 1e-10);
        let dual = u.iter().skip(eq.len()).all(|&v| v >= -1e-10);
        if primal && dual {
            let d = (&x - y).norm();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
    }
    best.map(|(_, x)| x)
}

/// Projected gradient descent on `F(x) = (1/N) sum_i f^i(x)` for one
/// cluster, written against the raw agent matrices.
pub fn centralized_minimizer(
    qs: &[DMatrix<f64>],
    cs: &[DVector<f64>],
    set: &ConvexSet,
    step: f64,
    iterations: usize,
) -> DVector<f64> {
    let n = qs.len() as f64;
    let p = cs[0].len();
    let mut q = DMatrix::zeros(p, p);
    let mut c = DVector::zeros(p);
    for (qi, ci) in qs.iter().zip(cs) {
        q += (qi + qi.transpose()) * (0.5 / n);
        c += ci / n;
    }
    let mut x = set.project(&DVector::zeros(p)).unwrap();
    for _ in 0..iterations {
        let g = &q * &x + &c;
        x = set.project(&(&x - g * step)).unwrap();
    }
    x
}
