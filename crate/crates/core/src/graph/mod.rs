//! Directed communication graphs and the structural constants used by the
//! contraction bounds: strong connectivity, diameter and maximal edge-utility.

mod weights;

pub use weights::{
    perron_left, perron_right, sigma_c, sigma_r, weighted_norm, RowContraction, StochasticKind,
    WeightMatrix, PERRON_MAX_ITERATIONS, PERRON_TOLERANCE,
};

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge ({from}, {to}) references a node outside [0, {node_count})")]
    NodeOutOfRange {
        from: usize,
        to: usize,
        node_count: usize,
    },
    #[error("duplicate edge ({from}, {to})")]
    DuplicateEdge { from: usize, to: usize },
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("node {node} has no self-loop")]
    MissingSelfLoop { node: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("weight matrix entry ({row}, {col}) does not match the edge set")]
    NotCompliant { row: usize, col: usize },
    #[error("{kind:?} matrix has line {index} summing to {sum}")]
    NotStochastic {
        kind: StochasticKind,
        index: usize,
        sum: f64,
    },
    #[error("expected a {expected:?} matrix")]
    WrongKind { expected: StochasticKind },
    #[error("power iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("Perron vector check failed: {0}")]
    InvalidPerron(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// A directed graph on nodes `0..node_count`. Edge `(from, to)` means `to`
/// receives information from `from`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    node_count: usize,
    out: Vec<BTreeSet<usize>>,
}

impl DirectedGraph {
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        if node_count == 0 {
            return Err(GraphError::Empty);
        }
        let mut out = vec![BTreeSet::new(); node_count];
        for (from, to) in edges {
            if from >= node_count || to >= node_count {
                return Err(GraphError::NodeOutOfRange {
                    from,
                    to,
                    node_count,
                });
            }
            if !out[from].insert(to) {
                return Err(GraphError::DuplicateEdge { from, to });
            }
        }
        Ok(Self { node_count, out })
    }

    /// Directed cycle `0 -> 1 -> ... -> n-1 -> 0`, optionally with self-loops.
    pub fn cycle(node_count: usize, self_loops: bool) -> Result<Self, GraphError> {
        let mut edges: Vec<(usize, usize)> = Vec::new();
        if node_count > 1 {
            edges.extend((0..node_count).map(|i| (i, (i + 1) % node_count)));
        }
        let mut g = Self::new(node_count, edges)?;
        if self_loops {
            g.add_self_loops();
        }
        Ok(g)
    }

    /// Complete graph including self-loops.
    pub fn complete(node_count: usize) -> Result<Self, GraphError> {
        let edges = (0..node_count).flat_map(|i| (0..node_count).map(move |j| (i, j)));
        Self::new(node_count, edges)
    }

    /// Random strongly connected graph with self-loops: a randomly ordered
    /// Hamiltonian cycle plus each remaining ordered pair with probability
    /// `extra_edge_probability`.
    pub fn random_strongly_connected<R: Rng + ?Sized>(
        node_count: usize,
        extra_edge_probability: f64,
        rng: &mut R,
    ) -> Result<Self, GraphError> {
        let mut order: Vec<usize> = (0..node_count).collect();
        order.shuffle(rng);
        let mut g = Self::new(node_count, std::iter::empty())?;
        if node_count > 1 {
            for k in 0..node_count {
                g.insert_edge(order[k], order[(k + 1) % node_count]);
            }
        }
        for from in 0..node_count {
            for to in 0..node_count {
                if from != to && rng.random::<f64>() < extra_edge_probability {
                    g.insert_edge(from, to);
                }
            }
        }
        g.add_self_loops();
        Ok(g)
    }

    fn insert_edge(&mut self, from: usize, to: usize) {
        self.out[from].insert(to);
    }

    pub fn add_self_loops(&mut self) {
        for i in 0..self.node_count {
            self.out[i].insert(i);
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(BTreeSet::len).sum()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        from < self.node_count && self.out[from].contains(&to)
    }

    /// Edges in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(from, tos)| tos.iter().map(move |&to| (from, to)))
    }

    pub fn out_neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.out[node].iter().copied()
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.out.iter().filter(|tos| tos.contains(&node)).count()
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.out[node].len()
    }

    pub fn has_all_self_loops(&self) -> bool {
        (0..self.node_count).all(|i| self.out[i].contains(&i))
    }

    pub fn check_self_loops(&self) -> Result<(), GraphError> {
        match (0..self.node_count).find(|&i| !self.out[i].contains(&i)) {
            Some(node) => Err(GraphError::MissingSelfLoop { node }),
            None => Ok(()),
        }
    }

    /// Same node set with every edge reversed.
    pub fn reversed(&self) -> Self {
        let mut out = vec![BTreeSet::new(); self.node_count];
        for (from, to) in self.edges() {
            out[to].insert(from);
        }
        Self {
            node_count: self.node_count,
            out,
        }
    }

    /// BFS hop counts from `source`; self-loops never shorten a path.
    fn bfs_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for w in self.out_neighbors(u) {
                if dist[w].is_none() {
                    dist[w] = Some(du + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn is_strongly_connected(&self) -> bool {
        let reaches_all = |g: &Self| g.bfs_distances(0).iter().all(Option::is_some);
        reaches_all(self) && reaches_all(&self.reversed())
    }

    fn require_strongly_connected(&self) -> Result<(), GraphError> {
        if self.is_strongly_connected() {
            Ok(())
        } else {
            Err(GraphError::NotStronglyConnected)
        }
    }

    /// Longest shortest directed path over ordered node pairs. A single node
    /// has diameter 0.
    pub fn diameter(&self) -> Result<usize, GraphError> {
        self.require_strongly_connected()?;
        Ok((0..self.node_count)
            .flat_map(|s| self.bfs_distances(s))
            .map(|d| d.unwrap_or(0))
            .max()
            .unwrap_or(0))
    }

    /// Maximal edge-utility: one shortest path is chosen for every ordered
    /// pair `(s, t)`, `s != t` (the lexicographically smallest node sequence),
    /// and the result is the largest number of chosen paths sharing a single
    /// non-self-loop edge. A single node has no pairs and yields 0.
    pub fn max_edge_utility(&self) -> Result<usize, GraphError> {
        self.require_strongly_connected()?;
        let n = self.node_count;
        let reversed = self.reversed();
        let mut usage = vec![vec![0usize; n]; n];
        for target in 0..n {
            // hops from every node to `target`
            let to_target: Vec<usize> = reversed
                .bfs_distances(target)
                .into_iter()
                .map(|d| d.expect("strongly connected"))
                .collect();
            for source in (0..n).filter(|&s| s != target) {
                let mut current = source;
                while current != target {
                    // out-neighbors iterate ascending, so the first hit is the
                    // lexicographically smallest continuation
                    let next = self
                        .out_neighbors(current)
                        .find(|&w| w != current && to_target[w] + 1 == to_target[current])
                        .expect("a shortest-path successor exists");
                    usage[current][next] += 1;
                    current = next;
                }
            }
        }
        Ok(usage.into_iter().flatten().max().unwrap_or(0))
    }

    /// Edge-list text: a `nodes N` header followed by one `from to` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("nodes {}\n", self.node_count);
        for (from, to) in self.edges() {
            let _ = writeln!(s, "{from} {to}");
        }
        s
    }

    pub fn parse_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let parse_err = |line: usize, message: &str| GraphError::Parse {
            line,
            message: message.to_string(),
        };
        let (header_line, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
        let node_count = header
            .strip_prefix("nodes")
            .and_then(|rest| rest.trim().parse::<usize>().ok())
            .ok_or_else(|| parse_err(header_line, "expected `nodes N`"))?;
        let mut edges = Vec::new();
        for (line, content) in lines {
            let mut parts = content.split_whitespace().map(str::parse::<usize>);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(from)), Some(Ok(to)), None) => edges.push((from, to)),
                _ => return Err(parse_err(line, "expected `from to`")),
            }
        }
        Self::new(node_count, edges)
    }
}
