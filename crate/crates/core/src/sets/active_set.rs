//! Exact projection onto a polyhedron `{x : E x = e, G x <= g}` by a dual
//! active-set method: start from the projection onto the active constraints,
//! then repeatedly add the most violated inequality, dropping active ones whose
//! multipliers would turn negative.

use std::sync::Mutex;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{ConvexSet, SetError};

/// Relative feasibility tolerance on `g^T x - h`, scaled by `||g|| (1 + ||x||_inf)`.
const FEASIBILITY_TOLERANCE: f64 = 1e-12;

#[derive(Debug)]
pub(crate) struct Polyhedron {
    dim: usize,
    /// Equality rows first, then inequality rows.
    rows: DMatrix<f64>,
    rhs: DVector<f64>,
    row_norms: DVector<f64>,
    equalities: usize,
    gram: DMatrix<f64>,
    /// Inequalities active at the previous solution.
    warm: Mutex<Vec<usize>>,
}

fn collect(
    set: &ConvexSet,
    eq: &mut Vec<(DVector<f64>, f64)>,
    ineq: &mut Vec<(DVector<f64>, f64)>,
) {
    match set {
        ConvexSet::FullSpace(_) => {}
        ConvexSet::Box(b) => {
            let n = b.lower.len();
            for i in 0..n {
                if b.upper[i].is_finite() {
                    let mut g = DVector::zeros(n);
                    g[i] = 1.0;
                    ineq.push((g, b.upper[i]));
                }
                if b.lower[i].is_finite() {
                    let mut g = DVector::zeros(n);
                    g[i] = -1.0;
                    ineq.push((g, -b.lower[i]));
                }
            }
        }
        ConvexSet::Halfspace(h) => ineq.push((h.normal.clone(), h.offset)),
        ConvexSet::Affine(a) => {
            for (r, row) in a.matrix.row_iter().enumerate() {
                eq.push((row.transpose(), a.rhs[r]));
            }
        }
        ConvexSet::Intersection(i) => {
            for m in &i.members {
                collect(m, eq, ineq);
            }
        }
    }
}

impl Polyhedron {
    pub(crate) fn new(members: &[ConvexSet], dim: usize) -> Self {
        let (mut eq, mut ineq) = (Vec::new(), Vec::new());
        for m in members {
            collect(m, &mut eq, &mut ineq);
        }
        let equalities = eq.len();
        let all: Vec<_> = eq.into_iter().chain(ineq).collect();
        let rows = DMatrix::from_fn(all.len(), dim, |r, c| all[r].0[c]);
        let rhs = DVector::from_iterator(all.len(), all.iter().map(|(_, h)| *h));
        let row_norms = DVector::from_iterator(all.len(), rows.row_iter().map(|r| r.norm()));
        let gram = &rows * rows.transpose();
        Self {
            dim,
            rows,
            rhs,
            row_norms,
            equalities,
            gram,
            warm: Mutex::new(Vec::new()),
        }
    }

    fn factor(&self, active: &[usize]) -> Option<Cholesky<f64, Dyn>> {
        let m = active.len();
        // an empty factor still solves the empty system
        if m == 0 {
            return Cholesky::new(DMatrix::identity(0, 0));
        }
        let k = DMatrix::from_fn(m, m, |a, b| self.gram[(active[a], active[b])]);
        Cholesky::new(k)
    }

    /// Multipliers `u` with `x = y - N^T u` on the active rows tight.
    fn solve_active(
        &self,
        y: &DVector<f64>,
        active: &[usize],
        chol: &Cholesky<f64, Dyn>,
    ) -> (DVector<f64>, DVector<f64>) {
        let b = DVector::from_iterator(
            active.len(),
            active
                .iter()
                .map(|&j| self.rows.row(j).dot(&y.transpose()) - self.rhs[j]),
        );
        let u = chol.solve(&b);
        (self.point(y, active, &u), u)
    }

    /// `sum_a coeffs[a] rows[active[a]]`.
    fn combine(&self, active: &[usize], coeffs: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        for (a, &j) in active.iter().enumerate() {
            v += self.rows.row(j).transpose() * coeffs[a];
        }
        v
    }

    fn point(&self, y: &DVector<f64>, active: &[usize], u: &DVector<f64>) -> DVector<f64> {
        y - self.combine(active, u)
    }

    /// Drops negative inequality multipliers one at a time until the active
    /// set is dual feasible. Equalities always stay.
    fn settle(
        &self,
        y: &DVector<f64>,
        active: &mut Vec<usize>,
    ) -> Result<(DVector<f64>, DVector<f64>, Cholesky<f64, Dyn>), SetError> {
        loop {
            let chol = match self.factor(active) {
                Some(c) => c,
                None if active.len() > self.equalities => {
                    active.truncate(self.equalities);
                    continue;
                }
                None => return Err(SetError::RankDeficient { condition: f64::INFINITY }),
            };
            let (x, u) = self.solve_active(y, active, &chol);
            let worst = (self.equalities..active.len())
                .min_by(|&a, &b| u[a].total_cmp(&u[b]))
                .filter(|&a| u[a] < 0.0);
            match worst {
                Some(a) => {
                    active.remove(a);
                }
                None => return Ok((x, u, chol)),
            }
        }
    }

    fn most_violated(&self, x: &DVector<f64>, active: &[usize]) -> Option<usize> {
        let scale = 1.0 + x.amax();
        let values = &self.rows * x - &self.rhs;
        (self.equalities..self.rows.nrows())
            .filter(|j| !active.contains(j))
            .map(|j| (j, values[j] / self.row_norms[j]))
            .filter(|&(_, v)| v > FEASIBILITY_TOLERANCE * scale)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
    }

    pub(crate) fn project(&self, y: &DVector<f64>) -> Result<DVector<f64>, SetError> {
        let mut active: Vec<usize> = (0..self.equalities).collect();
        active.extend(self.warm.lock().map(|w| w.clone()).unwrap_or_default());
        let (mut x, mut u, mut chol) = self.settle(y, &mut active)?;
        let limit = 50 * (self.rows.nrows() + self.dim);
        let mut iterations = 0;
        while let Some(p) = self.most_violated(&x, &active) {
            loop {
                iterations += 1;
                if iterations > limit {
                    return Err(SetError::NoConvergence { cycles: limit });
                }
                let kp = DVector::from_iterator(
                    active.len(),
                    active.iter().map(|&j| self.gram[(j, p)]),
                );
                let r = if active.is_empty() { kp.clone() } else { chol.solve(&kp) };
                let z = self.rows.row(p).transpose() - self.combine(&active, &r);
                let z2 = z.norm_squared();
                let excess = self.rows.row(p).dot(&x.transpose()) - self.rhs[p];
                let t2 = if z2 > 1e-20 * self.row_norms[p].powi(2) {
                    excess / z2
                } else {
                    f64::INFINITY
                };
                let (t1, k) = (self.equalities..active.len())
                    .filter(|&a| r[a] > 0.0)
                    .map(|a| (u[a] / r[a], a))
                    .fold((f64::INFINITY, usize::MAX), |best, c| {
                        if c.0 < best.0 {
                            c
                        } else {
                            best
                        }
                    });
                if !t1.is_finite() && !t2.is_finite() {
                    return Err(SetError::EmptyIntersection);
                }
                let t = t1.min(t2);
                if t2.is_finite() {
                    x -= &z * t;
                }
                u -= &r * t;
                if t2 <= t1 {
                    active.push(p);
                    break;
                }
                active.remove(k);
                u = u.remove_row(k);
                chol = self
                    .factor(&active)
                    .ok_or(SetError::RankDeficient { condition: f64::INFINITY })?;
            }
            // re-solve on the new active set so roundoff does not accumulate
            (x, u, chol) = self.settle(y, &mut active)?;
        }
        let mut final_set: Vec<usize> = active[self.equalities..].to_vec();
        final_set.sort_unstable();
        active.truncate(self.equalities);
        active.extend(&final_set);
        if let Some(chol) = self.factor(&active) {
            x = self.solve_active(y, &active, &chol).0;
        }
        if let Ok(mut w) = self.warm.lock() {
            *w = final_set;
        }
        Ok(x)
    }
}
