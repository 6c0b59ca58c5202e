//! Projectable closed convex sets.
//!
//! Boxes, halfspaces and affine subspaces project in closed form. An
//! intersection projects with Dykstra's algorithm, whose correction terms make
//! the limit the Euclidean projection onto the intersection rather than just
//! some point inside it. Intersections of polyhedral members may instead
//! project exactly with a dual active-set method.

mod active_set;

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest accepted condition number of `A A^T` for an affine set.
pub const AFFINE_CONDITION_LIMIT: f64 = 1e10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("box bound {index} has lower {lower} > upper {upper}")]
    InvertedBounds { index: usize, lower: f64, upper: f64 },
    #[error("halfspace normal is zero")]
    ZeroNormal,
    #[error("affine constraint matrix is rank deficient (cond(AA^T) = {condition:e})")]
    RankDeficient { condition: f64 },
    #[error("intersection needs at least one member")]
    EmptyIntersection,
    #[error("projection did not converge in {cycles} cycles (is the intersection empty?)")]
    NoConvergence { cycles: usize },
    #[error("non-finite value in set definition")]
    NonFinite,
}

/// Stopping rule of the alternating projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DykstraSettings {
    /// Max-norm change of the iterate and of every correction term between
    /// consecutive cycles.
    pub tolerance: f64,
    pub max_cycles: usize,
}

impl Default for DykstraSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_cycles: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    normal: DVector<f64>,
    offset: f64,
    normal_sq: f64,
}

impl BoxSet {
    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }
}

impl Halfspace {
    pub fn normal(&self) -> &DVector<f64> {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }
}

/// `{x : A x = b}` with a cached factorization of `A A^T`.
#[derive(Debug, Clone)]
pub struct AffineSet {
    matrix: DMatrix<f64>,
    rhs: DVector<f64>,
    gram: Cholesky<f64, Dyn>,
}

impl PartialEq for AffineSet {
    fn eq(&self, other: &Self) -> bool {
        self.matrix == other.matrix && self.rhs == other.rhs
    }
}

#[derive(Debug, Clone)]
pub struct Intersection {
    members: Vec<ConvexSet>,
    settings: DykstraSettings,
    dim: usize,
    exact: Option<Arc<active_set::Polyhedron>>,
}

impl PartialEq for Intersection {
    fn eq(&self, other: &Self) -> bool {
        self.members == other.members
            && self.settings == other.settings
            && self.exact.is_some() == other.exact.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSet {
    Box(BoxSet),
    Halfspace(Halfspace),
    Affine(AffineSet),
    Intersection(Intersection),
    FullSpace(usize),
}

fn check_dim(expected: usize, found: usize) -> Result<(), SetError> {
    if expected == found {
        Ok(())
    } else {
        Err(SetError::DimensionMismatch { expected, found })
    }
}

impl ConvexSet {
    pub fn full(dim: usize) -> Self {
        ConvexSet::FullSpace(dim)
    }

    /// Componentwise bounds; infinite bounds are allowed.
    pub fn boxed(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, SetError> {
        check_dim(lower.len(), upper.len())?;
        for (index, (&lo, &hi)) in lower.iter().zip(upper.iter()).enumerate() {
            if lo.is_nan() || hi.is_nan() {
                return Err(SetError::NonFinite);
            }
            if lo > hi {
                return Err(SetError::InvertedBounds {
                    index,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(ConvexSet::Box(BoxSet { lower, upper }))
    }

    /// `{x : a^T x <= b}`.
    pub fn halfspace(normal: DVector<f64>, offset: f64) -> Result<Self, SetError> {
        if !offset.is_finite() || normal.iter().any(|v| !v.is_finite()) {
            return Err(SetError::NonFinite);
        }
        let normal_sq = normal.norm_squared();
        if normal_sq == 0.0 {
            return Err(SetError::ZeroNormal);
        }
        Ok(ConvexSet::Halfspace(Halfspace {
            normal,
            offset,
            normal_sq,
        }))
    }

    /// `{x : A x = b}`; `A` must have full row rank.
    pub fn affine(matrix: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self, SetError> {
        check_dim(matrix.nrows(), rhs.len())?;
        if matrix.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
            return Err(SetError::NonFinite);
        }
        let gram = &matrix * matrix.transpose();
        let eig = SymmetricEigen::new(gram.clone());
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if condition > AFFINE_CONDITION_LIMIT {
            return Err(SetError::RankDeficient { condition });
        }
        let gram = Cholesky::new(gram).ok_or(SetError::RankDeficient { condition })?;
        Ok(ConvexSet::Affine(AffineSet { matrix, rhs, gram }))
    }

    pub fn intersection(members: Vec<ConvexSet>) -> Result<Self, SetError> {
        Self::intersection_with(members, DykstraSettings::default())
    }

    pub fn intersection_with(
        members: Vec<ConvexSet>,
        settings: DykstraSettings,
    ) -> Result<Self, SetError> {
        let dim = members.first().ok_or(SetError::EmptyIntersection)?.dim();
        for m in &members {
            check_dim(dim, m.dim())?;
        }
        Ok(ConvexSet::Intersection(Intersection {
            members,
            settings,
            dim,
            exact: None,
        }))
    }

    /// Intersection of boxes, halfspaces, affine sets and nested polyhedral
    /// intersections, projected exactly by an active-set method instead of
    /// Dykstra's algorithm. Membership tests still go member by member.
    pub fn polyhedron(members: Vec<ConvexSet>) -> Result<Self, SetError> {
        let dim = members.first().ok_or(SetError::EmptyIntersection)?.dim();
        for m in &members {
            check_dim(dim, m.dim())?;
        }
        let exact = Some(Arc::new(active_set::Polyhedron::new(&members, dim)));
        Ok(ConvexSet::Intersection(Intersection {
            members,
            settings: DykstraSettings::default(),
            dim,
            exact,
        }))
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box(b) => b.lower.len(),
            ConvexSet::Halfspace(h) => h.normal.len(),
            ConvexSet::Affine(a) => a.matrix.ncols(),
            ConvexSet::Intersection(i) => i.dim,
            ConvexSet::FullSpace(d) => *d,
        }
    }

    /// Euclidean projection of `x` onto the set.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>, SetError> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            ConvexSet::FullSpace(_) => x.clone(),
            ConvexSet::Box(b) => x.zip_zip_map(&b.lower, &b.upper, |v, lo, hi| v.max(lo).min(hi)),
            ConvexSet::Halfspace(h) => {
                let excess = h.normal.dot(x) - h.offset;
                if excess > 0.0 {
                    x - &h.normal * (excess / h.normal_sq)
                } else {
                    x.clone()
                }
            }
            ConvexSet::Affine(a) => {
                let residual = &a.matrix * x - &a.rhs;
                x - a.matrix.tr_mul(&a.gram.solve(&residual))
            }
            ConvexSet::Intersection(i) => i.project(x)?,
        })
    }

    /// Whether every defining constraint holds within `tol`.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool, SetError> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            ConvexSet::FullSpace(_) => true,
            ConvexSet::Box(b) => x
                .iter()
                .zip(b.lower.iter().zip(b.upper.iter()))
                .all(|(&v, (&lo, &hi))| v >= lo - tol && v <= hi + tol),
            ConvexSet::Halfspace(h) => h.normal.dot(x) - h.offset <= tol,
            ConvexSet::Affine(a) => (&a.matrix * x - &a.rhs).amax() <= tol,
            ConvexSet::Intersection(i) => {
                for m in &i.members {
                    if !m.contains(x, tol)? {
                        return Ok(false);
                    }
                }
                true
            }
        })
    }

    pub fn members(&self) -> Option<&[ConvexSet]> {
        match self {
            ConvexSet::Intersection(i) => Some(&i.members),
            _ => None,
        }
    }
}

impl Intersection {
    fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>, SetError> {
        if let Some(poly) = &self.exact {
            return poly.project(x);
        }
        if let [only] = self.members.as_slice() {
            return only.project(x);
        }
        let mut current = x.clone();
        let mut corrections = vec![DVector::zeros(self.dim); self.members.len()];
        for _ in 0..self.settings.max_cycles {
            let previous = current.clone();
            let mut correction_change = 0.0f64;
            for (member, correction) in self.members.iter().zip(corrections.iter_mut()) {
                let shifted = &current + &*correction;
                let projected = member.project(&shifted)?;
                let updated = shifted - &projected;
                correction_change = correction_change.max((&updated - &*correction).amax());
                *correction = updated;
                current = projected;
            }
            // the iterate alone can stall for a cycle while corrections still move
            let change = (&current - &previous).amax().max(correction_change);
            if change <= self.settings.tolerance {
                return Ok(current);
            }
        }
        Err(SetError::NoConvergence {
            cycles: self.settings.max_cycles,
        })
    }
}

/// Config-file description of a set: `{ type = "box", lower = [...], upper = [...] }`
/// and similar records. Use `"inf"`/`"-inf"` style TOML floats for open bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvexSetSpec {
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Halfspace {
        a: Vec<f64>,
        b: f64,
    },
    Affine {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    Intersection {
        members: Vec<ConvexSetSpec>,
        #[serde(default)]
        dykstra: DykstraSettings,
        /// Project with the exact active-set method instead of Dykstra.
        #[serde(default)]
        exact: bool,
    },
    Full {
        dim: usize,
    },
}

impl ConvexSetSpec {
    pub fn build(&self) -> Result<ConvexSet, SetError> {
        match self {
            ConvexSetSpec::Box { lower, upper } => ConvexSet::boxed(
                DVector::from_column_slice(lower),
                DVector::from_column_slice(upper),
            ),
            ConvexSetSpec::Halfspace { a, b } => {
                ConvexSet::halfspace(DVector::from_column_slice(a), *b)
            }
            ConvexSetSpec::Affine { a, b } => {
                let cols = a.first().map_or(0, Vec::len);
                if let Some(bad) = a.iter().find(|r| r.len() != cols) {
                    return Err(SetError::DimensionMismatch {
                        expected: cols,
                        found: bad.len(),
                    });
                }
                let m = DMatrix::from_fn(a.len(), cols, |i, j| a[i][j]);
                ConvexSet::affine(m, DVector::from_column_slice(b))
            }
            ConvexSetSpec::Intersection {
                members,
                dykstra,
                exact,
            } => {
                let members = members.iter().map(Self::build).collect::<Result<_, _>>()?;
                if *exact {
                    ConvexSet::polyhedron(members)
                } else {
                    ConvexSet::intersection_with(members, *dykstra)
                }
            }
            ConvexSetSpec::Full { dim } => Ok(ConvexSet::full(*dim)),
        }
    }
}
