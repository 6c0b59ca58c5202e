use std::io::Write;

use nalgebra::{DMatrix, DVector};

use super::SolverError;
use crate::graph::weighted_norm;

pub const METRICS_HEADER: [&str; 5] = [
    "round",
    "optimality_gap",
    "consensus_error",
    "tracking_error",
    "iterate_change",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// `||z(k) - 1 x*^T||_phi`, when the equilibrium is known.
    pub optimality_gap: Option<f64>,
    /// `D(v(k))`.
    pub consensus_error: f64,
    /// `S(y(k))`.
    pub tracking_error: f64,
    /// `||z(k) - z(k-1)||_phi`; zero at round 0.
    pub iterate_change: f64,
    /// Largest relative violation of the cluster-sum tracking identity.
    pub conservation_residual: f64,
}

fn check_rows(expected: usize, found: usize) -> Result<(), SolverError> {
    if expected == found {
        Ok(())
    } else {
        Err(SolverError::DimensionMismatch { expected, found })
    }
}

/// `sqrt(sum_{i,j} phi_i phi_j ||v^i - v^j||^2)` over all agent pairs.
pub fn consensus_error(v: &DMatrix<f64>, phi: &DVector<f64>) -> Result<f64, SolverError> {
    check_rows(v.nrows(), phi.len())?;
    let n = v.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += phi[i] * phi[j] * (v.row(i) - v.row(j)).norm_squared();
            }
        }
    }
    Ok(total.sqrt())
}

/// `S(y) = sum_h sqrt(sum_i ||y_h^i - pi_i sum_j y_h^j||^2 / pi_i)`.
pub fn tracking_error(y: &[DMatrix<f64>], pis: &[DVector<f64>]) -> Result<f64, SolverError> {
    check_rows(y.len(), pis.len())?;
    let mut total = 0.0;
    for (yh, pi) in y.iter().zip(pis) {
        check_rows(yh.nrows(), pi.len())?;
        let sum = yh.row_sum();
        let mut s = 0.0;
        for (i, row) in yh.row_iter().enumerate() {
            s += (row - &sum * pi[i]).norm_squared() / pi[i];
        }
        total += s.sqrt();
    }
    Ok(total)
}

/// `||z - 1 x*^T||_phi`.
pub fn optimality_gap(
    z: &DMatrix<f64>,
    x_star: &DVector<f64>,
    phi: &DVector<f64>,
) -> Result<f64, SolverError> {
    check_rows(z.ncols(), x_star.len())?;
    let mut diff = z.clone();
    for mut row in diff.row_iter_mut() {
        row -= x_star.transpose();
    }
    Ok(weighted_norm(&diff, phi)?)
}

fn fmt_value(v: f64) -> String {
    format!("{v:e}")
}

/// Metrics CSV with the fixed header; an unknown optimality gap is an empty cell.
pub fn write_metrics_csv<W: Write>(writer: W, metrics: &[RoundMetrics]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for m in metrics {
        w.write_record([
            m.round.to_string(),
            m.optimality_gap.map(fmt_value).unwrap_or_default(),
            fmt_value(m.consensus_error),
            fmt_value(m.tracking_error),
            fmt_value(m.iterate_change),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Dense matrix as headerless CSV, one row per line.
pub fn write_matrix_csv<W: Write>(writer: W, m: &DMatrix<f64>) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in m.row_iter() {
        w.write_record(row.iter().map(|&v| fmt_value(v)))?;
    }
    w.flush()?;
    Ok(())
}
