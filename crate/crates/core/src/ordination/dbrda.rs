use serde::Serialize;

use super::{gower_center, DissimilarityMatrix, OrdinationError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RdaResult {
    /// trace_fitted / trace_total. Not clamped: with negative eigenvalues in
    /// the centered matrix it can leave [0, 1].
    pub explained_fraction: f64,
    pub trace_total: f64,
    pub trace_fitted: f64,
    /// No variation at all; explained_fraction is set to 0.
    pub degenerate: bool,
}

/// Share of the Gower-centered trace captured by the hat matrix of [1, t].
///
/// B has zero row sums, so tr(HBH) = tr(HB) = uᵀBu with u the unit-norm
/// centered covariate.
pub fn dbrda_time(d: &DissimilarityMatrix, t: &[f64]) -> Result<RdaResult, OrdinationError> {
    let n = d.n();
    if t.len() != n {
        return Err(OrdinationError::Dimension { need: n, got: t.len() });
    }
    if n < 3 {
        return Err(OrdinationError::Degenerate { need: 3, got: n });
    }
    let b = gower_center(d);
    let trace_total = b.trace();
    let mean = t.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = t.iter().map(|v| v - mean).collect();
    let ss: f64 = c.iter().map(|v| v * v).sum();
    let spread = t.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
    if ss <= 0.0 || spread <= 1e-12 * mean.abs().max(1.0) {
        return Err(OrdinationError::RankDeficient);
    }
    let u = nalgebra::DVector::from_vec(c) / ss.sqrt();
    let trace_fitted = (u.transpose() * &b * &u)[(0, 0)];
    let scale = d.d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if trace_total.abs() <= 1e-14 * (scale * scale * n as f64).max(f64::MIN_POSITIVE) {
        return Ok(RdaResult { explained_fraction: 0.0, trace_total, trace_fitted, degenerate: true });
    }
    Ok(RdaResult { explained_fraction: trace_fitted / trace_total, trace_total, trace_fitted, degenerate: false })
}

/// Explained fraction only; degenerate inputs give 0.
pub fn dbrda_time_fraction(d: &DissimilarityMatrix, t: &[f64]) -> Result<f64, OrdinationError> {
    dbrda_time(d, t).map(|r| r.explained_fraction)
}
