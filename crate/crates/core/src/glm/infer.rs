use nalgebra::DVector;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use super::fit::{Design, GlmFit};
use super::GlmError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub eta: Vec<f64>,
    pub se_eta: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Row lies outside a spline's fitted range and was clamped to its edge.
    pub extrapolated: Vec<bool>,
    pub level: f64,
}

/// Two-sided normal quantile for a confidence level.
pub fn z_for_level(level: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

/// Mean response with a band built on the link scale and mapped through the
/// inverse link. `covariates` has one column per model term.
pub fn predict(
    fit: &GlmFit,
    covariates: &[Vec<f64>],
    offset: Option<&[f64]>,
    level: f64,
) -> Result<Prediction, GlmError> {
    if covariates.len() != fit.spec.terms.len() {
        return Err(GlmError::Dimension(format!("{} covariates for {} terms", covariates.len(), fit.spec.terms.len())));
    }
    let n = covariates.first().map_or(1, Vec::len);
    if covariates.iter().any(|c| c.len() != n) {
        return Err(GlmError::Dimension("covariate columns differ in length".into()));
    }
    let p = fit.beta.len();
    let (x, extrapolated) = if covariates.is_empty() {
        (nalgebra::DMatrix::from_element(1, 1, 1.0), vec![false])
    } else {
        Design::rows(&fit.bases, p, covariates)
    };
    let beta = DVector::from_column_slice(&fit.beta);
    let cov = fit.covariance_matrix();
    let z = z_for_level(level);
    let mut out = Prediction {
        eta: Vec::with_capacity(n),
        se_eta: Vec::with_capacity(n),
        mean: Vec::with_capacity(n),
        lo: Vec::with_capacity(n),
        hi: Vec::with_capacity(n),
        extrapolated,
        level,
    };
    for i in 0..x.nrows() {
        let row = x.row(i);
        let off = offset.and_then(|o| o.get(i)).copied().unwrap_or(0.0);
        let eta = (row * &beta)[(0, 0)] + off;
        let var = (row * &cov * row.transpose())[(0, 0)].max(0.0);
        let se = var.sqrt();
        let (a, b) = (fit.link.inverse(eta - z * se), fit.link.inverse(eta + z * se));
        out.eta.push(eta);
        out.se_eta.push(se);
        out.mean.push(fit.link.inverse(eta));
        out.lo.push(a.min(b));
        out.hi.push(a.max(b));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Wald {
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

/// z = β/SE, p = 2(1 − Φ(|z|)) = erfc(|z|/√2).
pub fn wald(fit: &GlmFit, index: usize) -> Result<Wald, GlmError> {
    let estimate = *fit.beta.get(index).ok_or_else(|| GlmError::Dimension(format!("no coefficient {index}")))?;
    let se = fit.se(index);
    let z = if estimate == 0.0 { 0.0 } else { estimate / se };
    let p = if z.is_nan() { f64::NAN } else { erfc(z.abs() / std::f64::consts::SQRT_2) };
    Ok(Wald { estimate, se, z, p })
}
