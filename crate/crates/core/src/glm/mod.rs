//! Regression engine: penalized IRLS over exponential-family models with
//! cubic B-spline smooths, GCV smoothing selection, Wald tests and
//! link-scale confidence bands.

mod family;
mod fit;
mod infer;
mod spline;

use std::io::Write;

pub use family::{Family, Link};
pub use fit::{
    fit, lambda_grid, FitData, GlmFit, ModelSpec, Term, TermBasis, DEFAULT_BASIS_SIZE, DEVIANCE_TOL, MAX_ITER,
    SCORE_TOL,
};
pub use infer::{predict, wald, z_for_level, Prediction, Wald};
pub use spline::{householder_null_space, SplineBasis};

use crate::table;

#[derive(Debug, thiserror::Error)]
pub enum GlmError {
    #[error("design matrix is singular")]
    SingularDesign,
    #[error("{family:?} family does not support the {link:?} link")]
    Unsupported { family: Family, link: Link },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("table: {0}")]
    Table(String),
}

pub const SUMMARY_HEADER: [&str; 14] = [
    "model_id",
    "family",
    "link",
    "term",
    "estimate",
    "se",
    "z",
    "p_value",
    "deviance",
    "edf",
    "lambda",
    "theta",
    "converged",
    "iterations",
];

/// One row per coefficient.
pub fn write_summary_rows<W: Write>(w: &mut csv::Writer<W>, model_id: &str, fit: &GlmFit) -> Result<(), GlmError> {
    let err = |e: csv::Error| GlmError::Table(e.to_string());
    for (i, name) in fit.coefficient_names.iter().enumerate() {
        let t = wald(fit, i)?;
        w.write_record([
            model_id,
            fit.spec.family.as_str(),
            fit.link.as_str(),
            name,
            &table::num(t.estimate),
            &table::num(t.se),
            &table::num(t.z),
            &table::num(t.p),
            &table::num(fit.deviance),
            &table::num(fit.edf),
            &table::opt_num(fit.lambda),
            &table::opt_num(fit.theta),
            if fit.converged { "true" } else { "false" },
            &fit.iterations.to_string(),
        ])
        .map_err(err)?;
    }
    Ok(())
}
