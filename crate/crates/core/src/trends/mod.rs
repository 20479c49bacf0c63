//! Trend analyses: diversity curves, per-entity occurrence models and their
//! classification, category and hurdle models, synonymic groups and the
//! abundance distribution.

mod abundance;
mod category;
mod diversity_trends;
mod occurrence;
mod synonyms;

use std::io::Write;

use crate::glm::{self, FitData, GlmError, GlmFit, ModelSpec};
use crate::table;

pub use abundance::{abundance_distribution, AbundanceFit};
pub use category::{category_trends, CategoryTrend, CategoryTrends, HurdleCounts};
pub use diversity_trends::{diversity_trends, DiversityTrends, MIN_MONTHS};
pub use occurrence::{
    classify_magnitude, classify_magnitude_at, classify_significance, commonness_regression, function_series,
    occurrence_models, package_rollup, write_trend_csv, CommonnessFit, MagnitudeClass, OccurrenceSeries,
    SignificanceClass, TrendSummary, MEANINGFUL_CHANGE, SIGNIFICANCE_LEVEL, TREND_HEADER,
};
pub use synonyms::{
    parse_groups, synonym_groups, write_area_share_csv, AreaShareRow, GroupTrajectory, MemberTrajectory, SynonymGroup,
    SynonymReport, DEFAULT_GROUPS,
};

#[derive(Debug, thiserror::Error)]
pub enum TrendsError {
    #[error("model {model_id}: {source}")]
    Fit { model_id: String, source: GlmError },
    #[error("need at least {need} months of data, got {got}")]
    TooFewMonths { need: usize, got: usize },
    #[error("group definitions line {line}: {message}")]
    GroupFormat { line: usize, message: String },
    #[error("table: {0}")]
    Table(String),
}

pub(crate) fn fit_model(model_id: &str, spec: &ModelSpec, data: &FitData) -> Result<GlmFit, TrendsError> {
    glm::fit(spec, data).map_err(|source| TrendsError::Fit { model_id: model_id.to_owned(), source })
}

/// Observed proportion when every month sits at the same boundary (all
/// failures or all successes); the binomial likelihood has no finite
/// maximum there, so such series get a constant curve instead of a fit.
pub(crate) fn boundary_proportion(successes: &[u64], trials: &[u64]) -> Option<f64> {
    let pairs = || successes.iter().zip(trials).filter(|(_, &n)| n > 0);
    if pairs().all(|(&s, _)| s == 0) {
        Some(0.0)
    } else if pairs().all(|(&s, &n)| s == n) {
        Some(1.0)
    } else {
        None
    }
}

/// Fitted mean curve over months with a 95% band.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub model_id: String,
    pub months: Vec<i32>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Curve {
    /// mean(m) / mean(first month), for proportional gridlines.
    pub fn ratios(&self) -> Vec<f64> {
        let base = self.mean.first().copied().unwrap_or(f64::NAN);
        self.mean.iter().map(|m| m / base).collect()
    }

    /// mean(last) / mean(first).
    pub fn endpoint_ratio(&self) -> f64 {
        match (self.mean.first(), self.mean.last()) {
            (Some(a), Some(b)) => b / a,
            _ => f64::NAN,
        }
    }

    pub fn flat_zero(model_id: &str, months: &[i32]) -> Curve {
        Curve::constant(model_id, months, 0.0)
    }

    pub fn constant(model_id: &str, months: &[i32], value: f64) -> Curve {
        let z = vec![value; months.len()];
        Curve { model_id: model_id.to_owned(), months: months.to_vec(), mean: z.clone(), lo: z.clone(), hi: z }
    }

    /// Predict `fit` over `months`; extra linear covariates are held at the
    /// given constants.
    pub(crate) fn from_fit(model_id: &str, fit: &GlmFit, months: &[i32], fixed: &[f64]) -> Result<Curve, TrendsError> {
        let mut cov = vec![months.iter().map(|&m| m as f64).collect::<Vec<f64>>()];
        for &c in fixed {
            cov.push(vec![c; months.len()]);
        }
        let p = glm::predict(fit, &cov, None, 0.95)
            .map_err(|source| TrendsError::Fit { model_id: model_id.to_owned(), source })?;
        Ok(Curve { model_id: model_id.to_owned(), months: months.to_vec(), mean: p.mean, lo: p.lo, hi: p.hi })
    }
}

/// Columns: month_index, mean, lo, hi, ratio.
pub fn write_curve_csv<W: Write>(curve: &Curve, out: W) -> Result<(), TrendsError> {
    let err = |e: csv::Error| TrendsError::Table(e.to_string());
    let mut w = table::writer(out);
    w.write_record(["month_index", "mean", "lo", "hi", "ratio"]).map_err(err)?;
    for (i, r) in curve.ratios().into_iter().enumerate() {
        w.write_record([
            curve.months[i].to_string(),
            table::num(curve.mean[i]),
            table::num(curve.lo[i]),
            table::num(curve.hi[i]),
            table::num(r),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| TrendsError::Table(e.to_string()))
}
