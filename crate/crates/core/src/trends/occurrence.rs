use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{boundary_proportion, fit_model, TrendsError};
use crate::catalog::{Catalog, Category};
use crate::extract::CallProfile;
use crate::glm::{wald, Family, FitData, ModelSpec, Term};
use crate::table;

/// Odds-ratio distance from 1 that counts as a meaningful change.
pub const MEANINGFUL_CHANGE: f64 = 0.01;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Monthly presence counts of one entity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccurrenceSeries {
    pub entity: String,
    pub months: Vec<i32>,
    pub successes: Vec<u64>,
    pub trials: Vec<u64>,
}

impl OccurrenceSeries {
    pub fn total_successes(&self) -> u64 {
        self.successes.iter().sum()
    }

    pub fn proportions(&self) -> Vec<f64> {
        self.successes
            .iter()
            .zip(&self.trials)
            .map(|(&s, &n)| if n > 0 { s as f64 / n as f64 } else { f64::NAN })
            .collect()
    }
}

/// Repositories per month, over the listed months.
fn trials(profiles: &[CallProfile], months: &[i32]) -> Vec<u64> {
    let mut by: BTreeMap<i32, u64> = BTreeMap::new();
    for p in profiles {
        *by.entry(p.month_index).or_insert(0) += 1;
    }
    months.iter().map(|m| by.get(m).copied().unwrap_or(0)).collect()
}

/// Presence series for every entity in `entities`, where a repository counts
/// as a success when `hit` finds one of its profile keys mapped onto the entity.
fn presence_series<'a>(
    profiles: &[CallProfile],
    months: &[i32],
    entities: impl IntoIterator<Item = &'a str>,
    keys_of: impl Fn(&CallProfile) -> BTreeSet<String>,
) -> Vec<OccurrenceSeries> {
    let col: BTreeMap<i32, usize> = months.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let n = trials(profiles, months);
    let mut counts: BTreeMap<&str, Vec<u64>> = entities.into_iter().map(|e| (e, vec![0; months.len()])).collect();
    for p in profiles {
        let Some(&c) = col.get(&p.month_index) else { continue };
        for k in keys_of(p) {
            if let Some(v) = counts.get_mut(k.as_str()) {
                v[c] += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(e, successes)| OccurrenceSeries {
            entity: e.to_owned(),
            months: months.to_vec(),
            successes,
            trials: n.clone(),
        })
        .collect()
}

/// One series per retained function. Trials are all profiles of the month.
pub fn function_series(profiles: &[CallProfile], catalog: &Catalog, months: &[i32]) -> Vec<OccurrenceSeries> {
    let retained = catalog.retained();
    presence_series(profiles, months, retained.iter().map(String::as_str), |p| {
        p.counts.keys().map(|k| catalog.entity_of(k).to_owned()).collect()
    })
}

/// One series per package: a repository succeeds when it uses any retained
/// function of the package. Packages without retained functions are skipped
/// and reported in the returned notices.
pub fn package_rollup(
    profiles: &[CallProfile],
    catalog: &Catalog,
    months: &[i32],
) -> (Vec<OccurrenceSeries>, Vec<String>) {
    let mut packages: BTreeMap<&str, bool> = BTreeMap::new();
    for e in catalog.entries() {
        if let Some(pkg) = &e.package {
            *packages.entry(pkg.as_str()).or_insert(false) |= e.retained;
        }
    }
    let notices = packages
        .iter()
        .filter(|(_, has)| !**has)
        .map(|(p, _)| format!("package {p} has no retained functions; skipped"))
        .collect();
    let kept: Vec<&str> = packages.iter().filter(|(_, has)| **has).map(|(p, _)| *p).collect();
    let series = presence_series(profiles, months, kept, |p| {
        p.counts
            .keys()
            .filter_map(|k| catalog.entry_for_key(k))
            .filter(|e| e.retained)
            .filter_map(|e| e.package.clone())
            .collect()
    });
    (series, notices)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceClass {
    SigUp,
    SigDown,
    None,
}

impl SignificanceClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            SignificanceClass::SigUp => "sig_up",
            SignificanceClass::SigDown => "sig_down",
            SignificanceClass::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeClass {
    MeaningfulUp,
    MeaningfulDown,
    Stable,
}

impl MagnitudeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            MagnitudeClass::MeaningfulUp => "meaningful_up",
            MagnitudeClass::MeaningfulDown => "meaningful_down",
            MagnitudeClass::Stable => "stable",
        }
    }
}

pub fn classify_magnitude(odds_ratio: f64) -> MagnitudeClass {
    classify_magnitude_at(odds_ratio, MEANINGFUL_CHANGE)
}

/// Magnitude class against a configurable odds-ratio threshold.
pub fn classify_magnitude_at(odds_ratio: f64, threshold: f64) -> MagnitudeClass {
    if odds_ratio - 1.0 >= threshold {
        MagnitudeClass::MeaningfulUp
    } else if 1.0 - odds_ratio >= threshold {
        MagnitudeClass::MeaningfulDown
    } else {
        MagnitudeClass::Stable
    }
}

pub fn classify_significance(slope: f64, p_value: f64) -> SignificanceClass {
    if p_value < SIGNIFICANCE_LEVEL && slope > 0.0 {
        SignificanceClass::SigUp
    } else if p_value < SIGNIFICANCE_LEVEL && slope < 0.0 {
        SignificanceClass::SigDown
    } else {
        SignificanceClass::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendSummary {
    pub entity: String,
    pub category: Category,
    /// Fitted occurrence probability at the final month.
    pub intercept_prob: f64,
    /// Log-odds change per month.
    pub slope: f64,
    pub se: f64,
    pub p_value: f64,
    pub odds_ratio: f64,
    pub significance_class: SignificanceClass,
    pub magnitude_class: MagnitudeClass,
    /// Fitted probability at the first month.
    pub first_prob: f64,
    pub separation: bool,
    pub converged: bool,
}

impl TrendSummary {
    fn empty(entity: &str, category: Category) -> Self {
        TrendSummary {
            entity: entity.to_owned(),
            category,
            intercept_prob: 0.0,
            slope: f64::NAN,
            se: f64::NAN,
            p_value: f64::NAN,
            odds_ratio: f64::NAN,
            significance_class: SignificanceClass::None,
            magnitude_class: MagnitudeClass::Stable,
            first_prob: 0.0,
            separation: false,
            converged: true,
        }
    }
}

/// Weighted binomial GLM per entity with t = month − final_month, so the
/// intercept is the log-odds at the final month.
pub fn occurrence_models(
    series: &[OccurrenceSeries],
    final_month: i32,
    category_of: &(dyn Fn(&str) -> Category + Sync),
) -> Result<Vec<TrendSummary>, TrendsError> {
    let mut out: Vec<TrendSummary> = series
        .par_iter()
        .map(|s| occurrence_model(s, final_month, category_of(&s.entity)))
        .collect::<Result<_, _>>()?;
    out.sort_by(|a, b| a.entity.cmp(&b.entity));
    Ok(out)
}

fn occurrence_model(s: &OccurrenceSeries, final_month: i32, category: Category) -> Result<TrendSummary, TrendsError> {
    match boundary_proportion(&s.successes, &s.trials) {
        Some(0.0) => return Ok(TrendSummary::empty(&s.entity, category)),
        Some(_) => {
            // Present in every repository: no finite slope estimate.
            let mut r = TrendSummary::empty(&s.entity, category);
            r.intercept_prob = 1.0;
            r.first_prob = 1.0;
            r.separation = true;
            return Ok(r);
        }
        None => {}
    }
    let rows: Vec<usize> = (0..s.months.len()).filter(|&i| s.trials[i] > 0).collect();
    let t: Vec<f64> = rows.iter().map(|&i| (s.months[i] - final_month) as f64).collect();
    let data = FitData {
        covariates: vec![t],
        y: rows.iter().map(|&i| s.successes[i] as f64).collect(),
        weights: Some(rows.iter().map(|&i| s.trials[i] as f64).collect()),
        offset: None,
    };
    let spec = ModelSpec::new(Family::Binomial, vec![Term::linear("t")]);
    let fit = fit_model(&s.entity, &spec, &data)?;
    let w = wald(&fit, 1).map_err(|source| TrendsError::Fit { model_id: s.entity.clone(), source })?;
    let logistic = |e: f64| 1.0 / (1.0 + (-e).exp());
    let first_t = s.months.first().map_or(0, |m| m - final_month) as f64;
    let odds_ratio = w.estimate.exp();
    Ok(TrendSummary {
        entity: s.entity.clone(),
        category,
        intercept_prob: logistic(fit.beta[0]),
        slope: w.estimate,
        se: w.se,
        p_value: w.p,
        odds_ratio,
        significance_class: classify_significance(w.estimate, w.p),
        magnitude_class: classify_magnitude(odds_ratio),
        first_prob: logistic(fit.beta[0] + w.estimate * first_t),
        separation: fit.separation,
        converged: fit.converged,
    })
}

pub const TREND_HEADER: [&str; 12] = [
    "entity",
    "category",
    "intercept_prob",
    "slope",
    "se",
    "p_value",
    "odds_ratio",
    "significance_class",
    "magnitude_class",
    "first_prob",
    "separation",
    "converged",
];

/// Word-shift table: x = slope, y = intercept_prob.
pub fn write_trend_csv<W: Write>(rows: &[TrendSummary], out: W) -> Result<(), TrendsError> {
    let err = |e: csv::Error| TrendsError::Table(e.to_string());
    let mut w = table::writer(out);
    w.write_record(TREND_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.entity.clone(),
            r.category.as_str().to_owned(),
            table::num(r.intercept_prob),
            table::num(r.slope),
            table::num(r.se),
            table::num(r.p_value),
            table::num(r.odds_ratio),
            r.significance_class.as_str().to_owned(),
            r.magnitude_class.as_str().to_owned(),
            table::num(r.first_prob),
            r.separation.to_string(),
            r.converged.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| TrendsError::Table(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommonnessFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub n: usize,
}

/// Ordinary least squares of |p_final − p_first| on p_final across entities
/// with a defined slope.
pub fn commonness_regression(rows: &[TrendSummary]) -> Option<CommonnessFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.slope.is_finite())
        .map(|r| (r.intercept_prob, (r.intercept_prob - r.first_prob).abs()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 0.0 };
    Some(CommonnessFit { intercept: my - slope * mx, slope, r_squared, n })
}
