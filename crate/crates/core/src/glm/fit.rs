use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::spline::{householder_null_space, SplineBasis};
use super::{Family, GlmError, Link};

pub const DEFAULT_BASIS_SIZE: usize = 10;
pub const MAX_ITER: usize = 100;
pub const DEVIANCE_TOL: f64 = 1e-8;
pub const SCORE_TOL: f64 = 1e-6;
pub const THETA_TOL: f64 = 1e-4;

/// 25 log-spaced smoothing parameters from 1e-4 to 1e6.
pub fn lambda_grid() -> Vec<f64> {
    (0..25).map(|i| 10f64.powf(-4.0 + 10.0 * i as f64 / 24.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    Linear { name: String },
    Spline { name: String, k: usize, penalty_order: usize },
}

impl Term {
    pub fn linear(name: impl Into<String>) -> Self {
        Term::Linear { name: name.into() }
    }

    pub fn spline(name: impl Into<String>) -> Self {
        Term::Spline { name: name.into(), k: DEFAULT_BASIS_SIZE, penalty_order: 2 }
    }

    pub fn name(&self) -> &str {
        match self {
            Term::Linear { name } | Term::Spline { name, .. } => name,
        }
    }
}

/// Model family, link and right-hand side. An intercept is always included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub link: Link,
    pub terms: Vec<Term>,
    pub offset: bool,
}

impl ModelSpec {
    pub fn new(family: Family, terms: Vec<Term>) -> Self {
        ModelSpec { family, link: family.default_link(), terms, offset: false }
    }

    pub fn with_link(mut self, link: Link) -> Self {
        self.link = link;
        self
    }

    pub fn has_smooth(&self) -> bool {
        self.terms.iter().any(|t| matches!(t, Term::Spline { .. }))
    }
}

/// Data for one fit. One covariate column per term, in term order. For
/// binomial models `y` holds successes and `weights` the trials.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitData {
    pub covariates: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub weights: Option<Vec<f64>>,
    pub offset: Option<Vec<f64>>,
}

/// How a term's covariate maps to model-matrix columns; kept for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TermBasis {
    Linear { column: usize },
    Spline { columns: std::ops::Range<usize>, basis: SplineBasis, constraint: Vec<Vec<f64>> },
}

pub(crate) struct Design {
    pub x: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
    pub bases: Vec<TermBasis>,
    pub names: Vec<String>,
}

impl Design {
    pub fn build(spec: &ModelSpec, covariates: &[Vec<f64>], n: usize) -> Result<Self, GlmError> {
        if covariates.len() != spec.terms.len() {
            return Err(GlmError::Dimension(format!("{} covariates for {} terms", covariates.len(), spec.terms.len())));
        }
        let mut cols: Vec<DVector<f64>> = vec![DVector::from_element(n, 1.0)];
        let mut names = vec!["(Intercept)".to_owned()];
        let mut blocks: Vec<(usize, DMatrix<f64>)> = Vec::new();
        let mut bases = Vec::new();
        for (term, x) in spec.terms.iter().zip(covariates) {
            if x.len() != n {
                return Err(GlmError::Dimension(format!("{} has {} rows, expected {n}", term.name(), x.len())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(GlmError::InvalidInput(format!("{} has non-finite values", term.name())));
            }
            match term {
                Term::Linear { name } => {
                    bases.push(TermBasis::Linear { column: cols.len() });
                    cols.push(DVector::from_column_slice(x));
                    names.push(name.clone());
                }
                Term::Spline { name, k, penalty_order } => {
                    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let basis = SplineBasis::new(lo, hi, *k, *penalty_order);
                    let b = basis.design(x);
                    // Sum-to-zero over the data keeps the smooth identifiable
                    // next to the intercept.
                    let c = DVector::from_iterator(basis.k, (0..basis.k).map(|j| b.column(j).sum()));
                    let z = householder_null_space(&c);
                    let bz = &b * &z;
                    let start = cols.len();
                    for j in 0..bz.ncols() {
                        cols.push(bz.column(j).into_owned());
                        names.push(format!("s({name}).{}", j + 1));
                    }
                    blocks.push((start, z.transpose() * basis.penalty() * &z));
                    let constraint = (0..z.nrows()).map(|i| z.row(i).iter().copied().collect()).collect();
                    bases.push(TermBasis::Spline { columns: start..cols.len(), basis, constraint });
                }
            }
        }
        let p = cols.len();
        let x = DMatrix::from_columns(&cols);
        let mut penalty = DMatrix::zeros(p, p);
        for (start, s) in blocks {
            penalty.view_mut((start, start), s.shape()).copy_from(&s);
        }
        Ok(Design { x, penalty, bases, names })
    }

    /// Model-matrix rows for new covariate values, plus an extrapolation flag per row.
    pub fn rows(bases: &[TermBasis], p: usize, covariates: &[Vec<f64>]) -> (DMatrix<f64>, Vec<bool>) {
        let n = covariates.first().map_or(0, Vec::len);
        let mut x = DMatrix::zeros(n, p);
        let mut extrapolated = vec![false; n];
        x.column_mut(0).fill(1.0);
        for (tb, cov) in bases.iter().zip(covariates) {
            match tb {
                TermBasis::Linear { column } => {
                    for (i, v) in cov.iter().enumerate() {
                        x[(i, *column)] = *v;
                    }
                }
                TermBasis::Spline { columns, basis, constraint } => {
                    let z = DMatrix::from_fn(constraint.len(), columns.len(), |i, j| constraint[i][j]);
                    for (i, &v) in cov.iter().enumerate() {
                        extrapolated[i] |= basis.extrapolates(v);
                        let b = DMatrix::from_row_slice(1, basis.k, &basis.eval(v));
                        let row = b * &z;
                        for (j, c) in columns.clone().enumerate() {
                            x[(i, c)] = row[(0, j)];
                        }
                    }
                }
            }
        }
        (x, extrapolated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub spec: ModelSpec,
    /// Link actually used; differs from `spec.link` after a gamma fallback.
    pub link: Link,
    pub link_fallback: bool,
    pub coefficient_names: Vec<String>,
    pub beta: Vec<f64>,
    /// Row-major p × p.
    pub covariance: Vec<Vec<f64>>,
    pub deviance: f64,
    pub edf: f64,
    pub lambda: Option<f64>,
    pub gcv: Option<f64>,
    /// (lambda, gcv) for every grid point evaluated at the final theta.
    pub gcv_grid: Vec<(f64, f64)>,
    pub theta: Option<f64>,
    /// Moment estimate unavailable (no overdispersion); fitted as Poisson.
    pub theta_fallback: bool,
    pub dispersion: f64,
    pub converged: bool,
    pub iterations: usize,
    pub separation: bool,
    /// Max-norm of the penalized score at the returned coefficients.
    pub score_norm: f64,
    /// Penalized deviance after each accepted IRLS step of the final fit.
    pub deviance_trace: Vec<f64>,
    pub n: usize,
    pub fitted: Vec<f64>,
    pub bases: Vec<TermBasis>,
}

impl GlmFit {
    pub fn coefficient(&self, name: &str) -> Option<usize> {
        self.coefficient_names.iter().position(|n| n == name)
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let p = self.beta.len();
        DMatrix::from_fn(p, p, |i, j| self.covariance[i][j])
    }

    pub fn se(&self, index: usize) -> f64 {
        self.covariance[index][index].max(0.0).sqrt()
    }
}

/// IRLS state for one (lambda, theta).
#[derive(Clone)]
struct Inner {
    beta: DVector<f64>,
    eta: DVector<f64>,
    mu: DVector<f64>,
    deviance: f64,
    converged: bool,
    iterations: usize,
    score_norm: f64,
    trace: Vec<f64>,
    /// (XᵀWX + λS)⁻¹ at the final weights.
    inv: DMatrix<f64>,
    edf: f64,
}

struct Problem<'a> {
    family: Family,
    link: Link,
    x: &'a DMatrix<f64>,
    s: &'a DMatrix<f64>,
    /// Response on the mean scale (proportions for binomial).
    y: DVector<f64>,
    w: DVector<f64>,
    offset: DVector<f64>,
}

impl Problem<'_> {
    fn deviance(&self, mu: &DVector<f64>, theta: f64) -> f64 {
        (0..mu.len()).map(|i| self.w[i] * self.family.unit_deviance(self.y[i], mu[i], theta)).sum()
    }

    fn mean(&self, eta: &DVector<f64>) -> Option<DVector<f64>> {
        let mu = eta.map(|e| self.link.inverse(e));
        let ok = mu.iter().zip(self.w.iter()).all(|(&m, &w)| w == 0.0 || self.family.valid_mu(m));
        ok.then_some(mu)
    }

    /// Working weights and working response at the current mean.
    fn working(&self, eta: &DVector<f64>, mu: &DVector<f64>, theta: f64) -> (DVector<f64>, DVector<f64>) {
        let n = mu.len();
        let mut ww = DVector::zeros(n);
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let d = self.link.mu_eta(eta[i]);
            let v = self.family.variance(mu[i], theta).max(1e-300);
            ww[i] = self.w[i] * d * d / v;
            z[i] = eta[i] - self.offset[i] + (self.y[i] - mu[i]) / d;
        }
        (ww, z)
    }

    fn score(&self, beta: &DVector<f64>, eta: &DVector<f64>, mu: &DVector<f64>, theta: f64, lambda: f64) -> f64 {
        let n = mu.len();
        let r = DVector::from_fn(n, |i, _| {
            let d = self.link.mu_eta(eta[i]);
            let v = self.family.variance(mu[i], theta).max(1e-300);
            self.w[i] * (self.y[i] - mu[i]) * d / v
        });
        let g = self.x.transpose() * r - self.s * beta * lambda;
        g.amax()
    }

    fn xtwx(&self, ww: &DVector<f64>) -> DMatrix<f64> {
        let mut xw = self.x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= ww[i];
        }
        self.x.transpose() * xw
    }

    fn irls(&self, lambda: f64, theta: f64, start: Option<&DVector<f64>>) -> Result<Inner, GlmError> {
        let n = self.y.len();
        let p = self.x.ncols();
        let penalty = self.s * lambda;
        let (mut eta, mut mu) = match start.and_then(|b| {
            let eta = self.x * b + &self.offset;
            self.mean(&eta).map(|mu| (eta, mu))
        }) {
            Some(v) => v,
            None => {
                let mu = DVector::from_fn(n, |i, _| self.family.start_mu(self.y[i], self.w[i]));
                (mu.map(|m| self.link.link(m)), mu)
            }
        };
        let mut beta = start.cloned().unwrap_or_else(|| DVector::zeros(p));
        let mut dev = self.deviance(&mu, theta);
        let mut pen_dev = f64::INFINITY;
        let mut converged = false;
        let mut dev_ok_streak = 0;
        let mut trace = Vec::new();
        let mut iterations = 0;
        for it in 1..=MAX_ITER {
            iterations = it;
            let (ww, z) = self.working(&eta, &mu, theta);
            let a = self.xtwx(&ww) + &penalty;
            let rhs = self.x.transpose() * ww.component_mul(&z);
            let chol = a.clone().cholesky().ok_or(GlmError::SingularDesign)?;
            let mut new_beta = chol.solve(&rhs);
            if new_beta.iter().any(|v| !v.is_finite()) {
                return Err(GlmError::SingularDesign);
            }
            // Step-halving on penalized deviance or invalid means.
            let mut accepted = None;
            for _ in 0..40 {
                let e = self.x * &new_beta + &self.offset;
                if let Some(m) = self.mean(&e) {
                    let d = self.deviance(&m, theta);
                    let pd = d + lambda * (new_beta.transpose() * self.s * &new_beta)[(0, 0)];
                    if pd.is_finite() && (pd <= pen_dev * (1.0 + 1e-12) + 1e-12 || !pen_dev.is_finite()) {
                        accepted = Some((e, m, d, pd));
                        break;
                    }
                }
                new_beta = (&new_beta + &beta) * 0.5;
            }
            let Some((e, m, d, pd)) = accepted else {
                break;
            };
            let change = (d - dev).abs() / (dev.abs() + 0.1);
            beta = new_beta;
            eta = e;
            mu = m;
            dev = d;
            pen_dev = pd;
            trace.push(pd);
            if change < DEVIANCE_TOL && it > 1 {
                dev_ok_streak += 1;
                let score = self.score(&beta, &eta, &mu, theta, lambda);
                // Accept once the score is small, or once it stops shrinking
                // at the floating-point floor.
                if score < SCORE_TOL || dev_ok_streak >= 4 {
                    converged = true;
                    break;
                }
            } else {
                dev_ok_streak = 0;
            }
        }
        let (ww, _) = self.working(&eta, &mu, theta);
        let xtwx = self.xtwx(&ww);
        let inv = (xtwx.clone() + &penalty).cholesky().ok_or(GlmError::SingularDesign)?.inverse();
        let edf = (&inv * &xtwx).trace();
        let score_norm = self.score(&beta, &eta, &mu, theta, lambda);
        Ok(Inner { beta, eta, mu, deviance: dev, converged, iterations, score_norm, trace, inv, edf })
    }

    fn gcv(&self, inner: &Inner) -> f64 {
        let n = self.y.len() as f64;
        let denom = (n - inner.edf).max(1e-8);
        n * inner.deviance / (denom * denom)
    }

    /// Fit at fixed theta, choosing lambda by GCV when there is a penalty.
    fn select(
        &self,
        theta: f64,
        smooth: bool,
        warm: Option<&DVector<f64>>,
    ) -> Result<(Inner, Option<f64>, Vec<(f64, f64)>), GlmError> {
        if !smooth {
            return Ok((self.irls(0.0, theta, warm)?, None, Vec::new()));
        }
        let mut best: Option<(Inner, f64, f64)> = None;
        let mut grid = Vec::new();
        let mut start = warm.cloned();
        for lambda in lambda_grid() {
            let inner = self.irls(lambda, theta, start.as_ref())?;
            let g = self.gcv(&inner);
            grid.push((lambda, g));
            start = Some(inner.beta.clone());
            if best.as_ref().map_or(true, |(_, _, bg)| g < *bg) {
                best = Some((inner, lambda, g));
            }
        }
        let (inner, lambda, _) = best.expect("grid is non-empty");
        Ok((inner, Some(lambda), grid))
    }
}

fn moment_theta(y: &DVector<f64>, mu: &DVector<f64>, w: &DVector<f64>) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..y.len() {
        num += w[i] * mu[i] * mu[i];
        den += w[i] * ((y[i] - mu[i]).powi(2) - mu[i]);
    }
    (den > 0.0 && num > 0.0).then(|| num / den)
}

/// Penalized IRLS fit of a generalized linear or additive model.
pub fn fit(spec: &ModelSpec, data: &FitData) -> Result<GlmFit, GlmError> {
    let n = data.y.len();
    if !spec.family.allows(spec.link) {
        return Err(GlmError::Unsupported { family: spec.family, link: spec.link });
    }
    let design = Design::build(spec, &data.covariates, n)?;
    let p = design.x.ncols();
    let unpenalized = 1 + spec.terms.iter().filter(|t| matches!(t, Term::Linear { .. })).count();
    if n < unpenalized || n == 0 {
        return Err(GlmError::Dimension(format!("{n} rows for {unpenalized} unpenalized coefficients")));
    }
    let weights = match &data.weights {
        Some(w) if w.len() != n => return Err(GlmError::Dimension("weights length".into())),
        Some(w) => DVector::from_column_slice(w),
        None if spec.family == Family::Binomial => {
            return Err(GlmError::InvalidInput("binomial fit needs trials".into()))
        }
        None => DVector::from_element(n, 1.0),
    };
    let offset = match &data.offset {
        Some(o) if o.len() != n => return Err(GlmError::Dimension("offset length".into())),
        Some(o) => DVector::from_column_slice(o),
        None => DVector::zeros(n),
    };
    let mut y = DVector::from_column_slice(&data.y);
    let mut prior = weights.clone();
    for i in 0..n {
        let (yi, wi) = (y[i], weights[i]);
        if !yi.is_finite() || !wi.is_finite() || wi < 0.0 {
            return Err(GlmError::InvalidInput(format!("row {i}: non-finite or negative value")));
        }
        match spec.family {
            Family::Binomial => {
                if yi < 0.0 || yi > wi {
                    return Err(GlmError::InvalidInput(format!("row {i}: {yi} successes of {wi} trials")));
                }
                y[i] = if wi > 0.0 { yi / wi } else { 0.0 };
            }
            Family::Poisson | Family::Negbin if yi < 0.0 => {
                return Err(GlmError::InvalidInput(format!("row {i}: negative count")));
            }
            Family::Gamma if yi <= 0.0 => {
                return Err(GlmError::InvalidInput(format!("row {i}: gamma response must be positive")));
            }
            _ => {}
        }
        prior[i] = wi;
    }
    // Unpenalized columns must be full rank on their own.
    let unpen_cols: Vec<usize> = (0..p).filter(|&j| design.penalty.column(j).iter().all(|v| *v == 0.0)).collect();
    let xu = design.x.select_columns(&unpen_cols);
    let sv = xu.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if sv.iter().any(|&s| s <= 1e-10 * smax.max(1e-300)) {
        return Err(GlmError::SingularDesign);
    }

    let smooth = spec.has_smooth();
    let try_fit = |link: Link| -> Result<GlmFit, GlmError> {
        let prob = Problem {
            family: spec.family,
            link,
            x: &design.x,
            s: &design.penalty,
            y: y.clone(),
            w: prior.clone(),
            offset: offset.clone(),
        };
        let (inner, lambda, grid, theta, theta_fallback) = if spec.family == Family::Negbin {
            // Start from the Poisson fit, then alternate moment theta and refits.
            let pois = Problem { family: Family::Poisson, ..prob };
            let (mut inner, mut lambda, mut grid) = pois.select(f64::INFINITY, smooth, None)?;
            let prob = Problem { family: Family::Negbin, ..pois };
            let mut theta = moment_theta(&prob.y, &inner.mu, &prob.w);
            let mut fallback = theta.is_none();
            let mut outer = 0;
            while let Some(th) = theta {
                let (ni, nl, ng) = prob.select(th, smooth, Some(&inner.beta))?;
                inner = ni;
                lambda = nl;
                grid = ng;
                outer += 1;
                match moment_theta(&prob.y, &inner.mu, &prob.w) {
                    Some(next) if ((next - th) / th).abs() < THETA_TOL || outer >= 50 => {
                        theta = Some(th);
                        break;
                    }
                    Some(next) => theta = Some(next),
                    None => {
                        // Overdispersion vanished at the new fit; keep the last estimate.
                        theta = Some(th);
                        fallback = false;
                        break;
                    }
                }
            }
            (inner, lambda, grid, theta, fallback)
        } else {
            let (inner, lambda, grid) = prob.select(1.0, smooth, None)?;
            (inner, lambda, grid, None, false)
        };
        let edf = inner.edf;
        let dispersion = if spec.family.estimates_dispersion() {
            let df = (n as f64 - edf).max(1e-8);
            match spec.family {
                Family::Gaussian => inner.deviance / df,
                _ => {
                    let pearson: f64 = (0..n)
                        .map(|i| prior[i] * (y[i] - inner.mu[i]).powi(2) / spec.family.variance(inner.mu[i], 1.0))
                        .sum();
                    pearson / df
                }
            }
        } else {
            1.0
        };
        let cov = &inner.inv * dispersion;
        let cov = (&cov + cov.transpose()) * 0.5;
        let separation = spec.family == Family::Binomial
            && inner.eta.iter().zip(prior.iter()).any(|(&e, &w)| w > 0.0 && e.abs() >= 29.0);
        Ok(GlmFit {
            spec: spec.clone(),
            link,
            link_fallback: link != spec.link,
            coefficient_names: design.names.clone(),
            beta: inner.beta.iter().copied().collect(),
            covariance: (0..p).map(|i| cov.row(i).iter().copied().collect()).collect(),
            deviance: inner.deviance,
            edf,
            lambda,
            gcv: lambda.map(|l| grid.iter().find(|(g, _)| *g == l).map(|x| x.1).unwrap_or(f64::NAN)),
            gcv_grid: grid,
            theta: if theta_fallback { None } else { theta },
            theta_fallback,
            dispersion,
            converged: inner.converged,
            iterations: inner.iterations,
            separation,
            score_norm: inner.score_norm,
            deviance_trace: inner.trace.clone(),
            n,
            fitted: inner.mu.iter().copied().collect(),
            bases: design.bases.clone(),
        })
    };

    let first = try_fit(spec.link);
    if spec.family == Family::Gamma && spec.link == Link::Inverse {
        match &first {
            Ok(f) if f.converged => {}
            _ => {
                if let Ok(f) = try_fit(Link::Log) {
                    log::warn!("gamma fit diverged under inverse link; refit with log link");
                    return Ok(f);
                }
            }
        }
    }
    first
}
