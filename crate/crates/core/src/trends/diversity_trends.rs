use super::{fit_model, Curve, TrendsError};
use crate::diversity::{hill, AlphaRow, HillOrder, MonthlyAbundanceMatrix};
use crate::glm::{Family, FitData, GlmFit, ModelSpec, Term};

/// Fewer distinct months than this cannot support a month smooth.
pub const MIN_MONTHS: usize = 24;

#[derive(Debug, Clone)]
pub struct DiversityTrends {
    pub gamma_hill0: Curve,
    pub gamma_hill1: Curve,
    pub alpha_hill0: Curve,
    pub alpha_hill1: Curve,
    /// Alpha curves are predicted with ln(total_calls) held here.
    pub mean_log_calls: f64,
    pub fits: Vec<(String, GlmFit)>,
}

impl DiversityTrends {
    pub fn curves(&self) -> [&Curve; 4] {
        [&self.gamma_hill0, &self.gamma_hill1, &self.alpha_hill0, &self.alpha_hill1]
    }

    pub fn fit(&self, model_id: &str) -> Option<&GlmFit> {
        self.fits.iter().find(|(id, _)| id == model_id).map(|(_, f)| f)
    }
}

fn month_span(months: impl Iterator<Item = i32> + Clone) -> Vec<i32> {
    match (months.clone().min(), months.max()) {
        (Some(a), Some(b)) => (a..=b).collect(),
        _ => Vec::new(),
    }
}

pub fn diversity_trends(alpha: &[AlphaRow], gamma: &MonthlyAbundanceMatrix) -> Result<DiversityTrends, TrendsError> {
    let mut distinct: Vec<i32> = alpha.iter().map(|r| r.month_index).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let got = gamma.n_months().min(distinct.len());
    if got < MIN_MONTHS {
        return Err(TrendsError::TooFewMonths { need: MIN_MONTHS, got });
    }
    let months = month_span(gamma.months.iter().copied().chain(distinct.iter().copied()));
    let smooth = || vec![Term::spline("month")];
    let mut fits = Vec::new();
    let mut curves = Vec::new();

    let gm: Vec<f64> = gamma.months.iter().map(|&m| m as f64).collect();
    let rows = || (0..gamma.n_months()).map(|i| gamma.row(i));
    let g0 = FitData {
        covariates: vec![gm.clone()],
        y: rows().map(|a| hill(&a, HillOrder::Zero).value).collect(),
        ..Default::default()
    };
    let g1 = FitData {
        covariates: vec![gm],
        y: rows().map(|a| hill(&a, HillOrder::One).value).collect(),
        ..Default::default()
    };
    let f = fit_model("gamma_hill0", &ModelSpec::new(Family::Negbin, smooth()), &g0)?;
    let gamma_hill0 = Curve::from_fit("gamma_hill0", &f, &months, &[])?;
    fits.push(("gamma_hill0".to_owned(), f));
    let f = fit_model("gamma_hill1", &ModelSpec::new(Family::Gaussian, smooth()), &g1)?;
    let gamma_hill1 = Curve::from_fit("gamma_hill1", &f, &months, &[])?;
    fits.push(("gamma_hill1".to_owned(), f));

    let am: Vec<f64> = alpha.iter().map(|r| r.month_index as f64).collect();
    let log_calls: Vec<f64> = alpha.iter().map(|r| (r.total_calls.max(1) as f64).ln()).collect();
    let mean_log_calls = log_calls.iter().sum::<f64>() / log_calls.len() as f64;
    // A constant call count is collinear with the intercept and is dropped.
    let varies = log_calls.iter().any(|&l| (l - mean_log_calls).abs() > 1e-12);
    let (terms, covariates, fixed) = if varies {
        (vec![Term::spline("month"), Term::linear("log_calls")], vec![am, log_calls], vec![mean_log_calls])
    } else {
        (smooth(), vec![am], vec![])
    };
    for (id, family, order) in [("alpha_hill0", Family::Negbin, 0), ("alpha_hill1", Family::Gaussian, 1)] {
        let y = alpha.iter().map(|r| if order == 0 { r.hill0 } else { r.hill1 }).collect();
        let d = FitData { covariates: covariates.clone(), y, ..Default::default() };
        let f = fit_model(id, &ModelSpec::new(family, terms.clone()), &d)?;
        curves.push(Curve::from_fit(id, &f, &months, &fixed)?);
        fits.push((id.to_owned(), f));
    }
    let alpha_hill1 = curves.pop().expect("two alpha curves");
    let alpha_hill0 = curves.pop().expect("two alpha curves");

    Ok(DiversityTrends { gamma_hill0, gamma_hill1, alpha_hill0, alpha_hill1, mean_log_calls, fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diversity::{alpha_table, gamma_matrix};
    use crate::extract::CallProfile;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn draw(rng: &mut ChaCha8Rng, pool: &[(String, f64)], calls: usize) -> Vec<String> {
        let total: f64 = pool.iter().map(|p| p.1).sum();
        (0..calls)
            .map(|_| {
                let mut u = rng.gen::<f64>() * total;
                for (f, w) in pool {
                    u -= w;
                    if u <= 0.0 {
                        return f.clone();
                    }
                }
                pool.last().unwrap().0.clone()
            })
            .collect()
    }

    fn corpus(
        months: i32,
        per_month: usize,
        pool_at: impl Fn(i32) -> Vec<(String, f64)>,
        seed: u64,
    ) -> Vec<CallProfile> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for m in 0..months {
            let pool = pool_at(m);
            for r in 0..per_month {
                let mut p = CallProfile::new(format!("r{m}_{r}"), m);
                for f in draw(&mut rng, &pool, 60) {
                    *p.counts.entry(f).or_insert(0) += 1;
                }
                out.push(p);
            }
        }
        out
    }

    fn run(profiles: &[CallProfile]) -> DiversityTrends {
        let retained: BTreeSet<String> = profiles.iter().flat_map(|p| p.counts.keys().cloned()).collect();
        let alpha = alpha_table(profiles, &retained);
        let gamma = gamma_matrix(profiles, &retained).matrix;
        diversity_trends(&alpha, &gamma).unwrap()
    }

    #[test]
    fn stationary_pool_gives_flat_curves() {
        let pool: Vec<(String, f64)> = (0..25).map(|i| (format!("f{i}"), 1.0 / (1.0 + i as f64))).collect();
        let t = run(&corpus(36, 25, |_| pool.clone(), 7));
        for c in t.curves() {
            for r in c.ratios() {
                assert!((r - 1.0).abs() <= 0.05, "{} ratio {r}", c.model_id);
            }
        }
    }

    #[test]
    fn growing_pool_raises_gamma_richness() {
        let t = run(&corpus(30, 15, |m| (0..10 + m).map(|i| (format!("f{i}"), 1.0)).collect(), 11));
        let c = &t.gamma_hill0;
        assert!(c.mean.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{:?}", c.mean);
        assert!(c.endpoint_ratio() > 1.5);
    }

    #[test]
    fn log_calls_absorbs_size_effect() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut profiles = Vec::new();
        for m in 0..30 {
            for r in 0..20 {
                let n = [5usize, 10, 20, 40][rng.gen_range(0..4)];
                let mut p = CallProfile::new(format!("r{m}_{r}"), m);
                for j in 0..n {
                    p.counts.insert(format!("f{j}"), 3);
                }
                profiles.push(p);
            }
        }
        let t = run(&profiles);
        let f = t.fit("alpha_hill0").unwrap();
        let j = f.coefficient("log_calls").unwrap();
        assert!(f.beta[j] > 0.5, "log-count coefficient {}", f.beta[j]);
        for r in t.alpha_hill0.ratios() {
            assert!((r - 1.0).abs() < 0.05, "ratio {r}");
        }
    }

    #[test]
    fn too_few_months_is_an_error() {
        let pool: Vec<(String, f64)> = (0..5).map(|i| (format!("f{i}"), 1.0)).collect();
        let profiles = corpus(12, 5, |_| pool.clone(), 1);
        let retained: BTreeSet<String> = (0..5).map(|i| format!("f{i}")).collect();
        let e = diversity_trends(&alpha_table(&profiles, &retained), &gamma_matrix(&profiles, &retained).matrix);
        assert!(matches!(e, Err(TrendsError::TooFewMonths { need: 24, got: 12 })));
    }
}
