use serde::Serialize;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::{fit_model, TrendsError};
use crate::diversity::MonthlyAbundanceMatrix;
use crate::glm::{Family, FitData, ModelSpec};

const DENSITY_POINTS: usize = 201;

/// Log-normal fit of pooled positive relative abundances.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbundanceFit {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
    /// σ is zero or undefined; density and QQ data are empty.
    pub degenerate: bool,
    /// (ln abundance, fitted normal density).
    pub density: Vec<(f64, f64)>,
    /// (theoretical normal quantile, sorted standardized residual).
    pub qq: Vec<(f64, f64)>,
    /// ln values, for histogram overlays.
    pub log_values: Vec<f64>,
}

impl AbundanceFit {
    /// Pearson correlation of the QQ pairs.
    pub fn qq_correlation(&self) -> f64 {
        let n = self.qq.len() as f64;
        let (mx, my) = self.qq.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in &self.qq {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx).powi(2);
            syy += (y - my).powi(2);
        }
        sxy / (sxx * syy).sqrt()
    }
}

pub fn abundance_distribution(matrix: &MonthlyAbundanceMatrix) -> Result<AbundanceFit, TrendsError> {
    let log_values: Vec<f64> = matrix.values.iter().flatten().filter(|&&v| v > 0.0).map(|v| v.ln()).collect();
    let n = log_values.len();
    if n == 0 {
        return Ok(AbundanceFit {
            mu: f64::NAN,
            sigma: f64::NAN,
            n,
            degenerate: true,
            density: vec![],
            qq: vec![],
            log_values,
        });
    }
    let data = FitData { covariates: vec![], y: log_values.clone(), ..Default::default() };
    let fit = fit_model("abundance_lognormal", &ModelSpec::new(Family::Gaussian, vec![]), &data)?;
    let mu = fit.beta[0];
    let sigma = if n > 1 { fit.dispersion.max(0.0).sqrt() } else { 0.0 };
    if !(sigma > 1e-12 * mu.abs().max(1.0)) {
        return Ok(AbundanceFit { mu, sigma: 0.0, n, degenerate: true, density: vec![], qq: vec![], log_values });
    }
    let normal = Normal::new(mu, sigma).expect("positive sigma");
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    let density = (0..DENSITY_POINTS)
        .map(|i| {
            let x = mu - 4.0 * sigma + 8.0 * sigma * i as f64 / (DENSITY_POINTS - 1) as f64;
            (x, normal.pdf(x))
        })
        .collect();
    let mut z: Vec<f64> = log_values.iter().map(|v| (v - mu) / sigma).collect();
    z.sort_by(f64::total_cmp);
    let qq = z.into_iter().enumerate().map(|(i, r)| (std.inverse_cdf((i as f64 + 0.5) / n as f64), r)).collect();
    Ok(AbundanceFit { mu, sigma, n, degenerate: false, density, qq, log_values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, LogNormal};

    fn matrix(values: Vec<Vec<f64>>) -> MonthlyAbundanceMatrix {
        let k = values[0].len();
        MonthlyAbundanceMatrix {
            months: (0..values.len() as i32).collect(),
            functions: (0..k).map(|i| format!("f{i}")).collect(),
            repo_counts: vec![1; values.len()],
            values,
        }
    }

    #[test]
    fn lognormal_sample_is_linear_on_qq() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = LogNormal::new(-5.0, 1.3).unwrap();
        let values: Vec<Vec<f64>> = (0..24).map(|_| (0..80).map(|_| d.sample(&mut rng)).collect()).collect();
        let f = abundance_distribution(&matrix(values)).unwrap();
        assert!(!f.degenerate);
        assert!(f.qq_correlation() > 0.99, "{}", f.qq_correlation());
        assert!((f.mu + 5.0).abs() < 0.1 && (f.sigma - 1.3).abs() < 0.1);
    }

    #[test]
    fn mu_is_mean_of_logs() {
        let values = vec![vec![0.5, 0.25, 0.0, 0.25], vec![0.1, 0.9, 0.0, 0.0]];
        let f = abundance_distribution(&matrix(values)).unwrap();
        let logs = [0.5f64, 0.25, 0.25, 0.1, 0.9].map(f64::ln);
        let mean = logs.iter().sum::<f64>() / 5.0;
        assert!((f.mu - mean).abs() < 1e-12);
        let var = logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((f.sigma - var.sqrt()).abs() < 1e-10);
        assert_eq!(f.n, 5);
        assert_eq!(f.qq.len(), 5);
    }

    #[test]
    fn single_function_is_degenerate() {
        let f = abundance_distribution(&matrix(vec![vec![1.0]; 12])).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.sigma, 0.0);
        assert_eq!(f.mu, 0.0);
    }
}
