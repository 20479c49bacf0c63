use std::collections::BTreeMap;

use serde::Serialize;

use super::diversity_trends::MIN_MONTHS;
use super::{boundary_proportion, fit_model, Curve, TrendsError};
use crate::catalog::{Catalog, Category};
use crate::diversity::{gamma_matrix, hill, HillOrder};
use crate::extract::CallProfile;
use crate::glm::{Family, FitData, GlmFit, Link, ModelSpec, Term};

/// Per-month sample sizes of the two hurdle parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HurdleCounts {
    pub month_index: i32,
    pub trials: u64,
    /// Repositories using the category (part 1 successes).
    pub successes: u64,
    /// Observations entering the share model (part 2).
    pub part2_n: u64,
}

#[derive(Debug, Clone)]
pub struct CategoryTrend {
    pub category: Category,
    /// False when no repository used a retained function of the category;
    /// the curves are then flat zero and nothing was fitted.
    pub present: bool,
    pub gamma_hill0: Curve,
    pub gamma_hill1: Curve,
    /// Hurdle part 1: probability that a repository uses the category.
    pub presence: Curve,
    /// Hurdle part 2: share of a repository's calls given presence.
    pub share: Curve,
    pub counts: Vec<HurdleCounts>,
    pub fits: Vec<(String, GlmFit)>,
}

impl CategoryTrend {
    pub fn curves(&self) -> [&Curve; 4] {
        [&self.gamma_hill0, &self.gamma_hill1, &self.presence, &self.share]
    }
}

#[derive(Debug, Clone)]
pub struct CategoryTrends {
    pub categories: Vec<CategoryTrend>,
    pub notices: Vec<String>,
}

impl CategoryTrends {
    pub fn get(&self, category: Category) -> Option<&CategoryTrend> {
        self.categories.iter().find(|c| c.category == category)
    }
}

/// Split diversity and hurdle models for base, tidyverse and other functions.
/// Profiles are expected to be canonical (keyed by catalog entity).
pub fn category_trends(profiles: &[CallProfile], catalog: &Catalog) -> Result<CategoryTrends, TrendsError> {
    let retained = catalog.retained();
    let data: Vec<&CallProfile> =
        profiles.iter().filter(|p| p.counts.keys().any(|k| retained.contains(k.as_str()))).collect();
    let mut distinct: Vec<i32> = data.iter().map(|p| p.month_index).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < MIN_MONTHS {
        return Err(TrendsError::TooFewMonths { need: MIN_MONTHS, got: distinct.len() });
    }
    let months: Vec<i32> = (distinct[0]..=distinct[distinct.len() - 1]).collect();

    let mut categories = Vec::new();
    let mut notices = Vec::new();
    for cat in Category::ATTRIBUTED {
        let members = catalog.retained_in(cat);
        let mut counts: BTreeMap<i32, HurdleCounts> = distinct
            .iter()
            .map(|&m| (m, HurdleCounts { month_index: m, trials: 0, successes: 0, part2_n: 0 }))
            .collect();
        let mut share_t = Vec::new();
        let mut share_y = Vec::new();
        for p in &data {
            let (mut inside, mut total) = (0u64, 0u64);
            for (k, &v) in &p.counts {
                if members.contains(k.as_str()) {
                    inside += v;
                }
                if retained.contains(k.as_str()) {
                    total += v;
                }
            }
            let c = counts.get_mut(&p.month_index).expect("month listed");
            c.trials += 1;
            if inside > 0 {
                c.successes += 1;
                c.part2_n += 1;
                share_t.push(p.month_index as f64);
                share_y.push(inside as f64 / total as f64);
            }
        }
        let counts: Vec<HurdleCounts> = counts.into_values().collect();
        if share_y.is_empty() {
            notices.push(format!("category {} absent from corpus; skipped", cat.as_str()));
            let z = |id: &str| Curve::flat_zero(&format!("{}_{id}", cat.as_str()), &months);
            categories.push(CategoryTrend {
                category: cat,
                present: false,
                gamma_hill0: z("gamma_hill0"),
                gamma_hill1: z("gamma_hill1"),
                presence: z("presence"),
                share: z("share"),
                counts,
                fits: Vec::new(),
            });
            continue;
        }

        let id = |s: &str| format!("{}_{s}", cat.as_str());
        let mut fits = Vec::new();
        let mut fit_curve = |name: &str, spec: ModelSpec, d: FitData| -> Result<Curve, TrendsError> {
            let model_id = id(name);
            let f = fit_model(&model_id, &spec, &d)?;
            let c = Curve::from_fit(&model_id, &f, &months, &[])?;
            fits.push((model_id, f));
            Ok(c)
        };
        let smooth = || vec![Term::spline("month")];

        let g = gamma_matrix(profiles, &members).matrix;
        let gm: Vec<f64> = g.months.iter().map(|&m| m as f64).collect();
        let h = |o| (0..g.n_months()).map(|i| hill(&g.row(i), o).value).collect::<Vec<f64>>();
        let gamma_hill0 = fit_curve(
            "gamma_hill0",
            ModelSpec::new(Family::Negbin, smooth()),
            FitData { covariates: vec![gm.clone()], y: h(HillOrder::Zero), ..Default::default() },
        )?;
        let gamma_hill1 = fit_curve(
            "gamma_hill1",
            ModelSpec::new(Family::Gaussian, smooth()),
            FitData { covariates: vec![gm], y: h(HillOrder::One), ..Default::default() },
        )?;
        let successes: Vec<u64> = counts.iter().map(|c| c.successes).collect();
        let trials: Vec<u64> = counts.iter().map(|c| c.trials).collect();
        let presence = if let Some(v) = boundary_proportion(&successes, &trials) {
            Curve::constant(&id("presence"), &months, v)
        } else {
            fit_curve(
                "presence",
                ModelSpec::new(Family::Binomial, smooth()),
                FitData {
                    covariates: vec![counts.iter().map(|c| c.month_index as f64).collect()],
                    y: counts.iter().map(|c| c.successes as f64).collect(),
                    weights: Some(counts.iter().map(|c| c.trials as f64).collect()),
                    offset: None,
                },
            )?
        };
        let share = fit_curve(
            "share",
            ModelSpec::new(Family::Gamma, smooth()).with_link(Link::Inverse),
            FitData { covariates: vec![share_t], y: share_y, ..Default::default() },
        )?;
        categories.push(CategoryTrend {
            category: cat,
            present: true,
            gamma_hill0,
            gamma_hill1,
            presence,
            share,
            counts,
            fits,
        });
    }
    Ok(CategoryTrends { categories, notices })
}
