use std::collections::BTreeMap;

use codelex_core::catalog::{Catalog, CatalogEntry, Category};
use codelex_core::trends::{function_series, occurrence_models, MagnitudeClass};
use codelex_core::CallProfile;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn catalog() -> Catalog {
    let e = ["target", "filler"].map(|f| CatalogEntry {
        function: f.into(),
        package: Some("pkg".into()),
        category: Category::Other,
        retained: true,
        peak_occupancy: 1.0,
    });
    Catalog::from_parts(e, BTreeMap::new())
}

fn replicate(seed: u64, beta: f64, months: i32, per_month: usize) -> Vec<CallProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = (0.3f64 / 0.7).ln();
    let last = months - 1;
    let mut out = Vec::new();
    for m in 0..months {
        let p = 1.0 / (1.0 + (-(alpha + beta * (m - last) as f64)).exp());
        for r in 0..per_month {
            let mut prof = CallProfile::new(format!("s{seed}m{m}r{r}"), m);
            prof.counts.insert("filler".into(), 2);
            if rng.gen::<f64>() < p {
                prof.counts.insert("target".into(), rng.gen_range(1..4));
            }
            out.push(prof);
        }
    }
    out
}

#[test]
fn planted_logistic_slope_within_two_se() {
    let beta = 0.03;
    let cat = catalog();
    let months: Vec<i32> = (0..96).collect();
    let mut covered = 0;
    for seed in 0..100 {
        let profiles = replicate(seed, beta, 96, 200);
        let series = function_series(&profiles, &cat, &months);
        let rows = occurrence_models(&series, 95, &|_| Category::Other).unwrap();
        let t = rows.iter().find(|r| r.entity == "target").unwrap();
        if (t.slope - beta).abs() <= 2.0 * t.se {
            covered += 1;
        }
        assert_eq!(t.magnitude_class, MagnitudeClass::MeaningfulUp);
    }
    assert!(covered >= 95, "{covered}/100 replicates within 2 SE");
}
