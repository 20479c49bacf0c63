use codelex_core::ordination::{bray_curtis_rows, dbrda_time_fraction, DissimilarityMatrix};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// tr(H G H) / tr(G) with G = −½ J D∘D J and H the explicit hat matrix of
/// [1, t], built without any shortcut.
fn hat_matrix_fraction(d: &DissimilarityMatrix, t: &[f64]) -> f64 {
    let n = t.len();
    let a = DMatrix::from_fn(n, n, |i, j| -0.5 * d.d[(i, j)] * d.d[(i, j)]);
    let j = DMatrix::from_fn(n, n, |i, k| if i == k { 1.0 } else { 0.0 } - 1.0 / n as f64);
    let g = &j * a * &j;
    let x = DMatrix::from_fn(n, 2, |i, c| if c == 0 { 1.0 } else { t[i] });
    let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
    let h = &x * xtx_inv * x.transpose();
    (&h * &g * &h).trace() / g.trace()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>().powi(3)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

#[test]
fn permutation_null_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let n = 24;
    let d = bray_curtis_rows(&random_rows(&mut rng, n, 15));
    let mut t: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mut null = Vec::with_capacity(999);
    for _ in 0..999 {
        t.shuffle(&mut rng);
        let f = dbrda_time_fraction(&d, &t).unwrap();
        assert!((f - hat_matrix_fraction(&d, &t)).abs() < 1e-10);
        null.push(f);
    }
    let mean = null.iter().sum::<f64>() / 999.0;
    let sd = (null.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / 998.0).sqrt();
    let exact = 1.0 / (n as f64 - 1.0);
    assert!((mean - exact).abs() < 4.0 * sd / 999f64.sqrt(), "null mean {mean} vs {exact}");

    // Rows carry no time structure, so the observed value is an ordinary
    // draw from the null.
    let observed = dbrda_time_fraction(&d, &(0..n).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
    let p = (1 + null.iter().filter(|&&f| f >= observed).count()) as f64 / 1000.0;
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn planted_trend_beats_every_shuffle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 24;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let w = i as f64 / (n - 1) as f64;
            let raw: Vec<f64> = (0..10).map(|j| if j < 5 { 1.0 - w } else { w } + 0.05 * rng.gen::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let d = bray_curtis_rows(&rows);
    let t0: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let observed = dbrda_time_fraction(&d, &t0).unwrap();
    let mut t = t0.clone();
    for _ in 0..999 {
        t.shuffle(&mut rng);
        assert!(dbrda_time_fraction(&d, &t).unwrap() < observed);
    }
}
