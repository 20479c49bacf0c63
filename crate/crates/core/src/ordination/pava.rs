/// Weighted least-squares projection of `y` onto non-decreasing sequences
/// (pool adjacent violators). Missing or short `weights` default to 1.
pub fn isotonic_pava(y: &[f64], weights: Option<&[f64]>) -> Vec<f64> {
    let w = |i: usize| weights.and_then(|w| w.get(i)).copied().unwrap_or(1.0);
    // Blocks as (weighted mean, total weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (i, &v) in y.iter().enumerate() {
        let mut cur = (v, w(i), 1usize);
        while let Some(&(m, wt, len)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let tw = wt + cur.1;
            let mean = if tw > 0.0 { (m * wt + cur.0 * cur.1) / tw } else { 0.5 * (m + cur.0) };
            cur = (mean, tw, len + cur.2);
        }
        blocks.push(cur);
    }
    let mut out = Vec::with_capacity(y.len());
    for (m, _, len) in blocks {
        out.extend(std::iter::repeat(m).take(len));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn examples() {
        assert_eq!(isotonic_pava(&[1.0, 2.0, 2.0, 5.0], None), vec![1.0, 2.0, 2.0, 5.0]);
        assert_eq!(isotonic_pava(&[3.0, 1.0], None), vec![2.0, 2.0]);
        assert_eq!(isotonic_pava(&[3.0, 1.0], Some(&[3.0, 1.0])), vec![2.5, 2.5]);
        assert!(isotonic_pava(&[], None).is_empty());
    }

    /// Best monotone fit over every partition into contiguous level sets.
    fn brute_force(y: &[f64], w: &[f64]) -> Vec<f64> {
        let n = y.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for cuts in 0u32..(1 << (n - 1)) {
            let mut fit = Vec::with_capacity(n);
            let mut start = 0;
            for end in 1..=n {
                if end == n || cuts & (1 << (end - 1)) != 0 {
                    let tw: f64 = w[start..end].iter().sum();
                    let m = y[start..end].iter().zip(&w[start..end]).map(|(a, b)| a * b).sum::<f64>() / tw;
                    fit.extend(std::iter::repeat(m).take(end - start));
                    start = end;
                }
            }
            if fit.windows(2).any(|p| p[0] > p[1] + 1e-12) {
                continue;
            }
            let loss: f64 = fit.iter().zip(y).zip(w).map(|((f, v), wt)| wt * (f - v).powi(2)).sum();
            if best.as_ref().map_or(true, |(b, _)| loss < *b) {
                best = Some((loss, fit));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for trial in 0..1000 {
            let n = 1 + trial % 8;
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
            let fast = isotonic_pava(&y, Some(&w));
            let slow = brute_force(&y, &w);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-10, "trial {trial}: {fast:?} vs {slow:?}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn output_is_monotone_and_mean_preserving(y in proptest::collection::vec(-100.0f64..100.0, 1..200)) {
            let f = isotonic_pava(&y, None);
            proptest::prop_assert!(f.windows(2).all(|p| p[0] <= p[1] + 1e-9));
            let (a, b): (f64, f64) = (y.iter().sum(), f.iter().sum());
            proptest::prop_assert!((a - b).abs() < 1e-8 * (1.0 + a.abs()));
        }
    }
}
