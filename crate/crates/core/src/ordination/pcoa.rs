use nalgebra::{DMatrix, SymmetricEigen};

use super::{DissimilarityMatrix, OrdinationError};

/// B = −½ J D² J with J = I − 11ᵀ/n.
pub fn gower_center(d: &DissimilarityMatrix) -> DMatrix<f64> {
    let n = d.n();
    let a = d.d.map(|x| -0.5 * x * x);
    let row_means: Vec<f64> = (0..n).map(|i| a.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut b = DMatrix::from_fn(n, n, |i, j| a[(i, j)] - row_means[i] - row_means[j] + grand);
    // Exact symmetry so the eigen solver sees a symmetric input.
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (b[(i, j)] + b[(j, i)]);
            b[(i, j)] = m;
            b[(j, i)] = m;
        }
    }
    b
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcoaResult {
    /// All eigenvalues of B, descending. Negative values are kept.
    pub eigenvalues: Vec<f64>,
    /// One column per eigenvalue above the tolerance.
    pub coords: DMatrix<f64>,
    pub tolerance: f64,
}

impl PcoaResult {
    pub fn negative_eigenvalues(&self) -> impl Iterator<Item = f64> + '_ {
        self.eigenvalues.iter().copied().filter(move |&l| l < -self.tolerance)
    }

    /// First `k` axes, zero-padded if fewer are positive.
    pub fn axes(&self, k: usize) -> DMatrix<f64> {
        let n = self.coords.nrows();
        DMatrix::from_fn(n, k, |i, j| if j < self.coords.ncols() { self.coords[(i, j)] } else { 0.0 })
    }
}

pub fn pcoa(d: &DissimilarityMatrix) -> Result<PcoaResult, OrdinationError> {
    let n = d.n();
    if n < 3 {
        return Err(OrdinationError::Degenerate { need: 3, got: n });
    }
    let eig = SymmetricEigen::new(gower_center(d));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let scale = eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let tolerance = 1e-10 * scale.max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = order.iter().copied().filter(|&i| eig.eigenvalues[i] > tolerance).collect();
    let mut coords = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        let v = eig.eigenvectors.column(i);
        // Fix the sign so the largest-magnitude entry is positive.
        let pivot = (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a))).unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            coords[(r, c)] = sign * v[r] * s;
        }
    }
    Ok(PcoaResult { eigenvalues, coords, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn collinear_points_have_one_axis() {
        let d = DissimilarityMatrix::from_points(&[[0.0, 0.0], [1.0, 1.0], [3.0, 3.0]]);
        let r = pcoa(&d).unwrap();
        assert!(r.eigenvalues[0] > 1.0);
        assert!(r.eigenvalues[1].abs() < 1e-9);
        assert_eq!(r.coords.ncols(), 1);
    }

    #[test]
    fn zero_matrix() {
        let d = DissimilarityMatrix { d: DMatrix::zeros(4, 4) };
        let r = pcoa(&d).unwrap();
        assert!(r.eigenvalues.iter().all(|&l| l == 0.0));
        assert_eq!(r.coords.ncols(), 0);
    }

    #[test]
    fn too_small() {
        let d = DissimilarityMatrix { d: DMatrix::zeros(2, 2) };
        assert!(matches!(pcoa(&d), Err(OrdinationError::Degenerate { .. })));
    }

    #[test]
    fn round_trips_euclidean_distances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let pts: Vec<[f64; 2]> = (0..6).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
            let d = DissimilarityMatrix::from_points(&pts);
            let r = pcoa(&d).unwrap();
            let rec = DissimilarityMatrix::euclidean(
                &(0..6).map(|i| r.coords.row(i).iter().copied().collect()).collect::<Vec<_>>(),
            );
            assert!((rec.d.clone() - d.d.clone()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn negative_eigenvalues_reported() {
        // Non-Euclidean: a triangle-inequality-violating dissimilarity.
        let d = DMatrix::from_row_slice(
            4,
            4,
            &[0.0, 1.0, 1.0, 3.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 3.0, 1.0, 1.0, 0.0],
        );
        let r = pcoa(&DissimilarityMatrix { d }).unwrap();
        assert!(r.negative_eigenvalues().count() >= 1);
        assert_eq!(r.eigenvalues.len(), 4);
    }
}
