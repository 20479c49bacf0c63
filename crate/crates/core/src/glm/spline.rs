use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Cubic B-spline basis on equally spaced knots with a difference penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub knots: Vec<f64>,
    pub degree: usize,
    pub k: usize,
    pub penalty_order: usize,
    pub lo: f64,
    pub hi: f64,
}

impl SplineBasis {
    /// `k` basis functions over [lo, hi]; needs k ≥ 4.
    pub fn new(lo: f64, hi: f64, k: usize, penalty_order: usize) -> Self {
        let degree = 3;
        let k = k.max(degree + 1);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let segments = k - degree;
        let h = (hi - lo) / segments as f64;
        let knots = (0..k + degree + 1).map(|i| lo + (i as f64 - degree as f64) * h).collect();
        SplineBasis { knots, degree, k, penalty_order: penalty_order.min(k - 1), lo, hi }
    }

    /// Basis values at `x`. Points outside [lo, hi] are clamped to the edge.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let x = x.clamp(self.lo, self.hi);
        let t = &self.knots;
        let p = self.degree;
        // Knot span with t[span] ≤ x < t[span+1], the top end folded into the last span.
        let last = self.k - 1;
        let mut span = p;
        while span < last && x >= t[span + 1] {
            span += 1;
        }
        // de Boor's triangular evaluation of the p+1 nonzero functions.
        let mut n = vec![0.0; p + 1];
        n[0] = 1.0;
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            n[j] = saved;
        }
        let mut out = vec![0.0; self.k];
        for (r, v) in n.into_iter().enumerate() {
            out[span - p + r] = v;
        }
        out
    }

    pub fn design(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.len(), self.k);
        for (i, &x) in xs.iter().enumerate() {
            for (j, v) in self.eval(x).into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// DᵀD with D the difference matrix of the configured order.
    pub fn penalty(&self) -> DMatrix<f64> {
        let mut d: DMatrix<f64> = DMatrix::identity(self.k, self.k);
        for _ in 0..self.penalty_order {
            let r = d.nrows();
            d = DMatrix::from_fn(r - 1, self.k, |i, j| d[(i + 1, j)] - d[(i, j)]);
        }
        d.transpose() * d
    }

    pub fn extrapolates(&self, x: f64) -> bool {
        let tol = 1e-9 * (self.hi - self.lo);
        x < self.lo - tol || x > self.hi + tol
    }
}

/// Orthonormal basis (k × k−1) of the null space of cᵀ, from a Householder
/// reflection: H = I − 2vvᵀ/vᵀv maps c onto e₁, so columns 2..k of H span
/// the complement of c.
pub fn householder_null_space(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.norm();
    if norm == 0.0 {
        return DMatrix::identity(k, k).columns(1, k - 1).into_owned();
    }
    let mut v = c.clone();
    let alpha = if c[0] >= 0.0 { -norm } else { norm };
    v[0] -= alpha;
    let vv = v.dot(&v);
    let h = DMatrix::identity(k, k) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, k - 1).into_owned()
}
