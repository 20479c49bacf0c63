//! Compositional change between months: Bray-Curtis, PCoA, NMDS,
//! distance-based RDA on time, and per-year convex hulls.

mod dbrda;
mod hull;
mod nmds;
mod pava;
mod pcoa;

use std::io::Write;

use nalgebra::DMatrix;

use crate::diversity::MonthlyAbundanceMatrix;
use crate::table;

pub use dbrda::{dbrda_time, dbrda_time_fraction, RdaResult};
pub use hull::{convex_hull, hulls_by_year, write_hulls_csv, YearHull};
pub use nmds::{kruskal_stress, nmds, nmds_run, NmdsConfig, NmdsResult, NmdsRun};
pub use pava::isotonic_pava;
pub use pcoa::{gower_center, pcoa, PcoaResult};

#[derive(Debug, thiserror::Error)]
pub enum OrdinationError {
    #[error("need at least {need} objects, got {got}")]
    Degenerate { need: usize, got: usize },
    #[error("time covariate is constant")]
    RankDeficient,
    #[error("covariate has {got} values for {need} objects")]
    Dimension { need: usize, got: usize },
    #[error("table: {0}")]
    Table(String),
}

/// Symmetric dissimilarity matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    pub d: DMatrix<f64>,
}

impl DissimilarityMatrix {
    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn from_points(points: &[[f64; 2]]) -> Self {
        let n = points.len();
        let d = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (points[i], points[j]);
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        });
        DissimilarityMatrix { d }
    }

    pub fn euclidean(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let d = DMatrix::from_fn(n, n, |i, j| {
            rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        });
        DissimilarityMatrix { d }
    }
}

/// Σ|x−y| / Σ(x+y) between every pair of rows; 0 when both rows are empty.
pub fn bray_curtis_rows(rows: &[Vec<f64>]) -> DissimilarityMatrix {
    let n = rows.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let (mut num, mut den) = (0.0, 0.0);
            for (a, b) in rows[i].iter().zip(&rows[j]) {
                num += (a - b).abs();
                den += a + b;
            }
            let v = if den > 0.0 { num / den } else { 0.0 };
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    DissimilarityMatrix { d }
}

pub fn bray_curtis(matrix: &MonthlyAbundanceMatrix) -> DissimilarityMatrix {
    bray_curtis_rows(&matrix.values)
}

/// Coordinates CSV: month_index, axis1, axis2.
pub fn write_coords_csv<W: Write>(months: &[i32], coords: &DMatrix<f64>, out: W) -> Result<(), OrdinationError> {
    let err = |e: csv::Error| OrdinationError::Table(e.to_string());
    let mut w = table::writer(out);
    w.write_record(["month_index", "axis1", "axis2"]).map_err(err)?;
    for (i, m) in months.iter().enumerate() {
        w.write_record([m.to_string(), table::num(coords[(i, 0)]), table::num(coords[(i, 1)])]).map_err(err)?;
    }
    w.flush().map_err(|e| OrdinationError::Table(e.to_string()))
}
