use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DMatrix;

use super::OrdinationError;
use crate::ingest::StudyEpoch;
use crate::table;

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Monotone-chain convex hull, counter-clockwise, starting from the
/// lowest-x (then lowest-y) point. Collinear boundary points are dropped.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p: Vec<[f64; 2]> = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for &pt in &p {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], pt) <= 0.0 {
            hull.pop();
        }
        hull.push(pt);
    }
    let lower = hull.len() + 1;
    for &pt in p.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], pt) <= 0.0 {
            hull.pop();
        }
        hull.push(pt);
    }
    hull.pop();
    hull
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearHull {
    pub year: i32,
    pub vertices: Vec<[f64; 2]>,
}

/// One hull per calendar year from the first two coordinate columns.
pub fn hulls_by_year(months: &[i32], coords: &DMatrix<f64>, epoch: &StudyEpoch) -> Vec<YearHull> {
    let mut by_year: BTreeMap<i32, Vec<[f64; 2]>> = BTreeMap::new();
    for (i, &m) in months.iter().enumerate() {
        by_year.entry(epoch.year_of(m)).or_default().push([coords[(i, 0)], coords[(i, 1)]]);
    }
    by_year.into_iter().map(|(year, pts)| YearHull { year, vertices: convex_hull(&pts) }).collect()
}

/// Columns: year, vertex, axis1, axis2.
pub fn write_hulls_csv<W: Write>(hulls: &[YearHull], out: W) -> Result<(), OrdinationError> {
    let err = |e: csv::Error| OrdinationError::Table(e.to_string());
    let mut w = table::writer(out);
    w.write_record(["year", "vertex", "axis1", "axis2"]).map_err(err)?;
    for h in hulls {
        for (k, v) in h.vertices.iter().enumerate() {
            w.write_record([h.year.to_string(), k.to_string(), table::num(v[0]), table::num(v[1])]).map_err(err)?;
        }
    }
    w.flush().map_err(|e| OrdinationError::Table(e.to_string()))
}
