//! Relative abundances and Hill numbers at repository (alpha) and pooled
//! monthly (gamma) level.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::extract::CallProfile;
use crate::table;

#[derive(Debug, thiserror::Error)]
pub enum DiversityError {
    #[error("repository {repo_id} has no retained calls")]
    EmptyAfterFilter { repo_id: String },
    #[error("invalid abundance vector: {0}")]
    Invalid(String),
    #[error("table: {0}")]
    Table(String),
}

fn table_err(e: impl std::fmt::Display) -> DiversityError {
    DiversityError::Table(e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceVector {
    pub ids: Vec<String>,
    pub p: Vec<f64>,
}

impl AbundanceVector {
    /// Normalize raw counts. Zero counts are kept as zero-probability ids.
    pub fn from_counts<'a>(counts: impl IntoIterator<Item = (&'a str, u64)>) -> Result<Self, DiversityError> {
        let (ids, raw): (Vec<String>, Vec<u64>) = counts.into_iter().map(|(k, v)| (k.to_owned(), v)).unzip();
        let total: u64 = raw.iter().sum();
        if total == 0 {
            return Err(DiversityError::Invalid("zero total".into()));
        }
        let p = raw.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(AbundanceVector { ids, p })
    }

    pub fn from_probabilities(ids: Vec<String>, p: Vec<f64>) -> Result<Self, DiversityError> {
        if ids.len() != p.len() {
            return Err(DiversityError::Invalid("ids and p differ in length".into()));
        }
        if p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(DiversityError::Invalid("negative or non-finite entry".into()));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(DiversityError::Invalid(format!("sums to {s}")));
        }
        if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
            return Err(DiversityError::Invalid("duplicate ids".into()));
        }
        Ok(AbundanceVector { ids, p })
    }

    pub fn support(&self) -> usize {
        self.p.iter().filter(|&&x| x > 0.0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HillOrder {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1")]
    One,
}

impl HillOrder {
    pub fn q(self) -> f64 {
        match self {
            HillOrder::Zero => 0.0,
            HillOrder::One => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HillEstimate {
    pub order_q: HillOrder,
    pub value: f64,
}

/// (Σ p^q)^(1/(1−q)), with the q → 1 limit exp(−Σ p ln p).
fn hill_general(p: &[f64], q: f64) -> f64 {
    let nz = p.iter().copied().filter(|&x| x > 0.0);
    if (q - 1.0).abs() < 1e-12 {
        let h: f64 = nz.map(|x| -x * x.ln()).sum();
        h.exp()
    } else if q == 0.0 {
        nz.count() as f64
    } else {
        nz.map(|x| x.powf(q)).sum::<f64>().powf(1.0 / (1.0 - q))
    }
}

pub fn hill(p: &AbundanceVector, order: HillOrder) -> HillEstimate {
    let mut nz = p.p.iter().filter(|&&x| x > 0.0);
    let first = nz.next().copied();
    if first.is_some_and(|f| nz.all(|&x| x == f)) {
        // Equal abundances: every order equals the support, and exp(ln n)
        // need not round back to n.
        return HillEstimate { order_q: order, value: p.support() as f64 };
    }
    let mut value = hill_general(&p.p, order.q());
    if order == HillOrder::One {
        // Rounding can push exp(H) a few ulps outside [1, support].
        value = value.clamp(1.0, p.support().max(1) as f64);
    }
    HillEstimate { order_q: order, value }
}

/// Relative abundances over retained functions only. Profile keys are
/// expected to be catalog entities already.
pub fn to_abundance(profile: &CallProfile, retained: &BTreeSet<String>) -> Result<AbundanceVector, DiversityError> {
    let kept: Vec<(&str, u64)> = profile
        .counts
        .iter()
        .filter(|(k, v)| **v > 0 && retained.contains(k.as_str()))
        .map(|(k, v)| (k.as_str(), *v))
        .collect();
    if kept.is_empty() {
        return Err(DiversityError::EmptyAfterFilter { repo_id: profile.repo_id.clone() });
    }
    AbundanceVector::from_counts(kept)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaRow {
    pub repo_id: String,
    pub month_index: i32,
    pub hill0: f64,
    pub hill1: f64,
    /// Retained calls only.
    pub total_calls: u64,
}

/// One row per profile that has at least one retained call, sorted by
/// (month_index, repo_id).
pub fn alpha_table(profiles: &[CallProfile], retained: &BTreeSet<String>) -> Vec<AlphaRow> {
    let mut rows: Vec<AlphaRow> = profiles
        .par_iter()
        .filter_map(|p| {
            let a = to_abundance(p, retained).ok()?;
            let total_calls = p.counts.iter().filter(|(k, _)| retained.contains(k.as_str())).map(|(_, v)| v).sum();
            Some(AlphaRow {
                repo_id: p.repo_id.clone(),
                month_index: p.month_index,
                hill0: hill(&a, HillOrder::Zero).value,
                hill1: hill(&a, HillOrder::One).value,
                total_calls,
            })
        })
        .collect();
    rows.sort_by(|a, b| (a.month_index, &a.repo_id).cmp(&(b.month_index, &b.repo_id)));
    rows
}

pub fn write_alpha_csv<W: Write>(rows: &[AlphaRow], out: W) -> Result<(), DiversityError> {
    let mut w = table::writer(out);
    w.write_record(["repo_id", "month_index", "hill0", "hill1", "total_calls"]).map_err(table_err)?;
    for r in rows {
        w.write_record([
            r.repo_id.clone(),
            r.month_index.to_string(),
            table::num(r.hill0),
            table::num(r.hill1),
            r.total_calls.to_string(),
        ])
        .map_err(table_err)?;
    }
    w.flush().map_err(table_err)
}

pub fn read_alpha_csv<R: Read>(input: R) -> Result<Vec<AlphaRow>, DiversityError> {
    let mut rows = Vec::new();
    let mut r = table::reader(input);
    check_header(r.headers().map_err(table_err)?, &["repo_id", "month_index", "hill0", "hill1", "total_calls"])?;
    for rec in r.records() {
        let rec = rec.map_err(table_err)?;
        rows.push(AlphaRow {
            repo_id: rec[0].to_owned(),
            month_index: rec[1].parse().map_err(table_err)?,
            hill0: table::parse_num(&rec[2]).ok_or_else(|| table_err("hill0"))?,
            hill1: table::parse_num(&rec[3]).ok_or_else(|| table_err("hill1"))?,
            total_calls: rec[4].parse().map_err(table_err)?,
        });
    }
    Ok(rows)
}

fn check_header(h: &csv::StringRecord, expected: &[&str]) -> Result<(), DiversityError> {
    let got: Vec<&str> = h.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(DiversityError::Table(format!("expected columns {expected:?}, found {got:?}")));
    }
    Ok(())
}

/// Months × functions matrix of mean relative abundances.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlyAbundanceMatrix {
    pub months: Vec<i32>,
    pub functions: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub repo_counts: Vec<u64>,
}

impl MonthlyAbundanceMatrix {
    pub fn row(&self, i: usize) -> AbundanceVector {
        AbundanceVector { ids: self.functions.clone(), p: self.values[i].clone() }
    }

    pub fn n_months(&self) -> usize {
        self.months.len()
    }

    /// Restrict to a subset of functions and renormalize each row. Rows with
    /// no mass in the subset become all zero.
    pub fn restricted(&self, keep: &BTreeSet<String>) -> MonthlyAbundanceMatrix {
        let idx: Vec<usize> = (0..self.functions.len()).filter(|&j| keep.contains(&self.functions[j])).collect();
        let values = self
            .values
            .iter()
            .map(|row| {
                let s = neumaier(idx.iter().map(|&j| row[j]));
                idx.iter().map(|&j| if s > 0.0 { row[j] / s } else { 0.0 }).collect()
            })
            .collect();
        MonthlyAbundanceMatrix {
            months: self.months.clone(),
            functions: idx.iter().map(|&j| self.functions[j].clone()).collect(),
            values,
            repo_counts: self.repo_counts.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DiversityError> {
        let mut w = table::writer(out);
        let mut header = vec!["month_index".to_owned()];
        header.extend(self.functions.iter().cloned());
        w.write_record(&header).map_err(table_err)?;
        for (m, row) in self.months.iter().zip(&self.values) {
            let mut rec = vec![m.to_string()];
            rec.extend(row.iter().map(|&x| table::num(x)));
            w.write_record(&rec).map_err(table_err)?;
        }
        w.flush().map_err(table_err)
    }

    pub fn write_repo_counts_csv<W: Write>(&self, out: W) -> Result<(), DiversityError> {
        let mut w = table::writer(out);
        w.write_record(["month_index", "repo_count"]).map_err(table_err)?;
        for (m, n) in self.months.iter().zip(&self.repo_counts) {
            w.write_record([m.to_string(), n.to_string()]).map_err(table_err)?;
        }
        w.flush().map_err(table_err)
    }

    pub fn read_csv<R: Read, S: Read>(matrix: R, repo_counts: S) -> Result<Self, DiversityError> {
        let mut r = table::reader(matrix);
        let header = r.headers().map_err(table_err)?.clone();
        check_header(&header, &["month_index"])?;
        let functions: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut months = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(table_err)?;
            months.push(rec[0].parse().map_err(table_err)?);
            let row =
                rec.iter().skip(1).map(|s| table::parse_num(s).ok_or_else(|| table_err(format!("bad number {s}"))));
            values.push(row.collect::<Result<Vec<f64>, _>>()?);
        }
        let mut counts = BTreeMap::new();
        let mut r = table::reader(repo_counts);
        check_header(r.headers().map_err(table_err)?, &["month_index", "repo_count"])?;
        for rec in r.records() {
            let rec = rec.map_err(table_err)?;
            counts.insert(rec[0].parse::<i32>().map_err(table_err)?, rec[1].parse::<u64>().map_err(table_err)?);
        }
        let repo_counts = months
            .iter()
            .map(|m| counts.get(m).copied().ok_or_else(|| table_err(format!("no repo count for month {m}"))))
            .collect::<Result<_, _>>()?;
        Ok(MonthlyAbundanceMatrix { months, functions, values, repo_counts })
    }
}

/// Compensated sum; order of the input is fixed by the caller.
pub(crate) fn neumaier(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaResult {
    pub matrix: MonthlyAbundanceMatrix,
    /// Months between the first and last emitted month with no repositories.
    pub gaps: Vec<i32>,
}

/// Mean repository abundance vector per month over the union of retained
/// functions. Repositories with no retained calls are skipped.
pub fn gamma_matrix(profiles: &[CallProfile], retained: &BTreeSet<String>) -> GammaResult {
    let mut by_month: BTreeMap<i32, Vec<(&str, AbundanceVector)>> = BTreeMap::new();
    for p in profiles {
        if let Ok(a) = to_abundance(p, retained) {
            by_month.entry(p.month_index).or_default().push((p.repo_id.as_str(), a));
        }
    }
    let functions: Vec<String> = by_month
        .values()
        .flat_map(|v| v.iter().flat_map(|(_, a)| a.ids.iter().cloned()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let col: BTreeMap<&str, usize> = functions.iter().enumerate().map(|(i, f)| (f.as_str(), i)).collect();

    let mut months = Vec::new();
    let mut values = Vec::new();
    let mut repo_counts = Vec::new();
    for (m, mut repos) in by_month {
        repos.sort_by(|a, b| a.0.cmp(b.0));
        let n = repos.len();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); functions.len()];
        for (_, a) in &repos {
            for (id, &p) in a.ids.iter().zip(&a.p) {
                cols[col[id.as_str()]].push(p);
            }
        }
        values.push(cols.into_iter().map(|c| neumaier(c) / n as f64).collect());
        months.push(m);
        repo_counts.push(n as u64);
    }
    let gaps = match (months.first(), months.last()) {
        (Some(&a), Some(&b)) => (a..=b).filter(|m| months.binary_search(m).is_err()).collect(),
        _ => Vec::new(),
    };
    GammaResult { matrix: MonthlyAbundanceMatrix { months, functions, values, repo_counts }, gaps }
}
