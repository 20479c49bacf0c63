use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use super::occurrence::OccurrenceSeries;
use super::{boundary_proportion, fit_model, Curve, TrendsError};
use crate::catalog::{Catalog, Category};
use crate::extract::CallProfile;
use crate::glm::{Family, FitData, ModelSpec, Term};
use crate::ingest::StudyEpoch;
use crate::table;

/// Shipped group definitions (import, join, reshape).
pub const DEFAULT_GROUPS: &str = include_str!("../../data/synonym_groups.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynonymGroup {
    pub name: String,
    pub members: Vec<String>,
}

/// Parse `name = a, b, c` lines; `#` starts a comment line.
pub fn parse_groups(text: &str) -> Result<Vec<SynonymGroup>, TrendsError> {
    let mut out: Vec<SynonymGroup> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: &str| TrendsError::GroupFormat { line: i + 1, message: message.to_owned() };
        let (name, rest) = line.split_once('=').ok_or_else(|| bad("expected `name = member, ...`"))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(bad("empty group name"));
        }
        if out.iter().any(|g| g.name == name) {
            return Err(bad("duplicate group name"));
        }
        let mut members: Vec<String> = Vec::new();
        for m in rest.split(',').map(str::trim).filter(|m| !m.is_empty()) {
            if !members.iter().any(|x| x == m) {
                members.push(m.to_owned());
            }
        }
        if members.is_empty() {
            return Err(bad("group has no members"));
        }
        out.push(SynonymGroup { name: name.to_owned(), members });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct MemberTrajectory {
    pub function: String,
    pub category: Category,
    pub series: OccurrenceSeries,
    pub curve: Curve,
    /// Final-year mean probability over the (clamped) first-year mean.
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct GroupTrajectory {
    pub name: String,
    pub series: OccurrenceSeries,
    pub curve: Curve,
    pub ratio: f64,
    pub members: Vec<MemberTrajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaShareRow {
    pub group: String,
    pub month_index: i32,
    pub category: Category,
    /// Fraction of the month's group-member calls.
    pub share: f64,
}

#[derive(Debug, Clone)]
pub struct SynonymReport {
    pub groups: Vec<GroupTrajectory>,
    pub area_share: Vec<AreaShareRow>,
    pub notices: Vec<String>,
}

fn year_ratio(curve: &Curve, epoch: &StudyEpoch, floor: f64) -> f64 {
    let years: Vec<i32> = curve.months.iter().map(|&m| epoch.year_of(m)).collect();
    let (Some(&first), Some(&last)) = (years.first(), years.last()) else { return f64::NAN };
    let mean_in = |y: i32| {
        let v: Vec<f64> = years.iter().zip(&curve.mean).filter(|(yy, _)| **yy == y).map(|(_, m)| *m).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let end = mean_in(last);
    if end == 0.0 {
        return 0.0;
    }
    end / mean_in(first).max(floor)
}

fn presence_curve(model_id: &str, s: &OccurrenceSeries) -> Result<Curve, TrendsError> {
    if let Some(v) = boundary_proportion(&s.successes, &s.trials) {
        return Ok(Curve::constant(model_id, &s.months, v));
    }
    let rows: Vec<usize> = (0..s.months.len()).filter(|&i| s.trials[i] > 0).collect();
    let data = FitData {
        covariates: vec![rows.iter().map(|&i| s.months[i] as f64).collect()],
        y: rows.iter().map(|&i| s.successes[i] as f64).collect(),
        weights: Some(rows.iter().map(|&i| s.trials[i] as f64).collect()),
        offset: None,
    };
    let fit = fit_model(model_id, &ModelSpec::new(Family::Binomial, vec![Term::spline("month")]), &data)?;
    Curve::from_fit(model_id, &fit, &s.months, &[])
}

/// Group and member presence trajectories plus monthly call shares by
/// category. Profiles are expected to be canonical.
pub fn synonym_groups(
    groups: &[SynonymGroup],
    profiles: &[CallProfile],
    catalog: &Catalog,
    epoch: &StudyEpoch,
) -> Result<SynonymReport, TrendsError> {
    let mut notices = Vec::new();
    let months: Vec<i32> =
        match (profiles.iter().map(|p| p.month_index).min(), profiles.iter().map(|p| p.month_index).max()) {
            (Some(a), Some(b)) => (a..=b).collect(),
            _ => Vec::new(),
        };
    let col: BTreeMap<i32, usize> = months.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let mut trials = vec![0u64; months.len()];
    for p in profiles {
        trials[col[&p.month_index]] += 1;
    }
    let floor = 1.0 / (10.0 * trials.iter().copied().max().unwrap_or(1).max(1) as f64);

    let mut out = Vec::new();
    let mut area_share = Vec::new();
    for g in groups {
        let members: Vec<&String> = g
            .members
            .iter()
            .filter(|m| {
                let known = catalog.get(m).is_some();
                if !known {
                    notices.push(format!("group {}: {m} is not in the catalog; dropped", g.name));
                }
                known
            })
            .collect();
        if members.is_empty() {
            notices.push(format!("group {} has no catalogued members; skipped", g.name));
            continue;
        }
        let member_set: BTreeSet<&str> = members.iter().map(|m| m.as_str()).collect();
        let mut any = vec![0u64; months.len()];
        let mut each: BTreeMap<&str, Vec<u64>> = member_set.iter().map(|m| (*m, vec![0; months.len()])).collect();
        let mut calls: Vec<BTreeMap<Category, u64>> = vec![BTreeMap::new(); months.len()];
        for p in profiles {
            let c = col[&p.month_index];
            let mut hit = false;
            let mut seen = BTreeSet::new();
            for (k, &v) in &p.counts {
                let e = catalog.entity_of(k);
                if let Some(s) = each.get_mut(e) {
                    hit = true;
                    if seen.insert(e.to_owned()) {
                        s[c] += 1;
                    }
                    *calls[c].entry(catalog.category_of(e)).or_insert(0) += v;
                }
            }
            any[c] += hit as u64;
        }
        let series = |entity: &str, successes: Vec<u64>| OccurrenceSeries {
            entity: entity.to_owned(),
            months: months.clone(),
            successes,
            trials: trials.clone(),
        };

        let group_series = series(&g.name, any);
        let curve = presence_curve(&format!("group_{}", g.name), &group_series)?;
        let ratio = year_ratio(&curve, epoch, floor);
        let mut member_out = Vec::new();
        for m in &members {
            let s = series(m, each[m.as_str()].clone());
            if s.total_successes() == 0 {
                notices.push(format!("group {}: {m} never observed; flat-zero trajectory", g.name));
            }
            let c = presence_curve(&format!("group_{}_{m}", g.name), &s)?;
            member_out.push(MemberTrajectory {
                function: m.to_string(),
                category: catalog.category_of(m),
                ratio: year_ratio(&c, epoch, floor),
                series: s,
                curve: c,
            });
        }
        for (i, by_cat) in calls.iter().enumerate() {
            let total: u64 = by_cat.values().sum();
            if total == 0 {
                continue;
            }
            for (cat, v) in by_cat {
                area_share.push(AreaShareRow {
                    group: g.name.clone(),
                    month_index: months[i],
                    category: *cat,
                    share: *v as f64 / total as f64,
                });
            }
        }
        out.push(GroupTrajectory { name: g.name.clone(), series: group_series, curve, ratio, members: member_out });
    }
    Ok(SynonymReport { groups: out, area_share, notices })
}

pub fn write_area_share_csv<W: Write>(rows: &[AreaShareRow], out: W) -> Result<(), TrendsError> {
    let err = |e: csv::Error| TrendsError::Table(e.to_string());
    let mut w = table::writer(out);
    w.write_record(["group", "month_index", "category", "share"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.group.clone(),
            r.month_index.to_string(),
            r.category.as_str().to_owned(),
            table::num(r.share),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| TrendsError::Table(e.to_string()))
}
