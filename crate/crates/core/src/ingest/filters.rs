//! Repository-level inclusion filters.
//!
//! Each repository carries at most one exclusion. When several apply the
//! label is fixed by precedence `stale_update > empty > single_function`,
//! which makes the marking passes commute.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Exclusion, Manifest, RepoRecord};
use crate::extract::CallProfile;

pub const DEFAULT_STALE_DAYS: i64 = 365;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub total: usize,
    pub included: usize,
    pub stale_update: usize,
    pub single_function: usize,
    pub empty: usize,
}

impl FilterReport {
    pub fn tally<'r>(records: impl IntoIterator<Item = &'r RepoRecord>) -> Self {
        let mut report = FilterReport::default();
        for r in records {
            report.total += 1;
            match r.excluded {
                None => report.included += 1,
                Some(Exclusion::StaleUpdate) => report.stale_update += 1,
                Some(Exclusion::SingleFunction) => report.single_function += 1,
                Some(Exclusion::Empty) => report.empty += 1,
            }
        }
        report
    }
}

fn precedence(e: Exclusion) -> u8 {
    match e {
        Exclusion::StaleUpdate => 3,
        Exclusion::Empty => 2,
        Exclusion::SingleFunction => 1,
    }
}

fn mark(record: &mut RepoRecord, reason: Exclusion) {
    match record.excluded {
        Some(current) if precedence(current) >= precedence(reason) => {}
        _ => record.excluded = Some(reason),
    }
}

pub fn is_stale(record: &RepoRecord, stale_days: i64) -> bool {
    record.update_lag_days() >= stale_days
}

pub fn mark_stale<'r>(records: impl IntoIterator<Item = &'r mut RepoRecord>, stale_days: i64) {
    for r in records {
        if is_stale(r, stale_days) {
            mark(r, Exclusion::StaleUpdate);
        }
    }
}

/// Mark repositories whose profile holds fewer than two distinct retained
/// functions. A repository without a profile counts as having none.
pub fn mark_single_function<'r>(
    records: impl IntoIterator<Item = &'r mut RepoRecord>,
    profiles: &BTreeMap<String, &CallProfile>,
    retained_key: &dyn Fn(&str) -> bool,
) {
    for r in records {
        if r.excluded == Some(Exclusion::Empty) {
            continue;
        }
        let distinct =
            profiles.get(&r.repo_id).map(|p| p.counts.keys().filter(|k| retained_key(k)).count()).unwrap_or(0);
        if distinct < 2 {
            mark(r, Exclusion::SingleFunction);
        }
    }
}

/// Both filters in one pass over the manifest, plus the tally.
pub fn apply_repo_filters(
    manifest: &mut Manifest,
    profiles: &[CallProfile],
    retained_key: &dyn Fn(&str) -> bool,
    stale_days: i64,
) -> FilterReport {
    let by_id: BTreeMap<String, &CallProfile> = profiles.iter().map(|p| (p.repo_id.clone(), p)).collect();
    mark_stale(manifest.records_mut(), stale_days);
    mark_single_function(manifest.records_mut(), &by_id, retained_key);
    FilterReport::tally(manifest.records())
}
