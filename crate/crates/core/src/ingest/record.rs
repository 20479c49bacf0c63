use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

/// First calendar month of the study window. Month indices count from here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyEpoch {
    pub year: i32,
    /// 1-based calendar month.
    pub month: u32,
}

impl Default for StudyEpoch {
    fn default() -> Self {
        StudyEpoch { year: 2014, month: 1 }
    }
}

impl StudyEpoch {
    pub fn month_index(&self, date: NaiveDate) -> i32 {
        12 * (date.year() - self.year) + (date.month() as i32 - self.month as i32)
    }

    /// Calendar year containing the given month index.
    pub fn year_of(&self, month_index: i32) -> i32 {
        let zero_based = self.month as i32 - 1 + month_index;
        self.year + zero_based.div_euclid(12)
    }

    /// First day of the given month index.
    pub fn first_day(&self, month_index: i32) -> NaiveDate {
        let zero_based = self.month as i32 - 1 + month_index;
        let year = self.year + zero_based.div_euclid(12);
        let month = zero_based.rem_euclid(12) as u32 + 1;
        NaiveDate::from_ymd_opt(year, month, 1).expect("valid calendar month")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    StaleUpdate,
    SingleFunction,
    Empty,
}

impl Exclusion {
    pub fn as_str(&self) -> &'static str {
        match self {
            Exclusion::StaleUpdate => "stale_update",
            Exclusion::SingleFunction => "single_function",
            Exclusion::Empty => "empty",
        }
    }
}

/// Non-fatal problems met while fetching a repository's scripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchIssue {
    RepoGone,
    TreeTooLarge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoRecord {
    pub repo_id: String,
    pub owner: String,
    pub name: String,
    pub created_at: NaiveDate,
    pub pushed_at: NaiveDate,
    pub month_index: i32,
    pub script_count: u32,
    pub excluded: Option<Exclusion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fetch_issue: Option<FetchIssue>,
}

impl RepoRecord {
    pub fn new(
        repo_id: impl Into<String>,
        owner: impl Into<String>,
        name: impl Into<String>,
        created_at: NaiveDate,
        pushed_at: NaiveDate,
        epoch: StudyEpoch,
    ) -> Self {
        RepoRecord {
            repo_id: repo_id.into(),
            owner: owner.into(),
            name: name.into(),
            created_at,
            pushed_at,
            month_index: epoch.month_index(created_at),
            script_count: 0,
            excluded: None,
            fetch_issue: None,
        }
    }

    pub fn update_lag_days(&self) -> i64 {
        (self.pushed_at - self.created_at).num_days()
    }

    pub fn is_included(&self) -> bool {
        self.excluded.is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn month_index_from_epoch() {
        let e = StudyEpoch::default();
        assert_eq!(e.month_index(d(2014, 1, 31)), 0);
        assert_eq!(e.month_index(d(2021, 12, 1)), 95);
        assert_eq!(e.month_index(d(2013, 12, 1)), -1);
        let mid = StudyEpoch { year: 2015, month: 7 };
        assert_eq!(mid.month_index(d(2016, 2, 1)), 7);
    }

    #[test]
    fn year_and_first_day_round_trip() {
        let e = StudyEpoch { year: 2015, month: 7 };
        for m in -30..60 {
            let first = e.first_day(m);
            assert_eq!(e.month_index(first), m);
            assert_eq!(e.year_of(m), first.year());
        }
    }

    #[test]
    fn manifest_field_names() {
        let r = RepoRecord::new("1", "o", "n", d(2020, 1, 5), d(2021, 2, 1), StudyEpoch::default());
        assert_eq!(r.update_lag_days(), 393);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(
            json,
            r#"{"repo_id":"1","owner":"o","name":"n","created_at":"2020-01-05","pushed_at":"2021-02-01","month_index":72,"script_count":0,"excluded":null}"#
        );
    }
}
