use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use super::{Catalog, CatalogError, Category};
use crate::extract::CallProfile;
use crate::table;

/// Minimum peak monthly occupancy for a function to be kept.
pub const DEFAULT_THRESHOLD: f64 = 0.001;

/// Per-month repository counts and per-entity presence counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OccupancyTable {
    pub repo_counts: BTreeMap<i32, u64>,
    pub presence: BTreeMap<String, BTreeMap<i32, u64>>,
}

impl OccupancyTable {
    /// Count presence per catalog entity. Profiles should already be
    /// restricted to included repositories.
    pub fn from_profiles<'a>(profiles: impl IntoIterator<Item = &'a CallProfile>, catalog: &Catalog) -> Self {
        let mut t = OccupancyTable::default();
        for p in profiles {
            *t.repo_counts.entry(p.month_index).or_insert(0) += 1;
            let entities: BTreeSet<&str> = p.counts.keys().map(|k| catalog.entity_of(k)).collect();
            for e in entities {
                *t.presence.entry(e.to_owned()).or_default().entry(p.month_index).or_insert(0) += 1;
            }
        }
        t
    }

    pub fn months(&self) -> impl Iterator<Item = i32> + '_ {
        self.repo_counts.keys().copied()
    }

    pub fn occupancy(&self, entity: &str, month: i32) -> Option<f64> {
        let n = *self.repo_counts.get(&month)?;
        if n == 0 {
            return None;
        }
        let k = self.presence.get(entity).and_then(|m| m.get(&month)).copied().unwrap_or(0);
        Some(k as f64 / n as f64)
    }

    /// Highest monthly occupancy; months without repositories are skipped.
    pub fn peak(&self, entity: &str) -> f64 {
        let Some(by_month) = self.presence.get(entity) else { return 0.0 };
        by_month
            .iter()
            .filter_map(|(m, k)| match self.repo_counts.get(m) {
                Some(&n) if n > 0 => Some(*k as f64 / n as f64),
                _ => None,
            })
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CatalogError> {
        let mut w = table::writer(out);
        let err = |e: csv::Error| CatalogError::Table(e.to_string());
        w.write_record(["function", "month_index", "repos_present", "repos_total"]).map_err(err)?;
        for (f, by_month) in &self.presence {
            for (m, k) in by_month {
                let n = self.repo_counts.get(m).copied().unwrap_or(0);
                w.write_record([f.as_str(), &m.to_string(), &k.to_string(), &n.to_string()]).map_err(err)?;
            }
        }
        w.flush().map_err(|e| CatalogError::Table(e.to_string()))
    }
}

/// Record peak occupancy on every entry and mark retention. Only attributed
/// functions can be retained.
pub fn sampling_filter(catalog: &mut Catalog, table: &OccupancyTable, threshold: f64) -> BTreeSet<String> {
    let mut kept = BTreeSet::new();
    for e in catalog.entries_mut() {
        e.peak_occupancy = table.peak(&e.function);
        e.retained = e.category != Category::Unattributed && e.peak_occupancy >= threshold;
        if e.retained {
            kept.insert(e.function.clone());
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub all: usize,
    pub base: usize,
    pub tidyverse: usize,
    pub other: usize,
}

/// Retained-function counts by category for each threshold. Does not modify
/// the catalog.
pub fn threshold_sweep(catalog: &Catalog, table: &OccupancyTable, grid: &[f64]) -> Vec<SweepRow> {
    let peaks: Vec<(Category, f64)> = catalog
        .entries()
        .filter(|e| e.category != Category::Unattributed)
        .map(|e| (e.category, table.peak(&e.function)))
        .collect();
    grid.iter()
        .map(|&threshold| {
            let mut row = SweepRow { threshold, all: 0, base: 0, tidyverse: 0, other: 0 };
            for &(cat, peak) in &peaks {
                if peak >= threshold {
                    row.all += 1;
                    match cat {
                        Category::Base => row.base += 1,
                        Category::Tidyverse => row.tidyverse += 1,
                        Category::Other => row.other += 1,
                        Category::Unattributed => {}
                    }
                }
            }
            row
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), CatalogError> {
    let mut w = table::writer(out);
    let err = |e: csv::Error| CatalogError::Table(e.to_string());
    w.write_record(["threshold", "all", "base", "tidyverse", "other"]).map_err(err)?;
    for r in rows {
        w.write_record([
            table::num(r.threshold),
            r.all.to_string(),
            r.base.to_string(),
            r.tidyverse.to_string(),
            r.other.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CatalogError::Table(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::CatalogEntry;

    fn entry(f: &str, cat: Category) -> CatalogEntry {
        CatalogEntry {
            function: f.into(),
            package: (cat != Category::Unattributed).then(|| "p".into()),
            category: cat,
            retained: false,
            peak_occupancy: 0.0,
        }
    }

    fn table(months: &[(i32, u64)], presence: &[(&str, i32, u64)]) -> OccupancyTable {
        let mut t = OccupancyTable { repo_counts: months.iter().copied().collect(), ..Default::default() };
        for &(f, m, k) in presence {
            t.presence.entry(f.into()).or_default().insert(m, k);
        }
        t
    }

    #[test]
    fn threshold_examples() {
        let mut c = Catalog::from_parts(
            [entry("one_in_k", Category::Base), entry("rare", Category::Other), entry("spike", Category::Tidyverse)],
            BTreeMap::new(),
        );
        let t = table(
            &[(0, 1000), (1, 5000), (2, 5000), (3, 0)],
            &[("one_in_k", 0, 1), ("rare", 1, 4), ("rare", 2, 4), ("spike", 2, 250), ("spike", 3, 0)],
        );
        let kept = sampling_filter(&mut c, &t, DEFAULT_THRESHOLD);
        assert!(kept.contains("one_in_k"));
        assert!(!kept.contains("rare"));
        assert!(kept.contains("spike"));
        assert_eq!(c.get("rare").unwrap().peak_occupancy, 0.0008);
        assert_eq!(c.get("spike").unwrap().peak_occupancy, 0.05);
    }

    #[test]
    fn unattributed_never_retained() {
        let mut c = Catalog::from_parts([entry("x", Category::Unattributed)], BTreeMap::new());
        let t = table(&[(0, 1)], &[("x", 0, 1)]);
        assert!(sampling_filter(&mut c, &t, 0.0).is_empty());
    }

    #[test]
    fn sweep_hand_enumeration() {
        // Peaks: a 1.0, b 0.5, c 0.1, d 0.02, u (unattributed) 1.0.
        let c = Catalog::from_parts(
            [
                entry("a", Category::Base),
                entry("b", Category::Tidyverse),
                entry("c", Category::Other),
                entry("d", Category::Base),
                entry("u", Category::Unattributed),
            ],
            BTreeMap::new(),
        );
        let t = table(
            &[(0, 10), (1, 50)],
            &[("a", 0, 10), ("b", 0, 5), ("b", 1, 5), ("c", 0, 1), ("d", 1, 1), ("u", 0, 10)],
        );
        let rows = threshold_sweep(&c, &t, &[0.0, 0.02, 0.1, 0.5, 1.0]);
        let got: Vec<[usize; 4]> = rows.iter().map(|r| [r.all, r.base, r.tidyverse, r.other]).collect();
        assert_eq!(got, vec![[4, 2, 1, 1], [4, 2, 1, 1], [3, 1, 1, 1], [2, 1, 1, 0], [1, 1, 0, 0]]);
    }

    proptest::proptest! {
        #[test]
        fn sweep_is_monotone(
            counts in proptest::collection::vec((0u64..20, 1u64..20), 1..30),
            mut grid in proptest::collection::vec(0.0f64..1.0, 2..10),
        ) {
            grid.sort_by(f64::total_cmp);
            let cats = [Category::Base, Category::Tidyverse, Category::Other];
            let mut entries = Vec::new();
            let mut t = OccupancyTable::default();
            for (i, &(k, n)) in counts.iter().enumerate() {
                let f = format!("f{i}");
                entries.push(entry(&f, cats[i % 3]));
                t.repo_counts.insert(i as i32, n);
                t.presence.entry(f).or_default().insert(i as i32, k.min(n));
            }
            let mut c = Catalog::from_parts(entries, BTreeMap::new());
            let before: Vec<Category> = c.entries().map(|e| e.category).collect();
            let rows = threshold_sweep(&c, &t, &grid);
            for w in rows.windows(2) {
                proptest::prop_assert!(w[0].all >= w[1].all);
                proptest::prop_assert!(w[0].base >= w[1].base && w[0].tidyverse >= w[1].tidyverse && w[0].other >= w[1].other);
            }
            for &th in &grid {
                sampling_filter(&mut c, &t, th);
                let after: Vec<Category> = c.entries().map(|e| e.category).collect();
                proptest::prop_assert_eq!(&before, &after);
                for e in c.entries() {
                    proptest::prop_assert!(!e.retained || e.peak_occupancy >= th);
                }
            }
        }
    }
}
