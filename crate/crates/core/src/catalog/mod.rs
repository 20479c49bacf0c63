//! Package attribution, function categories and the occupancy filter.

mod manifest;
mod occupancy;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::extract::{split_key, CallProfile};
use crate::table;

pub use manifest::{PackageManifest, PackageSet, Tier, DEFAULT_PACKAGES_CSV};
pub use occupancy::{sampling_filter, threshold_sweep, write_sweep_csv, OccupancyTable, SweepRow, DEFAULT_THRESHOLD};

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("no package manifests loaded")]
    ManifestMissing,
    #[error("package manifest row {row}: {message}")]
    ManifestFormat { row: usize, message: String },
    #[error("catalog table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Base,
    Tidyverse,
    Other,
    Unattributed,
}

impl Category {
    pub const ATTRIBUTED: [Category; 3] = [Category::Base, Category::Tidyverse, Category::Other];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Base => "base",
            Category::Tidyverse => "tidyverse",
            Category::Other => "other",
            Category::Unattributed => "unattributed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "base" => Category::Base,
            "tidyverse" => Category::Tidyverse,
            "other" => Category::Other,
            "unattributed" => Category::Unattributed,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub function: String,
    pub package: Option<String>,
    pub category: Category,
    pub retained: bool,
    pub peak_occupancy: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributionConfig {
    /// Resolution order among base-tier packages exporting the same name.
    /// Unlisted packages follow, lexicographically.
    pub base_priority: Vec<String>,
    pub recommended_priority: Vec<String>,
    /// Count recommended packages as category `base`.
    pub recommended_as_base: bool,
    /// Let `pkg::fun` calls override attribution for those calls.
    pub honor_qualified: bool,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            base_priority: ["base", "stats", "utils", "methods", "graphics", "grDevices", "datasets", "parallel"]
                .map(String::from)
                .to_vec(),
            recommended_priority: Vec::new(),
            recommended_as_base: true,
            honor_qualified: true,
        }
    }
}

fn pick_by_priority<'p>(candidates: &[&'p str], priority: &[String]) -> &'p str {
    candidates
        .iter()
        .min_by_key(|c| (priority.iter().position(|p| p == *c).unwrap_or(usize::MAX), **c))
        .copied()
        .expect("non-empty candidate list")
}

/// Attributed function catalog plus the alias table that folds qualified
/// profile keys onto their entity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    entries: BTreeMap<String, CatalogEntry>,
    aliases: BTreeMap<String, String>,
}

impl Catalog {
    pub fn from_parts(entries: impl IntoIterator<Item = CatalogEntry>, aliases: BTreeMap<String, String>) -> Self {
        Catalog { entries: entries.into_iter().map(|e| (e.function.clone(), e)).collect(), aliases }
    }

    pub fn entries(&self) -> impl Iterator<Item = &CatalogEntry> {
        self.entries.values()
    }

    pub fn entries_mut(&mut self) -> impl Iterator<Item = &mut CatalogEntry> {
        self.entries.values_mut()
    }

    pub fn aliases(&self) -> &BTreeMap<String, String> {
        &self.aliases
    }

    pub fn get(&self, entity: &str) -> Option<&CatalogEntry> {
        self.entries.get(entity)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entity a profile key is counted under.
    pub fn entity_of<'k>(&'k self, key: &'k str) -> &'k str {
        self.aliases.get(key).map(String::as_str).unwrap_or(key)
    }

    pub fn entry_for_key(&self, key: &str) -> Option<&CatalogEntry> {
        self.entries.get(self.entity_of(key))
    }

    pub fn is_retained_key(&self, key: &str) -> bool {
        self.entry_for_key(key).is_some_and(|e| e.retained)
    }

    pub fn retained(&self) -> BTreeSet<String> {
        self.entries.values().filter(|e| e.retained).map(|e| e.function.clone()).collect()
    }

    pub fn retained_in(&self, category: Category) -> BTreeSet<String> {
        self.entries.values().filter(|e| e.retained && e.category == category).map(|e| e.function.clone()).collect()
    }

    pub fn category_of(&self, entity: &str) -> Category {
        self.entries.get(entity).map(|e| e.category).unwrap_or(Category::Unattributed)
    }

    /// Re-key a profile onto catalog entities, summing folded keys.
    pub fn canonicalize(&self, profile: &CallProfile) -> CallProfile {
        let mut out = CallProfile::new(profile.repo_id.clone(), profile.month_index);
        for (k, v) in &profile.counts {
            *out.counts.entry(self.entity_of(k).to_owned()).or_insert(0) += v;
        }
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CatalogError> {
        let mut w = table::writer(out);
        let err = |e: csv::Error| CatalogError::Table(e.to_string());
        w.write_record(["function", "package", "category", "retained", "peak_occupancy"]).map_err(err)?;
        for e in self.entries.values() {
            w.write_record([
                e.function.as_str(),
                e.package.as_deref().unwrap_or(""),
                e.category.as_str(),
                if e.retained { "true" } else { "false" },
                &table::num(e.peak_occupancy),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| CatalogError::Table(e.to_string()))
    }

    pub fn write_aliases_csv<W: Write>(&self, out: W) -> Result<(), CatalogError> {
        let mut w = table::writer(out);
        let err = |e: csv::Error| CatalogError::Table(e.to_string());
        w.write_record(["key", "entity"]).map_err(err)?;
        for (k, v) in &self.aliases {
            w.write_record([k, v]).map_err(err)?;
        }
        w.flush().map_err(|e| CatalogError::Table(e.to_string()))
    }

    pub fn read_csv<R: Read, A: Read>(entries: R, aliases: Option<A>) -> Result<Self, CatalogError> {
        let mut rows = Vec::new();
        for rec in table::reader(entries).records() {
            let rec = rec.map_err(|e| CatalogError::Table(e.to_string()))?;
            if rec.len() != 5 {
                return Err(CatalogError::Table(format!("expected 5 columns, found {}", rec.len())));
            }
            let category =
                Category::parse(&rec[2]).ok_or_else(|| CatalogError::Table(format!("bad category {}", &rec[2])))?;
            rows.push(CatalogEntry {
                function: rec[0].to_owned(),
                package: if rec[1].is_empty() { None } else { Some(rec[1].to_owned()) },
                category,
                retained: &rec[3] == "true",
                peak_occupancy: table::parse_num(&rec[4])
                    .ok_or_else(|| CatalogError::Table(format!("bad number {}", &rec[4])))?,
            });
        }
        let mut alias_map = BTreeMap::new();
        if let Some(a) = aliases {
            for rec in table::reader(a).records() {
                let rec = rec.map_err(|e| CatalogError::Table(e.to_string()))?;
                alias_map.insert(rec[0].to_owned(), rec[1].to_owned());
            }
        }
        Ok(Catalog::from_parts(rows, alias_map))
    }
}

fn category_for(pkg: &PackageManifest, config: &AttributionConfig) -> Category {
    match pkg.tier {
        Tier::Base => Category::Base,
        Tier::Recommended if config.recommended_as_base => Category::Base,
        Tier::Recommended => Category::Other,
        Tier::Community if pkg.tidyverse_member => Category::Tidyverse,
        Tier::Community => Category::Other,
    }
}

/// Tiered attribution of profile keys to packages.
///
/// Bare names resolve base tier first, then recommended, then through a
/// greedy pass over community packages: take the most frequent unassigned
/// name, pick the candidate package whose exports cover the most unassigned
/// call mass, assign all of its unassigned exports, repeat.
pub fn attribute(
    frequencies: &BTreeMap<String, u64>,
    packages: &PackageSet,
    config: &AttributionConfig,
) -> Result<Catalog, CatalogError> {
    if packages.is_empty() {
        return Err(CatalogError::ManifestMissing);
    }

    let mut bare: BTreeMap<&str, u64> = BTreeMap::new();
    let mut qualified: Vec<(&str, &str, &str)> = Vec::new();
    for (key, &freq) in frequencies {
        match split_key(key) {
            (Some(pkg), token) if config.honor_qualified => qualified.push((key.as_str(), pkg, token)),
            (_, token) => *bare.entry(token).or_insert(0) += freq,
        }
    }

    let mut assigned: BTreeMap<&str, &str> = BTreeMap::new();
    for (tier, priority) in [(Tier::Base, &config.base_priority), (Tier::Recommended, &config.recommended_priority)] {
        let idx = packages.exporters(tier);
        for &token in bare.keys() {
            if assigned.contains_key(token) {
                continue;
            }
            if let Some(cands) = idx.get(token) {
                assigned.insert(token, pick_by_priority(cands, priority));
            }
        }
    }

    let community = packages.exporters(Tier::Community);
    let mut unassigned: BTreeMap<&str, u64> = bare
        .iter()
        .filter(|(t, _)| !assigned.contains_key(*t) && community.contains_key(*t))
        .map(|(t, f)| (*t, *f))
        .collect();
    while let Some((&top, _)) = unassigned.iter().max_by_key(|(t, f)| (**f, Reverse(**t))) {
        let best = community[top]
            .iter()
            .map(|pkg| {
                let exports = &packages.get(pkg).expect("indexed package").exports;
                let cover: u64 = unassigned.iter().filter(|(t, _)| exports.contains(**t)).map(|(_, f)| *f).sum();
                (cover, Reverse(*pkg))
            })
            .max()
            .map(|(_, Reverse(pkg))| pkg)
            .expect("top name has a community exporter");
        let exports = &packages.get(best).expect("indexed package").exports;
        let taken: Vec<&str> = unassigned.keys().copied().filter(|t| exports.contains(*t)).collect();
        for t in taken {
            unassigned.remove(t);
            assigned.insert(t, best);
        }
    }

    let mut entries: BTreeMap<String, CatalogEntry> = BTreeMap::new();
    let make = |function: &str, pkg: Option<&str>| {
        let (package, category) = match pkg.and_then(|p| packages.get(p)) {
            Some(m) => (Some(m.package.clone()), category_for(m, config)),
            None => (None, Category::Unattributed),
        };
        CatalogEntry { function: function.to_owned(), package, category, retained: false, peak_occupancy: 0.0 }
    };
    for &token in bare.keys() {
        entries.insert(token.to_owned(), make(token, assigned.get(token).copied()));
    }

    let mut aliases = BTreeMap::new();
    for (key, pkg, token) in qualified {
        match entries.get(token) {
            Some(e) if e.package.as_deref() == Some(pkg) => {
                aliases.insert(key.to_owned(), token.to_owned());
            }
            Some(_) => {
                entries.insert(key.to_owned(), make(key, Some(pkg)));
            }
            None if packages.get(pkg).is_some() => {
                entries.insert(token.to_owned(), make(token, Some(pkg)));
                aliases.insert(key.to_owned(), token.to_owned());
            }
            None => {
                entries.insert(key.to_owned(), make(key, None));
            }
        }
    }
    Ok(Catalog { entries, aliases })
}

/// Total call counts per key over the given profiles.
pub fn corpus_frequencies<'a>(profiles: impl IntoIterator<Item = &'a CallProfile>) -> BTreeMap<String, u64> {
    let mut freq = BTreeMap::new();
    for p in profiles {
        for (k, v) in &p.counts {
            *freq.entry(k.clone()).or_insert(0) += v;
        }
    }
    freq
}
