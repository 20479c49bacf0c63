use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::CatalogError;

/// Shipped default export lists. Columns: package, tier, tidyverse_member, function.
pub const DEFAULT_PACKAGES_CSV: &str = include_str!("../../data/packages.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Base,
    Recommended,
    Community,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackageManifest {
    pub package: String,
    pub tier: Tier,
    pub exports: BTreeSet<String>,
    pub tidyverse_member: bool,
}

#[derive(Debug, Deserialize)]
struct Row {
    package: String,
    tier: Tier,
    tidyverse_member: bool,
    function: String,
}

/// All known packages, keyed by name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PackageSet {
    packages: BTreeMap<String, PackageManifest>,
}

impl PackageSet {
    pub fn from_csv<R: Read>(input: R) -> Result<Self, CatalogError> {
        let mut set = PackageSet::default();
        set.extend_csv(input)?;
        Ok(set)
    }

    pub fn shipped_default() -> Self {
        Self::from_csv(DEFAULT_PACKAGES_CSV.as_bytes()).expect("shipped package manifest is valid")
    }

    /// Add rows from another manifest file. A package's tier and tidyverse
    /// flag are fixed by its first row.
    pub fn extend_csv<R: Read>(&mut self, input: R) -> Result<(), CatalogError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| CatalogError::ManifestFormat { row: i + 2, message: e.to_string() })?;
            if row.tidyverse_member && row.tier != Tier::Community {
                return Err(CatalogError::ManifestFormat {
                    row: i + 2,
                    message: format!("{} is tidyverse but not a community package", row.package),
                });
            }
            let entry = self.packages.entry(row.package.clone()).or_insert_with(|| PackageManifest {
                package: row.package.clone(),
                tier: row.tier,
                exports: BTreeSet::new(),
                tidyverse_member: row.tidyverse_member,
            });
            if entry.tier != row.tier {
                return Err(CatalogError::ManifestFormat {
                    row: i + 2,
                    message: format!("{} listed with two tiers", row.package),
                });
            }
            entry.exports.insert(row.function);
        }
        Ok(())
    }

    pub fn insert(&mut self, manifest: PackageManifest) {
        self.packages.insert(manifest.package.clone(), manifest);
    }

    /// Replace every package's tidyverse flag from a membership list.
    pub fn set_tidyverse(&mut self, members: &BTreeSet<String>) {
        for p in self.packages.values_mut() {
            p.tidyverse_member = p.tier == Tier::Community && members.contains(&p.package);
        }
    }

    pub fn get(&self, package: &str) -> Option<&PackageManifest> {
        self.packages.get(package)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PackageManifest> {
        self.packages.values()
    }

    pub fn is_empty(&self) -> bool {
        self.packages.is_empty()
    }

    pub fn len(&self) -> usize {
        self.packages.len()
    }

    /// Reverse index: function name to exporting packages of a tier.
    pub fn exporters(&self, tier: Tier) -> BTreeMap<&str, Vec<&str>> {
        let mut idx: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for p in self.packages.values().filter(|p| p.tier == tier) {
            for f in &p.exports {
                idx.entry(f.as_str()).or_default().push(p.package.as_str());
            }
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_manifest_loads() {
        let set = PackageSet::shipped_default();
        assert!(set.get("base").unwrap().exports.contains("paste"));
        assert_eq!(set.get("stats").unwrap().tier, Tier::Base);
        assert_eq!(set.get("MASS").unwrap().tier, Tier::Recommended);
        assert!(set.get("dplyr").unwrap().tidyverse_member);
        assert!(!set.get("data.table").unwrap().tidyverse_member);
        assert!(set.iter().all(|p| !p.exports.is_empty()));
    }

    #[test]
    fn tidyverse_requires_community() {
        let csv = "package,tier,tidyverse_member,function\nbase,base,true,paste\n";
        assert!(matches!(PackageSet::from_csv(csv.as_bytes()), Err(CatalogError::ManifestFormat { row: 2, .. })));
    }

    #[test]
    fn conflicting_tiers_rejected() {
        let csv = "package,tier,tidyverse_member,function\np,base,false,a\np,community,false,b\n";
        assert!(PackageSet::from_csv(csv.as_bytes()).is_err());
    }
}
