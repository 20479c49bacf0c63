//! TOML pipeline configuration.
//!
//! Every key has a default; an empty file is a valid config. Relative paths
//! are resolved against the directory holding the config file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use codelex_core::catalog::DEFAULT_THRESHOLD;
use codelex_core::ingest::DEFAULT_PER_DAY_CAP;
use codelex_core::ingest::DEFAULT_STALE_DAYS;
use codelex_core::trends::MEANINGFUL_CHANGE;
use codelex_core::{ScanMode, StudyEpoch};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::simulate::GeneratorConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Default,
    Naive,
}

impl From<Mode> for ScanMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Default => ScanMode::Default,
            Mode::Naive => ScanMode::Naive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    /// Local corpus root: one subdirectory per repository.
    pub path: Option<PathBuf>,
    /// Extra package export lists in the shipped CSV schema.
    pub packages: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub epoch_year: i32,
    pub epoch_month: u32,
    /// Month index used as t = 0 in occurrence models. Defaults to the last
    /// month present in the data.
    pub final_month: Option<i32>,
}

impl Default for StudySection {
    fn default() -> Self {
        let e = StudyEpoch::default();
        StudySection { epoch_year: e.year, epoch_month: e.month, final_month: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarvestSection {
    /// Harvest from the HTTP API instead of reading `corpus.path`.
    pub enabled: bool,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub per_day_cap: usize,
    pub api_base: String,
    pub raw_base: String,
    pub parallelism: usize,
}

impl Default for HarvestSection {
    fn default() -> Self {
        let h = codelex_core::ingest::HarvestConfig::default();
        HarvestSection {
            enabled: false,
            from: None,
            to: None,
            per_day_cap: DEFAULT_PER_DAY_CAP,
            api_base: h.api_base,
            raw_base: h.raw_base,
            parallelism: h.parallelism,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractSection {
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogSection {
    /// Minimum peak monthly occupancy for a function to be retained.
    pub threshold: f64,
    /// Thresholds reported in the sensitivity sweep.
    pub sweep: Vec<f64>,
    pub recommended_as_base: bool,
    pub honor_qualified: bool,
    /// Overrides the shipped tidyverse membership when non-empty.
    pub tidyverse: Vec<String>,
}

impl Default for CatalogSection {
    fn default() -> Self {
        CatalogSection {
            threshold: DEFAULT_THRESHOLD,
            sweep: vec![0.0, 0.0005, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05],
            recommended_as_base: true,
            honor_qualified: true,
            tidyverse: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub stale_days: i64,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection { stale_days: DEFAULT_STALE_DAYS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrdinationSection {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for OrdinationSection {
    fn default() -> Self {
        let n = codelex_core::ordination::NmdsConfig::default();
        OrdinationSection { restarts: n.restarts, max_iter: n.max_iter, tol: n.tol }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendsSection {
    /// |odds ratio − 1| at or above this is a meaningful change.
    pub meaningful_change: f64,
    /// Synonym group definitions; the shipped groups when unset.
    pub groups: Option<PathBuf>,
}

impl Default for TrendsSection {
    fn default() -> Self {
        TrendsSection { meaningful_change: MEANINGFUL_CHANGE, groups: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads for within-stage parallelism; all cores when unset.
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 1, threads: None, out_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: CorpusSection,
    pub study: StudySection,
    pub harvest: HarvestSection,
    pub extract: ExtractSection,
    pub catalog: CatalogSection,
    pub filter: FilterSection,
    pub ordination: OrdinationSection,
    pub trends: TrendsSection,
    pub run: RunSection,
    pub simulate: GeneratorConfig,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: PathBuf::new(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse, validate, and resolve relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_owned(), message: e.to_string() })?;
        cfg.validate()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.corpus.path.as_mut() {
            fix(p);
        }
        self.corpus.packages.iter_mut().for_each(fix);
        if let Some(p) = self.trends.groups.as_mut() {
            fix(p);
        }
        fix(&mut self.run.out_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(1..=12).contains(&self.study.epoch_month) {
            return bad(format!("study.epoch_month must be 1..=12, got {}", self.study.epoch_month));
        }
        if let Some(m) = self.study.final_month {
            if m < 0 {
                return bad(format!("study.final_month must be non-negative, got {m}"));
            }
        }
        let fraction = |name: &str, v: f64| -> Result<(), ConfigError> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        fraction("catalog.threshold", self.catalog.threshold)?;
        for &t in &self.catalog.sweep {
            fraction("catalog.sweep entry", t)?;
        }
        if self.filter.stale_days <= 0 {
            return bad(format!("filter.stale_days must be positive, got {}", self.filter.stale_days));
        }
        if self.harvest.per_day_cap == 0 {
            return bad("harvest.per_day_cap must be positive".into());
        }
        if self.harvest.parallelism == 0 {
            return bad("harvest.parallelism must be positive".into());
        }
        if self.harvest.enabled {
            match (self.harvest.from, self.harvest.to) {
                (Some(a), Some(b)) if a <= b => {}
                (Some(_), Some(_)) => return bad("harvest.from is after harvest.to".into()),
                _ => return bad("harvest.enabled requires harvest.from and harvest.to".into()),
            }
        }
        if self.ordination.restarts == 0 || self.ordination.max_iter == 0 {
            return bad("ordination.restarts and ordination.max_iter must be positive".into());
        }
        if !(self.ordination.tol > 0.0) {
            return bad(format!("ordination.tol must be positive, got {}", self.ordination.tol));
        }
        if !(self.trends.meaningful_change >= 0.0) {
            return bad(format!(
                "trends.meaningful_change must be non-negative, got {}",
                self.trends.meaningful_change
            ));
        }
        if self.run.threads == Some(0) {
            return bad("run.threads must be positive".into());
        }
        self.simulate.validate().map_err(|e| ConfigError::Invalid(format!("simulate: {e}")))
    }

    pub fn epoch(&self) -> StudyEpoch {
        StudyEpoch { year: self.study.epoch_year, month: self.study.epoch_month }
    }

    pub fn tidyverse_override(&self) -> Option<BTreeSet<String>> {
        (!self.catalog.tidyverse.is_empty()).then(|| self.catalog.tidyverse.iter().cloned().collect())
    }

    /// Canonical TOML rendering, used for the config hash.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of the canonical form with the output location and thread count
    /// blanked, since neither changes any result.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out_dir = PathBuf::new();
        c.run.threads = None;
        hex::encode(Sha256::digest(c.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_snapshot() {
        let c = PipelineConfig::parse("").unwrap();
        assert_eq!(c.catalog.threshold, 0.001);
        assert_eq!(c.filter.stale_days, 365);
        assert_eq!(c.harvest.per_day_cap, 1000);
        assert_eq!(c.trends.meaningful_change, 0.01);
        assert_eq!(c.extract.mode, Mode::Default);
        assert_eq!((c.study.epoch_year, c.study.epoch_month), (2014, 1));
        assert_eq!(c.run.seed, 1);
    }

    #[test]
    fn canonical_form_round_trips() {
        let c = PipelineConfig::parse("[catalog]\nthreshold = 0.002\n[run]\nseed = 9\n").unwrap();
        let again = PipelineConfig::parse(&c.canonical()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
        assert_ne!(c.hash(), PipelineConfig::default().hash());
        let mut moved = c.clone();
        moved.run.out_dir = PathBuf::from("elsewhere");
        moved.run.threads = Some(3);
        assert_eq!(moved.hash(), c.hash());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(PipelineConfig::parse("[catalog]\nthreshhold = 0.1\n"), Err(ConfigError::Parse { .. })));
        assert!(matches!(PipelineConfig::parse("[catalog]\nthreshold = 1.5\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(PipelineConfig::parse("[study]\nepoch_month = 13\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(PipelineConfig::parse("[harvest]\nenabled = true\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(PipelineConfig::parse("[extract]\nmode = \"fast\"\n"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[corpus]\npath = \"corpus\"\n[run]\nout_dir = \"/abs/out\"\n").unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!(c.corpus.path.unwrap(), dir.path().join("corpus"));
        assert_eq!(c.run.out_dir, PathBuf::from("/abs/out"));
    }
}
