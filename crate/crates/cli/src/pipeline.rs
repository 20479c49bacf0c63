//! Stage orchestration and the run manifest.
//!
//! Stages read their inputs from the output directory. Catalog, filter and
//! diversity tables are cheap to rebuild, so a stage whose upstream table is
//! absent recomputes it in memory without writing it; call profiles and the
//! trend tables needed by `report` must exist on disk.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use codelex_core::catalog::{
    attribute, corpus_frequencies, sampling_filter, threshold_sweep, write_sweep_csv, AttributionConfig, CatalogError,
    OccupancyTable, PackageSet,
};
use codelex_core::diversity::{
    alpha_table, gamma_matrix, read_alpha_csv, write_alpha_csv, AlphaRow, DiversityError, MonthlyAbundanceMatrix,
};
use codelex_core::extract::{profile_repo, read_profiles, scan_script, write_profiles, ExtractError};
use codelex_core::glm::{write_summary_rows, GlmError, SUMMARY_HEADER};
use codelex_core::ingest::{
    apply_repo_filters, ingest_local, is_stale, BlobStore, FilterReport, HarvestConfig, HarvestError, Harvester,
    IngestError, Manifest, UreqTransport,
};
use codelex_core::ordination::{
    bray_curtis, dbrda_time, hulls_by_year, nmds, pcoa, write_coords_csv, write_hulls_csv, NmdsConfig, OrdinationError,
};
use codelex_core::trends::{
    abundance_distribution, category_trends, classify_magnitude_at, commonness_regression, diversity_trends,
    function_series, occurrence_models, package_rollup, parse_groups, synonym_groups, write_area_share_csv,
    write_curve_csv, write_trend_csv, Curve, TrendSummary, TrendsError, DEFAULT_GROUPS,
};
use codelex_core::{table, CallProfile, Catalog, Category, Exclusion};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::render::{render, FigureKind, FigureSpec, RenderError, Table};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const TOOL: &str = "codelex";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Scrape,
    Extract,
    Catalog,
    Filter,
    Diversity,
    Ordinate,
    Trends,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Scrape,
        Stage::Extract,
        Stage::Catalog,
        Stage::Filter,
        Stage::Diversity,
        Stage::Ordinate,
        Stage::Trends,
        Stage::Report,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Scrape => "scrape",
            Stage::Extract => "extract",
            Stage::Catalog => "catalog",
            Stage::Filter => "filter",
            Stage::Diversity => "diversity",
            Stage::Ordinate => "ordinate",
            Stage::Trends => "trends",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s.trim())
            .ok_or_else(|| format!("unknown stage {s:?}; expected one of {}", stage_names()))
    }
}

fn stage_names() -> String {
    Stage::ALL.map(|s| s.as_str()).join(", ")
}

/// Comma-separated stage list, returned in dependency order without repeats.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>, String> {
    let mut v = list.split(',').filter(|s| !s.trim().is_empty()).map(Stage::from_str).collect::<Result<Vec<_>, _>>()?;
    if v.is_empty() {
        return Err("empty stage list".into());
    }
    v.sort();
    v.dedup();
    Ok(v)
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("missing upstream artifact {path} (produced by stage `{producer}`)")]
    MissingInput { path: PathBuf, producer: Stage },
    #[error("{0}")]
    Setup(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Harvest(#[from] HarvestError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Diversity(#[from] DiversityError),
    #[error(transparent)]
    Ordination(#[from] OrdinationError),
    #[error(transparent)]
    Trends(#[from] TrendsError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn failed(&self) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.status == StageStatus::Failed)
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &Artifact> {
        self.stages.iter().flat_map(|s| s.artifacts.iter())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files under the output directory and remembers their hashes.
struct Recorder<'o> {
    out: &'o Path,
    artifacts: Vec<Artifact>,
}

impl<'o> Recorder<'o> {
    fn new(out: &'o Path) -> Self {
        Recorder { out, artifacts: Vec::new() }
    }

    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.to_owned(), source })?;
        }
        fs::write(&path, bytes).map_err(|source| PipelineError::Io { path: path.clone(), source })?;
        self.note(rel, bytes);
        Ok(())
    }

    fn note(&mut self, rel: &str, bytes: &[u8]) {
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact { path: rel.to_owned(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
        bytes.push(b'\n');
        self.put(rel, &bytes)
    }

    /// Record files that another component wrote, in path order.
    fn existing(&mut self, rel: &str) -> Result<()> {
        let root = self.out.join(rel);
        let mut files: Vec<PathBuf> = walkdir::WalkDir::new(&root)
            .sort_by_file_name()
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .collect();
        files.sort();
        for f in files {
            let bytes = fs::read(&f).map_err(|source| PipelineError::Io { path: f.clone(), source })?;
            let rel = f.strip_prefix(self.out).expect("under out dir").to_string_lossy().replace('\\', "/");
            self.note(&rel, &bytes);
        }
        Ok(())
    }
}

fn buffer<E>(f: impl FnOnce(&mut Vec<u8>) -> std::result::Result<(), E>) -> std::result::Result<Vec<u8>, E> {
    let mut v = Vec::new();
    f(&mut v)?;
    Ok(v)
}

const MANIFEST_FILE: &str = "manifest.jsonl";
const STORE_DIR: &str = "store";
const PROFILES_FILE: &str = "profiles.jsonl";
const CATALOG_FILE: &str = "catalog.csv";
const ALIASES_FILE: &str = "aliases.csv";
const INCLUDED_FILE: &str = "profiles_included.jsonl";
const ALPHA_FILE: &str = "alpha.csv";
const GAMMA_FILE: &str = "gamma.csv";
const GAMMA_COUNTS_FILE: &str = "gamma_repo_counts.csv";

/// Products shared between stages, loaded or rebuilt on first use.
struct Ctx<'c> {
    cfg: &'c PipelineConfig,
    out: PathBuf,
    manifest: Option<Manifest>,
    store: Option<BlobStore>,
    profiles: Option<Vec<CallProfile>>,
    catalog: Option<Catalog>,
    included: Option<Vec<CallProfile>>,
    alpha: Option<Vec<AlphaRow>>,
    gamma: Option<MonthlyAbundanceMatrix>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| PipelineError::Io { path: path.to_owned(), source })
}

impl<'c> Ctx<'c> {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn require(&self, rel: &str, producer: Stage) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(PipelineError::MissingInput { path: p, producer })
        }
    }

    /// Manifest and blob store: the scrape output when present, otherwise a
    /// fresh ingest of the local corpus recorded under the current stage.
    fn ensure_corpus(&mut self, rec: &mut Recorder) -> Result<()> {
        if self.manifest.is_some() {
            return Ok(());
        }
        let manifest_path = self.path(MANIFEST_FILE);
        if manifest_path.is_file() {
            self.manifest = Some(Manifest::load(&manifest_path)?);
            self.store = Some(BlobStore::open(self.path(STORE_DIR))?);
            return Ok(());
        }
        if self.cfg.harvest.enabled {
            return Err(PipelineError::MissingInput { path: manifest_path, producer: Stage::Scrape });
        }
        self.ingest_local(rec)?;
        Ok(())
    }

    fn ingest_local(&mut self, rec: &mut Recorder) -> Result<serde_json::Value> {
        let root = self
            .cfg
            .corpus
            .path
            .clone()
            .ok_or_else(|| PipelineError::Setup("corpus.path is not set and harvesting is disabled".into()))?;
        let store_dir = self.path(STORE_DIR);
        if store_dir.exists() {
            fs::remove_dir_all(&store_dir).map_err(|source| PipelineError::Io { path: store_dir.clone(), source })?;
        }
        let mut manifest = Manifest::new();
        let mut store = BlobStore::open(&store_dir)?;
        let report = ingest_local(&root, self.cfg.epoch(), &mut manifest, &mut store)?;
        store.save_index()?;
        rec.put(MANIFEST_FILE, manifest.to_jsonl().as_bytes())?;
        rec.existing(STORE_DIR)?;
        self.manifest = Some(manifest);
        self.store = Some(store);
        Ok(serde_json::json!({
            "mode": "local",
            "repos": report.repos,
            "scripts": report.scripts,
            "empty": report.empty,
        }))
    }

    fn ensure_profiles(&mut self) -> Result<()> {
        if self.profiles.is_none() {
            let p = self.require(PROFILES_FILE, Stage::Extract)?;
            self.profiles = Some(read_profiles(BufReader::new(&read_file(&p)?[..]))?);
        }
        Ok(())
    }

    fn ensure_catalog(&mut self, rec: &mut Recorder) -> Result<()> {
        if self.catalog.is_some() {
            return Ok(());
        }
        let p = self.path(CATALOG_FILE);
        if p.is_file() {
            let aliases = self.path(ALIASES_FILE);
            let a = if aliases.is_file() { Some(read_file(&aliases)?) } else { None };
            self.catalog = Some(Catalog::read_csv(&read_file(&p)?[..], a.as_deref())?);
            return Ok(());
        }
        log::info!("{CATALOG_FILE} absent; rebuilding the catalog in memory");
        self.catalog = Some(self.build_catalog(rec)?.0);
        Ok(())
    }

    /// Attribution and the occupancy filter over non-stale, non-empty repositories.
    fn build_catalog(&mut self, rec: &mut Recorder) -> Result<(Catalog, OccupancyTable)> {
        self.ensure_profiles()?;
        self.ensure_corpus(rec)?;
        let cfg = self.cfg;
        let manifest = self.manifest.as_ref().expect("corpus loaded");
        let eligible: Vec<&CallProfile> = self
            .profiles
            .as_ref()
            .expect("profiles loaded")
            .iter()
            .filter(|p| {
                manifest
                    .get(&p.repo_id)
                    .is_some_and(|r| !is_stale(r, cfg.filter.stale_days) && r.excluded != Some(Exclusion::Empty))
            })
            .collect();
        let mut packages = PackageSet::shipped_default();
        for path in &cfg.corpus.packages {
            packages.extend_csv(&read_file(path)?[..])?;
        }
        if let Some(t) = cfg.tidyverse_override() {
            packages.set_tidyverse(&t);
        }
        let attribution = AttributionConfig {
            recommended_as_base: cfg.catalog.recommended_as_base,
            honor_qualified: cfg.catalog.honor_qualified,
            ..AttributionConfig::default()
        };
        let mut catalog = attribute(&corpus_frequencies(eligible.iter().copied()), &packages, &attribution)?;
        let occupancy = OccupancyTable::from_profiles(eligible.iter().copied(), &catalog);
        sampling_filter(&mut catalog, &occupancy, cfg.catalog.threshold);
        Ok((catalog, occupancy))
    }

    fn ensure_included(&mut self, rec: &mut Recorder) -> Result<()> {
        if self.included.is_some() {
            return Ok(());
        }
        let p = self.path(INCLUDED_FILE);
        if p.is_file() {
            self.included = Some(read_profiles(BufReader::new(&read_file(&p)?[..]))?);
            return Ok(());
        }
        log::info!("{INCLUDED_FILE} absent; applying repository filters in memory");
        self.included = Some(self.apply_filters(rec)?.1);
        Ok(())
    }

    fn apply_filters(&mut self, rec: &mut Recorder) -> Result<(FilterReport, Vec<CallProfile>)> {
        self.ensure_profiles()?;
        self.ensure_catalog(rec)?;
        self.ensure_corpus(rec)?;
        let catalog = self.catalog.as_ref().expect("catalog loaded");
        let profiles = self.profiles.as_ref().expect("profiles loaded");
        let manifest = self.manifest.as_mut().expect("corpus loaded");
        let report =
            apply_repo_filters(manifest, profiles, &|k| catalog.is_retained_key(k), self.cfg.filter.stale_days);
        let included = profiles
            .iter()
            .filter(|p| manifest.get(&p.repo_id).is_some_and(|r| r.is_included()))
            .map(|p| catalog.canonicalize(p))
            .collect();
        Ok((report, included))
    }

    fn ensure_diversity(&mut self, rec: &mut Recorder) -> Result<()> {
        if self.alpha.is_some() && self.gamma.is_some() {
            return Ok(());
        }
        let (a, g, c) = (self.path(ALPHA_FILE), self.path(GAMMA_FILE), self.path(GAMMA_COUNTS_FILE));
        if a.is_file() && g.is_file() && c.is_file() {
            self.alpha = Some(read_alpha_csv(&read_file(&a)?[..])?);
            self.gamma = Some(MonthlyAbundanceMatrix::read_csv(&read_file(&g)?[..], &read_file(&c)?[..])?);
            return Ok(());
        }
        log::info!("diversity tables absent; rebuilding them in memory");
        self.ensure_included(rec)?;
        self.ensure_catalog(rec)?;
        let retained = self.catalog.as_ref().expect("catalog loaded").retained();
        let included = self.included.as_ref().expect("filtered profiles");
        self.alpha = Some(alpha_table(included, &retained));
        self.gamma = Some(gamma_matrix(included, &retained).matrix);
        Ok(())
    }
}

fn scrape(ctx: &mut Ctx, rec: &mut Recorder) -> Result<()> {
    let cfg = ctx.cfg;
    let report = if cfg.harvest.enabled {
        let hc = HarvestConfig {
            api_base: cfg.harvest.api_base.clone(),
            raw_base: cfg.harvest.raw_base.clone(),
            per_day_cap: cfg.harvest.per_day_cap,
            parallelism: cfg.harvest.parallelism,
            ..HarvestConfig::default()
        };
        let harvester = Harvester::from_env(UreqTransport::default(), hc);
        let manifest_path = ctx.path(MANIFEST_FILE);
        let mut manifest = if manifest_path.is_file() { Manifest::load(&manifest_path)? } else { Manifest::new() };
        let (from, to) = (cfg.harvest.from.expect("validated"), cfg.harvest.to.expect("validated"));
        let h = harvester.harvest_window(from, to, cfg.epoch(), &mut manifest, Some(&manifest_path), None)?;
        for (day, total) in &h.capped_days {
            log::warn!("{day}: {total} matching repositories, truncated at {}", cfg.harvest.per_day_cap);
        }
        let mut store = BlobStore::open(ctx.path(STORE_DIR))?;
        let stored = harvester.fetch_all(&mut manifest, &mut store)?;
        store.save_index()?;
        rec.put(MANIFEST_FILE, manifest.to_jsonl().as_bytes())?;
        rec.existing(STORE_DIR)?;
        ctx.manifest = Some(manifest);
        ctx.store = Some(store);
        serde_json::json!({
            "mode": "http",
            "days": h.days,
            "records_seen": h.records_seen,
            "records_added": h.records_added,
            "capped_days": h.capped_days,
            "scripts_stored": stored,
        })
    } else {
        ctx.manifest = None;
        ctx.ingest_local(rec)?
    };
    rec.json("scrape_report.json", &report)
}

fn extract(ctx: &mut Ctx, rec: &mut Recorder) -> Result<()> {
    ctx.ensure_corpus(rec)?;
    let mode = ctx.cfg.extract.mode.into();
    let manifest = ctx.manifest.as_ref().expect("corpus loaded");
    let store = ctx.store.as_ref().expect("corpus loaded");
    let records: Vec<_> = manifest.records().filter(|r| store.blobs_for(&r.repo_id).next().is_some()).collect();
    let profiles = records
        .par_iter()
        .map(|r| {
            let events = store
                .blobs_for(&r.repo_id)
                .map(|b| Ok(scan_script(&store.read(&b.content_hash)?, mode)))
                .collect::<std::result::Result<Vec<_>, IngestError>>()?;
            Ok(profile_repo(r, &events))
        })
        .collect::<Result<Vec<CallProfile>>>()?;
    let calls: u64 = profiles.iter().map(|p| p.total_calls()).sum();
    rec.put(PROFILES_FILE, &buffer(|b| write_profiles(b, &profiles))?)?;
    rec.json(
        "extract_report.json",
        &serde_json::json!({
            "mode": ctx.cfg.extract.mode,
            "repos": profiles.len(),
            "scripts": store.blobs().count(),
            "calls": calls,
        }),
    )?;
    ctx.profiles = Some(profiles);
    Ok(())
}

fn catalog(ctx: &mut Ctx, rec: &mut Recorder) -> Result<()> {
    let (catalog, occupancy) = ctx.build_catalog(rec)?;
    rec.put(CATALOG_FILE, &buffer(|b| catalog.write_csv(b))?)?;
    rec.put(ALIASES_FILE, &buffer(|b| catalog.write_aliases_csv(b))?)?;
    rec.put("occupancy.csv", &buffer(|b| occupancy.write_csv(b))?)?;
    let sweep = threshold_sweep(&catalog, &occupancy, &ctx.cfg.catalog.sweep);
    rec.put("threshold_sweep.csv", &buffer(|b| write_sweep_csv(&sweep, b))?)?;
    ctx.catalog = Some(catalog);
    Ok(())
}

fn filter(ctx: &mut Ctx, rec: &mut Recorder) -> Result<()> {
    let (report, included) = ctx.apply_filters(rec)?;
    let manifest = ctx.manifest.as_ref().expect("corpus loaded");
    rec.put("manifest_filtered.jsonl", manifest.to_jsonl().as_bytes())?;
    rec.json("filter_report.json", &report)?;
    rec.put(INCLUDED_FILE, &buffer(|b| write_profiles(b, &included))?)?;
    ctx.included = Some(included);
    Ok(())
}

fn diversity(ctx: &mut Ctx, rec: &mut Recorder) -> Result<()> {
    ctx.alpha = None;
    ctx.gamma = None;
    ctx.ensure_included(rec)?;
    ctx.ensure_catalog(rec)?;
    let retained = ctx.catalog.as_ref().expect("catalog loaded").retained();
    let included = ctx.included.as_ref().expect("filtered profiles");
    let alpha = alpha_table(included, &retained);
    let g = gamma_matrix(included, &retained);
    rec.put(ALPHA_FILE, &buffer(|b| write_alpha_csv(&alpha, b))?)?;
    rec.put(GAMMA_FILE, &buffer(|b| g.matrix.write_csv(b))?)?;
    rec.put(GAMMA_COUNTS_FILE, &buffer(|b| g.matrix.write_repo_counts_csv(b))?)?;
    if !g.gaps.is_empty() {
        log::warn!("months without repositories inside the study window: {:?}", g.gaps);
    }
    ctx.alpha = Some(alpha);
    ctx.gamma = Some(g.matrix);
    Ok(())
}

#[derive(Serialize)]
struct OrdinationSummary {
    months: usize,
    functions: usize,
    nmds_stress: f64,
    nmds_converged: bool,
    nmds_restarts: usize,
    nmds_best_restart: usize,
    nmds_seed: u64,
    dbrda_explained_fraction: f64,
    dbrda_degenerate: bool,
    pcoa_eigenvalues: Vec<f64>,
    pcoa_negative_eigenvalues: usize,
}

fn ordinate_matrix(
    ctx: &Ctx,
    rec: &mut Recorder,
    m: &MonthlyAbundanceMatrix,
    suffix: &str,
) -> Result<OrdinationSummary> {
    let d = bray_curtis(m);
    let p = pcoa(&d)?;
    let cfg = NmdsConfig {
        dims: 2,
        restarts: ctx.cfg.ordination.restarts,
        max_iter: ctx.cfg.ordination.max_iter,
        tol: ctx.cfg.ordination.tol,
        seed: ctx.cfg.run.seed,
    };
    let n = nmds(&d, &cfg)?;
    let t: Vec<f64> = m.months.iter().map(|&x| x as f64).collect();
    let rda = dbrda_time(&d, &t)?;
    rec.put(&format!("nmds_coords{suffix}.csv"), &buffer(|b| write_coords_csv(&m.months, &n.coords, b))?)?;
    let axes = p.axes(2);
    rec.put(&format!("pcoa_coords{suffix}.csv"), &buffer(|b| write_coords_csv(&m.months, &axes, b))?)?;
    let hulls = hulls_by_year(&m.months, &n.coords, &ctx.cfg.epoch());
    rec.put(&format!("hulls{suffix}.csv"), &buffer(|b| write_hulls_csv(&hulls, b))?)?;
    Ok(OrdinationSummary {
        months: m.n_months(),
        functions: m.functions.len(),
        nmds_stress: n.stress,
        nmds_converged: n.converged,
        nmds_restarts: n.restarts_used,
        nmds_best_restart: n.best_restart,
        nmds_seed: n.seed,
        dbrda_explained_fraction: rda.explained_fraction,
        dbrda_degenerate: rda.degenerate,
        pcoa_negative_eigenvalues: p.negative_eigenvalues().count(),
        pcoa_eigenvalues: p.eigenvalues.clone(),
    })
}

fn ordinate(ctx: &mut Ctx, rec: &mut Recorder) -> Result<()> {
    ctx.ensure_diversity(rec)?;
    ctx.ensure_included(rec)?;
    ctx.ensure_catalog(rec)?;
    let gamma = ctx.gamma.clone().expect("diversity loaded");
    let all = ordinate_matrix(ctx, rec, &gamma, "")?;
    let mut categories = BTreeMap::new();
    let mut notices = Vec::new();
    for cat in Category::ATTRIBUTED {
        let retained = ctx.catalog.as_ref().expect("catalog loaded").retained_in(cat);
        let m = gamma_matrix(ctx.included.as_ref().expect("filtered profiles"), &retained).matrix;
        if m.n_months() < 3 || m.functions.len() < 2 {
            notices.push(format!(
                "category {}: {} months and {} functions; ordination skipped",
                cat.as_str(),
                m.n_months(),
                m.functions.len()
            ));
            continue;
        }
        match ordinate_matrix(ctx, rec, &m, &format!("_{}", cat.as_str())) {
            Ok(s) => {
                categories.insert(cat.as_str(), s);
            }
            Err(PipelineError::Ordination(e)) => {
                notices.push(format!("category {}: ordination skipped: {e}", cat.as_str()));
            }
            Err(e) => return Err(e),
        }
    }
    rec.json("ordination.json", &serde_json::json!({ "all": all, "categories": categories, "notices": notices }))
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

fn curve_file(model_id: &str) -> String {
    format!("curves/{}.csv", slug(model_id))
}

fn put_curve(rec: &mut Recorder, c: &Curve) -> Result<String> {
    let rel = curve_file(&c.model_id);
    rec.put(&rel, &buffer(|b| write_curve_csv(c, b))?)?;
    Ok(rel)
}

fn reclassify(rows: &mut [TrendSummary], threshold: f64) {
    for r in rows {
        if r.odds_ratio.is_finite() {
            r.magnitude_class = classify_magnitude_at(r.odds_ratio, threshold);
        }
    }
}

fn trends(ctx: &mut Ctx, rec: &mut Recorder) -> Result<()> {
    ctx.ensure_diversity(rec)?;
    ctx.ensure_included(rec)?;
    ctx.ensure_catalog(rec)?;
    let cfg = ctx.cfg;
    let catalog = ctx.catalog.as_ref().expect("catalog loaded");
    let included = ctx.included.as_ref().expect("filtered profiles");
    let alpha = ctx.alpha.as_ref().expect("diversity loaded");
    let gamma = ctx.gamma.as_ref().expect("diversity loaded");
    let (Some(first), Some(last)) =
        (included.iter().map(|p| p.month_index).min(), included.iter().map(|p| p.month_index).max())
    else {
        return Err(PipelineError::Setup("no repositories passed the filters".into()));
    };
    let months: Vec<i32> = (first..=last).collect();
    let final_month = cfg.study.final_month.unwrap_or(last);
    let mut notices: Vec<String> = Vec::new();
    let mut models = table::writer(Vec::new());
    models.write_record(SUMMARY_HEADER).map_err(|e| GlmError::Table(e.to_string()))?;

    let div = diversity_trends(alpha, gamma)?;
    for c in div.curves() {
        put_curve(rec, c)?;
    }
    for (id, fit) in &div.fits {
        write_summary_rows(&mut models, id, fit)?;
    }

    let category_of = |e: &str| catalog.category_of(e);
    let mut rows = occurrence_models(&function_series(included, catalog, &months), final_month, &category_of)?;
    reclassify(&mut rows, cfg.trends.meaningful_change);
    rec.put("word_shift_functions.csv", &buffer(|b| write_trend_csv(&rows, b))?)?;
    let mut package_category: BTreeMap<String, Category> = BTreeMap::new();
    for e in catalog.entries() {
        if let Some(p) = &e.package {
            package_category.entry(p.clone()).or_insert(e.category);
        }
    }
    let (pkg_series, pkg_notices) = package_rollup(included, catalog, &months);
    notices.extend(pkg_notices);
    let pkg_of = |p: &str| package_category.get(p).copied().unwrap_or(Category::Unattributed);
    let mut pkg_rows = occurrence_models(&pkg_series, final_month, &pkg_of)?;
    reclassify(&mut pkg_rows, cfg.trends.meaningful_change);
    rec.put("word_shift_packages.csv", &buffer(|b| write_trend_csv(&pkg_rows, b))?)?;
    let commonness = commonness_regression(&rows);
    rec.json("commonness.json", &commonness)?;

    let cats = category_trends(included, catalog)?;
    notices.extend(cats.notices.iter().cloned());
    let mut hurdle = table::writer(Vec::new());
    let terr = |e: csv::Error| TrendsError::Table(e.to_string());
    hurdle.write_record(["category", "month_index", "trials", "successes", "part2_n"]).map_err(terr)?;
    for c in &cats.categories {
        for curve in c.curves() {
            put_curve(rec, curve)?;
        }
        for (id, fit) in &c.fits {
            write_summary_rows(&mut models, id, fit)?;
        }
        for h in &c.counts {
            hurdle
                .write_record([
                    c.category.as_str().to_owned(),
                    h.month_index.to_string(),
                    h.trials.to_string(),
                    h.successes.to_string(),
                    h.part2_n.to_string(),
                ])
                .map_err(terr)?;
        }
    }
    rec.put("hurdle_counts.csv", &hurdle.into_inner().map_err(|e| TrendsError::Table(e.to_string()))?)?;
    rec.put("models.csv", &models.into_inner().map_err(|e| GlmError::Table(e.to_string()))?)?;

    let groups_text = match &cfg.trends.groups {
        Some(p) => String::from_utf8_lossy(&read_file(p)?).into_owned(),
        None => DEFAULT_GROUPS.to_owned(),
    };
    let groups = parse_groups(&groups_text)?;
    let syn = synonym_groups(&groups, included, catalog, &cfg.epoch())?;
    notices.extend(syn.notices.iter().cloned());
    let mut summary = table::writer(Vec::new());
    summary.write_record(["group", "member", "category", "ratio", "curve"]).map_err(terr)?;
    for g in &syn.groups {
        let rel = put_curve(rec, &g.curve)?;
        summary.write_record([g.name.as_str(), "", "", &table::num(g.ratio), &rel]).map_err(terr)?;
        for m in &g.members {
            let rel = put_curve(rec, &m.curve)?;
            summary
                .write_record([g.name.as_str(), &m.function, m.category.as_str(), &table::num(m.ratio), &rel])
                .map_err(terr)?;
        }
    }
    rec.put("synonyms.csv", &summary.into_inner().map_err(|e| TrendsError::Table(e.to_string()))?)?;
    rec.put("area_share.csv", &buffer(|b| write_area_share_csv(&syn.area_share, b))?)?;

    let ab = abundance_distribution(gamma)?;
    rec.json(
        "abundance_fit.json",
        &serde_json::json!({
            "mu": ab.mu,
            "sigma": ab.sigma,
            "n": ab.n,
            "degenerate": ab.degenerate,
            "qq_correlation": if ab.degenerate { None } else { Some(ab.qq_correlation()) },
        }),
    )?;
    let mut qq = table::writer(Vec::new());
    qq.write_record(["theoretical", "sample"]).map_err(terr)?;
    for (a, b) in &ab.qq {
        qq.write_record([table::num(*a), table::num(*b)]).map_err(terr)?;
    }
    rec.put("abundance_qq.csv", &qq.into_inner().map_err(|e| TrendsError::Table(e.to_string()))?)?;
    let mut dens = table::writer(Vec::new());
    dens.write_record(["log_abundance", "density"]).map_err(terr)?;
    for (a, b) in &ab.density {
        dens.write_record([table::num(*a), table::num(*b)]).map_err(terr)?;
    }
    rec.put("abundance_density.csv", &dens.into_inner().map_err(|e| TrendsError::Table(e.to_string()))?)?;

    let mut text = notices.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    rec.put("notices.txt", text.as_bytes())
}

fn report(ctx: &mut Ctx, rec: &mut Recorder) -> Result<()> {
    let epoch = ctx.cfg.epoch();
    let input = |rel: &str, producer: Stage| ctx.require(rel, producer);
    let fig = |name: &str| ctx.path(&format!("figures/{name}.svg"));
    let mut specs = Vec::new();
    for id in ["gamma_hill0", "gamma_hill1", "alpha_hill0", "alpha_hill1"] {
        let title = format!("{} ({})", id.replace('_', " "), "fitted, 95% band");
        specs.push(FigureSpec::new(
            FigureKind::TrendCurve,
            vec![input(&curve_file(id), Stage::Trends)?],
            fig(id),
            title,
        ));
    }
    for name in ["gamma_hill0", "gamma_hill1", "presence", "share"] {
        let inputs = Category::ATTRIBUTED
            .iter()
            .map(|c| input(&curve_file(&format!("{}_{name}", c.as_str())), Stage::Trends))
            .collect::<Result<Vec<_>>>()?;
        let mut s = FigureSpec::new(
            FigureKind::CategoryTrend,
            inputs,
            fig(&format!("category_{name}")),
            format!("{} by category", name.replace('_', " ")),
        );
        s.labels = Category::ATTRIBUTED.iter().map(|c| c.as_str().to_owned()).collect();
        specs.push(s);
    }
    let ord_path = input("ordination.json", Stage::Ordinate)?;
    let ord: serde_json::Value = serde_json::from_slice(&read_file(&ord_path)?)
        .map_err(|e| PipelineError::Setup(format!("{}: {e}", ord_path.display())))?;
    let mut s = FigureSpec::new(
        FigureKind::NmdsHulls,
        vec![input("nmds_coords.csv", Stage::Ordinate)?],
        fig("nmds_hulls"),
        "NMDS of monthly lexicons",
    );
    s.epoch = epoch;
    s.stress = ord["all"]["nmds_stress"].as_f64();
    specs.push(s);
    for (file, title) in [("word_shift_functions", "functions"), ("word_shift_packages", "packages")] {
        let t = format!("word shift: {title}");
        specs.push(FigureSpec::new(
            FigureKind::WordShift,
            vec![input(&format!("{file}.csv"), Stage::Trends)?],
            fig(file),
            t,
        ));
    }
    specs.push(FigureSpec::new(
        FigureKind::Mosaic,
        vec![input("word_shift_functions.csv", Stage::Trends)?],
        fig("mosaic"),
        "significant and meaningful changes by category",
    ));
    let syn = Table::read(&input("synonyms.csv", Stage::Trends)?)?;
    let (groups, members, curves) = (syn.strings("group")?, syn.strings("member")?, syn.strings("curve")?);
    let mut by_group: BTreeMap<&str, Vec<(String, PathBuf)>> = BTreeMap::new();
    for ((g, m), c) in groups.iter().zip(&members).zip(&curves) {
        let label = if m.is_empty() { g.clone() } else { m.clone() };
        by_group.entry(g).or_default().push((label, input(c, Stage::Trends)?));
    }
    for (g, entries) in by_group {
        let mut s = FigureSpec::new(
            FigureKind::SynonymPanel,
            entries.iter().map(|e| e.1.clone()).collect(),
            fig(&format!("synonym_{}", slug(g))),
            format!("synonym group: {g}"),
        );
        s.labels = entries.into_iter().map(|e| e.0).collect();
        specs.push(s);
    }
    specs.push(FigureSpec::new(
        FigureKind::AreaShare,
        vec![input("area_share.csv", Stage::Trends)?],
        fig("area_share"),
        "synonym calls by category",
    ));
    specs.push(FigureSpec::new(
        FigureKind::Qq,
        vec![input("abundance_qq.csv", Stage::Trends)?],
        fig("abundance_qq"),
        "log-normal QQ of relative abundances",
    ));

    let rendered: Vec<std::result::Result<String, RenderError>> = specs.par_iter().map(render).collect();
    for (spec, svg) in specs.iter().zip(rendered) {
        let rel =
            spec.output.strip_prefix(&ctx.out).expect("figure under out dir").to_string_lossy().replace('\\', "/");
        rec.put(&rel, svg?.as_bytes())?;
    }
    Ok(())
}

fn run_stage(stage: Stage, ctx: &mut Ctx, rec: &mut Recorder) -> Result<()> {
    match stage {
        Stage::Scrape => scrape(ctx, rec),
        Stage::Extract => extract(ctx, rec),
        Stage::Catalog => catalog(ctx, rec),
        Stage::Filter => filter(ctx, rec),
        Stage::Diversity => diversity(ctx, rec),
        Stage::Ordinate => ordinate(ctx, rec),
        Stage::Trends => trends(ctx, rec),
        Stage::Report => report(ctx, rec),
    }
}

fn write_run_manifest(out: &Path, m: &RunManifest) -> Result<()> {
    let path = out.join(RUN_MANIFEST);
    let mut bytes = serde_json::to_vec_pretty(m).expect("manifest serializes");
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|source| PipelineError::Io { path, source })
}

/// Run the stages in dependency order, stopping at the first failure. The
/// run manifest is rewritten after every stage, so a failed run keeps its
/// partial artifacts and says which stage broke.
pub fn run(cfg: &PipelineConfig, stages: &[Stage]) -> Result<RunManifest> {
    let mut stages = stages.to_vec();
    stages.sort();
    stages.dedup();
    let out = cfg.run.out_dir.clone();
    fs::create_dir_all(&out).map_err(|source| PipelineError::Io { path: out.clone(), source })?;
    let mut manifest = RunManifest {
        tool: TOOL.to_owned(),
        version: env!("CARGO_PKG_VERSION").to_owned(),
        config_hash: cfg.hash(),
        seed: cfg.run.seed,
        stages: Vec::new(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.threads.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::Setup(format!("thread pool: {e}")))?;
    let mut ctx = Ctx {
        cfg,
        out: out.clone(),
        manifest: None,
        store: None,
        profiles: None,
        catalog: None,
        included: None,
        alpha: None,
        gamma: None,
    };
    for stage in stages {
        log::info!("stage {stage}");
        let mut rec = Recorder::new(&out);
        let result = pool.install(|| run_stage(stage, &mut ctx, &mut rec));
        let failed = result.as_ref().err().map(|e| e.to_string());
        manifest.stages.push(StageRecord {
            stage,
            status: if failed.is_some() { StageStatus::Failed } else { StageStatus::Ok },
            error: failed,
            artifacts: rec.artifacts,
        });
        write_run_manifest(&out, &manifest)?;
        if let Err(e) = result {
            log::error!("stage {stage} failed: {e}");
            return Ok(manifest);
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_lists_sort_into_dependency_order() {
        assert_eq!(parse_stages("report,extract,extract").unwrap(), [Stage::Extract, Stage::Report]);
        assert_eq!(parse_stages(" diversity , extract").unwrap(), [Stage::Extract, Stage::Diversity]);
        assert!(parse_stages("extract,fit").unwrap_err().contains("unknown stage"));
        assert!(parse_stages("").is_err());
    }

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("group_join_left join/x"), "group_join_left_join_x");
        assert_eq!(curve_file("base_share"), "curves/base_share.csv");
    }

    #[test]
    fn recorder_hashes_what_it_writes() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = Recorder::new(dir.path());
        rec.put("a/b.txt", b"abc").unwrap();
        rec.put("a/b.txt", b"abcd").unwrap();
        assert_eq!(rec.artifacts.len(), 1);
        assert_eq!(rec.artifacts[0].sha256, sha256_hex(b"abcd"));
        assert_eq!(rec.artifacts[0].bytes, 4);
        assert_eq!(fs::read(dir.path().join("a/b.txt")).unwrap(), b"abcd");
    }
}
