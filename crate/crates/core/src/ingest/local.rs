//! Local-directory corpora: every first-level subdirectory is one
//! repository, described by a `repo.json` sidecar.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::{is_r_script, BlobStore, Exclusion, IngestError, Manifest, RepoRecord, StudyEpoch};

pub const SIDECAR_FILE: &str = "repo.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoSidecar {
    #[serde(default)]
    pub owner: Option<String>,
    #[serde(default)]
    pub name: Option<String>,
    pub created_at: NaiveDate,
    pub pushed_at: NaiveDate,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LocalIngestReport {
    pub repos: usize,
    pub scripts: usize,
    pub empty: usize,
}

/// Read a local corpus tree into the manifest and blob store.
pub fn ingest_local(
    root: &Path,
    epoch: StudyEpoch,
    manifest: &mut Manifest,
    store: &mut BlobStore,
) -> Result<LocalIngestReport, IngestError> {
    let mut dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| IngestError::io(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_dir()).unwrap_or(false))
        .map(|e| e.path())
        .collect();
    dirs.sort();

    let mut report = LocalIngestReport::default();
    for dir in dirs {
        let repo_id = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_owned();
        let sidecar_path = dir.join(SIDECAR_FILE);
        let raw = fs::read(&sidecar_path).map_err(|_| IngestError::MissingSidecar(dir.clone()))?;
        let sidecar: RepoSidecar = serde_json::from_slice(&raw).map_err(|e| IngestError::Parse {
            path: sidecar_path.clone(),
            line: 1,
            message: e.to_string(),
        })?;

        let mut record = RepoRecord::new(
            repo_id.clone(),
            sidecar.owner.unwrap_or_default(),
            sidecar.name.unwrap_or_else(|| repo_id.clone()),
            sidecar.created_at,
            sidecar.pushed_at,
            epoch,
        );

        let mut count = 0u32;
        for entry in WalkDir::new(&dir).sort_by_file_name() {
            let entry = entry.map_err(|e| IngestError::io(&dir, e.into()))?;
            if !entry.file_type().is_file() || !is_r_script(entry.path()) {
                continue;
            }
            let rel = entry.path().strip_prefix(&dir).expect("walk stays under root");
            let rel = rel.to_string_lossy().replace('\\', "/");
            let bytes = fs::read(entry.path()).map_err(|e| IngestError::io(entry.path(), e))?;
            store.put(&repo_id, &rel, &bytes)?;
            count += 1;
        }
        record.script_count = count;
        if count == 0 {
            record.excluded = Some(Exclusion::Empty);
            report.empty += 1;
        }
        report.repos += 1;
        report.scripts += count as usize;
        manifest.upsert(record);
    }
    Ok(report)
}
