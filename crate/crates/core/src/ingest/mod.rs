//! Repository manifests, script storage, harvesting and repository filters.

mod filters;
mod harvest;
mod local;
mod record;
mod store;

use std::path::{Path, PathBuf};

pub use filters::{apply_repo_filters, is_stale, mark_single_function, mark_stale, FilterReport, DEFAULT_STALE_DAYS};
pub use harvest::{
    HarvestConfig, HarvestError, HarvestReport, Harvester, HttpResponse, ResumeToken, Sleeper, Transport,
    UreqTransport, DEFAULT_PER_DAY_CAP, TOKEN_ENV,
};
pub use local::{ingest_local, LocalIngestReport, RepoSidecar, SIDECAR_FILE};
pub use record::{Exclusion, FetchIssue, RepoRecord, StudyEpoch};
pub use store::{BlobStore, Manifest, ScriptBlob};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("repository directory {0} has no repo.json sidecar")]
    MissingSidecar(PathBuf),
}

impl IngestError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io { path: path.to_owned(), source }
    }
}

/// `.R` or `.r`, compared case-insensitively.
pub fn is_r_script(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("r"))
}
