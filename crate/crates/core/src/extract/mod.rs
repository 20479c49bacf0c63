//! Call extraction: script bytes to [`CallEvent`]s, and events to
//! per-repository [`CallProfile`]s.

mod scanner;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::RepoRecord;

pub use scanner::{scan_text, Call, ScanMode, CONTROL_KEYWORDS, INDEX_TOKEN, IN_TOKEN, PIPE_TOKEN};

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed profile line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

/// A single call site attributed to the script it came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CallEvent {
    pub token: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit_package: Option<String>,
    pub script_hash: String,
}

impl CallEvent {
    /// Key under which this call is counted in a [`CallProfile`].
    /// Qualified calls keep their package as `pkg::token`.
    pub fn profile_key(&self) -> String {
        match &self.explicit_package {
            Some(pkg) => qualified_key(pkg, &self.token),
            None => self.token.clone(),
        }
    }
}

pub fn qualified_key(package: &str, token: &str) -> String {
    format!("{package}::{token}")
}

/// Split a profile key into its explicit package (if any) and token.
pub fn split_key(key: &str) -> (Option<&str>, &str) {
    match key.find("::") {
        Some(i) if i > 0 => (Some(&key[..i]), &key[i + 2..]),
        _ => (None, key),
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Scan raw script bytes. Invalid UTF-8 is replaced lossily and can never
/// produce a token, since the scanner only matches ASCII names.
pub fn scan_script(bytes: &[u8], mode: ScanMode) -> Vec<CallEvent> {
    let hash = content_hash(bytes);
    let text = String::from_utf8_lossy(bytes);
    scan_text(&text, mode)
        .into_iter()
        .map(|c| CallEvent { token: c.token, explicit_package: c.explicit_package, script_hash: hash.clone() })
        .collect()
}

/// Summed call counts of one repository.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallProfile {
    pub repo_id: String,
    pub month_index: i32,
    pub counts: BTreeMap<String, u64>,
}

impl CallProfile {
    pub fn new(repo_id: impl Into<String>, month_index: i32) -> Self {
        CallProfile { repo_id: repo_id.into(), month_index, counts: BTreeMap::new() }
    }

    pub fn add_events<'e>(&mut self, events: impl IntoIterator<Item = &'e CallEvent>) {
        for e in events {
            *self.counts.entry(e.profile_key()).or_insert(0) += 1;
        }
    }

    pub fn merge(&mut self, other: &CallProfile) {
        for (k, v) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += v;
        }
    }

    pub fn total_calls(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Additive merge of every script's events into the repository profile.
pub fn profile_repo(repo: &RepoRecord, events_per_script: &[Vec<CallEvent>]) -> CallProfile {
    let mut profile = CallProfile::new(repo.repo_id.clone(), repo.month_index);
    for events in events_per_script {
        profile.add_events(events);
    }
    profile
}

pub fn write_profiles<W: Write>(mut out: W, profiles: &[CallProfile]) -> Result<(), ExtractError> {
    for p in profiles {
        serde_json::to_writer(&mut out, p).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_profiles<R: BufRead>(input: R) -> Result<Vec<CallProfile>, ExtractError> {
    let mut profiles = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line).map_err(|source| ExtractError::Parse { line: i + 1, source })?;
        profiles.push(p);
    }
    Ok(profiles)
}
