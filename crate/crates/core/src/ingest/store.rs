use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{IngestError, RepoRecord};
use crate::extract::content_hash;

/// Repository manifest keyed on `repo_id`. Upserts make harvesting
/// idempotent; serialization is in `repo_id` order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    records: BTreeMap<String, RepoRecord>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace a record. Returns true if the id was new.
    pub fn upsert(&mut self, record: RepoRecord) -> bool {
        self.records.insert(record.repo_id.clone(), record).is_none()
    }

    pub fn get(&self, repo_id: &str) -> Option<&RepoRecord> {
        self.records.get(repo_id)
    }

    pub fn get_mut(&mut self, repo_id: &str) -> Option<&mut RepoRecord> {
        self.records.get_mut(repo_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &RepoRecord> {
        self.records.values()
    }

    pub fn records_mut(&mut self) -> impl Iterator<Item = &mut RepoRecord> {
        self.records.values_mut()
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let file = fs::File::open(path).map_err(|e| IngestError::io(path, e))?;
        let mut manifest = Manifest::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| IngestError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: RepoRecord = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })?;
            manifest.upsert(record);
        }
        Ok(manifest)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records.values() {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Write via a temporary file and rename, so a crash mid-write never
    /// leaves a truncated manifest behind.
    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| IngestError::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| IngestError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| IngestError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptBlob {
    pub repo_id: String,
    pub path: String,
    pub content_hash: String,
    pub byte_length: u64,
}

/// Content-addressed script storage: `objects/<sha256>` holds the bytes,
/// `index.jsonl` maps `(repo_id, path)` to a hash.
#[derive(Debug)]
pub struct BlobStore {
    root: PathBuf,
    index: BTreeMap<(String, String), ScriptBlob>,
}

impl BlobStore {
    pub const INDEX_FILE: &'static str = "index.jsonl";

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let root = root.into();
        let objects = root.join("objects");
        fs::create_dir_all(&objects).map_err(|e| IngestError::io(&objects, e))?;
        let mut index = BTreeMap::new();
        let index_path = root.join(Self::INDEX_FILE);
        if index_path.exists() {
            let file = fs::File::open(&index_path).map_err(|e| IngestError::io(&index_path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| IngestError::io(&index_path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let blob: ScriptBlob = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
                    path: index_path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                index.insert((blob.repo_id.clone(), blob.path.clone()), blob);
            }
        }
        Ok(BlobStore { root, index })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn object_path(&self, hash: &str) -> PathBuf {
        self.root.join("objects").join(hash)
    }

    /// Store bytes for a repository path. Identical bytes share one object.
    pub fn put(&mut self, repo_id: &str, path: &str, bytes: &[u8]) -> Result<ScriptBlob, IngestError> {
        let hash = content_hash(bytes);
        let object = self.object_path(&hash);
        if !object.exists() {
            fs::write(&object, bytes).map_err(|e| IngestError::io(&object, e))?;
        }
        let blob = ScriptBlob {
            repo_id: repo_id.to_owned(),
            path: path.to_owned(),
            content_hash: hash,
            byte_length: bytes.len() as u64,
        };
        self.index.insert((repo_id.to_owned(), path.to_owned()), blob.clone());
        Ok(blob)
    }

    pub fn read(&self, hash: &str) -> Result<Vec<u8>, IngestError> {
        let object = self.object_path(hash);
        fs::read(&object).map_err(|e| IngestError::io(&object, e))
    }

    pub fn blobs_for<'s>(&'s self, repo_id: &'s str) -> impl Iterator<Item = &'s ScriptBlob> + 's {
        self.index
            .range((repo_id.to_owned(), String::new())..)
            .take_while(move |((r, _), _)| r == repo_id)
            .map(|(_, b)| b)
    }

    pub fn blobs(&self) -> impl Iterator<Item = &ScriptBlob> {
        self.index.values()
    }

    pub fn object_count(&self) -> Result<usize, IngestError> {
        let dir = self.root.join("objects");
        Ok(fs::read_dir(&dir).map_err(|e| IngestError::io(&dir, e))?.count())
    }

    pub fn save_index(&self) -> Result<(), IngestError> {
        let path = self.root.join(Self::INDEX_FILE);
        let mut buf = BufWriter::new(Vec::new());
        for blob in self.index.values() {
            serde_json::to_writer(&mut buf, blob).expect("blob serializes");
            buf.write_all(b"\n").expect("in-memory write");
        }
        write_atomic(&path, &buf.into_inner().expect("in-memory buffer"))
    }
}
