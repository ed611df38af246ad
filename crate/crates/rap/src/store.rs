//! Line-delimited JSON persistence for memory stores.
//!
//! The first line is a header `{"schema_version":1,"embedding_dim":256}`;
//! every following line is one episode log.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use rap_core::memory::{schema_supported, SCHEMA_VERSION};
use rap_core::{EpisodeLog, InsertOutcome, MemoryError, MemoryStore};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported memory schema version {found} (supported: {SCHEMA_VERSION})")]
    SchemaVersionUnsupported { found: u32 },
    #[error("corrupt memory record at line {line}: {message}")]
    CorruptRecord { line: usize, message: String },
}

impl StoreError {
    fn corrupt(line: usize, message: impl ToString) -> Self {
        StoreError::CorruptRecord { line, message: message.to_string() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    embedding_dim: usize,
}

pub fn write_to<W: Write>(store: &MemoryStore, mut out: W) -> io::Result<()> {
    let header = Header { schema_version: store.schema_version(), embedding_dim: store.embedding_dim() };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for log in store.iter() {
        serde_json::to_writer(&mut out, log)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Write `store` to `path` through a temporary file so readers never see a
/// half-written memory.
pub fn save(store: &MemoryStore, path: &Path) -> Result<(), StoreError> {
    let io_err = |source| StoreError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let tmp = path.with_extension("jsonl.tmp");
    let file = fs::File::create(&tmp).map_err(io_err)?;
    write_to(store, BufWriter::new(file)).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn read_from<R: BufRead>(input: R) -> Result<MemoryStore, StoreError> {
    let mut lines = input.lines().enumerate();
    let header_line = match lines.next() {
        Some((_, line)) => line.map_err(|e| StoreError::corrupt(1, e))?,
        None => return Err(StoreError::corrupt(1, "missing header")),
    };
    let header: Header = serde_json::from_str(&header_line).map_err(|e| StoreError::corrupt(1, e))?;
    if !schema_supported(header.schema_version) {
        return Err(StoreError::SchemaVersionUnsupported { found: header.schema_version });
    }
    let mut store = MemoryStore::new(header.embedding_dim);
    for (idx, line) in lines {
        let n = idx + 1;
        let line = line.map_err(|e| StoreError::corrupt(n, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let log: EpisodeLog = serde_json::from_str(&line).map_err(|e| StoreError::corrupt(n, e))?;
        match store.insert(log) {
            Ok(InsertOutcome::Inserted) => {}
            Ok(InsertOutcome::Duplicate) => return Err(StoreError::corrupt(n, "duplicate episode")),
            Err(e) => return Err(StoreError::corrupt(n, e)),
        }
    }
    Ok(store)
}

pub fn load(path: &Path) -> Result<MemoryStore, StoreError> {
    let file = fs::File::open(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
    read_from(BufReader::new(file))
}

/// A store shared between threads. Readers take cheap snapshots; writers
/// are serialized and publish a new snapshot on every insert.
#[derive(Debug, Clone)]
pub struct SharedStore {
    inner: Arc<RwLock<MemoryStore>>,
}

impl SharedStore {
    pub fn new(store: MemoryStore) -> Self {
        SharedStore { inner: Arc::new(RwLock::new(store)) }
    }

    pub fn snapshot(&self) -> MemoryStore {
        self.inner.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn insert(&self, log: EpisodeLog) -> Result<InsertOutcome, MemoryError> {
        let mut guard = self.inner.write().unwrap_or_else(|e| e.into_inner());
        // build the next snapshot aside so a failed insert leaves nothing behind
        let mut next = guard.clone();
        let outcome = next.insert(log)?;
        *guard = next;
        Ok(outcome)
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
