//! On-disk layout of a node:
//!
//! ```text
//! <data_dir>/
//!   records.db   users, follows, sessions, posts, translations (SQLite)
//!   blobs/       <sha256 hex>.<ext> content-addressed media
//!   chain.vdl    ledger chain file
//!   node_keys    service account keys (translator)
//! ```

mod blob;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};

pub use blob::BlobStore;

use crate::crypto::Keypair;
use crate::error::StoreError;
use crate::ledger::Ledger;

pub const SCHEMA_VERSION: i64 = 1;

const SCHEMA: &str = "
CREATE TABLE users (
    user_id         BLOB PRIMARY KEY,
    username        TEXT NOT NULL,
    username_lc     TEXT NOT NULL UNIQUE,
    password_record TEXT NOT NULL,
    default_lang    TEXT NOT NULL,
    picture_ref     TEXT,
    signing_seed    BLOB NOT NULL,
    public_key      BLOB NOT NULL,
    address         BLOB NOT NULL UNIQUE,
    created_at      INTEGER NOT NULL,
    reg_tx          BLOB
);
CREATE TABLE follows (
    follower BLOB NOT NULL,
    followee BLOB NOT NULL,
    since    INTEGER NOT NULL,
    PRIMARY KEY (follower, followee)
);
CREATE TABLE sessions (
    token_hash BLOB PRIMARY KEY,
    user_id    BLOB NOT NULL,
    expires_at INTEGER NOT NULL
);
CREATE TABLE posts (
    post_id      BLOB PRIMARY KEY,
    author       BLOB NOT NULL,
    lang         TEXT NOT NULL,
    audio_ref    TEXT NOT NULL,
    audio_hash   BLOB NOT NULL,
    transcript   TEXT NOT NULL,
    created_at   INTEGER NOT NULL,
    tx_hash      BLOB NOT NULL UNIQUE,
    block_height INTEGER NOT NULL,
    block_hash   BLOB NOT NULL,
    gas_used     INTEGER NOT NULL,
    cost_wei     TEXT NOT NULL
);
CREATE INDEX posts_by_author ON posts (author, created_at DESC, post_id);
CREATE TABLE translations (
    post_id      BLOB NOT NULL,
    target_lang  TEXT NOT NULL,
    text         TEXT NOT NULL,
    audio_ref    TEXT,
    engine_id    TEXT NOT NULL,
    created_at   INTEGER NOT NULL,
    tx_hash      BLOB NOT NULL UNIQUE,
    block_height INTEGER NOT NULL,
    block_hash   BLOB NOT NULL,
    gas_used     INTEGER NOT NULL,
    cost_wei     TEXT NOT NULL,
    PRIMARY KEY (post_id, target_lang)
);
";

#[derive(Serialize, Deserialize)]
struct NodeKeys {
    translator_seed: String,
}

/// Paths of the store layout under one data directory.
#[derive(Debug, Clone)]
pub struct StoreLayout {
    pub root: PathBuf,
}

impl StoreLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn records(&self) -> PathBuf {
        self.root.join("records.db")
    }
    pub fn blobs(&self) -> PathBuf {
        self.root.join("blobs")
    }
    pub fn chain(&self) -> PathBuf {
        self.root.join("chain.vdl")
    }
    pub fn node_keys(&self) -> PathBuf {
        self.root.join("node_keys")
    }
}

pub struct Store {
    layout: StoreLayout,
    db: Mutex<Connection>,
    blobs: BlobStore,
    translator: Keypair,
    in_flight: Mutex<HashMap<String, usize>>,
}

fn schema_version(conn: &Connection) -> Result<i64, StoreError> {
    Ok(conn.query_row("PRAGMA user_version", [], |r| r.get(0))?)
}

fn load_or_create_keys(path: &Path) -> Result<Keypair, StoreError> {
    if path.exists() {
        let keys: NodeKeys = serde_json::from_slice(&fs::read(path)?)
            .map_err(|e| StoreError::Malformed(format!("node_keys: {e}")))?;
        let seed = crate::hexfmt::parse::<32>(&keys.translator_seed)
            .map_err(|e| StoreError::Malformed(format!("node_keys: {e}")))?;
        return Ok(Keypair::from_seed(&seed));
    }
    let kp = Keypair::generate();
    let body = serde_json::to_vec_pretty(&NodeKeys { translator_seed: hex::encode(kp.seed()) })
        .expect("keys serialize");
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, body)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(&tmp, fs::Permissions::from_mode(0o600))?;
    }
    fs::rename(&tmp, path)?;
    Ok(kp)
}

/// Opens the store at `data_dir`, creating the layout if absent.
pub fn init_store(data_dir: impl AsRef<Path>) -> Result<Store, StoreError> {
    let layout = StoreLayout::new(data_dir.as_ref());

    // Check an existing schema before touching anything else on disk.
    if layout.records().exists() {
        let conn = Connection::open_with_flags(layout.records(), OpenFlags::SQLITE_OPEN_READ_ONLY)?;
        let found = schema_version(&conn)?;
        if found != SCHEMA_VERSION {
            return Err(StoreError::SchemaMismatch { found, expected: SCHEMA_VERSION });
        }
    }

    fs::create_dir_all(&layout.root).map_err(StoreError::Unwritable)?;
    let blobs = BlobStore::open(layout.blobs())?;
    blobs.sweep_temp()?;

    let conn = Connection::open(layout.records())?;
    conn.busy_timeout(std::time::Duration::from_secs(5))?;
    conn.pragma_update(None, "journal_mode", "WAL")?;
    conn.pragma_update(None, "synchronous", "FULL")?;
    conn.pragma_update(None, "foreign_keys", "ON")?;
    if schema_version(&conn)? == 0 {
        conn.execute_batch(&format!(
            "BEGIN; {SCHEMA} PRAGMA user_version = {SCHEMA_VERSION}; COMMIT;"
        ))?;
    }

    Ledger::create_if_absent(layout.chain())?;
    let translator = load_or_create_keys(&layout.node_keys())?;

    Ok(Store { layout, db: Mutex::new(conn), blobs, translator, in_flight: Mutex::default() })
}

impl Store {
    pub fn layout(&self) -> &StoreLayout {
        &self.layout
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    /// Keypair of the node's translator service account.
    pub fn translator_key(&self) -> &Keypair {
        &self.translator
    }

    /// Exclusive access to the record database.
    pub fn db(&self) -> MutexGuard<'_, Connection> {
        self.db.lock().expect("record store poisoned")
    }

    pub fn put_blob(&self, bytes: &[u8], ext: &str) -> Result<String, StoreError> {
        self.blobs.put(bytes, ext)
    }

    pub fn get_blob(&self, blob_ref: &str) -> Result<Vec<u8>, StoreError> {
        self.blobs.get(blob_ref)
    }

    /// Writes a blob that is not yet referenced by any record. Unless
    /// [`PendingBlob::commit`] is called, dropping the guard deletes the blob
    /// again when nothing else references it.
    pub fn put_pending_blob(&self, bytes: &[u8], ext: &str) -> Result<PendingBlob<'_>, StoreError> {
        let blob_ref = self.blobs.put(bytes, ext)?;
        *self.in_flight.lock().expect("in-flight poisoned").entry(blob_ref.clone()).or_default() += 1;
        Ok(PendingBlob { store: self, blob_ref, committed: false })
    }

    fn is_referenced(&self, conn: &Connection, blob_ref: &str) -> Result<bool, StoreError> {
        let n: i64 = conn.query_row(
            "SELECT (SELECT COUNT(*) FROM posts WHERE audio_ref = ?1)
                  + (SELECT COUNT(*) FROM translations WHERE audio_ref = ?1)
                  + (SELECT COUNT(*) FROM users WHERE picture_ref = ?1)",
            [blob_ref],
            |r| r.get(0),
        )?;
        Ok(n > 0)
    }

    fn release(&self, blob_ref: &str, delete_if_orphan: bool) {
        let mut in_flight = self.in_flight.lock().expect("in-flight poisoned");
        let remaining = match in_flight.get_mut(blob_ref) {
            Some(n) => {
                *n -= 1;
                *n
            }
            None => 0,
        };
        if remaining == 0 {
            in_flight.remove(blob_ref);
            if delete_if_orphan {
                let conn = self.db();
                match self.is_referenced(&conn, blob_ref) {
                    Ok(false) => {
                        if let Err(e) = self.blobs.delete(blob_ref) {
                            log::warn!("could not remove orphan blob {blob_ref}: {e}");
                        }
                    }
                    Ok(true) => {}
                    Err(e) => log::warn!("could not check blob {blob_ref}: {e}"),
                }
            }
        }
    }

    /// Deletes `blob_ref` unless a record or an in-flight write uses it.
    pub fn delete_blob_if_unreferenced(&self, blob_ref: &str) -> Result<bool, StoreError> {
        let in_flight = self.in_flight.lock().expect("in-flight poisoned");
        if in_flight.contains_key(blob_ref) {
            return Ok(false);
        }
        let conn = self.db();
        if self.is_referenced(&conn, blob_ref)? {
            return Ok(false);
        }
        self.blobs.delete(blob_ref)?;
        Ok(true)
    }

    /// Deletes blobs no record refers to. Run at startup, before requests.
    pub fn sweep_orphan_blobs(&self) -> Result<usize, StoreError> {
        let conn = self.db();
        let mut removed = 0;
        for blob_ref in self.blobs.list()? {
            if !self.is_referenced(&conn, &blob_ref)? {
                self.blobs.delete(&blob_ref)?;
                removed += 1;
            }
        }
        Ok(removed)
    }
}

/// A freshly written blob awaiting the record that will reference it.
pub struct PendingBlob<'a> {
    store: &'a Store,
    blob_ref: String,
    committed: bool,
}

impl PendingBlob<'_> {
    pub fn blob_ref(&self) -> &str {
        &self.blob_ref
    }

    /// Marks the blob as referenced by a committed record.
    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for PendingBlob<'_> {
    fn drop(&mut self) {
        self.store.release(&self.blob_ref, !self.committed);
    }
}
