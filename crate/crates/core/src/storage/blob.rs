use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::crypto::sha256;
use crate::error::StoreError;

/// Content-addressed files named `<sha256 hex>.<ext>`.
#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
}

fn split_ref(blob_ref: &str) -> Option<(&str, &str)> {
    let (hex_part, ext) = blob_ref.split_once('.')?;
    let valid = hex_part.len() == 64
        && hex_part.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        && !ext.is_empty()
        && ext.bytes().all(|b| b.is_ascii_alphanumeric());
    valid.then_some((hex_part, ext))
}

impl BlobStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(StoreError::Unwritable)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, blob_ref: &str) -> Result<PathBuf, StoreError> {
        split_ref(blob_ref).ok_or_else(|| StoreError::BlobNotFound(blob_ref.to_string()))?;
        Ok(self.root.join(blob_ref))
    }

    /// Writes `bytes` (temp file, fsync, rename) unless already present.
    pub fn put(&self, bytes: &[u8], ext: &str) -> Result<String, StoreError> {
        let blob_ref = format!("{}.{ext}", hex::encode(sha256(bytes)));
        let path = self.root.join(&blob_ref);
        if path.exists() {
            return Ok(blob_ref);
        }
        let suffix: u64 = rand::random();
        let tmp = self.root.join(format!(".tmp-{suffix:016x}"));
        let result = (|| {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        })();
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(e.into());
        }
        Ok(blob_ref)
    }

    /// Reads a blob and re-checks its content hash.
    pub fn get(&self, blob_ref: &str) -> Result<Vec<u8>, StoreError> {
        let (hex_part, _) =
            split_ref(blob_ref).ok_or_else(|| StoreError::BlobNotFound(blob_ref.to_string()))?;
        let bytes = match fs::read(self.root.join(blob_ref)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::BlobNotFound(blob_ref.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        if hex::encode(sha256(&bytes)) != hex_part {
            return Err(StoreError::CorruptBlob(blob_ref.to_string()));
        }
        Ok(bytes)
    }

    pub fn exists(&self, blob_ref: &str) -> bool {
        self.path_of(blob_ref).map(|p| p.exists()).unwrap_or(false)
    }

    pub fn delete(&self, blob_ref: &str) -> Result<(), StoreError> {
        match fs::remove_file(self.path_of(blob_ref)?) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    /// Every well-formed blob reference currently on disk.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let name = entry?.file_name();
            if let Some(name) = name.to_str() {
                if split_ref(name).is_some() {
                    out.push(name.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Removes temp files left behind by interrupted writes.
    pub fn sweep_temp(&self) -> Result<(), StoreError> {
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.file_name().to_string_lossy().starts_with(".tmp-") {
                fs::remove_file(entry.path())?;
            }
        }
        Ok(())
    }
}
