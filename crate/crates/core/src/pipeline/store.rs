//! Storage for the pixels of unknown detections, keyed by content hash.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::PathBuf;

use parking_lot::Mutex;
use sha2::{Digest, Sha256};

use crate::geometry::Patch;
use crate::remote::encode_png;

/// Stores PNG-encoded patches; the returned reference is the hex SHA-256 of
/// the PNG bytes, so storing identical pixels twice yields one entry.
pub trait PatchStore: Send + Sync {
    fn put(&self, patch: &Patch) -> io::Result<String>;
    fn get(&self, patch_ref: &str) -> io::Result<Option<Vec<u8>>>;
}

fn encode(patch: &Patch) -> (String, Vec<u8>) {
    let png = encode_png(&patch.pixels);
    (hex::encode(Sha256::digest(&png)), png)
}

fn is_hash(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit())
}

#[derive(Debug, Default)]
pub struct MemoryPatchStore {
    entries: Mutex<HashMap<String, Vec<u8>>>,
}

impl MemoryPatchStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PatchStore for MemoryPatchStore {
    fn put(&self, patch: &Patch) -> io::Result<String> {
        let (key, png) = encode(patch);
        self.entries.lock().entry(key.clone()).or_insert(png);
        Ok(key)
    }

    fn get(&self, patch_ref: &str) -> io::Result<Option<Vec<u8>>> {
        Ok(self.entries.lock().get(patch_ref).cloned())
    }
}

/// Writes `{dir}/{sha256}.png`.
#[derive(Debug, Clone)]
pub struct DiskPatchStore {
    dir: PathBuf,
}

impl DiskPatchStore {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.png"))
    }
}

impl PatchStore for DiskPatchStore {
    fn put(&self, patch: &Patch) -> io::Result<String> {
        let (key, png) = encode(patch);
        let path = self.path(&key);
        if !path.exists() {
            let tmp = self.dir.join(format!("{key}.tmp"));
            fs::write(&tmp, &png)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(key)
    }

    fn get(&self, patch_ref: &str) -> io::Result<Option<Vec<u8>>> {
        if !is_hash(patch_ref) {
            return Ok(None);
        }
        match fs::read(self.path(patch_ref)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}
