use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard};

use super::header::ChunkHeader;
use super::NodeError;
use crate::placement::{ring_hash, ChunkName};

const LOCK_STRIPES: usize = 64;

/// Chunks on local disk at `<dir>/<first-2-hex>/<16-hex ring hash>`.
///
/// Writes go to a temporary file in the target directory and are renamed
/// into place, so readers see either the old or the new chunk in full.
#[derive(Debug)]
pub struct ChunkStore {
    dir: PathBuf,
    locks: Vec<Mutex<()>>,
    tmp_counter: AtomicU64,
}

impl ChunkStore {
    pub fn open(dir: &Path) -> Result<ChunkStore, NodeError> {
        fs::create_dir_all(dir).map_err(|e| NodeError::io(dir, e))?;
        // Fail early on a read-only directory.
        let probe = dir.join(".probe");
        fs::write(&probe, b"").map_err(|e| NodeError::io(&probe, e))?;
        let _ = fs::remove_file(&probe);
        Ok(ChunkStore {
            dir: dir.to_path_buf(),
            locks: (0..LOCK_STRIPES).map(|_| Mutex::new(())).collect(),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, name: &ChunkName) -> PathBuf {
        let hex = format!("{:016x}", ring_hash(name.to_string().as_bytes()));
        self.dir.join(&hex[..2]).join(hex)
    }

    fn lock(&self, name: &ChunkName) -> MutexGuard<'_, ()> {
        let stripe = (ring_hash(name.to_string().as_bytes()) % LOCK_STRIPES as u64) as usize;
        self.locks[stripe].lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Validates and durably stores a complete chunk (header and payload).
    pub fn put(&self, name: &ChunkName, bytes: &[u8]) -> Result<ChunkHeader, NodeError> {
        let header = ChunkHeader::validate_chunk(bytes)?;
        if header.index as usize != name.index() {
            return Err(NodeError::BadChunk(format!(
                "header index {} does not match chunk name {name}",
                header.index
            )));
        }
        let path = self.path_for(name);
        let parent = path.parent().expect("two-level layout");
        fs::create_dir_all(parent).map_err(|e| NodeError::io(parent, e))?;
        let tmp = parent.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        let written = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()
        })();
        if let Err(e) = written {
            let _ = fs::remove_file(&tmp);
            return Err(NodeError::io(&tmp, e));
        }
        let _guard = self.lock(name);
        fs::rename(&tmp, &path).map_err(|e| {
            let _ = fs::remove_file(&tmp);
            NodeError::io(&path, e)
        })?;
        Ok(header)
    }

    pub fn get(&self, name: &ChunkName) -> Result<Vec<u8>, NodeError> {
        let path = self.path_for(name);
        match fs::read(&path) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(NodeError::NotFound(name.to_string())),
            Err(e) => Err(NodeError::io(&path, e)),
        }
    }

    pub fn contains(&self, name: &ChunkName) -> bool {
        self.path_for(name).is_file()
    }

    pub fn delete(&self, name: &ChunkName) -> Result<bool, NodeError> {
        let path = self.path_for(name);
        let _guard = self.lock(name);
        match fs::remove_file(&path) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(NodeError::io(&path, e)),
        }
    }
}
