use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::membership::HostList;
use crate::node::http::{self, encode_segment, ByteRange, HttpError};
use crate::placement::ChunkName;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransferError {
    NotFound,
    /// Connection refused, timed out or answered with a server error.
    Unreachable(String),
    /// The body was cut short; `received` holds what did arrive.
    Truncated { received: Vec<u8> },
    Rejected(String),
}

impl std::fmt::Display for TransferError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransferError::NotFound => f.write_str("not found"),
            TransferError::Unreachable(e) => write!(f, "unreachable: {e}"),
            TransferError::Truncated { received } => write!(f, "cut after {} bytes", received.len()),
            TransferError::Rejected(e) => write!(f, "rejected: {e}"),
        }
    }
}

/// How a client reaches nodes. `host` is a node address.
pub trait Transport: Sync {
    fn put_chunk(&self, host: &str, name: &ChunkName, bytes: &[u8]) -> Result<(), TransferError>;
    /// Whole chunk, or the inclusive byte range of the stored stream.
    fn get_chunk(&self, host: &str, name: &ChunkName, range: Option<ByteRange>) -> Result<Vec<u8>, TransferError>;
    fn hosts(&self, host: &str) -> Result<HostList, TransferError>;
}

#[derive(Debug, Clone)]
pub struct HttpTransport {
    pub timeout: Duration,
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport {
            timeout: Duration::from_secs(30),
        }
    }
}

fn chunk_path(name: &ChunkName) -> String {
    format!("/chunks/{}", encode_segment(&name.to_string()))
}

fn transfer_error(e: HttpError) -> TransferError {
    match e {
        HttpError::Truncated { received, .. } => TransferError::Truncated { received },
        other => TransferError::Unreachable(other.to_string()),
    }
}

impl Transport for HttpTransport {
    fn put_chunk(&self, host: &str, name: &ChunkName, bytes: &[u8]) -> Result<(), TransferError> {
        let resp = http::request(host, "PUT", &chunk_path(name), &[], bytes, self.timeout).map_err(transfer_error)?;
        match resp.status {
            200 | 201 => Ok(()),
            400 => Err(TransferError::Rejected(String::from_utf8_lossy(&resp.body).into_owned())),
            s => Err(TransferError::Unreachable(format!("status {s}"))),
        }
    }

    fn get_chunk(&self, host: &str, name: &ChunkName, range: Option<ByteRange>) -> Result<Vec<u8>, TransferError> {
        let headers: Vec<(&str, String)> = range.iter().map(|r| ("Range", r.to_header())).collect();
        let resp = http::request(host, "GET", &chunk_path(name), &headers, &[], self.timeout).map_err(transfer_error)?;
        match resp.status {
            200 => match range {
                // The server ignored the range; cut the slice out ourselves.
                Some(r) => Ok(r
                    .resolve(resp.body.len() as u64)
                    .map(|(a, b)| resp.body[a as usize..=b as usize].to_vec())
                    .unwrap_or_default()),
                None => Ok(resp.body),
            },
            206 => Ok(resp.body),
            404 => Err(TransferError::NotFound),
            416 => Err(TransferError::Rejected("range not satisfiable".into())),
            s => Err(TransferError::Unreachable(format!("status {s}"))),
        }
    }

    fn hosts(&self, host: &str) -> Result<HostList, TransferError> {
        crate::node::fetch_hosts(host, self.timeout).map_err(TransferError::Unreachable)
    }
}

type Shelf = BTreeMap<String, Arc<Vec<u8>>>;

/// In-process nodes keyed by address, for benchmarks, tests and the
/// simulator. Hosts can be marked down, and reads can be cut short.
#[derive(Debug, Default)]
pub struct MemoryTransport {
    shelves: Mutex<BTreeMap<String, Shelf>>,
    down: Mutex<BTreeSet<String>>,
    host_list: Mutex<HostList>,
    /// Chunk names whose next full read is cut after this many bytes.
    cut: Mutex<BTreeMap<String, usize>>,
}

impl MemoryTransport {
    pub fn new(host_list: HostList) -> MemoryTransport {
        let shelves = host_list.records().map(|r| (r.address.clone(), Shelf::new())).collect();
        MemoryTransport {
            shelves: Mutex::new(shelves),
            host_list: Mutex::new(host_list),
            ..MemoryTransport::default()
        }
    }

    pub fn set_down(&self, host: &str, down: bool) {
        let mut set = self.down.lock().unwrap();
        if down {
            set.insert(host.to_string());
        } else {
            set.remove(host);
        }
    }

    pub fn set_all_up(&self) {
        self.down.lock().unwrap().clear();
    }

    pub fn set_host_list(&self, list: HostList) {
        *self.host_list.lock().unwrap() = list;
    }

    pub fn remove_chunk(&self, host: &str, name: &ChunkName) -> bool {
        self.shelves
            .lock()
            .unwrap()
            .get_mut(host)
            .is_some_and(|s| s.remove(&name.to_string()).is_some())
    }

    pub fn insert_chunk(&self, host: &str, name: &ChunkName, bytes: Vec<u8>) {
        self.shelves
            .lock()
            .unwrap()
            .entry(host.to_string())
            .or_default()
            .insert(name.to_string(), Arc::new(bytes));
    }

    pub fn chunk(&self, host: &str, name: &ChunkName) -> Option<Arc<Vec<u8>>> {
        self.shelves.lock().unwrap().get(host)?.get(&name.to_string()).cloned()
    }

    pub fn cut_next_read(&self, name: &ChunkName, after: usize) {
        self.cut.lock().unwrap().insert(name.to_string(), after);
    }

    fn is_down(&self, host: &str) -> bool {
        self.down.lock().unwrap().contains(host)
    }
}

impl Transport for MemoryTransport {
    fn put_chunk(&self, host: &str, name: &ChunkName, bytes: &[u8]) -> Result<(), TransferError> {
        if self.is_down(host) {
            return Err(TransferError::Unreachable(format!("{host} is down")));
        }
        crate::node::ChunkHeader::validate_chunk(bytes).map_err(|e| TransferError::Rejected(e.to_string()))?;
        self.insert_chunk(host, name, bytes.to_vec());
        Ok(())
    }

    fn get_chunk(&self, host: &str, name: &ChunkName, range: Option<ByteRange>) -> Result<Vec<u8>, TransferError> {
        if self.is_down(host) {
            return Err(TransferError::Unreachable(format!("{host} is down")));
        }
        let stored = self.chunk(host, name).ok_or(TransferError::NotFound)?;
        match range {
            Some(r) => {
                let (a, b) = r
                    .resolve(stored.len() as u64)
                    .ok_or_else(|| TransferError::Rejected("range not satisfiable".into()))?;
                Ok(stored[a as usize..=b as usize].to_vec())
            }
            None => {
                if let Some(after) = self.cut.lock().unwrap().remove(&name.to_string()) {
                    return Err(TransferError::Truncated {
                        received: stored[..after.min(stored.len())].to_vec(),
                    });
                }
                Ok(stored.as_ref().clone())
            }
        }
    }

    fn hosts(&self, host: &str) -> Result<HostList, TransferError> {
        if self.is_down(host) {
            return Err(TransferError::Unreachable(format!("{host} is down")));
        }
        Ok(self.host_list.lock().unwrap().clone())
    }
}
