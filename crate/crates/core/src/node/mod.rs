//! The per-host server: chunk storage, ranged reads, host-list queries and
//! gossip over a small HTTP/1.1 subset.
//!
//! ```text
//! GET  /chunks/<name>   whole chunk, or a `Range: bytes=a-b` slice (206)
//! PUT  /chunks/<name>   store a chunk (header + payload)
//! GET  /hosts           host list, one `<id> <address> <status> <seq>` per line
//! POST /gossip          push / pull / records message, see `membership`
//! ```

pub mod header;
pub mod http;
pub mod store;

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

pub use header::{chunk_len, ChunkHeader, HEADER_LEN};
pub use store::ChunkStore;

use crate::codec::TannerGraph;
use crate::config::{ConfigError, ConfigFile};
use crate::membership::{bootstrap, GossipConfig, GossipMessage, HostList, Membership, MembershipError};
use crate::placement::{ChunkName, HostId};
use http::{ByteRange, HttpError, Request};

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("invalid chunk: {0}")]
    BadChunk(String),
    #[error("chunk {0} not found")]
    NotFound(String),
    #[error("cannot listen on {address}: {msg}")]
    Bind { address: String, msg: String },
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Membership(#[from] MembershipError),
}

impl NodeError {
    pub(crate) fn io(path: &Path, e: io::Error) -> NodeError {
        NodeError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }
}

pub const NODE_KEYS: &[&str] = &[
    "listen",
    "data_dir",
    "seeds",
    "gossip.fanout",
    "gossip.decay",
    "gossip.t_min_ms",
    "gossip.t_max_ms",
    "gossip.miss_threshold",
    "graph_file",
    "bootstrap_quorum",
    "rng_seed",
];

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub seeds: Vec<String>,
    pub gossip: GossipConfig,
    pub graph_file: Option<PathBuf>,
    pub bootstrap_quorum: usize,
    pub rng_seed: u64,
}

impl NodeConfig {
    pub fn new(listen: &str, data_dir: &Path) -> NodeConfig {
        NodeConfig {
            listen: listen.to_string(),
            data_dir: data_dir.to_path_buf(),
            seeds: Vec::new(),
            gossip: GossipConfig::default(),
            graph_file: None,
            bootstrap_quorum: 1,
            rng_seed: 0,
        }
    }

    pub fn from_config(cfg: &ConfigFile) -> Result<NodeConfig, ConfigError> {
        cfg.check_keys(NODE_KEYS, &[])?;
        let d = GossipConfig::default();
        let gossip = GossipConfig {
            fanout: cfg.parse_or("gossip.fanout", d.fanout)?,
            decay: cfg.parse_or("gossip.decay", d.decay)?,
            t_min_ms: cfg.parse_or("gossip.t_min_ms", d.t_min_ms)?,
            t_max_ms: cfg.parse_or("gossip.t_max_ms", d.t_max_ms)?,
            miss_threshold: cfg.parse_or("gossip.miss_threshold", d.miss_threshold)?,
        };
        gossip.validate().map_err(|msg| ConfigError::Invalid {
            key: "gossip".into(),
            value: msg,
        })?;
        Ok(NodeConfig {
            listen: cfg.require("listen")?.to_string(),
            data_dir: PathBuf::from(cfg.require("data_dir")?),
            seeds: cfg.list("seeds"),
            gossip,
            graph_file: cfg.get("graph_file").map(PathBuf::from),
            bootstrap_quorum: cfg.parse_or("bootstrap_quorum", 1)?,
            rng_seed: cfg.parse_or("rng_seed", 0)?,
        })
    }
}

const IO_TIMEOUT: Duration = Duration::from_secs(30);
const GOSSIP_TIMEOUT: Duration = Duration::from_millis(1000);
const HOSTS_FILE: &str = "hosts";

struct Shared {
    store: ChunkStore,
    membership: Mutex<Membership>,
    started: Instant,
    stopping: AtomicBool,
}

impl Shared {
    fn now(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn membership(&self) -> MutexGuard<'_, Membership> {
        self.membership.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn persist_hosts(&self) {
        let text = self.membership().list().to_text();
        let path = self.store.dir().join(HOSTS_FILE);
        let tmp = self.store.dir().join(".hosts.tmp");
        if let Err(e) = std::fs::write(&tmp, text).and_then(|_| std::fs::rename(&tmp, &path)) {
            log::warn!("cannot persist host list: {e}");
        }
    }
}

/// A running node. Dropping the handle leaves the node running until the
/// process exits; use [`NodeHandle::shutdown`] or [`NodeHandle::kill`].
pub struct NodeHandle {
    address: String,
    shared: Arc<Shared>,
    stop_gossip: mpsc::Sender<()>,
    accept: Option<JoinHandle<()>>,
    gossip: Option<JoinHandle<()>>,
    local: SocketAddr,
}

/// Fetches a node's host list over the wire.
pub fn fetch_hosts(address: &str, timeout: Duration) -> Result<HostList, String> {
    let resp = http::request(address, "GET", "/hosts", &[], &[], timeout).map_err(|e| e.to_string())?;
    if resp.status != 200 {
        return Err(format!("status {}", resp.status));
    }
    let text = String::from_utf8(resp.body).map_err(|_| "host list is not utf-8".to_string())?;
    HostList::parse(&text).map_err(|e| e.to_string())
}

/// Starts a node: binds, bootstraps from the seeds, announces itself and
/// serves until shut down.
pub fn serve(cfg: NodeConfig) -> Result<NodeHandle, NodeError> {
    if let Some(path) = &cfg.graph_file {
        let text = std::fs::read_to_string(path).map_err(|e| NodeError::io(path, e))?;
        let graph: TannerGraph = text.parse().map_err(|e| ConfigError::Invalid {
            key: "graph_file".into(),
            value: format!("{}: {e}", path.display()),
        })?;
        log::info!("graph {:016x} (n={}, m={})", graph.fingerprint(), graph.n(), graph.m());
    }
    let store = ChunkStore::open(&cfg.data_dir)?;
    let listener = TcpListener::bind(&cfg.listen).map_err(|e| NodeError::Bind {
        address: cfg.listen.clone(),
        msg: e.to_string(),
    })?;
    let local = listener.local_addr().map_err(|e| NodeError::Bind {
        address: cfg.listen.clone(),
        msg: e.to_string(),
    })?;
    // Advertise the bound port when the config asked for port 0.
    let host = cfg.listen.rsplit_once(':').map_or(cfg.listen.as_str(), |(h, _)| h);
    let address = crate::placement::canonical_address(&format!("{host}:{}", local.port()));

    let mut membership = Membership::new(&address, cfg.gossip, cfg.rng_seed ^ HostId::from_address(&address).0);
    let persisted = match std::fs::read_to_string(cfg.data_dir.join(HOSTS_FILE)) {
        Ok(text) => Some(HostList::parse(&text)?),
        Err(_) => None,
    };
    let seeds: Vec<String> = cfg.seeds.iter().filter(|s| crate::placement::canonical_address(s) != address).cloned().collect();
    let list = if seeds.is_empty() {
        persisted.unwrap_or_default()
    } else {
        match bootstrap(&seeds, persisted.as_ref(), cfg.bootstrap_quorum, |s| fetch_hosts(s, GOSSIP_TIMEOUT)) {
            Ok(list) => list,
            Err(e) => {
                // A node can still serve its chunks alone; peers find it later.
                log::warn!("{address}: {e}; starting from the persisted list");
                persisted.unwrap_or_default()
            }
        }
    };
    membership.merge_list(&list, 0);
    membership.join(0);

    let shared = Arc::new(Shared {
        store,
        membership: Mutex::new(membership),
        started: Instant::now(),
        stopping: AtomicBool::new(false),
    });
    shared.persist_hosts();

    let accept = {
        let shared = shared.clone();
        thread::Builder::new()
            .name(format!("accept-{address}"))
            .spawn(move || accept_loop(listener, shared))
            .expect("spawn accept thread")
    };
    let (stop_gossip, stop_rx) = mpsc::channel();
    let gossip = {
        let shared = shared.clone();
        thread::Builder::new()
            .name(format!("gossip-{address}"))
            .spawn(move || gossip_loop(shared, stop_rx))
            .expect("spawn gossip thread")
    };
    log::info!("node {address} serving from {}", cfg.data_dir.display());
    Ok(NodeHandle {
        address,
        shared,
        stop_gossip,
        accept: Some(accept),
        gossip: Some(gossip),
        local,
    })
}

impl NodeHandle {
    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn id(&self) -> HostId {
        HostId::from_address(&self.address)
    }

    pub fn host_list(&self) -> HostList {
        self.shared.membership().list().clone()
    }

    pub fn store(&self) -> &ChunkStore {
        &self.shared.store
    }

    /// Blocks until the node stops (for the CLI).
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    fn stop(&mut self) {
        self.shared.stopping.store(true, Ordering::SeqCst);
        let _ = self.stop_gossip.send(());
        let wake = SocketAddr::new(
            if self.local.ip().is_unspecified() { [127, 0, 0, 1].into() } else { self.local.ip() },
            self.local.port(),
        );
        let _ = TcpStream::connect_timeout(&wake, Duration::from_millis(500));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        if let Some(h) = self.gossip.take() {
            let _ = h.join();
        }
    }

    /// Abrupt stop: no `left` announcement, as if the process died.
    pub fn kill(mut self) {
        self.stop();
    }

    /// Clean stop: announces `left` to peers and persists the host list.
    pub fn shutdown(mut self) {
        self.stop();
        let out = {
            let mut m = self.shared.membership();
            m.leave(self.shared.now());
            m.gossip_round()
        };
        for o in out.into_iter().filter(|o| matches!(o.message, GossipMessage::Push(_))) {
            let _ = http::request(&o.address, "POST", "/gossip", &[], o.message.encode().as_bytes(), GOSSIP_TIMEOUT);
        }
        self.shared.persist_hosts();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for stream in listener.incoming() {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let shared = shared.clone();
        let spawned = thread::Builder::new().name("conn".into()).spawn(move || {
            if let Err(e) = handle_connection(stream, &shared) {
                log::debug!("connection: {e}");
            }
        });
        if let Err(e) = spawned {
            log::warn!("cannot spawn connection thread: {e}");
        }
    }
}

fn gossip_loop(shared: Arc<Shared>, stop: mpsc::Receiver<()>) {
    loop {
        let delay = shared.membership().next_delay_ms();
        match stop.recv_timeout(Duration::from_millis(delay)) {
            Err(RecvTimeoutError::Timeout) => {}
            _ => return,
        }
        let before = shared.membership().list().version();
        let out = shared.membership().gossip_round();
        for o in out {
            let result = http::request(&o.address, "POST", "/gossip", &[], o.message.encode().as_bytes(), GOSSIP_TIMEOUT);
            let now = shared.now();
            match result {
                Ok(resp) if resp.status == 200 => {
                    let mut m = shared.membership();
                    m.contact_ok(o.to, now);
                    if resp.body.is_empty() {
                        continue;
                    }
                    let reply = std::str::from_utf8(&resp.body)
                        .map_err(|_| MembershipError::Malformed("non-utf8 reply".into()))
                        .and_then(GossipMessage::decode);
                    match reply {
                        Ok(GossipMessage::Records(records)) => {
                            if let Err(e) = m.merge_records(records, now) {
                                log::debug!("bad pull reply from {}: {e}", o.address);
                            }
                        }
                        Ok(_) => log::debug!("unexpected reply from {}", o.address),
                        Err(e) => log::debug!("bad reply from {}: {e}", o.address),
                    }
                }
                _ => {
                    if shared.membership().contact_failed(o.to, now) {
                        log::info!("declaring {} gone", o.address);
                    }
                }
            }
        }
        if shared.membership().list().version() != before {
            shared.persist_hosts();
        }
    }
}

type Reply = (u16, Vec<(&'static str, String)>, Vec<u8>);

fn text(status: u16, body: impl Into<String>) -> Reply {
    (status, Vec::new(), body.into().into_bytes())
}

fn handle_connection(mut stream: TcpStream, shared: &Shared) -> Result<(), HttpError> {
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    stream.set_nodelay(true)?;
    let (status, headers, body) = match http::read_request(&mut stream) {
        Ok(req) => route(req, shared),
        Err(HttpError::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
        Err(e) => text(400, e.to_string()),
    };
    http::write_response(&mut stream, status, &headers, &body)?;
    Ok(())
}

fn route(req: Request, shared: &Shared) -> Reply {
    if let Some(raw) = req.path.strip_prefix("/chunks/") {
        let Some(name) = http::decode_segment(raw).and_then(|s| s.parse::<ChunkName>().ok()) else {
            return text(400, format!("bad chunk name {raw:?}"));
        };
        return match req.method.as_str() {
            "GET" => get_chunk(&req, &name, shared),
            "PUT" => match shared.store.put(&name, &req.body) {
                Ok(_) => text(201, "stored"),
                Err(e @ NodeError::BadChunk(_)) => text(400, e.to_string()),
                Err(e) => text(500, e.to_string()),
            },
            _ => text(405, "method not allowed"),
        };
    }
    match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/hosts") => text(200, shared.membership().list().to_text()),
        ("POST", "/gossip") => {
            let msg = std::str::from_utf8(&req.body)
                .map_err(|_| MembershipError::Malformed("non-utf8 body".into()))
                .and_then(GossipMessage::decode);
            let now = shared.now();
            match msg.and_then(|m| shared.membership().handle(m, now)) {
                Ok(Some(reply)) => text(200, reply.encode()),
                Ok(None) => text(200, ""),
                Err(e) => text(400, e.to_string()),
            }
        }
        (_, "/hosts") | (_, "/gossip") => text(405, "method not allowed"),
        _ => text(404, "no such resource"),
    }
}

fn get_chunk(req: &Request, name: &ChunkName, shared: &Shared) -> Reply {
    let bytes = match shared.store.get(name) {
        Ok(b) => b,
        Err(e @ NodeError::NotFound(_)) => return text(404, e.to_string()),
        Err(e) => return text(500, e.to_string()),
    };
    let Some(range) = req.header("range") else {
        return (200, Vec::new(), bytes);
    };
    let len = bytes.len() as u64;
    let resolved = ByteRange::parse(range).and_then(|r| r.resolve(len));
    match resolved {
        Some((start, end)) => (
            206,
            vec![("Content-Range", format!("bytes {start}-{end}/{len}"))],
            bytes[start as usize..=end as usize].to_vec(),
        ),
        None => (416, vec![("Content-Range", format!("bytes */{len}"))], Vec::new()),
    }
}
