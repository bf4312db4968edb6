//! Whole-file put and get.
//!
//! A put cuts the file into `n` zero-padded data chunks, encodes `m` coding
//! chunks and uploads each chunk to the host the ring assigns it. A get
//! first fetches the data chunks only; if some are missing it asks the
//! recovery planner for the fewest coding chunks that make the set
//! peel-decodable, fetches those, and decodes.

mod manifest;
mod recovery;
mod transport;

pub use manifest::{FileManifest, UploadOutcome};
pub use recovery::{plan_recovery, EXHAUSTIVE_CANDIDATE_LIMIT};
pub use transport::{HttpTransport, MemoryTransport, TransferError, Transport};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec::{compute_fmax, encode, is_decodable, peel_decode, recoverable, BlockSet, CodecError, TannerGraph};
use crate::config::{ConfigError, ConfigFile};
use crate::membership::{bootstrap, HostList, HostRecord, HostStatus, MembershipError};
use crate::node::http::ByteRange;
use crate::node::{chunk_len, ChunkHeader, HEADER_LEN};
use crate::placement::{placement_plan, validate_file_name, ChunkName, HostId, PlacementError, PlacementPlan};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("not decodable: data chunks {missing:?} cannot be recovered")]
    NotDecodable { missing: Vec<usize> },
    #[error("file {0} not found")]
    NotFound(String),
    #[error("{} chunk uploads failed (chunks {discarded:?}); at most {budget} may fail", discarded.len())]
    TooManyUploadFailures { discarded: Vec<usize>, budget: usize },
    #[error("no seed answered")]
    AllSeedsUnreachable,
    #[error("host list is empty")]
    EmptyHostList,
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
}

fn io_error(path: &Path, e: std::io::Error) -> ClientError {
    ClientError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

pub const CLIENT_KEYS: &[&str] = &[
    "seeds",
    "graph_file",
    "parallelism",
    "bootstrap_quorum",
    "retries",
    "manifest_dir",
    "timeout_ms",
];

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub seeds: Vec<String>,
    /// Concurrent chunk transfers.
    pub parallelism: usize,
    pub bootstrap_quorum: usize,
    /// Extra attempts per failed transfer, each after a host-list refresh.
    pub retries: usize,
    pub manifest_dir: Option<PathBuf>,
    pub timeout: Duration,
    pub graph_file: Option<PathBuf>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            seeds: Vec::new(),
            parallelism: 8,
            bootstrap_quorum: 1,
            retries: 1,
            manifest_dir: None,
            timeout: Duration::from_secs(30),
            graph_file: None,
        }
    }
}

impl ClientConfig {
    pub fn from_config(cfg: &ConfigFile) -> Result<ClientConfig, ConfigError> {
        cfg.check_keys(CLIENT_KEYS, &[])?;
        let d = ClientConfig::default();
        let seeds = cfg.list("seeds");
        if seeds.is_empty() {
            return Err(ConfigError::Missing("seeds".into()));
        }
        let parallelism: usize = cfg.parse_or("parallelism", d.parallelism)?;
        if parallelism == 0 {
            return Err(ConfigError::Invalid {
                key: "parallelism".into(),
                value: "0".into(),
            });
        }
        Ok(ClientConfig {
            seeds,
            parallelism,
            bootstrap_quorum: cfg.parse_or("bootstrap_quorum", d.bootstrap_quorum)?,
            retries: cfg.parse_or("retries", d.retries)?,
            manifest_dir: cfg.get("manifest_dir").map(PathBuf::from),
            timeout: Duration::from_millis(cfg.parse_or("timeout_ms", d.timeout.as_millis() as u64)?),
            graph_file: cfg.get("graph_file").map(PathBuf::from),
        })
    }
}

/// What a get did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GetStats {
    pub file_size: u64,
    /// Chunk indices used for the read, in fetch order.
    pub fetched: Vec<usize>,
    /// Block-sized XORs spent on decoding.
    pub xors: usize,
    pub transfer_failures: usize,
}

/// Runs `f` over `items` on up to `width` threads, keeping order.
fn parallel_map<I: Sync, R: Send>(items: &[I], width: usize, f: impl Fn(&I) -> R + Sync) -> Vec<R> {
    if width <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..width.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|s| s.into_inner().unwrap().expect("every slot filled")).collect()
}

pub struct Client<T: Transport> {
    transport: T,
    cfg: ClientConfig,
    graph: TannerGraph,
    f_max_blocks: usize,
    hosts: HostList,
}

impl<T: Transport> Client<T> {
    /// A client with a given host list (no bootstrap).
    pub fn with_hosts(transport: T, graph: TannerGraph, cfg: ClientConfig, hosts: HostList) -> Result<Self, ClientError> {
        let f_max_blocks = compute_fmax(&graph)?.f_max_blocks;
        Ok(Client {
            transport,
            cfg,
            graph,
            f_max_blocks,
            hosts,
        })
    }

    /// Bootstraps the host list from the configured seeds.
    pub fn connect(transport: T, graph: TannerGraph, cfg: ClientConfig) -> Result<Self, ClientError> {
        let hosts = bootstrap(&cfg.seeds, None, cfg.bootstrap_quorum, |s| {
            transport.hosts(s).map_err(|e| e.to_string())
        })
        .map_err(|e| match e {
            MembershipError::AllSeedsUnreachable => ClientError::AllSeedsUnreachable,
            MembershipError::Malformed(m) => ClientError::Io {
                path: "host list".into(),
                msg: m,
            },
        })?;
        Client::with_hosts(transport, graph, cfg, hosts)
    }

    pub fn hosts(&self) -> &HostList {
        &self.hosts
    }

    pub fn graph(&self) -> &TannerGraph {
        &self.graph
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn into_transport(self) -> T {
        self.transport
    }

    pub fn f_max_blocks(&self) -> usize {
        self.f_max_blocks
    }

    /// Chunks that may be lost while every read stays guaranteed.
    pub fn loss_budget(&self) -> usize {
        self.graph.total_blocks() - self.f_max_blocks
    }

    /// Asks the seeds, then the known live hosts, for a fresher list.
    pub fn refresh_hosts(&mut self) -> bool {
        let known: Vec<String> = self
            .hosts
            .records()
            .filter(|r| r.status == HostStatus::Joined)
            .map(|r| r.address.clone())
            .collect();
        for addr in self.cfg.seeds.iter().chain(&known) {
            if let Ok(list) = self.transport.hosts(addr) {
                self.hosts.merge(&list);
                return true;
            }
        }
        false
    }

    fn plan(&self, file: &str) -> Result<PlacementPlan, ClientError> {
        let alive = self.hosts.alive();
        if alive.is_empty() {
            return Err(ClientError::EmptyHostList);
        }
        Ok(placement_plan(file, self.graph.n(), self.graph.m(), &alive)?)
    }

    fn address(&self, host: HostId) -> String {
        self.hosts.address_of(host).unwrap_or_default().to_string()
    }

    pub fn put_file(&mut self, path: &Path, file: &str) -> Result<FileManifest, ClientError> {
        let data = std::fs::read(path).map_err(|e| io_error(path, e))?;
        self.put_bytes(file, &data)
    }

    pub fn put_bytes(&mut self, file: &str, data: &[u8]) -> Result<FileManifest, ClientError> {
        validate_file_name(file)?;
        let (n, m) = (self.graph.n(), self.graph.m());
        let len = chunk_len(data.len() as u64, n) as usize;
        let blocks: Vec<Vec<u8>> = (0..n)
            .map(|i| {
                let start = (i * len).min(data.len());
                let end = ((i + 1) * len).min(data.len());
                let mut b = data[start..end].to_vec();
                b.resize(len, 0);
                b
            })
            .collect();
        let coding = encode(&self.graph, &blocks)?;
        let header = ChunkHeader {
            file_size: data.len() as u64,
            n: n as u32,
            m: m as u32,
            index: 0,
            graph_fp: self.graph.fingerprint(),
        };
        let plan = self.plan(file)?;
        let jobs: Vec<(usize, &[u8])> = blocks.iter().chain(&coding).map(Vec::as_slice).enumerate().collect();
        let results = parallel_map(&jobs, self.cfg.parallelism, |&(i, payload)| {
            let mut bytes = Vec::with_capacity(HEADER_LEN + payload.len());
            bytes.extend_from_slice(&header.with_index(i).to_bytes());
            bytes.extend_from_slice(payload);
            let (name, host) = &plan.entries[i];
            self.transport.put_chunk(&self.address(*host), name, &bytes)
        });
        let chunks: Vec<(UploadOutcome, HostId)> = results
            .iter()
            .zip(&plan.entries)
            .map(|(r, (name, host))| match r {
                Ok(()) => (UploadOutcome::Stored, *host),
                Err(e) => {
                    log::warn!("upload of {name} to {host} failed: {e}; discarding");
                    (UploadOutcome::Discarded, *host)
                }
            })
            .collect();
        let manifest = FileManifest {
            file: file.to_string(),
            file_size: data.len() as u64,
            n,
            m,
            graph_fp: header.graph_fp,
            chunks,
        };
        if let Some(dir) = &self.cfg.manifest_dir {
            manifest.write_to(dir).map_err(|e| io_error(dir, e))?;
        }
        let discarded = manifest.discarded();
        if discarded.len() > self.loss_budget() {
            return Err(ClientError::TooManyUploadFailures {
                discarded,
                budget: self.loss_budget(),
            });
        }
        Ok(manifest)
    }

    pub fn get_file(&mut self, file: &str, out: &Path) -> Result<GetStats, ClientError> {
        let (data, stats) = self.get_bytes(file)?;
        let tmp = out.with_extension("partial");
        std::fs::write(&tmp, &data)
            .and_then(|_| std::fs::rename(&tmp, out))
            .map_err(|e| io_error(out, e))?;
        Ok(stats)
    }

    /// Checks a fetched chunk against the graph; returns its header.
    fn check_chunk(&self, index: usize, bytes: &[u8]) -> Option<ChunkHeader> {
        let h = ChunkHeader::validate_chunk(bytes).ok()?;
        let fits = h.index as usize == index
            && h.n as usize == self.graph.n()
            && h.m as usize == self.graph.m()
            && h.graph_fp == self.graph.fingerprint();
        fits.then_some(h)
    }

    /// Fetches `indices`, retrying failures after a host-list refresh and
    /// resuming cut transfers with a ranged read.
    fn fetch(&mut self, file: &str, indices: &[usize], state: &mut FetchState) -> Result<(), ClientError> {
        let plan = self.plan(file)?;
        let jobs: Vec<(usize, HostId, Vec<u8>)> = indices.iter().map(|&i| (i, plan.host_of(i), Vec::new())).collect();
        let mut pending = self.run_fetches(&plan, jobs, state);
        for _ in 0..self.cfg.retries {
            if pending.is_empty() {
                break;
            }
            if !state.refreshed {
                state.refreshed = self.refresh_hosts();
            }
            let plan = self.plan(file)?;
            let retry: Vec<(usize, HostId, Vec<u8>)> = pending
                .into_iter()
                .filter_map(|(i, old_host, err)| {
                    let host = plan.host_of(i);
                    match err {
                        TransferError::NotFound if host == old_host => {
                            state.failed.insert(i);
                            None
                        }
                        TransferError::Truncated { received } => Some((i, host, received)),
                        _ => Some((i, host, Vec::new())),
                    }
                })
                .collect();
            pending = self.run_fetches(&plan, retry, state);
        }
        for (i, _, _) in pending {
            state.failed.insert(i);
        }
        Ok(())
    }

    fn run_fetches(
        &self,
        plan: &PlacementPlan,
        jobs: Vec<(usize, HostId, Vec<u8>)>,
        state: &mut FetchState,
    ) -> Vec<(usize, HostId, TransferError)> {
        let results = parallel_map(&jobs, self.cfg.parallelism, |(i, host, prefix)| {
            let addr = self.address(*host);
            let name = &plan.entries[*i].0;
            if prefix.is_empty() {
                self.transport.get_chunk(&addr, name, None)
            } else {
                let range = ByteRange {
                    start: prefix.len() as u64,
                    end: None,
                };
                self.transport.get_chunk(&addr, name, Some(range)).map(|rest| [prefix.as_slice(), &rest].concat())
            }
        });
        let mut failures = Vec::new();
        for ((i, host, prefix), result) in jobs.into_iter().zip(results) {
            match result {
                Ok(bytes) => match self.check_chunk(i, &bytes) {
                    Some(h) => {
                        state.fetched.push(i);
                        state.chunks.insert(i, (h, bytes));
                    }
                    None => {
                        log::warn!("chunk {i} from {host} is malformed or belongs to another file");
                        state.saw_chunk = true;
                        state.failed.insert(i);
                    }
                },
                Err(e) => {
                    state.transfer_failures += 1;
                    if e != TransferError::NotFound {
                        state.only_not_found = false;
                    }
                    // A cut read keeps what arrived so far for the resume.
                    let e = match e {
                        TransferError::Truncated { received } => TransferError::Truncated {
                            received: [prefix.as_slice(), &received].concat(),
                        },
                        other if !prefix.is_empty() => {
                            log::debug!("resume of chunk {i} failed: {other}");
                            other
                        }
                        other => other,
                    };
                    failures.push((i, host, e));
                }
            }
        }
        failures
    }

    /// Reads a whole file.
    pub fn get_bytes(&mut self, file: &str) -> Result<(Vec<u8>, GetStats), ClientError> {
        validate_file_name(file)?;
        let n = self.graph.n();
        let total = self.graph.total_blocks();
        let mut state = FetchState {
            only_not_found: true,
            ..FetchState::default()
        };
        let data_indices: Vec<usize> = (0..n).collect();
        self.fetch(file, &data_indices, &mut state)?;
        let (have, file_size) = loop {
            let (have, file_size) = state.consistent();
            if is_decodable(&self.graph, have) {
                break (have, file_size);
            }
            let mut unavailable = have;
            for i in state.failed.iter().chain(state.chunks.keys().copied()) {
                unavailable.insert(i);
            }
            let available = unavailable.complement(total);
            match plan_recovery(&self.graph, have, available) {
                Some(extra) if !extra.is_empty() => {
                    log::debug!("fetching coding chunks {extra:?} of {file}");
                    self.fetch(file, &extra, &mut state)?;
                }
                _ => {
                    if state.chunks.is_empty() && !state.saw_chunk && state.only_not_found {
                        return Err(ClientError::NotFound(file.to_string()));
                    }
                    let known = recoverable(&self.graph, have);
                    return Err(ClientError::NotDecodable {
                        missing: (0..n).filter(|&i| !known.contains(i)).collect(),
                    });
                }
            }
        };

        let mut payloads: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
        for i in have.iter() {
            let (_, mut bytes) = state.chunks.remove(&i).expect("have is fetched");
            bytes.drain(..HEADER_LEN);
            payloads.insert(i, bytes);
        }
        let (blocks, xors) = if (0..n).all(|i| payloads.contains_key(&i)) {
            ((0..n).map(|i| payloads.remove(&i).expect("checked")).collect::<Vec<_>>(), 0)
        } else {
            let out = peel_decode(&self.graph, payloads)?;
            (out.data, out.xors)
        };
        let mut data = Vec::with_capacity(file_size as usize);
        for b in &blocks {
            let room = file_size as usize - data.len();
            data.extend_from_slice(&b[..b.len().min(room)]);
        }
        let stats = GetStats {
            file_size,
            fetched: state.fetched.into_iter().filter(|i| have.contains(*i)).collect(),
            xors,
            transfer_failures: state.transfer_failures,
        };
        Ok((data, stats))
    }
}

#[derive(Default)]
struct FetchState {
    chunks: BTreeMap<usize, (ChunkHeader, Vec<u8>)>,
    fetched: Vec<usize>,
    failed: BlockSet,
    refreshed: bool,
    saw_chunk: bool,
    only_not_found: bool,
    transfer_failures: usize,
}

impl FetchState {
    /// Chunks agreeing with the majority header, and that header's size.
    /// Ties go to the smaller file size.
    fn consistent(&self) -> (BlockSet, u64) {
        let mut votes: BTreeMap<u64, usize> = BTreeMap::new();
        for (h, _) in self.chunks.values() {
            *votes.entry(h.file_size).or_default() += 1;
        }
        let Some((&size, _)) = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else {
            return (BlockSet::empty(), 0);
        };
        let mut have = BlockSet::empty();
        for (&i, (h, _)) in &self.chunks {
            if h.file_size == size {
                have.insert(i);
            }
        }
        (have, size)
    }
}

/// Host list of `addresses`, all joined at seq 1.
pub fn static_host_list<S: AsRef<str>>(addresses: &[S]) -> HostList {
    HostList::from_records(addresses.iter().map(|a| HostRecord::new(a.as_ref(), HostStatus::Joined, 1)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub file_size: u64,
    pub missing: usize,
    pub trials: usize,
    pub mean_secs: f64,
    /// Decimal megabytes (10^6 bytes) per second.
    pub rate_mb_s: f64,
}

/// Times in-memory end-to-end reads with `missing` data chunks withheld,
/// a fresh random choice of withheld chunks per trial.
pub fn decode_benchmark(
    file_size: usize,
    graph: &TannerGraph,
    missing: usize,
    trials: usize,
    seed: u64,
) -> Result<BenchReport, ClientError> {
    if trials == 0 {
        return Err(CodecError::InvalidParameter("trials must be at least 1".into()).into());
    }
    let hosts = static_host_list(&["bench:1"]);
    let transport = MemoryTransport::new(hosts.clone());
    let cfg = ClientConfig::default();
    let mut client = Client::with_hosts(transport, graph.clone(), cfg, hosts)?;
    if missing > client.loss_budget().min(graph.n()) {
        return Err(CodecError::InvalidParameter(format!(
            "missing = {missing} exceeds the guaranteed budget of {}",
            client.loss_budget().min(graph.n())
        ))
        .into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0u8; file_size];
    rng.fill_bytes(&mut data);
    client.put_bytes("bench", &data)?;

    let mut elapsed = Duration::ZERO;
    let mut indices: Vec<usize> = (0..graph.n()).collect();
    for trial in 0..trials {
        indices.shuffle(&mut rng);
        let names: Vec<ChunkName> = indices[..missing].iter().map(|&i| ChunkName::new("bench", i)).collect::<Result<_, _>>()?;
        let saved: Vec<_> = names.iter().map(|c| client.transport().chunk("bench:1", c).expect("stored")).collect();
        for c in &names {
            client.transport().remove_chunk("bench:1", c);
        }
        let start = Instant::now();
        let (out, stats) = client.get_bytes("bench")?;
        elapsed += start.elapsed();
        if trial == 0 && (out != data || (missing == 0 && stats.xors != 0)) {
            return Err(CodecError::InvalidParameter("benchmark read returned wrong bytes".into()).into());
        }
        for (c, bytes) in names.iter().zip(saved) {
            client.transport().insert_chunk("bench:1", c, bytes.as_ref().clone());
        }
    }
    let mean_secs = elapsed.as_secs_f64() / trials as f64;
    Ok(BenchReport {
        file_size: file_size as u64,
        missing,
        trials,
        mean_secs,
        rate_mb_s: file_size as f64 / 1e6 / mean_secs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::default_graph;

    /// 40 in-memory hosts and a file name whose 14 chunks land on 14
    /// distinct hosts.
    fn setup() -> (Client<MemoryTransport>, String) {
        let addresses: Vec<String> = (0..40).map(|i| format!("h{i}:1")).collect();
        let hosts = static_host_list(&addresses);
        let alive = hosts.alive();
        let file = (0..)
            .map(|k| format!("file{k}"))
            .find(|f| !placement_plan(f, 8, 6, &alive).unwrap().collisions)
            .unwrap();
        let cfg = ClientConfig {
            seeds: vec![addresses[0].clone()],
            parallelism: 4,
            ..ClientConfig::default()
        };
        let client = Client::with_hosts(MemoryTransport::new(hosts.clone()), default_graph(), cfg, hosts).unwrap();
        (client, file)
    }

    fn host_addr(client: &Client<MemoryTransport>, file: &str, index: usize) -> String {
        client.address(client.plan(file).unwrap().host_of(index))
    }

    fn sample(len: usize, seed: u64) -> Vec<u8> {
        let mut v = vec![0u8; len];
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut v);
        v
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<usize> = (0..100).collect();
        assert_eq!(parallel_map(&items, 7, |x| x * 2), items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert_eq!(parallel_map(&items[..0], 7, |x| *x), Vec::<usize>::new());
    }

    #[test]
    fn round_trip_at_padding_edges() {
        let (mut client, file) = setup();
        let l = 5usize;
        for size in [0, 1, l - 1, l, l + 1, 8 * l - 1, 8 * l, 8 * l + 1, 1000] {
            let data = sample(size, size as u64);
            let manifest = client.put_bytes(&file, &data).unwrap();
            assert_eq!(manifest.stored(), 14);
            let (out, stats) = client.get_bytes(&file).unwrap();
            assert_eq!(out, data, "size {size}");
            assert_eq!(stats.xors, 0);
            assert_eq!(stats.fetched.len(), 8);
        }
    }

    #[test]
    fn deleted_chunks_on_a_live_host_end_the_read() {
        let (mut client, file) = setup();
        let data = sample(300, 4);
        client.put_bytes(&file, &data).unwrap();
        let graph = default_graph();
        for del in 0u64..1 << 14 {
            let names: Vec<ChunkName> = (0..14).filter(|i| del >> i & 1 == 1).map(|i| ChunkName::new(&file, i).unwrap()).collect();
            if names.len() > 5 {
                continue;
            }
            let saved: Vec<_> = names
                .iter()
                .map(|c| {
                    let host = host_addr(&client, &file, c.index());
                    let bytes = client.transport().chunk(&host, c).unwrap();
                    client.transport().remove_chunk(&host, c);
                    (host, bytes)
                })
                .collect();
            let decodable = is_decodable(&graph, BlockSet::from_mask(!del & ((1 << 14) - 1)));
            match client.get_bytes(&file) {
                Ok((out, _)) => assert!(decodable && out == data, "{del:#x}"),
                Err(e) => assert!(!decodable && matches!(e, ClientError::NotDecodable { .. }), "{del:#x}: {e}"),
            }
            for (c, (host, bytes)) in names.iter().zip(saved) {
                client.transport().insert_chunk(&host, c, bytes.as_ref().clone());
            }
        }
    }

    #[test]
    fn three_failed_uploads_tolerated_four_not() {
        let (mut client, file) = setup();
        let data = sample(777, 1);
        for i in [0, 5, 12] {
            client.transport().set_down(&host_addr(&client, &file, i), true);
        }
        let manifest = client.put_bytes(&file, &data).unwrap();
        assert_eq!(manifest.discarded(), vec![0, 5, 12]);
        client.transport().set_all_up();
        assert_eq!(client.get_bytes(&file).unwrap().0, data);

        client.transport().set_down(&host_addr(&client, &file, 3), true);
        for i in [0, 5, 12] {
            client.transport().set_down(&host_addr(&client, &file, i), true);
        }
        match client.put_bytes(&file, &data) {
            Err(ClientError::TooManyUploadFailures { discarded, budget }) => {
                assert_eq!(discarded, vec![0, 3, 5, 12]);
                assert_eq!(budget, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_written_even_on_failure() {
        let (mut client, file) = setup();
        let dir = tempfile::tempdir().unwrap();
        client.cfg.manifest_dir = Some(dir.path().to_path_buf());
        for i in 0..4 {
            client.transport().set_down(&host_addr(&client, &file, i), true);
        }
        assert!(client.put_bytes(&file, b"abc").is_err());
        let text = std::fs::read_to_string(FileManifest::path_in(dir.path(), &file)).unwrap();
        let manifest: FileManifest = text.parse().unwrap();
        assert_eq!(manifest.discarded(), vec![0, 1, 2, 3]);
        assert_eq!(manifest.file_size, 3);
    }

    #[test]
    fn any_three_lost_chunks_recover() {
        let (mut client, file) = setup();
        let data = sample(4000, 2);
        client.put_bytes(&file, &data).unwrap();
        for a in 0..14 {
            for b in a + 1..14 {
                for c in b + 1..14 {
                    client.transport().set_all_up();
                    for i in [a, b, c] {
                        client.transport().set_down(&host_addr(&client, &file, i), true);
                    }
                    let (out, _) = client.get_bytes(&file).unwrap();
                    assert_eq!(out, data, "lost {a} {b} {c}");
                }
            }
        }
    }

    #[test]
    fn witness_loss_is_not_decodable() {
        let (mut client, file) = setup();
        client.put_bytes(&file, &sample(900, 3)).unwrap();
        let witness = compute_fmax(client.graph()).unwrap().witness;
        assert_eq!(witness.len(), 4);
        for i in witness.iter() {
            client.transport().set_down(&host_addr(&client, &file, i), true);
        }
        match client.get_bytes(&file) {
            Err(ClientError::NotDecodable { missing }) => {
                assert!(!missing.is_empty());
                assert!(missing.iter().all(|&i| witness.contains(i)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_file_is_not_found() {
        let (mut client, _) = setup();
        assert!(matches!(client.get_bytes("never-stored"), Err(ClientError::NotFound(_))));
        assert!(matches!(client.get_bytes("bad/name"), Err(ClientError::Placement(_))));
    }

    #[test]
    fn unreachable_everything_is_not_decodable() {
        let (mut client, file) = setup();
        client.put_bytes(&file, b"x").unwrap();
        for r in client.hosts().records().cloned().collect::<Vec<_>>() {
            client.transport().set_down(&r.address, true);
        }
        assert!(matches!(client.get_bytes(&file), Err(ClientError::NotDecodable { .. })));
    }

    #[test]
    fn cut_transfer_resumes_with_range() {
        let (mut client, file) = setup();
        let data = sample(10_000, 4);
        client.put_bytes(&file, &data).unwrap();
        let name = ChunkName::new(&file, 2).unwrap();
        client.transport().cut_next_read(&name, 100);
        let (out, stats) = client.get_bytes(&file).unwrap();
        assert_eq!(out, data);
        assert_eq!(stats.xors, 0);
        assert_eq!(stats.transfer_failures, 1);
    }

    #[test]
    fn foreign_chunk_counts_as_missing() {
        let (mut client, file) = setup();
        let data = sample(800, 5);
        client.put_bytes(&file, &data).unwrap();
        // Replace chunk 1 with a chunk of a different-size file.
        let h = ChunkHeader { file_size: 8, n: 8, m: 6, index: 1, graph_fp: client.graph().fingerprint() };
        let mut bogus = h.to_bytes().to_vec();
        bogus.push(0);
        let addr = host_addr(&client, &file, 1);
        client.transport().insert_chunk(&addr, &ChunkName::new(&file, 1).unwrap(), bogus);
        let (out, stats) = client.get_bytes(&file).unwrap();
        assert_eq!(out, data);
        assert!(stats.xors > 0);
        assert!(!stats.fetched.contains(&1));
    }

    #[test]
    fn stale_list_recovers_through_coding_chunks() {
        let (mut client, file) = setup();
        let data = sample(3000, 6);
        client.put_bytes(&file, &data).unwrap();
        // Every list forgets the host of chunk 0: the read goes to its
        // successor, misses, and a refresh does not help.
        let lost = client.plan(&file).unwrap().host_of(0);
        let stale = HostList::from_records(client.hosts().records().filter(|r| r.id != lost).cloned());
        client.transport().set_host_list(stale.clone());
        client.hosts = stale;
        let (out, stats) = client.get_bytes(&file).unwrap();
        assert_eq!(out, data);
        assert!(stats.fetched.iter().any(|&i| i >= 8));
    }

    #[test]
    fn refresh_finds_moved_chunk() {
        let (mut client, file) = setup();
        let data = sample(3000, 7);
        client.put_bytes(&file, &data).unwrap();
        let full = client.hosts().clone();
        let lost = client.plan(&file).unwrap().host_of(0);
        client.hosts = HostList::from_records(full.records().filter(|r| r.id != lost).cloned());
        let (out, stats) = client.get_bytes(&file).unwrap();
        assert_eq!(out, data);
        assert_eq!(stats.xors, 0, "the seed's list pointed back at the right host");
    }

    #[test]
    fn benchmark_runs_and_checks_budget() {
        let g = default_graph();
        let r = decode_benchmark(80_000, &g, 2, 3, 1).unwrap();
        assert!(r.rate_mb_s > 0.0);
        assert_eq!(r.trials, 3);
        assert!(decode_benchmark(1000, &g, 4, 1, 1).is_err());
        assert!(decode_benchmark(1000, &g, 0, 0, 1).is_err());
    }

    #[test]
    fn client_config_keys() {
        let cfg: ConfigFile = "seeds = a:1, b:2\nparallelism = 3\ntimeout_ms = 500\n".parse().unwrap();
        let c = ClientConfig::from_config(&cfg).unwrap();
        assert_eq!(c.seeds, vec!["a:1", "b:2"]);
        assert_eq!(c.parallelism, 3);
        assert_eq!(c.timeout, Duration::from_millis(500));
        assert!(ClientConfig::from_config(&"parallelism = 3".parse().unwrap()).is_err());
        assert!(ClientConfig::from_config(&"seeds = a:1\nbogus = 1".parse().unwrap()).is_err());
    }
}
