//! Loopback clusters of real nodes for tests, the CLI and benchmarks.

use std::collections::BTreeSet;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::client::static_host_list;
use crate::membership::{GossipConfig, HostList, HostStatus};
use crate::node::{serve, NodeConfig, NodeError, NodeHandle};
use crate::placement::{collision_free_hosts, placement_plan, ring_hash, HostId};

const PORT_POOL: std::ops::Range<u16> = 20000..60000;
const NAME_ATTEMPTS: usize = 64;

/// Gossip settings fast enough for tests.
pub fn fast_gossip() -> GossipConfig {
    GossipConfig {
        t_min_ms: 50,
        t_max_ms: 150,
        ..GossipConfig::default()
    }
}

fn loopback(port: u16) -> String {
    format!("127.0.0.1:{port}")
}

/// Picks loopback ports so that the `total` chunks of `file` go to `total`
/// distinct hosts, in chunk-index order. The scan through the port pool
/// begins at offset `start`.
pub fn ports_for_file(file: &str, total: usize, start: u16) -> Option<Vec<u16>> {
    let span = PORT_POOL.end - PORT_POOL.start;
    let candidates = (0..span).map(|k| loopback(PORT_POOL.start + start.wrapping_add(k) % span));
    let chosen = collision_free_hosts(file, total, candidates, |a| TcpListener::bind(a).is_ok())?;
    chosen
        .iter()
        .map(|a| a.rsplit_once(':').and_then(|(_, p)| p.parse().ok()))
        .collect()
}

/// A running set of nodes on loopback ports.
pub struct LocalCluster {
    configs: Vec<NodeConfig>,
    nodes: Vec<Option<NodeHandle>>,
    file: String,
}

impl LocalCluster {
    /// Starts `total` nodes (one per chunk of a `total`-chunk file) under
    /// `base`. The file name actually used is `file_prefix` or a numbered
    /// variant of it; see [`LocalCluster::file`].
    pub fn start(base: &Path, file_prefix: &str, total: usize, gossip: GossipConfig) -> Result<LocalCluster, NodeError> {
        let start = (std::process::id() as u64 ^ ring_hash(file_prefix.as_bytes())) as u16;
        let (file, ports) = (0..NAME_ATTEMPTS)
            .map(|k| if k == 0 { file_prefix.to_string() } else { format!("{file_prefix}-{k}") })
            .find_map(|f| ports_for_file(&f, total, start).map(|p| (f, p)))
            .ok_or_else(|| NodeError::Bind {
                address: "127.0.0.1".into(),
                msg: "no collision-free port assignment found".into(),
            })?;
        let seed = loopback(ports[0]);
        let configs: Vec<NodeConfig> = ports
            .iter()
            .enumerate()
            .map(|(i, &port)| NodeConfig {
                seeds: if i == 0 { Vec::new() } else { vec![seed.clone()] },
                gossip,
                rng_seed: i as u64,
                ..NodeConfig::new(&loopback(port), &base.join(format!("node{i}")))
            })
            .collect();
        let mut cluster = LocalCluster {
            nodes: Vec::with_capacity(total),
            configs,
            file,
        };
        for cfg in &cluster.configs {
            cluster.nodes.push(Some(serve(cfg.clone())?));
        }
        Ok(cluster)
    }

    /// File name whose chunk `i` lives on node `i`.
    pub fn file(&self) -> &str {
        &self.file
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn addresses(&self) -> Vec<String> {
        self.configs.iter().map(|c| c.listen.clone()).collect()
    }

    pub fn data_dir(&self, i: usize) -> PathBuf {
        self.configs[i].data_dir.clone()
    }

    /// Every node, joined, regardless of gossip progress.
    pub fn static_hosts(&self) -> HostList {
        static_host_list(&self.addresses())
    }

    pub fn node(&self, i: usize) -> Option<&NodeHandle> {
        self.nodes[i].as_ref()
    }

    pub fn is_running(&self, i: usize) -> bool {
        self.nodes[i].is_some()
    }

    pub fn kill(&mut self, i: usize) {
        if let Some(n) = self.nodes[i].take() {
            n.kill();
        }
    }

    pub fn shutdown_node(&mut self, i: usize) {
        if let Some(n) = self.nodes[i].take() {
            n.shutdown();
        }
    }

    pub fn restart(&mut self, i: usize) -> Result<(), NodeError> {
        if self.nodes[i].is_none() {
            self.nodes[i] = Some(serve(self.configs[i].clone())?);
        }
        Ok(())
    }

    /// Waits until every running node lists exactly the running nodes as
    /// joined and all lists agree.
    pub fn wait_converged(&self, timeout: Duration) -> bool {
        let running: BTreeSet<HostId> = self.nodes.iter().flatten().map(|n| n.id()).collect();
        let deadline = Instant::now() + timeout;
        loop {
            let lists: Vec<HostList> = self.nodes.iter().flatten().map(|n| n.host_list()).collect();
            let agree = lists.windows(2).all(|w| w[0].same_state(&w[1]));
            let right = lists.iter().all(|l| {
                l.records()
                    .filter(|r| r.status == HostStatus::Joined)
                    .map(|r| r.id)
                    .collect::<BTreeSet<_>>()
                    == running
            });
            if agree && right {
                return true;
            }
            if Instant::now() > deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    pub fn shutdown(mut self) {
        for i in 0..self.nodes.len() {
            self.kill(i);
        }
    }

    /// Index of the node that holds chunk `index` of [`LocalCluster::file`].
    pub fn node_of_chunk(&self, index: usize) -> usize {
        let hosts: BTreeSet<HostId> = self.configs.iter().map(|c| HostId::from_address(&c.listen)).collect();
        let plan = placement_plan(&self.file, self.len(), 0, &hosts).expect("hosts non-empty");
        let host = plan.host_of(index);
        self.configs
            .iter()
            .position(|c| HostId::from_address(&c.listen) == host)
            .expect("host is a node")
    }
}

impl Drop for LocalCluster {
    fn drop(&mut self) {
        for n in self.nodes.iter_mut() {
            if let Some(n) = n.take() {
                n.kill();
            }
        }
    }
}
