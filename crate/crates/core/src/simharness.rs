//! Deterministic discrete-event simulation of a cluster.
//!
//! The real [`Membership`] state machine and the real client run over a
//! virtual network with per-message loss and uniform latency. One logical
//! clock orders all events; every node draws from its own seeded streams,
//! so identical configs give byte-identical reports.
//!
//! A *round* is one `t_max` window: within it every running node gossips at
//! least once. Convergence is checked at round boundaries after each batch
//! of scripted events.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::availability::exact_graph_availability;
use crate::client::{static_host_list, Client, ClientConfig, MemoryTransport};
use crate::codec::{default_graph, TannerGraph};
use crate::config::{ConfigError, ConfigFile};
use crate::membership::{GossipConfig, GossipMessage, HostList, HostRecord, HostStatus, Membership};
use crate::placement::{collision_free_hosts, placement_plan, HostId};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid simulation: {0}")]
    Invalid(String),
    #[error("no convergence within {cap} rounds")]
    NoConvergence { cap: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Join(usize),
    Leave(usize),
    Crash(usize),
    /// Groups that can only talk among themselves. Unlisted nodes form one
    /// more group. An empty list heals the network.
    Partition(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub t_ms: u64,
    pub kind: EventKind,
}

impl SimEvent {
    /// `t=<ms> <join|leave|crash> <node>` or `t=<ms> partition [<group> ...]`
    /// where a group is a comma list of node indices and `a-b` ranges.
    pub fn parse(line: &str) -> Result<SimEvent, String> {
        let mut words = line.split_whitespace();
        let t_ms = words
            .next()
            .and_then(|w| w.strip_prefix("t="))
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| format!("expected t=<ms> in {line:?}"))?;
        let verb = words.next().ok_or_else(|| format!("missing event in {line:?}"))?;
        let args: Vec<&str> = words.collect();
        let node = || -> Result<usize, String> {
            match args.as_slice() {
                [i] => i.parse().map_err(|_| format!("bad node index {i:?}")),
                _ => Err(format!("{verb} takes one node index")),
            }
        };
        let kind = match verb {
            "join" => EventKind::Join(node()?),
            "leave" => EventKind::Leave(node()?),
            "crash" => EventKind::Crash(node()?),
            "partition" => EventKind::Partition(args.iter().map(|g| parse_group(g)).collect::<Result<_, _>>()?),
            other => return Err(format!("unknown event {other:?}")),
        };
        Ok(SimEvent { t_ms, kind })
    }
}

fn parse_group(text: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in text.split(',').filter(|p| !p.is_empty()) {
        let bad = || format!("bad node group {text:?}");
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

pub const SIM_KEYS: &[&str] = &[
    "nodes",
    "seed",
    "initial",
    "delivery",
    "latency_min_ms",
    "latency_max_ms",
    "round_cap",
    "files",
    "file_size",
    "trials",
    "mu",
    "graph_file",
    "gossip.fanout",
    "gossip.decay",
    "gossip.t_min_ms",
    "gossip.t_max_ms",
    "gossip.miss_threshold",
];

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub nodes: usize,
    pub seed: u64,
    /// Nodes `0..initial` run from t = 0 with agreed lists; the rest wait
    /// for a `join` event.
    pub initial: usize,
    /// Per-message delivery probability.
    pub delivery: f64,
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
    pub gossip: GossipConfig,
    /// Rounds allowed for each quiescent stretch before giving up.
    pub round_cap: usize,
    pub events: Vec<SimEvent>,
    /// Files put at t = 0 and read back after the run.
    pub files: usize,
    pub file_size: usize,
    /// i.i.d. availability trials on file 0 (0 = none).
    pub trials: usize,
    pub mu: f64,
    pub graph: TannerGraph,
}

impl SimConfig {
    pub fn new(nodes: usize, seed: u64) -> SimConfig {
        SimConfig {
            nodes,
            seed,
            initial: nodes,
            delivery: 1.0,
            latency_min_ms: 5,
            latency_max_ms: 50,
            gossip: GossipConfig::default(),
            round_cap: 200,
            events: Vec::new(),
            files: 0,
            file_size: 4096,
            trials: 0,
            mu: 0.95,
            graph: default_graph(),
        }
    }

    pub fn from_config(cfg: &ConfigFile, base: &Path) -> Result<SimConfig, SimError> {
        cfg.check_keys(SIM_KEYS, &["events"])?;
        let nodes: usize = cfg.require("nodes")?.parse().map_err(|_| ConfigError::Invalid {
            key: "nodes".into(),
            value: cfg.get("nodes").unwrap_or_default().into(),
        })?;
        let d = SimConfig::new(nodes, 0);
        let g = d.gossip;
        let graph = match cfg.get("graph_file") {
            None => d.graph.clone(),
            Some(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Io {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                })?;
                text.parse().map_err(|e| ConfigError::Invalid {
                    key: "graph_file".into(),
                    value: format!("{}: {e}", path.display()),
                })?
            }
        };
        let events = cfg
            .section("events")
            .iter()
            .map(|(line, text)| SimEvent::parse(text).map_err(|msg| ConfigError::Syntax { line: *line, msg }))
            .collect::<Result<Vec<_>, _>>()?;
        let sim = SimConfig {
            nodes,
            seed: cfg.parse_or("seed", d.seed)?,
            initial: cfg.parse_or("initial", nodes)?,
            delivery: cfg.parse_or("delivery", d.delivery)?,
            latency_min_ms: cfg.parse_or("latency_min_ms", d.latency_min_ms)?,
            latency_max_ms: cfg.parse_or("latency_max_ms", d.latency_max_ms)?,
            gossip: GossipConfig {
                fanout: cfg.parse_or("gossip.fanout", g.fanout)?,
                decay: cfg.parse_or("gossip.decay", g.decay)?,
                t_min_ms: cfg.parse_or("gossip.t_min_ms", g.t_min_ms)?,
                t_max_ms: cfg.parse_or("gossip.t_max_ms", g.t_max_ms)?,
                miss_threshold: cfg.parse_or("gossip.miss_threshold", g.miss_threshold)?,
            },
            round_cap: cfg.parse_or("round_cap", d.round_cap)?,
            events,
            files: cfg.parse_or("files", d.files)?,
            file_size: cfg.parse_or("file_size", d.file_size)?,
            trials: cfg.parse_or("trials", d.trials)?,
            mu: cfg.parse_or("mu", d.mu)?,
            graph,
        };
        sim.validate()?;
        Ok(sim)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if self.nodes == 0 {
            return bad("nodes must be at least 1".into());
        }
        if self.initial > self.nodes {
            return bad(format!("initial = {} exceeds nodes = {}", self.initial, self.nodes));
        }
        if !(0.0..=1.0).contains(&self.delivery) {
            return bad(format!("delivery = {} is not a probability", self.delivery));
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return bad(format!("mu = {} is not a probability", self.mu));
        }
        if self.latency_min_ms > self.latency_max_ms {
            return bad("latency_min_ms exceeds latency_max_ms".into());
        }
        self.gossip.validate().map_err(SimError::Invalid)?;
        if self.round_cap == 0 {
            return bad("round_cap must be at least 1".into());
        }
        if self.events.windows(2).any(|w| w[0].t_ms > w[1].t_ms) {
            return bad("event times must be non-decreasing".into());
        }
        for e in &self.events {
            let nodes: Vec<usize> = match &e.kind {
                EventKind::Join(i) | EventKind::Leave(i) | EventKind::Crash(i) => vec![*i],
                EventKind::Partition(groups) => groups.concat(),
            };
            if let Some(i) = nodes.into_iter().find(|&i| i >= self.nodes) {
                return bad(format!("event at t={} names node {i} of {}", e.t_ms, self.nodes));
            }
        }
        Ok(())
    }

    fn round_ms(&self) -> u64 {
        self.gossip.t_max_ms
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochResult {
    pub start_ms: u64,
    /// Rounds after `start_ms` until convergence; `None` if the next event
    /// or the cap came first.
    pub rounds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GetOutcome {
    pub file: String,
    pub ok: bool,
    pub fetched: usize,
    pub xors: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvailabilityResult {
    pub trials: usize,
    pub successes: usize,
    pub mu: f64,
    /// Exact availability of the graph under the same model.
    pub oracle: f64,
    /// Whether file 0's chunks sit on distinct hosts, as the oracle assumes.
    pub distinct_hosts: bool,
}

impl AvailabilityResult {
    pub fn fraction(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }

    /// Standard error of the fraction under the oracle's probability.
    pub fn std_err(&self) -> f64 {
        (self.oracle * (1.0 - self.oracle) / self.trials as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MessageCounts {
    pub push: u64,
    pub pull: u64,
    pub replies: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub nodes: usize,
    pub seed: u64,
    pub round_ms: u64,
    pub round_cap: usize,
    pub epochs: Vec<EpochResult>,
    pub gets: Vec<GetOutcome>,
    pub availability: Option<AvailabilityResult>,
    pub messages: MessageCounts,
    pub end_ms: u64,
}

impl SimReport {
    /// Rounds to converge after the last event, `None` at the cap.
    pub fn convergence(&self) -> Option<usize> {
        self.epochs.last().and_then(|e| e.rounds)
    }

    pub fn convergence_csv(&self) -> String {
        let mut out = String::from("epoch,start_ms,rounds\n");
        for (i, e) in self.epochs.iter().enumerate() {
            let rounds = e.rounds.map_or("none".to_string(), |r| r.to_string());
            let _ = writeln!(out, "{i},{},{rounds}", e.start_ms);
        }
        out
    }

    pub fn gets_csv(&self) -> String {
        let mut out = String::from("file,ok,fetched,xors,error\n");
        for g in &self.gets {
            let _ = writeln!(out, "{},{},{},{},{}", g.file, g.ok, g.fetched, g.xors, g.error.as_deref().unwrap_or(""));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "nodes: {}", self.nodes);
        let _ = writeln!(out, "seed: {}", self.seed);
        let _ = writeln!(out, "round_ms: {}", self.round_ms);
        let _ = writeln!(out, "simulated_ms: {}", self.end_ms);
        match self.convergence() {
            Some(r) => {
                let _ = writeln!(out, "convergence_rounds: {r}");
            }
            None => {
                let _ = writeln!(out, "convergence_rounds: none (cap {})", self.round_cap);
            }
        }
        let m = self.messages;
        let _ = writeln!(out, "messages: push={} pull={} replies={} dropped={}", m.push, m.pull, m.replies, m.dropped);
        let ok = self.gets.iter().filter(|g| g.ok).count();
        let _ = writeln!(out, "gets: {ok}/{} succeeded", self.gets.len());
        if let Some(a) = &self.availability {
            let _ = writeln!(out, "availability_trials: {}", a.trials);
            let _ = writeln!(out, "availability_mu: {}", a.mu);
            let _ = writeln!(out, "availability_measured: {:.6}", a.fraction());
            let _ = writeln!(out, "availability_exact: {:.6}", a.oracle);
            let _ = writeln!(out, "availability_std_err: {:.6}", a.std_err());
            let _ = writeln!(out, "distinct_hosts: {}", a.distinct_hosts);
        }
        out
    }

    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("convergence.csv"), self.convergence_csv())?;
        std::fs::write(dir.join("gets.csv"), self.gets_csv())?;
        std::fs::write(dir.join("summary.txt"), self.summary())
    }
}

/// File names used by the workload; file 0 is the one node addresses are
/// fitted to.
pub fn sim_file_name(j: usize) -> String {
    format!("simfile-{j}")
}

/// Node addresses. With at least as many nodes as chunks, the first
/// `n + m` are fitted so that file 0 has one chunk per host, and the rest
/// are chosen so they do not take over any of its chunks.
pub fn sim_addresses(nodes: usize, total: usize) -> Vec<String> {
    let name = |k: usize| format!("sim-{k}:7000");
    if nodes < total {
        return (0..nodes).map(name).collect();
    }
    let file = sim_file_name(0);
    let mut used = BTreeSet::new();
    let mut hosts = collision_free_hosts(&file, total, (0..).map(name), |_| true).expect("candidate stream is unbounded");
    used.extend(hosts.iter().cloned());
    let ids = |hosts: &[String]| hosts.iter().map(|a| HostId::from_address(a)).collect::<BTreeSet<_>>();
    let target = placement_plan(&file, total, 0, &ids(&hosts)).expect("non-empty");
    for k in 0.. {
        if hosts.len() == nodes {
            break;
        }
        let candidate = name(k);
        if used.contains(&candidate) {
            continue;
        }
        let mut trial = hosts.clone();
        trial.push(candidate.clone());
        if placement_plan(&file, total, 0, &ids(&trial)).expect("non-empty") == target {
            used.insert(candidate);
            hosts = trial;
        }
    }
    hosts
}

#[derive(Debug, Clone)]
enum Ev {
    Script(usize),
    Round { node: usize, inc: u32 },
    Deliver { from: usize, to: usize, req: u64, msg: GossipMessage },
    Answer { to: usize, from: usize, req: u64, reply: Option<Vec<HostRecord>> },
    Timeout { req: u64 },
    Check { epoch: usize, round: usize },
}

struct SimNode {
    membership: Membership,
    up: bool,
    inc: u32,
    net: ChaCha8Rng,
    group: usize,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    nodes: Vec<SimNode>,
    index: BTreeMap<HostId, usize>,
    queue: BTreeMap<(u64, u64), Ev>,
    seq: u64,
    now: u64,
    next_req: u64,
    outstanding: BTreeMap<u64, (usize, u32, usize)>,
    messages: MessageCounts,
    epochs: Vec<EpochResult>,
}

fn stream_seed(seed: u64, node: usize, salt: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (node as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9) ^ salt
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig, addresses: &[String]) -> Sim<'a> {
        let nodes: Vec<SimNode> = addresses
            .iter()
            .enumerate()
            .map(|(i, a)| SimNode {
                membership: Membership::new(a, cfg.gossip, stream_seed(cfg.seed, i, 1)),
                up: false,
                inc: 0,
                net: ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, i, 2)),
                group: 0,
            })
            .collect();
        let index = addresses.iter().enumerate().map(|(i, a)| (HostId::from_address(a), i)).collect();
        Sim {
            cfg,
            nodes,
            index,
            queue: BTreeMap::new(),
            seq: 0,
            now: 0,
            next_req: 0,
            outstanding: BTreeMap::new(),
            messages: MessageCounts::default(),
            epochs: Vec::new(),
        }
    }

    fn schedule(&mut self, at: u64, ev: Ev) {
        self.queue.insert((at, self.seq), ev);
        self.seq += 1;
    }

    fn schedule_round(&mut self, node: usize) {
        let delay = self.nodes[node].membership.next_delay_ms();
        let inc = self.nodes[node].inc;
        self.schedule(self.now + delay, Ev::Round { node, inc });
    }

    fn latency(&mut self, node: usize) -> u64 {
        let (lo, hi) = (self.cfg.latency_min_ms, self.cfg.latency_max_ms);
        self.nodes[node].net.gen_range(lo..=hi)
    }

    /// Whether a message from `from` to `to` gets through.
    fn link(&mut self, from: usize, to: usize) -> bool {
        if self.nodes[from].group != self.nodes[to].group {
            return false;
        }
        let p = self.cfg.delivery;
        p >= 1.0 || self.nodes[from].net.gen::<f64>() < p
    }

    fn send(&mut self, from: usize, to: usize, msg: GossipMessage) {
        match msg {
            GossipMessage::Push(_) => self.messages.push += 1,
            GossipMessage::Pull(_) => self.messages.pull += 1,
            GossipMessage::Records(_) => self.messages.replies += 1,
        }
        let req = self.next_req;
        self.next_req += 1;
        self.outstanding.insert(req, (from, self.nodes[from].inc, to));
        if self.link(from, to) {
            let at = self.now + self.latency(from);
            self.schedule(at, Ev::Deliver { from, to, req, msg });
        } else {
            self.messages.dropped += 1;
        }
        let timeout = self.now + 2 * self.cfg.latency_max_ms + 1;
        self.schedule(timeout, Ev::Timeout { req });
    }

    fn gossip(&mut self, node: usize, pushes_only: bool) {
        let out = self.nodes[node].membership.gossip_round();
        for o in out {
            if pushes_only && !matches!(o.message, GossipMessage::Push(_)) {
                continue;
            }
            if let Some(&to) = self.index.get(&o.to) {
                self.send(node, to, o.message);
            }
        }
    }

    fn start_initial(&mut self) {
        let records: Vec<HostRecord> = (0..self.cfg.initial)
            .map(|i| HostRecord::new(self.nodes[i].membership.address(), HostStatus::Joined, 1))
            .collect();
        let list = HostList::from_records(records);
        for i in 0..self.cfg.initial {
            self.nodes[i].membership.merge_list(&list, 0);
            self.nodes[i].membership.activate();
            self.nodes[i].up = true;
            self.schedule_round(i);
        }
    }

    fn apply(&mut self, kind: &EventKind) {
        match *kind {
            EventKind::Join(i) => {
                if self.nodes[i].up {
                    return;
                }
                if let Some(seed) = (0..self.nodes.len()).find(|&s| s != i && self.nodes[s].up && self.nodes[s].group == self.nodes[i].group) {
                    let list = self.nodes[seed].membership.list().clone();
                    self.nodes[i].membership.merge_list(&list, self.now);
                }
                self.nodes[i].membership.join(self.now);
                self.nodes[i].up = true;
                self.nodes[i].inc += 1;
                self.schedule_round(i);
            }
            EventKind::Leave(i) => {
                if !self.nodes[i].up {
                    return;
                }
                self.nodes[i].membership.leave(self.now);
                self.gossip(i, true);
                self.nodes[i].up = false;
                self.nodes[i].inc += 1;
            }
            EventKind::Crash(i) => {
                self.nodes[i].up = false;
                self.nodes[i].inc += 1;
            }
            EventKind::Partition(ref groups) => {
                let unlisted = groups.len() + 1;
                for n in &mut self.nodes {
                    n.group = if groups.is_empty() { 0 } else { unlisted };
                }
                for (g, members) in groups.iter().enumerate() {
                    for &i in members {
                        self.nodes[i].group = g + 1;
                    }
                }
            }
        }
    }

    /// Running nodes hold identical lists naming exactly the running nodes.
    fn converged(&self) -> bool {
        let running: BTreeSet<HostId> = self.nodes.iter().filter(|n| n.up).map(|n| n.membership.id()).collect();
        let mut lists = self.nodes.iter().filter(|n| n.up).map(|n| n.membership.list());
        let Some(first) = lists.next() else { return true };
        first.alive() == running && lists.all(|l| l.same_state(first))
    }

    fn run(&mut self) {
        self.start_initial();
        for (i, e) in self.cfg.events.iter().enumerate() {
            self.schedule(e.t_ms, Ev::Script(i));
        }
        let mut starts: Vec<u64> = std::iter::once(0).chain(self.cfg.events.iter().map(|e| e.t_ms)).collect();
        starts.dedup();
        let round = self.cfg.round_ms();
        for (epoch, &start) in starts.iter().enumerate() {
            self.epochs.push(EpochResult { start_ms: start, rounds: None });
            let end = starts.get(epoch + 1).copied();
            for r in 0..=self.cfg.round_cap {
                let at = start + r as u64 * round;
                // Checks at `end` belong to the next epoch.
                if end.is_some_and(|e| at >= e) {
                    break;
                }
                self.schedule(at, Ev::Check { epoch, round: r });
            }
        }
        let last = starts.len() - 1;
        let horizon = starts[last] + self.cfg.round_cap as u64 * round;

        while let Some(((at, _), ev)) = self.queue.pop_first() {
            if at > horizon {
                break;
            }
            self.now = at;
            match ev {
                Ev::Script(i) => {
                    let kind = self.cfg.events[i].kind.clone();
                    self.apply(&kind);
                }
                Ev::Round { node, inc } => {
                    if self.nodes[node].up && self.nodes[node].inc == inc {
                        self.gossip(node, false);
                        self.schedule_round(node);
                    }
                }
                Ev::Deliver { from, to, req, msg } => {
                    if !self.nodes[to].up {
                        continue;
                    }
                    let now = self.now;
                    let reply = match self.nodes[to].membership.handle(msg, now) {
                        Ok(Some(GossipMessage::Records(r))) => Some(r),
                        Ok(_) => None,
                        Err(e) => {
                            log::debug!("node {to} rejected a message: {e}");
                            continue;
                        }
                    };
                    if reply.is_some() {
                        self.messages.replies += 1;
                    }
                    if self.link(to, from) {
                        let at = self.now + self.latency(to);
                        self.schedule(at, Ev::Answer { to: from, from: to, req, reply });
                    } else {
                        self.messages.dropped += 1;
                    }
                }
                Ev::Answer { to, from, req, reply } => {
                    let Some((node, inc, _)) = self.outstanding.remove(&req) else { continue };
                    if node != to || !self.nodes[to].up || self.nodes[to].inc != inc {
                        continue;
                    }
                    let now = self.now;
                    let peer = self.nodes[from].membership.id();
                    let m = &mut self.nodes[to].membership;
                    m.contact_ok(peer, now);
                    if let Some(records) = reply {
                        if let Err(e) = m.merge_records(records, now) {
                            log::debug!("bad records: {e}");
                        }
                    }
                }
                Ev::Timeout { req } => {
                    let Some((node, inc, peer)) = self.outstanding.remove(&req) else { continue };
                    if self.nodes[node].up && self.nodes[node].inc == inc {
                        let now = self.now;
                        let peer = self.nodes[peer].membership.id();
                        self.nodes[node].membership.contact_failed(peer, now);
                    }
                }
                Ev::Check { epoch, round } => {
                    if self.epochs[epoch].rounds.is_none() && self.converged() {
                        self.epochs[epoch].rounds = Some(round);
                        if epoch == last {
                            break;
                        }
                    }
                }
            }
        }
    }
}

fn run_gets(cfg: &SimConfig, sim: &Sim<'_>, transport: MemoryTransport, hosts: HostList) -> (Vec<GetOutcome>, MemoryTransport) {
    for n in &sim.nodes {
        transport.set_down(n.membership.address(), !n.up);
    }
    // Reads use the host list of the first running node, stale or not.
    let list = sim
        .nodes
        .iter()
        .find(|n| n.up)
        .map(|n| n.membership.list().clone())
        .unwrap_or(hosts);
    let client_cfg = ClientConfig { parallelism: 1, ..ClientConfig::default() };
    let mut client = Client::with_hosts(transport, cfg.graph.clone(), client_cfg, list).expect("graph checked");
    let mut gets = Vec::new();
    for j in 0..cfg.files {
        let file = sim_file_name(j);
        gets.push(match client.get_bytes(&file) {
            Ok((data, stats)) => {
                let expected = file_contents(cfg, j);
                GetOutcome {
                    ok: data == expected,
                    fetched: stats.fetched.len(),
                    xors: stats.xors,
                    error: (data != expected).then(|| "wrong bytes".to_string()),
                    file,
                }
            }
            Err(e) => GetOutcome { file, ok: false, fetched: 0, xors: 0, error: Some(e.to_string()) },
        });
    }
    (gets, client.into_transport())
}

fn file_contents(cfg: &SimConfig, j: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, j, 3));
    (0..cfg.file_size).map(|_| rng.gen()).collect()
}

fn availability_trials(cfg: &SimConfig, addresses: &[String]) -> Result<AvailabilityResult, SimError> {
    let hosts = static_host_list(addresses);
    let transport = MemoryTransport::new(hosts.clone());
    let client_cfg = ClientConfig { parallelism: 1, retries: 0, ..ClientConfig::default() };
    let mut client = Client::with_hosts(transport, cfg.graph.clone(), client_cfg, hosts.clone())
        .map_err(|e| SimError::Invalid(e.to_string()))?;
    let file = sim_file_name(0);
    let data = file_contents(cfg, 0);
    client.put_bytes(&file, &data).map_err(|e| SimError::Invalid(e.to_string()))?;
    let plan = placement_plan(&file, cfg.graph.n(), cfg.graph.m(), &hosts.alive()).expect("non-empty");
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, 0, 4));
    let mut successes = 0;
    for _ in 0..cfg.trials {
        for a in addresses {
            client.transport().set_down(a, rng.gen::<f64>() >= cfg.mu);
        }
        if matches!(client.get_bytes(&file), Ok((out, _)) if out == data) {
            successes += 1;
        }
    }
    Ok(AvailabilityResult {
        trials: cfg.trials,
        successes,
        mu: cfg.mu,
        oracle: exact_graph_availability(&cfg.graph, cfg.mu).map_err(|e| SimError::Invalid(e.to_string()))?,
        distinct_hosts: !plan.collisions,
    })
}

/// Runs the simulation described by `cfg`.
pub fn run_sim(cfg: &SimConfig) -> Result<SimReport, SimError> {
    cfg.validate()?;
    let addresses = sim_addresses(cfg.nodes, cfg.graph.total_blocks());

    // The workload goes in before any churn, through the initial nodes.
    let initial: Vec<String> = addresses[..cfg.initial].to_vec();
    let hosts = static_host_list(&initial);
    let mut transport = MemoryTransport::new(static_host_list(&addresses));
    if cfg.files > 0 && !initial.is_empty() {
        let client_cfg = ClientConfig { parallelism: 1, ..ClientConfig::default() };
        let mut client = Client::with_hosts(transport, cfg.graph.clone(), client_cfg, hosts.clone())
            .map_err(|e| SimError::Invalid(e.to_string()))?;
        for j in 0..cfg.files {
            if let Err(e) = client.put_bytes(&sim_file_name(j), &file_contents(cfg, j)) {
                log::info!("put of {} failed: {e}", sim_file_name(j));
            }
        }
        transport = client.into_transport();
    }

    let mut sim = Sim::new(cfg, &addresses);
    sim.run();
    let (gets, _) = run_gets(cfg, &sim, transport, hosts);
    let availability = if cfg.trials > 0 { Some(availability_trials(cfg, &addresses)?) } else { None };
    Ok(SimReport {
        nodes: cfg.nodes,
        seed: cfg.seed,
        round_ms: cfg.round_ms(),
        round_cap: cfg.round_cap,
        epochs: sim.epochs,
        gets,
        availability,
        messages: sim.messages,
        end_ms: sim.now,
    })
}

/// Rounds after the last event until every running node agrees.
pub fn measure_convergence(cfg: &SimConfig) -> Result<usize, SimError> {
    let cfg = SimConfig { files: 0, trials: 0, ..cfg.clone() };
    run_sim(&cfg)?.convergence().ok_or(SimError::NoConvergence { cap: cfg.round_cap })
}
