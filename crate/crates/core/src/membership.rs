//! Weakly consistent host list maintained by rumour mongering.
//!
//! Every host owns a sequence counter for its own record. A record with a
//! higher `(seq, status)` replaces a lower one, with `left` ordered after
//! `joined` at equal `seq`, so merging records is a join-semilattice and
//! replicas that have seen the same records agree.
//!
//! News travels two ways. Pushes carry fresh rumours to a few random peers,
//! and a receiver forwards a rumour again with probability `decay^hops`.
//! Pulls send a digest of `(id, seq, status)`; the peer answers with every
//! record it holds that is newer, which closes whatever gaps the pushes left.
//!
//! [`Membership`] is a sans-IO state machine: the node drives it over HTTP
//! and the simulator over a virtual network.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::placement::{canonical_address, HostId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MembershipError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("no seed answered")]
    AllSeedsUnreachable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HostStatus {
    Joined,
    Left,
}

impl fmt::Display for HostStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HostStatus::Joined => "joined",
            HostStatus::Left => "left",
        })
    }
}

impl FromStr for HostStatus {
    type Err = MembershipError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joined" => Ok(HostStatus::Joined),
            "left" => Ok(HostStatus::Left),
            other => Err(MembershipError::Malformed(format!("unknown status {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostRecord {
    pub id: HostId,
    pub address: String,
    pub status: HostStatus,
    pub seq: u64,
    /// Local clock (ms) when this host was last heard of. Not replicated.
    pub last_heard: u64,
}

impl HostRecord {
    pub fn new(address: &str, status: HostStatus, seq: u64) -> HostRecord {
        let address = canonical_address(address);
        HostRecord {
            id: HostId::from_address(&address),
            address,
            status,
            seq,
            last_heard: 0,
        }
    }

    fn version(&self) -> (u64, HostStatus) {
        (self.seq, self.status)
    }

    /// Replicated fields only.
    fn same_state(&self, other: &HostRecord) -> bool {
        self.id == other.id
            && self.address == other.address
            && self.version() == other.version()
    }

    fn validate(&self) -> Result<(), MembershipError> {
        if self.address.is_empty() || self.address.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(MembershipError::Malformed(format!("bad address {:?}", self.address)));
        }
        if HostId::from_address(&self.address) != self.id {
            return Err(MembershipError::Malformed(format!(
                "id {} does not match address {}",
                self.id, self.address
            )));
        }
        Ok(())
    }

    /// `<id-hex16> <address> <joined|left> <seq>`
    pub fn to_line(&self) -> String {
        format!("{} {} {} {}", self.id, self.address, self.status, self.seq)
    }

    fn from_fields(fields: &[&str]) -> Result<HostRecord, MembershipError> {
        let bad = || MembershipError::Malformed(fields.join(" "));
        let [id, address, status, seq] = fields else {
            return Err(bad());
        };
        if id.len() != 16 {
            return Err(bad());
        }
        let record = HostRecord {
            id: id.parse().map_err(|_| bad())?,
            address: address.to_string(),
            status: status.parse()?,
            seq: seq.parse().map_err(|_| bad())?,
            last_heard: 0,
        };
        record.validate()?;
        Ok(record)
    }
}

impl FromStr for HostRecord {
    type Err = MembershipError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        HostRecord::from_fields(&line.split_whitespace().collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, Default)]
pub struct HostList {
    records: BTreeMap<HostId, HostRecord>,
    version: u64,
}

impl HostList {
    pub fn new() -> HostList {
        HostList::default()
    }

    pub fn from_records<I: IntoIterator<Item = HostRecord>>(records: I) -> HostList {
        let mut list = HostList::new();
        for r in records {
            list.merge_record(r);
        }
        list
    }

    /// Stores `record` if it is newer than what is held for its id. Returns
    /// whether anything changed.
    pub fn merge_record(&mut self, record: HostRecord) -> bool {
        match self.records.get_mut(&record.id) {
            Some(current) if current.version() >= record.version() => false,
            Some(current) => {
                *current = record;
                self.version += 1;
                true
            }
            None => {
                self.records.insert(record.id, record);
                self.version += 1;
                true
            }
        }
    }

    pub fn merge(&mut self, other: &HostList) -> usize {
        other.records.values().filter(|r| self.merge_record((*r).clone())).count()
    }

    pub fn get(&self, id: HostId) -> Option<&HostRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &HostRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Local mutation counter.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn alive(&self) -> BTreeSet<HostId> {
        self.records
            .values()
            .filter(|r| r.status == HostStatus::Joined)
            .map(|r| r.id)
            .collect()
    }

    pub fn address_of(&self, id: HostId) -> Option<&str> {
        self.records.get(&id).map(|r| r.address.as_str())
    }

    pub fn digest(&self) -> Vec<DigestEntry> {
        self.records
            .values()
            .map(|r| DigestEntry {
                id: r.id,
                seq: r.seq,
                status: r.status,
            })
            .collect()
    }

    /// Records strictly newer than the digest, including ids it lacks.
    pub fn newer_than(&self, digest: &[DigestEntry]) -> Vec<HostRecord> {
        let known: BTreeMap<HostId, (u64, HostStatus)> =
            digest.iter().map(|d| (d.id, (d.seq, d.status))).collect();
        self.records
            .values()
            .filter(|r| known.get(&r.id).is_none_or(|v| r.version() > *v))
            .cloned()
            .collect()
    }

    /// Equality of the replicated state, ignoring local timestamps.
    pub fn same_state(&self, other: &HostList) -> bool {
        self.records.len() == other.records.len()
            && self
                .records
                .values()
                .zip(other.records.values())
                .all(|(a, b)| a.same_state(b))
    }

    pub fn to_text(&self) -> String {
        self.records.values().map(|r| r.to_line() + "\n").collect()
    }

    pub fn parse(text: &str) -> Result<HostList, MembershipError> {
        let mut list = HostList::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            list.merge_record(line.parse()?);
        }
        Ok(list)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DigestEntry {
    pub id: HostId,
    pub seq: u64,
    pub status: HostStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rumour {
    pub subject: HostRecord,
    pub hops: u32,
}

/// Gossip payloads. Text form, one header line with a count followed by
/// that many lines:
///
/// ```text
/// push <k>     then k × `<id-hex16> <address> <joined|left> <seq> <hops>`
/// pull <k>     then k × `<id-hex16> <seq> <joined|left>`
/// records <k>  then k × `<id-hex16> <address> <joined|left> <seq>`
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GossipMessage {
    Push(Vec<Rumour>),
    Pull(Vec<DigestEntry>),
    Records(Vec<HostRecord>),
}

impl GossipMessage {
    pub fn encode(&self) -> String {
        let mut out = String::new();
        match self {
            GossipMessage::Push(rumours) => {
                out.push_str(&format!("push {}\n", rumours.len()));
                for r in rumours {
                    out.push_str(&format!("{} {}\n", r.subject.to_line(), r.hops));
                }
            }
            GossipMessage::Pull(digest) => {
                out.push_str(&format!("pull {}\n", digest.len()));
                for d in digest {
                    out.push_str(&format!("{} {} {}\n", d.id, d.seq, d.status));
                }
            }
            GossipMessage::Records(records) => {
                out.push_str(&format!("records {}\n", records.len()));
                for r in records {
                    out.push_str(&r.to_line());
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn decode(text: &str) -> Result<GossipMessage, MembershipError> {
        let bad = |what: &str| MembershipError::Malformed(what.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty message"))?;
        let (kind, count) = header.split_once(' ').ok_or_else(|| bad(header))?;
        let count: usize = count.trim().parse().map_err(|_| bad(header))?;
        let body: Vec<Vec<&str>> = lines.map(|l| l.split_whitespace().collect()).collect();
        if body.len() != count {
            return Err(bad("record count does not match header"));
        }
        match kind {
            "push" => body
                .iter()
                .map(|f| {
                    let (hops, record) = f.split_last().ok_or_else(|| bad("empty rumour"))?;
                    Ok(Rumour {
                        subject: HostRecord::from_fields(record)?,
                        hops: hops.parse().map_err(|_| bad(hops))?,
                    })
                })
                .collect::<Result<_, _>>()
                .map(GossipMessage::Push),
            "pull" => body
                .iter()
                .map(|f| match f.as_slice() {
                    [id, seq, status] if id.len() == 16 => Ok(DigestEntry {
                        id: id.parse().map_err(|_| bad(id))?,
                        seq: seq.parse().map_err(|_| bad(seq))?,
                        status: status.parse()?,
                    }),
                    _ => Err(bad(&f.join(" "))),
                })
                .collect::<Result<_, _>>()
                .map(GossipMessage::Pull),
            "records" => body
                .iter()
                .map(|f| HostRecord::from_fields(f))
                .collect::<Result<_, _>>()
                .map(GossipMessage::Records),
            other => Err(bad(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GossipConfig {
    pub fanout: usize,
    /// Forwarding probability is `decay^hops`.
    pub decay: f64,
    pub t_min_ms: u64,
    pub t_max_ms: u64,
    /// Consecutive failed contacts before a peer is declared gone.
    pub miss_threshold: u32,
}

impl Default for GossipConfig {
    fn default() -> Self {
        GossipConfig {
            fanout: 3,
            decay: 0.5,
            t_min_ms: 1000,
            t_max_ms: 3000,
            miss_threshold: 5,
        }
    }
}

impl GossipConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.fanout == 0 {
            return Err("gossip.fanout must be at least 1".into());
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err("gossip.decay must lie in (0, 1]".into());
        }
        if self.t_min_ms > self.t_max_ms || self.t_max_ms == 0 {
            return Err("gossip.t_min_ms must not exceed gossip.t_max_ms".into());
        }
        if self.miss_threshold == 0 {
            return Err("gossip.miss_threshold must be at least 1".into());
        }
        Ok(())
    }
}

/// A message for the network layer to deliver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub to: HostId,
    pub address: String,
    pub message: GossipMessage,
}

/// Membership state of one host.
#[derive(Debug, Clone)]
pub struct Membership {
    me: HostId,
    address: String,
    list: HostList,
    pending: Vec<Rumour>,
    misses: BTreeMap<HostId, u32>,
    cfg: GossipConfig,
    rng: ChaCha8Rng,
    active: bool,
}

impl Membership {
    pub fn new(address: &str, cfg: GossipConfig, seed: u64) -> Membership {
        let address = canonical_address(address);
        Membership {
            me: HostId::from_address(&address),
            address,
            list: HostList::new(),
            pending: Vec::new(),
            misses: BTreeMap::new(),
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            active: false,
        }
    }

    pub fn id(&self) -> HostId {
        self.me
    }

    pub fn address(&self) -> &str {
        &self.address
    }

    pub fn list(&self) -> &HostList {
        &self.list
    }

    pub fn config(&self) -> &GossipConfig {
        &self.cfg
    }

    pub fn pending(&self) -> &[Rumour] {
        &self.pending
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    /// Merges a full list (bootstrap response or persisted state) without
    /// spreading it further.
    pub fn merge_list(&mut self, other: &HostList, now: u64) -> usize {
        let mut changed = 0;
        for r in other.records() {
            changed += usize::from(self.merge_quietly(r.clone(), now));
        }
        changed
    }

    fn merge_quietly(&mut self, mut record: HostRecord, now: u64) -> bool {
        let about_me = record.id == self.me;
        record.last_heard = now;
        let news = self.list.merge_record(record);
        if about_me && self.active && self.list.get(self.me).map(|r| r.status) == Some(HostStatus::Left) {
            // Someone declared us gone while we are up: refute with a newer seq.
            self.originate(HostStatus::Joined, now);
        }
        news
    }

    fn originate(&mut self, status: HostStatus, now: u64) {
        let seq = self.list.get(self.me).map_or(0, |r| r.seq) + 1;
        let mut record = HostRecord::new(&self.address, status, seq);
        record.last_heard = now;
        self.list.merge_record(record.clone());
        self.pending.push(Rumour {
            subject: record,
            hops: 0,
        });
    }

    /// Announces this host. The sequence number continues above anything
    /// already known about it, including its own stale `left`.
    pub fn join(&mut self, now: u64) {
        self.active = true;
        self.originate(HostStatus::Joined, now);
    }

    /// Marks the host running without announcing it, for a host whose own
    /// `joined` record is already in the list.
    pub fn activate(&mut self) {
        self.active = true;
    }

    pub fn leave(&mut self, now: u64) {
        self.originate(HostStatus::Left, now);
        self.active = false;
    }

    fn coin(&mut self, hops: u32) -> bool {
        let p = self.cfg.decay.powi(hops as i32);
        p >= 1.0 || self.rng.gen::<f64>() < p
    }

    /// Applies a pushed rumour. Returns whether it will be forwarded: only
    /// news is forwarded, and then with probability `decay^hops`.
    pub fn apply_rumour(&mut self, rumour: Rumour, now: u64) -> Result<bool, MembershipError> {
        rumour.subject.validate()?;
        let news = self.merge_quietly(rumour.subject.clone(), now);
        if !news {
            return Ok(false);
        }
        let forward = self.coin(rumour.hops);
        if forward {
            self.pending.push(rumour);
        }
        Ok(forward)
    }

    fn alive_peers(&self) -> impl Iterator<Item = &HostRecord> {
        self.list
            .records()
            .filter(move |r| r.id != self.me && r.status == HostStatus::Joined)
    }

    /// One gossip round: pending rumours go to `fanout` random alive peers
    /// and one random alive peer gets a pull.
    pub fn gossip_round(&mut self) -> Vec<Outgoing> {
        let peers: Vec<(HostId, String)> =
            self.alive_peers().map(|r| (r.id, r.address.clone())).collect();
        if peers.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::new();
        if !self.pending.is_empty() {
            let rumours: Vec<Rumour> = self
                .pending
                .drain(..)
                .map(|r| Rumour {
                    hops: r.hops + 1,
                    ..r
                })
                .collect();
            let targets = peers.iter().choose_multiple(&mut self.rng, self.cfg.fanout);
            for (id, address) in targets {
                out.push(Outgoing {
                    to: *id,
                    address: address.clone(),
                    message: GossipMessage::Push(rumours.clone()),
                });
            }
        }
        let (id, address) = peers.iter().choose(&mut self.rng).expect("non-empty");
        out.push(Outgoing {
            to: *id,
            address: address.clone(),
            message: GossipMessage::Pull(self.list.digest()),
        });
        out
    }

    /// Handles an incoming message; pulls get a reply.
    pub fn handle(&mut self, message: GossipMessage, now: u64) -> Result<Option<GossipMessage>, MembershipError> {
        match message {
            GossipMessage::Push(rumours) => {
                for r in &rumours {
                    r.subject.validate()?;
                }
                for r in rumours {
                    self.apply_rumour(r, now)?;
                }
                Ok(None)
            }
            GossipMessage::Pull(digest) => Ok(Some(GossipMessage::Records(self.list.newer_than(&digest)))),
            GossipMessage::Records(records) => {
                self.merge_records(records, now)?;
                Ok(None)
            }
        }
    }

    /// Merges the answer to a pull.
    pub fn merge_records(&mut self, records: Vec<HostRecord>, now: u64) -> Result<usize, MembershipError> {
        for r in &records {
            r.validate()?;
        }
        Ok(records.into_iter().filter(|r| self.merge_quietly(r.clone(), now)).count())
    }

    pub fn contact_ok(&mut self, peer: HostId, now: u64) {
        self.misses.remove(&peer);
        if let Some(r) = self.list.records.get_mut(&peer) {
            r.last_heard = now;
        }
    }

    /// Records a failed contact. Returns true when this failure made the
    /// peer reach the miss threshold and a `left` rumour was originated.
    pub fn contact_failed(&mut self, peer: HostId, now: u64) -> bool {
        let misses = self.misses.entry(peer).or_insert(0);
        *misses += 1;
        if *misses < self.cfg.miss_threshold {
            return false;
        }
        self.misses.remove(&peer);
        let Some(current) = self.list.get(peer).cloned() else {
            return false;
        };
        if current.status != HostStatus::Joined || peer == self.me {
            return false;
        }
        let mut record = HostRecord {
            status: HostStatus::Left,
            seq: current.seq + 1,
            last_heard: now,
            ..current
        };
        record.last_heard = now;
        self.list.merge_record(record.clone());
        self.pending.push(Rumour {
            subject: record,
            hops: 0,
        });
        true
    }

    /// Delay until the next gossip round, uniform in `[t_min, t_max]`.
    pub fn next_delay_ms(&mut self) -> u64 {
        self.rng.gen_range(self.cfg.t_min_ms..=self.cfg.t_max_ms)
    }
}

/// Obtains a host list from the seeds, tried in order, merged with the
/// persisted list by the sequence rule. With `quorum > 1` that many seed
/// lists are fetched and merged.
pub fn bootstrap<F>(
    seeds: &[String],
    persisted: Option<&HostList>,
    quorum: usize,
    mut fetch: F,
) -> Result<HostList, MembershipError>
where
    F: FnMut(&str) -> Result<HostList, String>,
{
    let mut merged = persisted.cloned().unwrap_or_default();
    let mut answered = 0;
    for seed in seeds {
        if answered >= quorum.max(1) {
            break;
        }
        match fetch(seed) {
            Ok(list) => {
                merged.merge(&list);
                answered += 1;
            }
            Err(e) => log::debug!("seed {seed} unreachable: {e}"),
        }
    }
    if answered == 0 {
        return Err(MembershipError::AllSeedsUnreachable);
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(addr: &str, status: HostStatus, seq: u64) -> HostRecord {
        HostRecord::new(addr, status, seq)
    }

    #[test]
    fn fresh_news_always_forwards() {
        let mut m = Membership::new("a:1", GossipConfig::default(), 1);
        let r = Rumour {
            subject: rec("b:1", HostStatus::Joined, 1),
            hops: 0,
        };
        assert!(m.apply_rumour(r, 0).unwrap());
        assert!(m.list().get(HostId::from_address("b:1")).is_some());
        assert_eq!(m.pending().len(), 1);
    }

    #[test]
    fn older_sequence_is_ignored() {
        let mut m = Membership::new("a:1", GossipConfig::default(), 1);
        m.apply_rumour(Rumour { subject: rec("h:1", HostStatus::Joined, 7), hops: 0 }, 0).unwrap();
        let stale = Rumour { subject: rec("h:1", HostStatus::Left, 5), hops: 0 };
        assert!(!m.apply_rumour(stale, 1).unwrap());
        let r = m.list().get(HostId::from_address("h:1")).unwrap();
        assert_eq!((r.status, r.seq), (HostStatus::Joined, 7));
    }

    #[test]
    fn duplicate_is_not_news() {
        let mut m = Membership::new("a:1", GossipConfig::default(), 1);
        let r = Rumour { subject: rec("h:1", HostStatus::Joined, 3), hops: 0 };
        assert!(m.apply_rumour(r.clone(), 0).unwrap());
        let version = m.list().version();
        assert!(!m.apply_rumour(r, 0).unwrap());
        assert_eq!(m.list().version(), version);
    }

    #[test]
    fn malformed_rumour_changes_nothing() {
        let mut m = Membership::new("a:1", GossipConfig::default(), 1);
        let mut bad = rec("h:1", HostStatus::Joined, 3);
        bad.id = HostId(42);
        assert!(m.apply_rumour(Rumour { subject: bad, hops: 0 }, 0).is_err());
        assert!(m.list().is_empty());
    }

    #[test]
    fn forwarding_decays_with_hops() {
        let cfg = GossipConfig { decay: 0.5, ..GossipConfig::default() };
        let mut m = Membership::new("a:1", cfg, 9);
        let mut forwarded = 0;
        let trials = 4000;
        for i in 0..trials {
            let r = Rumour { subject: rec(&format!("h{i}:1"), HostStatus::Joined, 1), hops: 2 };
            forwarded += usize::from(m.apply_rumour(r, 0).unwrap());
        }
        // Binomial(4000, 0.25): sd ~ 27.
        assert!((forwarded as i64 - 1000).abs() < 120, "{forwarded}");
    }

    #[test]
    fn round_without_rumours_only_pulls() {
        let mut m = Membership::new("a:1", GossipConfig::default(), 1);
        m.merge_list(&HostList::from_records([rec("b:1", HostStatus::Joined, 1)]), 0);
        let out = m.gossip_round();
        assert_eq!(out.len(), 1);
        assert!(matches!(out[0].message, GossipMessage::Pull(_)));
    }

    #[test]
    fn fanout_is_clamped_to_alive_peers() {
        let cfg = GossipConfig { fanout: 10, ..GossipConfig::default() };
        let mut m = Membership::new("a:1", cfg, 1);
        m.join(0);
        m.merge_list(
            &HostList::from_records([
                rec("b:1", HostStatus::Joined, 1),
                rec("c:1", HostStatus::Joined, 1),
                rec("d:1", HostStatus::Left, 2),
            ]),
            0,
        );
        let out = m.gossip_round();
        let pushes: Vec<_> = out.iter().filter(|o| matches!(o.message, GossipMessage::Push(_))).collect();
        assert_eq!(pushes.len(), 2);
        assert!(out.iter().all(|o| o.to != HostId::from_address("d:1")));
        let GossipMessage::Push(rumours) = &pushes[0].message else { unreachable!() };
        assert_eq!(rumours[0].hops, 1);
        assert!(m.pending().is_empty());
    }

    #[test]
    fn pull_returns_newer_records() {
        let mut a = Membership::new("a:1", GossipConfig::default(), 1);
        a.join(0);
        a.merge_list(&HostList::from_records([rec("b:1", HostStatus::Joined, 4)]), 0);
        let everything = a.handle(GossipMessage::Pull(Vec::new()), 0).unwrap().unwrap();
        let GossipMessage::Records(all) = everything else { panic!() };
        assert_eq!(all.len(), 2);
        let up_to_date = a.handle(GossipMessage::Pull(a.list().digest()), 0).unwrap().unwrap();
        assert_eq!(up_to_date, GossipMessage::Records(Vec::new()));
    }

    #[test]
    fn push_of_fresh_rumours_updates_each() {
        let mut a = Membership::new("a:1", GossipConfig::default(), 1);
        let rumours: Vec<Rumour> = (0..5)
            .map(|i| Rumour { subject: rec(&format!("n{i}:1"), HostStatus::Joined, 1), hops: 1 })
            .collect();
        assert_eq!(a.handle(GossipMessage::Push(rumours), 0).unwrap(), None);
        assert_eq!(a.list().len(), 5);
    }

    #[test]
    fn missed_contacts_originate_left() {
        let cfg = GossipConfig { miss_threshold: 3, ..GossipConfig::default() };
        let mut m = Membership::new("a:1", cfg, 1);
        m.join(0);
        let b = rec("b:1", HostStatus::Joined, 2);
        m.merge_list(&HostList::from_records([b.clone()]), 0);
        assert!(!m.contact_failed(b.id, 1));
        m.contact_ok(b.id, 2);
        assert!(!m.contact_failed(b.id, 3));
        assert!(!m.contact_failed(b.id, 4));
        assert!(m.contact_failed(b.id, 5));
        let r = m.list().get(b.id).unwrap();
        assert_eq!((r.status, r.seq), (HostStatus::Left, 3));
        assert!(m.pending().iter().any(|p| p.subject.id == b.id && p.subject.status == HostStatus::Left));
    }

    #[test]
    fn live_host_refutes_its_own_departure() {
        let mut m = Membership::new("a:1", GossipConfig::default(), 1);
        m.join(0);
        let dead = Rumour { subject: rec("a:1", HostStatus::Left, 2), hops: 0 };
        m.apply_rumour(dead, 1).unwrap();
        let me = m.list().get(m.id()).unwrap();
        assert_eq!((me.status, me.seq), (HostStatus::Joined, 3));
    }

    #[test]
    fn rejoin_resumes_above_persisted_seq() {
        let mut m = Membership::new("a:1", GossipConfig::default(), 1);
        m.merge_list(&HostList::from_records([rec("a:1", HostStatus::Left, 9)]), 0);
        m.join(1);
        assert_eq!(m.list().get(m.id()).unwrap().seq, 10);
    }

    #[test]
    fn message_round_trip_and_rejects() {
        let msgs = [
            GossipMessage::Push(vec![Rumour { subject: rec("x:9", HostStatus::Left, 3), hops: 2 }]),
            GossipMessage::Pull(vec![DigestEntry { id: HostId(5), seq: 1, status: HostStatus::Joined }]),
            GossipMessage::Records(vec![rec("y:9", HostStatus::Joined, 1)]),
            GossipMessage::Records(Vec::new()),
        ];
        for m in msgs {
            assert_eq!(GossipMessage::decode(&m.encode()).unwrap(), m);
        }
        assert!(GossipMessage::decode("").is_err());
        assert!(GossipMessage::decode("push 2\n").is_err());
        assert!(GossipMessage::decode("shout 0\n").is_err());
        assert!(GossipMessage::decode("records 1\n0000000000000001 x:1 joined 1\n").is_err());
    }

    #[test]
    fn persisted_format() {
        let list = HostList::from_records([rec("b:1", HostStatus::Joined, 2), rec("a:1", HostStatus::Left, 5)]);
        let text = list.to_text();
        for line in text.lines() {
            let f: Vec<&str> = line.split(' ').collect();
            assert_eq!(f.len(), 4);
            assert_eq!(f[0].len(), 16);
        }
        assert!(HostList::parse(&text).unwrap().same_state(&list));
    }

    #[test]
    fn bootstrap_rules() {
        let seed_list = HostList::from_records([rec("s:1", HostStatus::Joined, 1), rec("t:1", HostStatus::Joined, 1)]);
        let seeds = vec!["dead:1".to_string(), "s:1".to_string()];
        let got = bootstrap(&seeds, None, 1, |s| {
            if s == "s:1" { Ok(seed_list.clone()) } else { Err("refused".into()) }
        })
        .unwrap();
        assert!(got.len() >= 2);

        let persisted = HostList::from_records([rec("t:1", HostStatus::Left, 4)]);
        let got = bootstrap(&seeds, Some(&persisted), 1, |s| {
            if s == "s:1" { Ok(seed_list.clone()) } else { Err("refused".into()) }
        })
        .unwrap();
        assert_eq!(got.get(HostId::from_address("t:1")).unwrap().seq, 4);

        assert_eq!(
            bootstrap(&seeds, None, 1, |_| Err("refused".into())).unwrap_err(),
            MembershipError::AllSeedsUnreachable
        );

        let mut asked = Vec::new();
        let many = vec!["a:1".to_string(), "b:1".to_string(), "c:1".to_string()];
        bootstrap(&many, None, 2, |s| {
            asked.push(s.to_string());
            Ok(HostList::new())
        })
        .unwrap();
        assert_eq!(asked, vec!["a:1", "b:1"]);
    }

    fn arb_record() -> impl Strategy<Value = HostRecord> {
        (0usize..4, prop::bool::ANY, 0u64..6).prop_map(|(h, left, seq)| {
            rec(&format!("h{h}:1"), if left { HostStatus::Left } else { HostStatus::Joined }, seq)
        })
    }

    proptest! {
        #[test]
        fn merge_is_a_semilattice(
            a in prop::collection::vec(arb_record(), 0..12),
            b in prop::collection::vec(arb_record(), 0..12),
            c in prop::collection::vec(arb_record(), 0..12),
        ) {
            let la = HostList::from_records(a.clone());
            let lb = HostList::from_records(b.clone());
            let lc = HostList::from_records(c.clone());

            let mut ab = la.clone(); ab.merge(&lb);
            let mut ba = lb.clone(); ba.merge(&la);
            prop_assert!(ab.same_state(&ba));

            let mut ab_c = ab.clone(); ab_c.merge(&lc);
            let mut bc = lb.clone(); bc.merge(&lc);
            let mut a_bc = la.clone(); a_bc.merge(&bc);
            prop_assert!(ab_c.same_state(&a_bc));

            let mut aa = la.clone();
            prop_assert_eq!(aa.merge(&la), 0);
            prop_assert!(aa.same_state(&la));
        }

        #[test]
        fn seq_never_regresses(records in prop::collection::vec(arb_record(), 1..30)) {
            let mut list = HostList::new();
            for r in records {
                let before = list.get(r.id).map(|x| x.seq);
                list.merge_record(r.clone());
                let after = list.get(r.id).unwrap().seq;
                prop_assert!(before.is_none_or(|b| after >= b));
            }
        }
    }
}
