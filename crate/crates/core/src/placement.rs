//! Chunk placement on the host hash ring.
//!
//! Every host is positioned on a 64-bit ring at `ring_hash("host:port")`. A
//! chunk named `<file>.<index>` belongs to the first host at or clockwise
//! after `ring_hash(name)`, wrapping past `u64::MAX` to the smallest id.
//!
//! # Hash
//!
//! `ring_hash` is FNV-1a over the input bytes followed by the MurmurHash3
//! 64-bit finalizer:
//!
//! ```text
//! h = 0xcbf29ce484222325
//! for b in bytes: h = (h ^ b) * 0x00000100000001b3      (mod 2^64)
//! h ^= h >> 33; h *= 0xff51afd7ed558ccd
//! h ^= h >> 33; h *= 0xc4ceb9fe1a85ec53
//! h ^= h >> 33
//! ```
//!
//! The input is consumed byte by byte, so the result does not depend on the
//! platform's endianness. Plain FNV-1a leaves names that differ only in their
//! last byte (`f.1`, `f.2`, ...) within 2^-16 of each other on the ring; the
//! finalizer spreads them.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// `ring_hash(b"")`: the finalized FNV offset basis.
pub const EMPTY_HASH: u64 = fmix64(FNV_OFFSET_BASIS);

const fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

pub fn ring_hash(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET_BASIS;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    fmix64(h)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlacementError {
    #[error("host set is empty")]
    EmptyHostSet,
    #[error("invalid file name {0:?}")]
    InvalidFileName(String),
    #[error("invalid chunk name {0:?}")]
    InvalidChunkName(String),
}

/// Position of a host on the ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HostId(pub u64);

impl HostId {
    /// Id of a host from its address. The address is canonicalized to
    /// lowercase before hashing.
    pub fn from_address(address: &str) -> HostId {
        HostId(ring_hash(canonical_address(address).as_bytes()))
    }
}

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for HostId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        u64::from_str_radix(s, 16).map(HostId)
    }
}

pub fn canonical_address(address: &str) -> String {
    address.trim().to_ascii_lowercase()
}

/// Checks the flat file-name rules: non-empty, no `/`, no control characters.
pub fn validate_file_name(file: &str) -> Result<(), PlacementError> {
    if file.is_empty() || file.contains('/') || file.chars().any(char::is_control) {
        return Err(PlacementError::InvalidFileName(file.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChunkName {
    file: String,
    index: usize,
}

impl ChunkName {
    pub fn new(file: &str, index: usize) -> Result<ChunkName, PlacementError> {
        validate_file_name(file)?;
        Ok(ChunkName {
            file: file.to_string(),
            index,
        })
    }

    pub fn file(&self) -> &str {
        &self.file
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn ring_position(&self) -> u64 {
        ring_hash(self.to_string().as_bytes())
    }
}

impl fmt::Display for ChunkName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.file, self.index)
    }
}

impl FromStr for ChunkName {
    type Err = PlacementError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PlacementError::InvalidChunkName(s.to_string());
        let (file, index) = s.rsplit_once('.').ok_or_else(bad)?;
        // Reject "+1", "01" and friends so that render(parse(s)) == s.
        if index.is_empty()
            || !index.bytes().all(|b| b.is_ascii_digit())
            || (index.len() > 1 && index.starts_with('0'))
        {
            return Err(bad());
        }
        let index = index.parse().map_err(|_| bad())?;
        ChunkName::new(file, index).map_err(|_| bad())
    }
}

/// First host at or clockwise after `position`.
pub fn successor(position: u64, hosts: &BTreeSet<HostId>) -> Result<HostId, PlacementError> {
    hosts
        .range(HostId(position)..)
        .next()
        .or_else(|| hosts.iter().next())
        .copied()
        .ok_or(PlacementError::EmptyHostSet)
}

pub fn responsible_host(chunk: &ChunkName, hosts: &BTreeSet<HostId>) -> Result<HostId, PlacementError> {
    successor(chunk.ring_position(), hosts)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementPlan {
    pub entries: Vec<(ChunkName, HostId)>,
    /// Set when two or more chunks of the file land on the same host.
    pub collisions: bool,
}

impl PlacementPlan {
    pub fn host_of(&self, index: usize) -> HostId {
        self.entries[index].1
    }

    pub fn distinct_hosts(&self) -> usize {
        self.entries.iter().map(|(_, h)| *h).collect::<BTreeSet<_>>().len()
    }
}

pub fn placement_plan(
    file: &str,
    n: usize,
    m: usize,
    hosts: &BTreeSet<HostId>,
) -> Result<PlacementPlan, PlacementError> {
    if hosts.is_empty() {
        return Err(PlacementError::EmptyHostSet);
    }
    let entries = (0..n + m)
        .map(|index| {
            let name = ChunkName::new(file, index)?;
            let host = responsible_host(&name, hosts)?;
            Ok((name, host))
        })
        .collect::<Result<Vec<_>, PlacementError>>()?;
    let distinct = entries.iter().map(|(_, h)| *h).collect::<BTreeSet<_>>();
    Ok(PlacementPlan {
        collisions: distinct.len() < entries.len(),
        entries,
    })
}

/// Draws addresses from `candidates` so that the `total` chunks of `file`
/// land on `total` distinct hosts: each ring arc between consecutive chunk
/// positions receives exactly one host. Candidates rejected by `accept` are
/// skipped. Returns the addresses in chunk-index order.
pub fn collision_free_hosts<I, F>(file: &str, total: usize, candidates: I, mut accept: F) -> Option<Vec<String>>
where
    I: IntoIterator<Item = String>,
    F: FnMut(&str) -> bool,
{
    let mut arcs: Vec<(u64, usize)> = (0..total)
        .map(|i| ChunkName::new(file, i).ok().map(|c| (c.ring_position(), i)))
        .collect::<Option<_>>()?;
    arcs.sort_unstable();
    if total == 0 || arcs.windows(2).any(|w| w[0].0 == w[1].0) {
        return None;
    }
    // A host owns the chunk at the greatest position <= its id, wrapping.
    let arc_of = |h: u64| match arcs.partition_point(|&(p, _)| p <= h) {
        0 => arcs.len() - 1,
        k => k - 1,
    };
    let mut chosen: Vec<Option<String>> = vec![None; total];
    let mut left = total;
    for address in candidates {
        let address = canonical_address(&address);
        let (_, chunk) = arcs[arc_of(HostId::from_address(&address).0)];
        if chosen[chunk].is_none() && accept(&address) {
            chosen[chunk] = Some(address);
            left -= 1;
            if left == 0 {
                return chosen.into_iter().collect();
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collision_free_assignment() {
        let got = collision_free_hosts("spread", 14, (0..100_000).map(|k| format!("n{k}:1")), |_| true).unwrap();
        let hosts: BTreeSet<HostId> = got.iter().map(|a| HostId::from_address(a)).collect();
        assert_eq!(hosts.len(), 14);
        let plan = placement_plan("spread", 8, 6, &hosts).unwrap();
        assert!(!plan.collisions);
        for (i, a) in got.iter().enumerate() {
            assert_eq!(plan.host_of(i), HostId::from_address(a));
        }
        assert_eq!(collision_free_hosts("spread", 14, (0..3).map(|k| format!("n{k}:1")), |_| true), None);
        assert_eq!(collision_free_hosts("spread", 14, (0..100_000).map(|k| format!("n{k}:1")), |_| false), None);
    }
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plain_fnv1a(bytes: &[u8]) -> u64 {
        bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
    }

    #[test]
    fn empty_input_is_finalized_offset_basis() {
        assert_eq!(ring_hash(b""), EMPTY_HASH);
        assert_eq!(EMPTY_HASH, fmix64(0xcbf29ce484222325));
    }

    #[test]
    fn fnv_stage_matches_reference_vectors() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(plain_fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(plain_fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(plain_fnv1a(b"foobar"), 0x85944171f73967e8);
        assert_eq!(ring_hash(b"foobar"), fmix64(0x85944171f73967e8));
    }

    // Computed with an independent script implementation of the algorithm.
    const PINNED_EMPTY: u64 = 0xefd0_1f60_ba99_2926;
    const PINNED_LOOPBACK: u64 = 0x51d8_6840_66fa_fe52;

    #[test]
    fn hash_is_pinned() {
        // Frozen values; changing them moves every stored chunk.
        assert_eq!(ring_hash(b""), PINNED_EMPTY);
        assert_eq!(ring_hash(b"127.0.0.1:7000"), PINNED_LOOPBACK);
        let a = ring_hash(b"127.0.0.1:7000");
        let b = ring_hash(b"127.0.0.1:7000");
        assert_eq!(a, b);
        assert_ne!(ring_hash(b"f.1"), ring_hash(b"f.2"));
    }

    #[test]
    fn avalanche_bins_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut bins = [0u64; 256];
        let samples = 1_000_000u64;
        let mut buf = [0u8; 12];
        for _ in 0..samples {
            rng.fill(&mut buf);
            bins[(ring_hash(&buf) >> 56) as usize] += 1;
        }
        let expected = samples as f64 / 256.0;
        let chi2: f64 = bins.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square, 255 dof, p = 0.001 critical value
        assert!(chi2 < 330.5, "chi2 = {chi2}");
    }

    #[test]
    fn suffix_names_spread_across_the_ring() {
        let positions: BTreeSet<u64> = (0..14)
            .map(|i| ring_hash(format!("file.{i}").as_bytes()) >> 60)
            .collect();
        // 14 names into 16 buckets; plain FNV-1a puts them all in one or two.
        assert!(positions.len() >= 6, "{positions:?}");
    }

    #[test]
    fn ring_rule_with_wraparound() {
        let hosts: BTreeSet<HostId> = [HostId(10), HostId(20)].into_iter().collect();
        assert_eq!(successor(14, &hosts).unwrap(), HostId(20));
        assert_eq!(successor(20, &hosts).unwrap(), HostId(20));
        assert_eq!(successor(21, &hosts).unwrap(), HostId(10));
        assert_eq!(successor(u64::MAX, &hosts).unwrap(), HostId(10));
        assert_eq!(successor(0, &hosts).unwrap(), HostId(10));
        assert_eq!(successor(3, &BTreeSet::new()), Err(PlacementError::EmptyHostSet));
    }

    #[test]
    fn single_host_owns_everything() {
        let hosts: BTreeSet<HostId> = [HostId::from_address("10.0.0.1:9000")].into_iter().collect();
        let plan = placement_plan("data.bin", 8, 6, &hosts).unwrap();
        assert_eq!(plan.entries.len(), 14);
        assert!(plan.collisions);
        assert!(plan.entries.iter().all(|(_, h)| *h == HostId::from_address("10.0.0.1:9000")));
    }

    #[test]
    fn plan_ignores_host_order() {
        let addrs: Vec<String> = (0..20).map(|i| format!("node{i}.cluster:7000")).collect();
        let fwd: BTreeSet<HostId> = addrs.iter().map(|a| HostId::from_address(a)).collect();
        let rev: BTreeSet<HostId> = addrs.iter().rev().map(|a| HostId::from_address(a)).collect();
        assert_eq!(
            placement_plan("x", 8, 6, &fwd).unwrap(),
            placement_plan("x", 8, 6, &rev).unwrap()
        );
    }

    #[test]
    fn removing_a_host_only_moves_its_chunks() {
        let hosts: Vec<HostId> = (0..8).map(|i| HostId::from_address(&format!("h{i}:1"))).collect();
        let full: BTreeSet<HostId> = hosts.iter().copied().collect();
        let names: Vec<ChunkName> = (0..200).map(|i| ChunkName::new("stab", i).unwrap()).collect();
        for removed in &hosts {
            let mut fewer = full.clone();
            fewer.remove(removed);
            for name in &names {
                let before = responsible_host(name, &full).unwrap();
                let after = responsible_host(name, &fewer).unwrap();
                if before != *removed {
                    assert_eq!(before, after);
                }
            }
        }
    }

    #[test]
    fn address_is_case_insensitive() {
        assert_eq!(HostId::from_address("Node1:80"), HostId::from_address("node1:80"));
    }

    #[test]
    fn chunk_name_rules() {
        assert!(ChunkName::new("", 0).is_err());
        assert!(ChunkName::new("a/b", 0).is_err());
        assert!(ChunkName::new("a\nb", 0).is_err());
        let c: ChunkName = "my.file.tar.13".parse().unwrap();
        assert_eq!(c.file(), "my.file.tar");
        assert_eq!(c.index(), 13);
        assert!("noindex".parse::<ChunkName>().is_err());
        assert!("f.01".parse::<ChunkName>().is_err());
        assert!("f.".parse::<ChunkName>().is_err());
        assert!(".3".parse::<ChunkName>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn chunk_name_round_trip(file in "[a-zA-Z0-9 ._-]{1,24}", index in 0usize..64) {
            let name = ChunkName::new(&file, index).unwrap();
            let parsed: ChunkName = name.to_string().parse().unwrap();
            proptest::prop_assert_eq!(parsed, name);
        }
    }
}
