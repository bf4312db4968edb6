use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use super::CodecError;
use crate::placement::ring_hash;

/// Upper bound on `n + m` so a block set fits in a `u64` mask.
pub const MAX_BLOCKS: usize = 64;

/// Bipartite description of an XOR code: coding node `j` is the XOR of the
/// data nodes listed in `edges[j]`.
///
/// Edge lists are kept sorted and free of duplicates, so equal graphs have
/// equal text forms and fingerprints.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TannerGraph {
    n: usize,
    edges: Vec<Vec<usize>>,
    masks: Vec<u64>,
}

impl TannerGraph {
    pub fn new(n: usize, edges: Vec<Vec<usize>>) -> Result<TannerGraph, CodecError> {
        if n == 0 {
            return Err(CodecError::InvalidGraph("n must be at least 1".into()));
        }
        if n + edges.len() > MAX_BLOCKS {
            return Err(CodecError::InvalidGraph(format!(
                "n + m = {} exceeds {MAX_BLOCKS}",
                n + edges.len()
            )));
        }
        let mut canonical = Vec::with_capacity(edges.len());
        let mut masks = Vec::with_capacity(edges.len());
        for (j, row) in edges.into_iter().enumerate() {
            if row.is_empty() {
                return Err(CodecError::InvalidGraph(format!("coding node {j} has no edges")));
            }
            let set: BTreeSet<usize> = row.iter().copied().collect();
            if set.len() != row.len() {
                return Err(CodecError::InvalidGraph(format!("coding node {j} has duplicate edges")));
            }
            if let Some(&bad) = set.iter().find(|&&i| i >= n) {
                return Err(CodecError::InvalidGraph(format!(
                    "coding node {j} references data node {bad} >= n = {n}"
                )));
            }
            masks.push(set.iter().fold(0u64, |acc, &i| acc | 1 << i));
            canonical.push(set.into_iter().collect());
        }
        Ok(TannerGraph {
            n,
            edges: canonical,
            masks,
        })
    }

    /// Graph with no coding nodes: the file is just its data blocks.
    pub fn uncoded(n: usize) -> Result<TannerGraph, CodecError> {
        TannerGraph::new(n, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn total_blocks(&self) -> usize {
        self.n + self.edges.len()
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    /// Data-node membership of each coding node as a bitmask.
    pub(crate) fn masks(&self) -> &[u64] {
        &self.masks
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("ldpc 1 {} {}\n", self.n, self.m());
        for row in &self.edges {
            let line: Vec<String> = row.iter().map(usize::to_string).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// `ring_hash` of the canonical text form.
    pub fn fingerprint(&self) -> u64 {
        ring_hash(self.to_text().as_bytes())
    }
}

impl fmt::Display for TannerGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for TannerGraph {
    type Err = CodecError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let parse_err = |line: usize, msg: &str| CodecError::Parse {
            line,
            msg: msg.to_string(),
        };

        let (hline, header) = lines.next().ok_or_else(|| parse_err(0, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "ldpc" || fields[1] != "1" {
            return Err(parse_err(hline, "expected `ldpc 1 <n> <m>`"));
        }
        let n: usize = fields[2].parse().map_err(|_| parse_err(hline, "bad n"))?;
        let m: usize = fields[3].parse().map_err(|_| parse_err(hline, "bad m"))?;

        let mut edges = Vec::with_capacity(m);
        for (lineno, line) in lines {
            if edges.len() == m {
                return Err(parse_err(lineno, "more coding rows than m"));
            }
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| parse_err(lineno, "bad data index")))
                .collect::<Result<Vec<_>, _>>()?;
            edges.push(row);
        }
        if edges.len() != m {
            return Err(parse_err(0, &format!("expected {m} coding rows, found {}", edges.len())));
        }
        TannerGraph::new(n, edges)
    }
}

/// Set of available block indices. Indices `[0, n)` are data blocks and
/// `[n, n + m)` coding blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BlockSet(u64);

impl BlockSet {
    pub fn empty() -> BlockSet {
        BlockSet(0)
    }

    pub fn full(total: usize) -> BlockSet {
        BlockSet(low_mask(total))
    }

    pub fn from_mask(mask: u64) -> BlockSet {
        BlockSet(mask)
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(
        indices: I,
        total: usize,
    ) -> Result<BlockSet, CodecError> {
        let mut mask = 0u64;
        for i in indices {
            if i >= total {
                return Err(CodecError::InvalidBlockSet(format!("index {i} out of range {total}")));
            }
            if mask & (1 << i) != 0 {
                return Err(CodecError::InvalidBlockSet(format!("index {i} repeated")));
            }
            mask |= 1 << i;
        }
        Ok(BlockSet(mask))
    }

    pub fn mask(self) -> u64 {
        self.0
    }

    pub fn contains(self, i: usize) -> bool {
        i < 64 && self.0 & (1 << i) != 0
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1 << i;
    }

    pub fn remove(&mut self, i: usize) {
        self.0 &= !(1 << i);
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn complement(self, total: usize) -> BlockSet {
        BlockSet(!self.0 & low_mask(total))
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&i| self.0 & (1 << i) != 0)
    }
}

pub(crate) fn low_mask(bits: usize) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}
